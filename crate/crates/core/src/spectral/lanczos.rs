//! Thick-restart Lanczos for the top of `M = S W S` on the complement of the
//! trivial eigenvector.
//!
//! The largest eigenvalue θ of `M` restricted to `u0⊥` is `1 - λ₁` of the
//! normalized Laplacian. Every basis vector is reorthogonalized twice against
//! the whole basis and `u0`; restarts keep the leading Ritz vectors together
//! with the residual direction (Krylov-Schur form).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

const MAX_BASIS: usize = 40;
const KEEP: usize = 10;
const START_SEED: u64 = 0x0C07_0ACE;

pub(crate) struct LanczosOutcome {
    pub vector: Array1<f64>,
    pub matvecs: usize,
}

/// `10·√N·ln N` operator applications.
pub fn iteration_cap(n: usize) -> usize {
    let n = n as f64;
    (10.0 * n.sqrt() * n.ln()).ceil().max(1.0) as usize
}

struct Operator<'a> {
    weights: ArrayView2<'a, f64>,
    scale: &'a Array1<f64>,
    trivial: &'a Array1<f64>,
}

impl Operator<'_> {
    fn deflate(&self, y: &mut Array1<f64>) {
        let c = self.trivial.dot(y);
        y.scaled_add(-c, self.trivial);
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let t = self.scale * x;
        let t = t.as_slice().expect("contiguous");
        let mut y = Array1::zeros(x.len());
        y.as_slice_mut()
            .expect("contiguous")
            .par_iter_mut()
            .zip(self.weights.outer_iter().into_par_iter())
            .for_each(|(yi, row)| {
                let row = row.to_slice().expect("row-major weights");
                *yi = row.iter().zip(t).fold(0.0, |acc, (w, v)| acc + w * v);
            });
        Zip::from(&mut y).and(self.scale).for_each(|yi, s| *yi *= s);
        self.deflate(&mut y);
        y
    }
}

/// Leading Ritz vector of `P M P` with residual at most `tol`.
pub(crate) fn top_eigenvector(
    weights: &Array2<f64>,
    scale: &Array1<f64>,
    trivial: &Array1<f64>,
    tol: f64,
) -> Result<LanczosOutcome> {
    let n = scale.len();
    let weights = weights.as_standard_layout();
    let op = Operator {
        weights: weights.view(),
        scale,
        trivial,
    };
    let max_basis = MAX_BASIS.min(n - 1).max(1);
    let keep = KEEP.min(max_basis.saturating_sub(1)).max(1);
    let cap = iteration_cap(n);

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut start: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    op.deflate(&mut start);
    let norm = start.dot(&start).sqrt();
    start /= norm;

    let mut basis = vec![start];
    // h[(i, j)] = basis[i]ᵀ M basis[j]; row `len` carries the residual coupling.
    let mut h = DMatrix::<f64>::zeros(max_basis + 1, max_basis);
    let mut matvecs = 0;
    let mut best_residual = f64::INFINITY;

    loop {
        let mut breakdown = false;
        while basis.len() <= max_basis {
            let j = basis.len() - 1;
            let mut w = op.apply(&basis[j]);
            matvecs += 1;
            let scale_before = w.dot(&w).sqrt();
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = v.dot(&w);
                    h[(i, j)] += c;
                    w.scaled_add(-c, v);
                }
                op.deflate(&mut w);
            }
            let beta = w.dot(&w).sqrt();
            if beta <= 1e-13 * scale_before.max(1.0) {
                h[(j + 1, j)] = 0.0;
                breakdown = true;
                break;
            }
            h[(j + 1, j)] = beta;
            basis.push(w / beta);
        }

        let m = if breakdown {
            basis.len()
        } else {
            max_basis
        };
        let mut projected = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                projected[(i, j)] = 0.5 * (h[(i, j)] + h[(j, i)]);
            }
        }
        let eig = SymmetricEigen::new(projected);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let coupling: Vec<f64> = (0..m).map(|j| h[(m, j)]).collect();
        let residual_of = |col: usize| -> f64 {
            (0..m)
                .map(|j| coupling[j] * eig.eigenvectors[(j, col)])
                .sum::<f64>()
                .abs()
        };
        let ritz = |col: usize| -> Array1<f64> {
            let mut v = Array1::zeros(n);
            for (j, b) in basis.iter().take(m).enumerate() {
                v.scaled_add(eig.eigenvectors[(j, col)], b);
            }
            v
        };

        let lead = order[0];
        let residual = if breakdown { 0.0 } else { residual_of(lead) };
        best_residual = best_residual.min(residual);
        if residual <= tol {
            return Ok(LanczosOutcome {
                vector: ritz(lead),
                matvecs,
            });
        }
        if matvecs >= cap {
            return Err(Error::Convergence {
                iterations: matvecs,
                residual: best_residual,
            });
        }

        let keep = keep.min(m - 1);
        let residual_direction = basis[m].clone();
        let mut restarted: Vec<Array1<f64>> = order[..keep].iter().map(|&c| ritz(c)).collect();
        restarted.push(residual_direction);
        let mut next_h = DMatrix::<f64>::zeros(max_basis + 1, max_basis);
        for (i, &c) in order[..keep].iter().enumerate() {
            next_h[(i, i)] = eig.eigenvalues[c];
            next_h[(keep, i)] = (0..m).map(|j| coupling[j] * eig.eigenvectors[(j, c)]).sum();
        }
        basis = restarted;
        h = next_h;
    }
}
