//! Fiedler vector of the generalized problem `(D − W)x = λDx`.
//!
//! Both solvers work on the normalized Laplacian
//! `L_sym = D^{-1/2}(D − W)D^{-1/2}`, whose null vector `D^{1/2}1` is known in
//! closed form, and map the eigenvector back with `x = D^{-1/2}u`.

mod dense;
mod lanczos;

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};

pub use lanczos::iteration_cap;

/// Largest graph the dense backend is used for; see [`resolve_solver`].
pub const DENSE_MAX_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Dense,
    Iterative,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Dense => "dense",
            SolverKind::Iterative => "iterative",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dense" => Ok(SolverKind::Dense),
            "iterative" | "lanczos" => Ok(SolverKind::Iterative),
            other => Err(Error::Parameter(format!(
                "unknown solver {other:?} (expected dense or iterative)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Unit D-norm, sign-canonical Fiedler vector.
    pub fiedler: Array1<f64>,
    pub lambda1: f64,
    /// `‖(D−W)x − λDx‖₂ / ‖x‖₂`.
    pub residual: f64,
    pub solver: SolverKind,
    /// Operator applications (iterative) or 1 (dense).
    pub iterations: usize,
}

/// Residual bound guaranteed for each backend.
pub fn residual_bound(solver: SolverKind) -> f64 {
    match solver {
        SolverKind::Dense => 1e-6,
        SolverKind::Iterative => 1e-5,
    }
}

/// Backend actually used for a graph of `n` nodes: `dense` falls back to the
/// iterative solver above [`DENSE_MAX_NODES`].
pub fn resolve_solver(requested: SolverKind, n: usize) -> SolverKind {
    match requested {
        SolverKind::Dense if n <= DENSE_MAX_NODES => SolverKind::Dense,
        _ => SolverKind::Iterative,
    }
}

pub fn solve_fiedler(graph: &AffinityGraph, solver: SolverKind) -> Result<EigenResult> {
    let degrees = graph.degrees();
    if let Some(i) = degrees.iter().position(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Contract(format!(
            "degree of node {i} is {} (must be positive)",
            degrees[i]
        )));
    }
    let scale = degrees.mapv(|d| 1.0 / d.sqrt());
    let mut trivial = degrees.mapv(f64::sqrt);
    let tnorm = trivial.dot(&trivial).sqrt();
    trivial /= tnorm;

    let (u, iterations) = match solver {
        SolverKind::Dense => (
            Array1::from(dense::fiedler_vector(graph.weights(), &scale, &trivial)),
            1,
        ),
        SolverKind::Iterative => {
            let dmax = degrees.iter().cloned().fold(0.0, f64::max);
            let tol = 1e-8f64.min(1e-6 / dmax);
            let out = lanczos::top_eigenvector(graph.weights(), &scale, &trivial, tol)?;
            (out.vector, out.matvecs)
        }
    };
    Ok(finish(graph, u, &scale, &trivial, solver, iterations))
}

/// Maps `u` back to `x`, computes λ and the residual, fixes the sign.
fn finish(
    graph: &AffinityGraph,
    mut u: Array1<f64>,
    scale: &Array1<f64>,
    trivial: &Array1<f64>,
    solver: SolverKind,
    iterations: usize,
) -> EigenResult {
    let c = trivial.dot(&u);
    u.scaled_add(-c, trivial);
    let norm = u.dot(&u).sqrt();
    u /= norm;

    let mut x = scale * &u;
    canonicalize_sign(&mut x);
    let degrees = graph.degrees();
    let wx = graph.weights().dot(&x);
    let dx = degrees * &x;
    let lx = &dx - &wx;
    let lambda = x.dot(&lx) / x.dot(&dx);
    let residual = (&lx - &(lambda * &dx)).mapv(|v| v * v).sum().sqrt() / x.dot(&x).sqrt();
    EigenResult {
        fiedler: x,
        lambda1: lambda.clamp(0.0, 2.0),
        residual,
        solver,
        iterations,
    }
}

/// Flips `x` so its largest-magnitude entry (lowest index on ties) is positive.
pub fn canonicalize_sign(x: &mut Array1<f64>) {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    if x.get(best).is_some_and(|&v| v < 0.0) {
        x.mapv_inplace(|v| -v);
    }
}
