//! Direct symmetric eigensolver for the normalized Laplacian.
//!
//! Panel-blocked Householder reduction to tridiagonal form, Sturm-sequence
//! bisection for the requested eigenvalue, inverse iteration on the
//! tridiagonal matrix and a back-transformation of that single vector. Only
//! the reflectors are kept, so the cost is the O(n³) reduction plus O(n²) per
//! vector. The reduction is bound by memory bandwidth: every column streams
//! the remaining triangle once through the symmetric matrix-vector product.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayViewMut2};
use rayon::prelude::*;

/// Reflectors are accumulated this many columns at a time before the trailing
/// matrix is updated with one matrix product.
const PANEL: usize = 32;
/// Fixed row partition for the parallel kernels, so the floating-point
/// summation order never depends on the thread count.
const ROW_BLOCK: usize = 64;

/// Householder reduction `T = Qᵀ A Q` of a dense symmetric matrix.
pub(crate) struct Tridiagonal {
    n: usize,
    pub diag: Vec<f64>,
    /// `off[i] = T[i, i+1]`, length `n - 1`.
    pub off: Vec<f64>,
    /// Row `k` holds the reflector `v_k` in columns `k+1..n` (with `v_k[0] = 1`).
    reflectors: Vec<f64>,
    betas: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Overwrites `x` with the reflector `v` (`v[0] = 1`) such that
/// `(I - β v vᵀ) x = α e₁`; returns `(β, α)`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let alpha0 = x[0];
    let xnorm = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if xnorm == 0.0 {
        x[0] = 1.0;
        return (0.0, alpha0);
    }
    let alpha = -alpha0.signum() * alpha0.hypot(xnorm);
    let beta = (alpha - alpha0) / alpha;
    let scale = 1.0 / (alpha0 - alpha);
    x[1..].iter_mut().for_each(|v| *v *= scale);
    x[0] = 1.0;
    (beta, alpha)
}

/// `y = A₂₂ v` for the trailing block `rows, cols ≥ s`, reading only the
/// entries on and right of the diagonal of each row of `a`.
fn symv_trailing(a: &[f64], n: usize, s: usize, v: &[f64], y: &mut [f64]) {
    let m = n - s;
    let starts: Vec<usize> = (0..m).step_by(ROW_BLOCK).collect();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&b0| {
            let b1 = (b0 + ROW_BLOCK).min(m);
            let mut dots = vec![0.0; b1 - b0];
            let mut spill = vec![0.0; m - b0];
            for j in b0..b1 {
                let row = &a[(s + j) * n + s + j..(s + j + 1) * n];
                dots[j - b0] = dot(row, &v[j..]);
                axpy(v[j], &row[1..], &mut spill[j + 1 - b0..]);
            }
            (dots, spill)
        })
        .collect();
    y.fill(0.0);
    for (&b0, (dots, spill)) in starts.iter().zip(&parts) {
        y[b0..].iter_mut().zip(spill).for_each(|(yi, p)| *yi += p);
        y[b0..b0 + dots.len()].iter_mut().zip(dots).for_each(|(yi, d)| *yi += d);
    }
}

impl Tridiagonal {
    /// Consumes a row-major symmetric matrix; only the upper triangle
    /// (equivalently, the lower triangle by columns) is referenced.
    pub fn reduce(mut a: Vec<f64>, n: usize) -> Self {
        assert_eq!(a.len(), n * n);
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        let mut betas = vec![0.0; n.saturating_sub(1)];
        // Row q holds column q of the panel's W, indexed globally.
        let mut wt = vec![0.0; PANEL * n];

        let mut k0 = 0;
        while k0 < n {
            let nb = PANEL.min(n - k0);
            for p in 0..nb {
                let c = k0 + p;
                {
                    let (done, rest) = a.split_at_mut(c * n);
                    let col = &mut rest[c..n];
                    for q in 0..p {
                        let vq = &done[(k0 + q) * n..(k0 + q + 1) * n];
                        let wq = &wt[q * n..(q + 1) * n];
                        axpy(-wq[c], &vq[c..], col);
                        axpy(-vq[c], &wq[c..], col);
                    }
                }
                diag[c] = a[c * n + c];
                if c + 1 == n {
                    break;
                }
                let (beta, alpha) = householder(&mut a[c * n + c + 1..(c + 1) * n]);
                off[c] = alpha;
                betas[c] = beta;

                let s = c + 1;
                let (prev_w, cur_w) = wt.split_at_mut(p * n);
                let w = &mut cur_w[..n];
                w[..s].fill(0.0);
                if beta == 0.0 {
                    w[s..].fill(0.0);
                    continue;
                }
                let v = &a[c * n + s..(c + 1) * n];
                let y = &mut w[s..];
                symv_trailing(&a, n, s, v, y);
                for q in 0..p {
                    let vq = &a[(k0 + q) * n + s..(k0 + q + 1) * n];
                    let wq = &prev_w[q * n + s..(q + 1) * n];
                    let (cw, cv) = (dot(wq, v), dot(vq, v));
                    axpy(-cw, vq, y);
                    axpy(-cv, wq, y);
                }
                y.iter_mut().for_each(|t| *t *= beta);
                let shift = -0.5 * beta * dot(y, v);
                axpy(shift, v, y);
            }

            let t0 = k0 + nb;
            if t0 < n {
                trailing_update(&mut a, n, k0, nb, &wt);
            }
            k0 = t0;
        }
        Tridiagonal {
            n,
            diag,
            off,
            reflectors: a,
            betas,
        }
    }

    fn reflector(&self, k: usize) -> &[f64] {
        &self.reflectors[k * self.n + k + 1..(k + 1) * self.n]
    }

    fn apply_reflector(&self, k: usize, y: &mut [f64]) {
        let beta = self.betas[k];
        if beta == 0.0 {
            return;
        }
        let v = self.reflector(k);
        let tail = &mut y[k + 1..];
        let c = beta * dot(v, tail);
        tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= c * vi);
    }

    /// `y ← Qᵀ y`.
    pub fn apply_qt(&self, y: &mut [f64]) {
        for k in 0..self.betas.len() {
            self.apply_reflector(k, y);
        }
    }

    /// `y ← Q y`.
    pub fn apply_q(&self, y: &mut [f64]) {
        for k in (0..self.betas.len()).rev() {
            self.apply_reflector(k, y);
        }
    }

    fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < self.n { self.off[i].abs() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() <= pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.n {
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            if q.abs() <= pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `index`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        assert!(index < self.n);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..self.n {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < self.n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        let max_off2 = self.off.iter().map(|e| e * e).fold(1.0, f64::max);
        let pivmin = f64::MIN_POSITIVE * max_off2;
        let slack = 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin;
        lo -= slack;
        hi += slack;
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid, pivmin) > index {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    /// Inverse iteration for the eigenvalue `shift`, keeping iterates
    /// orthogonal to the unit vectors in `deflate`.
    pub fn eigenvector(&self, shift: f64, deflate: &[&[f64]]) -> Vec<f64> {
        let n = self.n;
        let tiny = f64::EPSILON * self.norm1().max(f64::MIN_POSITIVE);
        let lu = ShiftedLu::factor(self, shift, tiny);

        // Fixed pseudo-random start; any vector with a component along the
        // target eigenvector works.
        let mut state = 0x9E37_79B9_7F4A_7C15u64;
        let mut y: Vec<f64> = (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let project = |y: &mut [f64]| {
            for d in deflate {
                let c = dot(d, y);
                y.iter_mut().zip(d.iter()).for_each(|(yi, di)| *yi -= c * di);
            }
            let norm = dot(y, y).sqrt();
            if norm > 0.0 {
                y.iter_mut().for_each(|v| *v /= norm);
            }
        };
        project(&mut y);

        let mut ty = vec![0.0; n];
        for iter in 0..12 {
            lu.solve(&mut y);
            project(&mut y);
            self.matvec(&y, &mut ty);
            let res = ty
                .iter()
                .zip(&y)
                .map(|(t, v)| (t - shift * v).powi(2))
                .sum::<f64>()
                .sqrt();
            if iter >= 1 && res <= 64.0 * tiny {
                break;
            }
        }
        y
    }
}

/// `A₂₂ ← A₂₂ − V Wᵀ − W Vᵀ` on rows and columns from `k0 + nb`, where `V`
/// is the panel's reflectors (rows `k0..k0+nb` of `a`) and `W` is in `wt`.
fn trailing_update(a: &mut [f64], n: usize, k0: usize, nb: usize, wt: &[f64]) {
    let t0 = k0 + nb;
    let m = n - t0;
    let (head, tail) = a.split_at_mut(t0 * n);
    let mut left = Array2::<f64>::zeros((2 * nb, m));
    let mut right = Array2::<f64>::zeros((2 * nb, m));
    for q in 0..nb {
        let v = &head[(k0 + q) * n + t0..(k0 + q + 1) * n];
        let w = &wt[q * n + t0..(q + 1) * n];
        left.row_mut(q).as_slice_mut().unwrap().copy_from_slice(w);
        left.row_mut(nb + q).as_slice_mut().unwrap().copy_from_slice(v);
        right.row_mut(q).as_slice_mut().unwrap().copy_from_slice(v);
        right.row_mut(nb + q).as_slice_mut().unwrap().copy_from_slice(w);
    }
    tail.par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(b, chunk)| {
            let r0 = b * ROW_BLOCK;
            let rows = chunk.len() / n;
            let mut block = ArrayViewMut2::from_shape((rows, n), chunk).unwrap();
            let mut block = block.slice_mut(s![.., t0 + r0..]);
            let lhs = left.slice(s![.., r0..r0 + rows]);
            let rhs = right.slice(s![.., r0..]);
            general_mat_mul(-1.0, &lhs.t(), &rhs, 1.0, &mut block);
        });
}

/// Partial-pivoting LU of `T - σI` in banded form.
struct ShiftedLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn factor(t: &Tridiagonal, shift: f64, tiny: f64) -> Self {
        let n = t.n;
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let sup = |i: usize| if i + 1 < n { t.off[i] } else { 0.0 };

        let mut cur = [t.diag[0] - shift, sup(0), 0.0];
        for i in 0..n.saturating_sub(1) {
            let below = t.off[i];
            let next = [below, t.diag[i + 1] - shift, sup(i + 1)];
            if cur[0].abs() >= below.abs() {
                if cur[0] == 0.0 {
                    cur[0] = tiny;
                }
                let l = below / cur[0];
                (u0[i], u1[i], u2[i]) = (cur[0], cur[1], cur[2]);
                mult[i] = l;
                cur = [next[1] - l * cur[1], next[2] - l * cur[2], 0.0];
            } else {
                let l = cur[0] / below;
                (u0[i], u1[i], u2[i]) = (next[0], next[1], next[2]);
                mult[i] = l;
                swapped[i] = true;
                cur = [cur[1] - l * next[1], cur[2] - l * next[2], 0.0];
            }
        }
        u0[n - 1] = cur[0];
        for p in u0.iter_mut() {
            if p.abs() < tiny {
                *p = if *p < 0.0 { -tiny } else { tiny };
            }
        }
        ShiftedLu {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        let mut carry = b[0];
        for i in 0..n - 1 {
            if self.swapped[i] {
                let pivot = b[i + 1];
                b[i] = pivot;
                carry -= self.mult[i] * pivot;
            } else {
                b[i] = carry;
                carry = b[i + 1] - self.mult[i] * carry;
            }
        }
        b[n - 1] = carry;
        for i in (0..n).rev() {
            let mut acc = b[i];
            if i + 1 < n {
                acc -= self.u1[i] * b[i + 1];
            }
            if i + 2 < n {
                acc -= self.u2[i] * b[i + 2];
            }
            b[i] = acc / self.u0[i];
        }
        // Rescale to keep iterates finite when the shift is an eigenvalue.
        let big = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big > 0.0 && big.is_finite() {
            b.iter_mut().for_each(|v| *v /= big);
        }
    }
}

/// Unit eigenvector of `L_sym = I - S W S` for its second-smallest eigenvalue,
/// orthogonal to the known null vector `trivial`.
pub(crate) fn fiedler_vector(
    weights: &ndarray::Array2<f64>,
    scale: &Array1<f64>,
    trivial: &Array1<f64>,
) -> Vec<f64> {
    let n = scale.len();
    let mut lsym = vec![0.0; n * n];
    lsym.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let w = weights.row(i);
        for j in 0..n {
            row[j] = -scale[i] * w[j] * scale[j];
        }
        row[i] += 1.0;
    });
    let tri = Tridiagonal::reduce(lsym, n);
    let lambda = tri.eigenvalue(1);
    let mut z0 = trivial.to_vec();
    tri.apply_qt(&mut z0);
    let mut z = tri.eigenvector(lambda, &[&z0]);
    tri.apply_q(&mut z);
    z
}
