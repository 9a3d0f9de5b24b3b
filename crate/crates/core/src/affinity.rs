//! Density-tuned, contrast-thresholded patch affinity.
//!
//! The chain is `cosine_matrix -> local_density -> density_tuned_weights ->
//! contrast_threshold`. Each step is exposed on its own; [`build_affinity`]
//! runs them back to back reusing one `[N, N]` buffer.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureGrid;

/// Weight assigned to pairs below the contrast threshold.
pub const WEAK_EDGE: f64 = 1e-5;
/// Weight assigned to pairs at or above the contrast threshold.
pub const STRONG_EDGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Neighbors averaged into the local density.
    pub k: usize,
    /// Base temperature.
    pub t0: f64,
    /// Density modulation of the temperature.
    pub alpha: f64,
    pub tau_ncut: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        AffinityParams {
            k: 10,
            t0: 1.0,
            alpha: 0.5,
            tau_ncut: 0.15,
        }
    }
}

/// Mean top-k cosine similarity of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector(pub Array1<f64>);

impl DensityVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }
}

/// Symmetric edge weights with their degree vector.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    weights: Array2<f64>,
    degrees: Array1<f64>,
    params: Option<AffinityParams>,
}

impl AffinityGraph {
    /// Wraps an arbitrary non-negative symmetric weight matrix.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        let (n, m) = weights.dim();
        if n != m || n < 2 {
            return Err(Error::Contract(format!(
                "weight matrix must be square with N >= 2, got {n}x{m}"
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if weights[[i, j]] != weights[[j, i]] {
                    return Err(Error::Contract(format!("weights not symmetric at ({i}, {j})")));
                }
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        let degrees = row_sums(&weights);
        Ok(AffinityGraph {
            weights,
            degrees,
            params: None,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    /// Construction parameters when the graph came out of [`build_affinity`].
    pub fn params(&self) -> Option<&AffinityParams> {
        self.params.as_ref()
    }
}

/// Fixed-order serial row sums.
fn row_sums(w: &Array2<f64>) -> Array1<f64> {
    w.axis_iter(Axis(0))
        .map(|row| row.iter().fold(0.0, |acc, &v| acc + v))
        .collect()
}

/// Pairwise cosine similarity `S = K Kᵀ` of a normalized grid.
pub fn cosine_matrix(grid: &FeatureGrid) -> Result<Array2<f64>> {
    if !grid.is_normalized() {
        return Err(Error::Contract(
            "cosine_matrix requires a normalized feature grid".into(),
        ));
    }
    let k = grid.patch_matrix();
    let mut s = k.dot(&k.t());
    // GEMM blocking does not promise bitwise symmetry; mirror the upper half.
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            s[[i, j]] = s[[j, i]];
        }
    }
    Ok(s)
}

/// ρᵢ: mean of the `k` largest off-diagonal entries of row `i` of `S`.
///
/// Equal similarities are ranked by lower column index, and the selected
/// values are summed in rank order.
pub fn local_density(s: &Array2<f64>, k: usize) -> Result<DensityVector> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Contract("similarity matrix must be square".into()));
    }
    if k < 1 || k >= n {
        return Err(Error::Parameter(format!(
            "density neighbor count k={k} must satisfy 1 <= k <= N-1 = {}",
            n.saturating_sub(1)
        )));
    }
    let rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let rho = s
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            scratch.clear();
            scratch.extend(row.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &v)| (v, j)));
            if k < scratch.len() {
                scratch.select_nth_unstable_by(k - 1, rank);
            }
            let top = &mut scratch[..k];
            top.sort_unstable_by(rank);
            top.iter().fold(0.0, |acc, &(v, _)| acc + v) / k as f64
        })
        .collect();
    Ok(DensityVector(rho))
}

fn check_temperature(rho: &DensityVector, t0: f64, alpha: f64) -> Result<()> {
    let values = rho.values();
    if values.is_empty() {
        return Err(Error::Parameter("empty density vector".into()));
    }
    // T_ij is affine in (ρᵢ + ρⱼ)/2, so its extremes sit on the diagonal pairs
    // of the smallest and largest density.
    let argmin = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let argmax = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    for i in [argmin, argmax] {
        let t = t0 + alpha * (values[i] + values[i]) / 2.0;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature t0 + alpha*(rho_i+rho_j)/2 = {t} is not positive for pair ({i}, {i})"
            )));
        }
    }
    Ok(())
}

fn tune_in_place(w: &mut Array2<f64>, rho: &DensityVector, t0: f64, alpha: f64) {
    let rho = rho.values();
    Zip::indexed(w).par_for_each(|(i, j), v| {
        *v /= t0 + alpha * (rho[i] + rho[j]) / 2.0;
    });
}

/// `wᵢⱼ = Sᵢⱼ / (t0 + α·(ρᵢ+ρⱼ)/2)`.
pub fn density_tuned_weights(
    s: &Array2<f64>,
    rho: &DensityVector,
    t0: f64,
    alpha: f64,
) -> Result<Array2<f64>> {
    if rho.values().len() != s.nrows() || s.nrows() != s.ncols() {
        return Err(Error::Contract("density vector and matrix sizes differ".into()));
    }
    check_temperature(rho, t0, alpha)?;
    let mut w = s.clone();
    tune_in_place(&mut w, rho, t0, alpha);
    Ok(w)
}

fn threshold_in_place(w: &mut Array2<f64>, tau_ncut: f64) {
    w.par_mapv_inplace(|v| if v >= tau_ncut { STRONG_EDGE } else { WEAK_EDGE });
}

/// Binarizes tuned weights to `{1, 1e-5}` and computes degrees.
///
/// The diagonal is thresholded like every other entry.
pub fn contrast_threshold(mut w: Array2<f64>, tau_ncut: f64) -> Result<AffinityGraph> {
    if !tau_ncut.is_finite() {
        return Err(Error::Parameter(format!("tau_ncut must be finite, got {tau_ncut}")));
    }
    if w.nrows() != w.ncols() {
        return Err(Error::Contract("weight matrix must be square".into()));
    }
    threshold_in_place(&mut w, tau_ncut);
    let degrees = row_sums(&w);
    Ok(AffinityGraph {
        weights: w,
        degrees,
        params: None,
    })
}

pub fn validate_params(params: &AffinityParams) -> Result<()> {
    if params.k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if !(params.t0.is_finite() && params.alpha.is_finite()) {
        return Err(Error::Parameter("t0 and alpha must be finite".into()));
    }
    if !params.tau_ncut.is_finite() {
        return Err(Error::Parameter("tau_ncut must be finite".into()));
    }
    Ok(())
}

/// Full affinity chain on a normalized grid.
pub fn build_affinity(grid: &FeatureGrid, params: &AffinityParams) -> Result<AffinityGraph> {
    validate_params(params)?;
    let mut w = cosine_matrix(grid)?;
    let rho = local_density(&w, params.k)?;
    check_temperature(&rho, params.t0, params.alpha)?;
    tune_in_place(&mut w, &rho, params.t0, params.alpha);
    let mut graph = contrast_threshold(w, params.tau_ncut)?;
    graph.params = Some(*params);
    Ok(graph)
}
