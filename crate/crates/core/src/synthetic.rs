//! Synthetic inputs: planted-object feature grids and random binary graphs.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::affinity::{AffinityGraph, STRONG_EDGE, WEAK_EDGE};
use crate::error::{Error, Result};
use crate::feature_io::{FeatureGrid, GridMetadata};

pub const PATCH_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub n_objects: usize,
    /// Expected squared norm of the per-patch noise relative to the unit
    /// cluster direction.
    pub noise: f64,
}

impl PlantedSpec {
    /// Grids of 16 to 40 patches a side, 1 to 3 objects, 384 channels.
    pub fn random(rng: &mut impl Rng) -> Self {
        PlantedSpec {
            height: rng.random_range(16..=40),
            width: rng.random_range(16..=40),
            dim: 384,
            n_objects: rng.random_range(1..=3),
            noise: rng.random_range(0.05..0.35),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedScene {
    pub grid: FeatureGrid,
    /// Patch masks of the planted objects.
    pub objects: Vec<Array2<bool>>,
    /// Cluster index per patch, background is 0.
    pub clusters: Array2<usize>,
    pub separation: f64,
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.dot(&v).sqrt();
    v / n
}

type Rect = (usize, usize, usize, usize);

/// Equal-area rectangles `(y, x, h, w)`, each possibly transposed, with one
/// free patch between them and around the border.
fn place_rects(rng: &mut impl Rng, h: usize, w: usize, count: usize) -> Option<Vec<Rect>> {
    let short = h.min(w);
    let lo = (short / 5).max(4);
    let hi = (short / 3).max(lo);
    'attempt: for _ in 0..1000 {
        let (a, b) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let mut rects: Vec<Rect> = Vec::with_capacity(count);
        for _ in 0..count {
            let (rh, rw) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            if rh + 2 > h || rw + 2 > w {
                continue 'attempt;
            }
            let mut placed = false;
            for _ in 0..200 {
                let y = rng.random_range(1..=h - rh - 1);
                let x = rng.random_range(1..=w - rw - 1);
                let clear = rects.iter().all(|&(oy, ox, oh, ow)| {
                    y > oy + oh || oy > y + rh || x > ox + ow || ox > x + rw
                });
                if clear {
                    rects.push((y, x, rh, rw));
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return Some(rects);
    }
    None
}

/// `count` orthonormal random directions.
fn orthonormal_centers(rng: &mut impl Rng, dim: usize, count: usize) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = unit_gaussian(rng, dim);
        for _ in 0..2 {
            for u in &out {
                let c = u.dot(&v);
                v.scaled_add(-c, u);
            }
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            out.push(v / n);
        }
    }
    out
}

/// A grid whose background and each rectangular object carry features
/// scattered around their own direction; the directions are orthonormal.
pub fn planted_scene(rng: &mut impl Rng, spec: &PlantedSpec) -> Result<PlantedScene> {
    let (h, w, d) = (spec.height, spec.width, spec.dim);
    if d <= spec.n_objects {
        return Err(Error::Parameter(format!(
            "{} objects need more than {d} channels",
            spec.n_objects
        )));
    }
    let rects = place_rects(rng, h, w, spec.n_objects).ok_or_else(|| {
        Error::Parameter(format!(
            "cannot place {} objects on a {h}x{w} grid",
            spec.n_objects
        ))
    })?;
    let mut clusters = Array2::<usize>::zeros((h, w));
    for (c, &(y, x, rh, rw)) in rects.iter().enumerate() {
        clusters
            .slice_mut(ndarray::s![y..y + rh, x..x + rw])
            .fill(c + 1);
    }
    let centers = orthonormal_centers(rng, d, rects.len() + 1);
    let sigma = (spec.noise / d as f64).sqrt();
    let mut features = Array3::<f32>::zeros((d, h, w));
    for y in 0..h {
        for x in 0..w {
            let center = &centers[clusters[[y, x]]];
            for c in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                features[[c, y, x]] = (center[c] + sigma * noise) as f32;
            }
        }
    }
    let meta = GridMetadata {
        image_id: "synthetic".into(),
        orig_width: w * PATCH_SIZE,
        orig_height: h * PATCH_SIZE,
        resized_width: w * PATCH_SIZE,
        resized_height: h * PATCH_SIZE,
        patch_size: PATCH_SIZE,
        model: "synthetic".into(),
    };
    let grid = FeatureGrid::new(meta, features)?;
    let objects = (1..=rects.len()).map(|c| clusters.mapv(|k| k == c)).collect();
    let separation = cluster_separation(&grid, &clusters, rects.len() + 1);
    Ok(PlantedScene {
        grid,
        objects,
        clusters,
        separation,
    })
}

/// `1 − max cos` over pairs of cluster mean directions (computed on the
/// unit-normalized patch features).
pub fn cluster_separation(grid: &FeatureGrid, clusters: &Array2<usize>, n_clusters: usize) -> f64 {
    let d = grid.dim();
    let mut means = vec![Array1::<f64>::zeros(d); n_clusters];
    for ((y, x), &c) in clusters.indexed_iter() {
        let v = Array1::from(grid.patch_vector(y * grid.width() + x));
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            means[c].scaled_add(1.0 / n, &v);
        }
    }
    for m in &mut means {
        let n = m.dot(m).sqrt();
        if n > 0.0 {
            *m /= n;
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for a in 0..n_clusters {
        for b in a + 1..n_clusters {
            worst = worst.max(means[a].dot(&means[b]));
        }
    }
    if worst == f64::NEG_INFINITY {
        1.0
    } else {
        1.0 - worst
    }
}

/// Symmetric `{1, 1e-5}` graph with a strong diagonal and each off-diagonal
/// pair strong with probability `p`.
pub fn random_binary_graph(rng: &mut impl Rng, n: usize, p: f64) -> Result<AffinityGraph> {
    let mut w = Array2::from_elem((n, n), WEAK_EDGE);
    for i in 0..n {
        w[[i, i]] = STRONG_EDGE;
        for j in i + 1..n {
            if rng.random_bool(p) {
                w[[i, j]] = STRONG_EDGE;
                w[[j, i]] = STRONG_EDGE;
            }
        }
    }
    AffinityGraph::from_weights(w)
}
