//! Per-image pipeline and batch driver.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::affinity::{build_affinity, AffinityGraph};
use crate::annotations::{AnnotationSet, ImageEntry};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::feature_io::{load_feature_grid, FeatureGrid, GridMetadata};
use crate::instances::{extract_instances, ComponentSet, InstanceMask};
use crate::saliency::{orient_and_split, Bipartition, FlipReason, SaliencyField};
use crate::spectral::{resolve_solver, solve_fiedler, EigenResult, SolverKind};

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub normalize: Duration,
    pub affinity: Duration,
    pub eigen: Duration,
    pub saliency: Duration,
    pub instances: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.normalize + self.affinity + self.eigen + self.saliency + self.instances
    }
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub meta: GridMetadata,
    pub masks: Vec<InstanceMask>,
    pub lambda1: f64,
    pub residual: f64,
    pub solver: SolverKind,
    pub flip_reason: FlipReason,
    pub n_components: usize,
    pub timings: StageTimings,
}

/// Every intermediate of one run, for inspection.
#[derive(Debug, Clone)]
pub struct Trace {
    pub grid: FeatureGrid,
    pub graph: AffinityGraph,
    pub eigen: EigenResult,
    pub saliency: SaliencyField,
    pub split: Bipartition,
    pub components: ComponentSet,
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *slot = start.elapsed();
    out
}

pub fn trace_image(grid: &FeatureGrid, config: &PipelineConfig) -> Result<(ImageResult, Trace)> {
    config.validate()?;
    let mut t = StageTimings::default();
    let grid = timed(&mut t.normalize, || {
        if grid.is_normalized() {
            Ok(grid.clone())
        } else {
            grid.normalize()
        }
    })?;
    let graph = timed(&mut t.affinity, || {
        build_affinity(&grid, &config.affinity_params())
    })?;
    let solver = resolve_solver(config.solver, graph.n_nodes());
    let eigen = timed(&mut t.eigen, || solve_fiedler(&graph, solver))?;
    let (saliency, split) = timed(&mut t.saliency, || {
        let field =
            SaliencyField::from_fiedler(&eigen.fiedler, grid.height(), grid.width(), config.neighborhood)?;
        let split = orient_and_split(&field.augmented);
        Ok((field, split))
    })?;
    let meta = grid.metadata().clone();
    let (components, masks) = timed(&mut t.instances, || {
        extract_instances(&split, config.tau_filter, meta.orig_height, meta.orig_width)
    })?;
    let result = ImageResult {
        meta,
        masks,
        lambda1: eigen.lambda1,
        residual: eigen.residual,
        solver: eigen.solver,
        flip_reason: split.flip_reason,
        n_components: components.len(),
        timings: t,
    };
    let trace = Trace {
        grid,
        graph,
        eigen,
        saliency,
        split,
        components,
    };
    Ok((result, trace))
}

pub fn run_image(grid: &FeatureGrid, config: &PipelineConfig) -> Result<ImageResult> {
    trace_image(grid, config).map(|(r, _)| r)
}

#[derive(Debug)]
pub struct ImageOutcome {
    pub path: PathBuf,
    pub load_time: Duration,
    pub result: Result<ImageResult>,
}

/// Loads and processes every file on a pool of `config.workers` threads;
/// outcomes come back in input order.
pub fn run_batch(paths: &[PathBuf], config: &PipelineConfig) -> Result<Vec<ImageOutcome>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {} workers: {e}", config.workers)))?;
    Ok(pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let start = Instant::now();
                let grid = load_feature_grid(path);
                let load_time = start.elapsed();
                ImageOutcome {
                    path: path.clone(),
                    load_time,
                    result: grid.and_then(|g| run_image(&g, config)),
                }
            })
            .collect()
    }))
}

/// Numeric image ids when every id parses and they are distinct, otherwise
/// 1-based positions.
pub fn assign_image_ids(ids: &[&str]) -> Vec<u64> {
    let parsed: Option<Vec<u64>> = ids.iter().map(|s| s.trim().parse().ok()).collect();
    if let Some(p) = parsed {
        let mut sorted = p.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() == p.len() {
            return p;
        }
    }
    (1..=ids.len() as u64).collect()
}

/// Builds the annotation file for the successful results, in order.
pub fn assemble(results: &[&ImageResult], config: &PipelineConfig) -> AnnotationSet {
    let ids = assign_image_ids(&results.iter().map(|r| r.meta.image_id.as_str()).collect::<Vec<_>>());
    let mut set = AnnotationSet::new(serde_json::json!({ "config": config.echo() }));
    for (r, id) in results.iter().zip(ids) {
        set.push_image(
            ImageEntry {
                id,
                file_name: r.meta.image_id.clone(),
                width: r.meta.orig_width,
                height: r.meta.orig_height,
            },
            &r.masks,
        );
    }
    set
}

/// Feature files (`*.npy`) directly inside `dir`, sorted by name.
pub fn feature_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "npy") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
