use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{imageops, GrayImage, Luma};
use ndarray::{Array2, ArrayView2};

use cutonce::affinity::cosine_matrix;
use cutonce::load_feature_grid;
use cutonce::pipeline::trace_image;
use cutonce::PipelineConfig;

/// Min-max scales a map to 0..=255; a constant map becomes mid-gray.
fn to_gray(map: ArrayView2<f64>) -> GrayImage {
    let (h, w) = map.dim();
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = map[[y as usize, x as usize]];
        let level = if span > 0.0 { (v - lo) / span * 255.0 } else { 127.0 };
        Luma([level.round() as u8])
    })
}

fn save(dir: &Path, name: &str, img: &GrayImage, scale: u32) -> Result<()> {
    let path = dir.join(name);
    let img = if scale > 1 {
        imageops::resize(img, img.width() * scale, img.height() * scale, imageops::FilterType::Nearest)
    } else {
        img.clone()
    };
    img.save(&path).with_context(|| format!("writing {}", path.display()))
}

pub fn run(features: &Path, out: &Path, rows: Option<Vec<usize>>, cfg: &PipelineConfig) -> Result<()> {
    let grid = load_feature_grid(features)?;
    let (result, trace) = trace_image(&grid, cfg)?;
    let (h, w) = (trace.grid.height(), trace.grid.width());
    let n = h * w;
    let rows = rows.unwrap_or_else(|| {
        vec![
            (h / 2) * w + w / 2,
            (h / 4) * w + w / 4,
            (h / 4) * w + 3 * w / 4,
            (3 * h / 4) * w + w / 4,
            (3 * h / 4) * w + 3 * w / 4,
        ]
    });
    if let Some(bad) = rows.iter().find(|&&r| r >= n) {
        bail!("row {bad} is outside the {n}-patch grid");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scale = trace.grid.patch_size() as u32;

    let s = cosine_matrix(&trace.grid)?;
    for &r in &rows {
        let map = s.row(r).to_owned().into_shape_with_order((h, w))?;
        save(out, &format!("similarity_{r}.pgm"), &to_gray(map.view()), scale)?;
    }
    drop(s);
    save(out, "weights.pgm", &to_gray(trace.graph.weights().view()), 1)?;
    save(out, "fiedler.pgm", &to_gray(trace.saliency.raw.view()), scale)?;
    save(out, "boundary.pgm", &to_gray(trace.saliency.boundary.view()), scale)?;
    save(out, "augmented.pgm", &to_gray(trace.saliency.augmented.view()), scale)?;
    save(out, "oriented.pgm", &to_gray(trace.split.oriented.view()), scale)?;
    let fg = trace.split.foreground.mapv(|f| if f { 1.0 } else { 0.0 });
    save(out, "foreground.pgm", &to_gray(fg.view()), scale)?;

    // Components in rank order get decreasing brightness; dropped ones stay
    // dark but visible.
    let labels = &trace.components.labels;
    let kept: Vec<u32> = result.masks.iter().map(|m| m.component_id).collect();
    let mut shade = vec![0.0; trace.components.len() + 1];
    for (rank, &id) in trace.components.order.iter().enumerate() {
        shade[id as usize] = if kept.contains(&id) {
            1.0 - 0.5 * rank as f64 / trace.components.len().max(1) as f64
        } else {
            0.2
        };
    }
    let comp: Array2<f64> = labels.mapv(|l| shade[l as usize]);
    let mut comp_img = to_gray(comp.view());
    if comp.iter().all(|&v| v == 0.0) {
        comp_img.fill(0);
    }
    save(out, "components.pgm", &comp_img, scale)?;

    for m in &result.masks {
        let map = m.pixel_mask.mapv(|p| if p { 1.0 } else { 0.0 });
        save(out, &format!("mask_{}.pgm", m.rank), &to_gray(map.view()), 1)?;
    }

    let summary = serde_json::json!({
        "image_id": result.meta.image_id,
        "grid": [h, w],
        "lambda1": result.lambda1,
        "residual": result.residual,
        "solver": result.solver,
        "flip_reason": result.flip_reason,
        "threshold": trace.split.threshold,
        "component_sums": trace.components.sums,
        "component_order": trace.components.order,
        "selected": kept,
        "scores": result.masks.iter().map(|m| m.score).collect::<Vec<_>>(),
        "similarity_rows": rows,
        "config": cfg.echo(),
    });
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote intermediates for {} to {}", result.meta.image_id, out.display());
    Ok(())
}
