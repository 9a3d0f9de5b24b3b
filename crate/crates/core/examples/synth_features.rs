//! Writes planted-object feature grids (NPY + sidecar) and the matching
//! ground-truth annotation file.
//!
//! cargo run --example synth_features -- OUT_DIR [COUNT] [SEED]

use std::path::PathBuf;

use cutonce::annotations::{export_annotations, AnnotationRecord, AnnotationSet, ImageEntry};
use cutonce::instances::upsample_mask;
use cutonce::save_feature_grid;
use cutonce::synthetic::{planted_scene, PlantedSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: synth_features OUT_DIR [COUNT] [SEED]")?);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    std::fs::create_dir_all(out.join("features"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = AnnotationSet::new(serde_json::Value::Null);
    let mut next_id = 1;
    for i in 0..count {
        let spec = PlantedSpec::random(&mut rng);
        let scene = planted_scene(&mut rng, &spec)?;
        let image_id = (i + 1) as u64;
        let grid = scene.grid.with_image_id(image_id.to_string());
        save_feature_grid(&grid, out.join("features").join(format!("{image_id:06}.npy")))?;
        let meta = grid.metadata();
        gt.images.push(ImageEntry {
            id: image_id,
            file_name: meta.image_id.clone(),
            width: meta.orig_width,
            height: meta.orig_height,
        });
        for obj in &scene.objects {
            let pixels = upsample_mask(obj, meta.orig_height, meta.orig_width);
            gt.annotations.push(AnnotationRecord::from_mask(next_id, image_id, &pixels));
            next_id += 1;
        }
    }
    export_annotations(&gt, out.join("gt.json"))?;
    println!("wrote {count} grids and {} objects to {}", next_id - 1, out.display());
    Ok(())
}
