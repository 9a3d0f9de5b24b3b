//! COCO-style class-agnostic annotation files with uncompressed RLE masks.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{BBox, InstanceMask};

pub const CATEGORY_ID: u32 = 1;

/// Column-major run lengths, starting with a (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    fn check(&self) -> std::result::Result<(), String> {
        let total: u64 = self.counts.iter().sum();
        let expected = (self.size[0] * self.size[1]) as u64;
        if total != expected {
            return Err(format!(
                "run lengths sum to {total}, expected {expected} for size {:?}",
                self.size
            ));
        }
        if let Some(i) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(format!("run {} is empty", i + 1));
        }
        Ok(())
    }
}

pub fn rle_encode(mask: &Array2<bool>) -> RleMask {
    let (h, w) = mask.dim();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            if mask[[y, x]] != current {
                counts.push(run);
                current = !current;
                run = 0;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        size: [h, w],
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<Array2<bool>> {
    rle.check().map_err(Error::Format)?;
    let (h, w) = (rle.height(), rle.width());
    let mut mask = Array2::from_elem((h, w), false);
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        let c = c as usize;
        if i % 2 == 1 {
            for p in pos..pos + c {
                mask[[p % h, p / h]] = true;
            }
        }
        pos += c;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub segmentation: RleMask,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl AnnotationRecord {
    pub fn from_instance(id: u64, image_id: u64, mask: &InstanceMask) -> Self {
        AnnotationRecord {
            id,
            image_id,
            category_id: CATEGORY_ID,
            segmentation: rle_encode(&mask.pixel_mask),
            bbox: bbox_array(Some(mask.bbox)),
            area: mask.area,
            score: Some(mask.score),
        }
    }

    /// Ground-truth style record (no score) for a pixel mask.
    pub fn from_mask(id: u64, image_id: u64, mask: &Array2<bool>) -> Self {
        let segmentation = rle_encode(mask);
        AnnotationRecord {
            id,
            image_id,
            category_id: CATEGORY_ID,
            bbox: bbox_array(BBox::of_mask(mask)),
            area: segmentation.area(),
            segmentation,
            score: None,
        }
    }
}

fn bbox_array(b: Option<BBox>) -> [f64; 4] {
    match b {
        Some(b) => [b.x as f64, b.y as f64, b.w as f64, b.h as f64],
        None => [0.0; 4],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

impl Default for Category {
    fn default() -> Self {
        Category {
            id: CATEGORY_ID,
            name: "object".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub info: serde_json::Value,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub categories: Vec<Category>,
}

impl Default for AnnotationSet {
    fn default() -> Self {
        AnnotationSet {
            info: serde_json::Value::Null,
            images: Vec::new(),
            annotations: Vec::new(),
            categories: vec![Category::default()],
        }
    }
}

impl AnnotationSet {
    pub fn new(info: serde_json::Value) -> Self {
        AnnotationSet {
            info,
            ..Default::default()
        }
    }

    /// Adds an image and one record per mask, numbering records after the
    /// last one present.
    pub fn push_image(&mut self, image: ImageEntry, masks: &[InstanceMask]) {
        let mut next = self.annotations.last().map_or(1, |r| r.id + 1);
        for m in masks {
            self.annotations
                .push(AnnotationRecord::from_instance(next, image.id, m));
            next += 1;
        }
        self.images.push(image);
    }

    /// Checks internal consistency; the error names the offending JSON path.
    pub fn validate(&self) -> Result<()> {
        let mut sizes = HashMap::new();
        for (i, img) in self.images.iter().enumerate() {
            if sizes.insert(img.id, (img.height, img.width)).is_some() {
                return Err(Error::Format(format!("images[{i}].id: duplicate id {}", img.id)));
            }
        }
        let mut ids = HashSet::new();
        for (i, r) in self.annotations.iter().enumerate() {
            let at = |field: &str| format!("annotations[{i}].{field}");
            if !ids.insert(r.id) {
                return Err(Error::Format(format!("{}: duplicate id {}", at("id"), r.id)));
            }
            let Some(&(h, w)) = sizes.get(&r.image_id) else {
                return Err(Error::Format(format!(
                    "{}: no image with id {}",
                    at("image_id"),
                    r.image_id
                )));
            };
            if r.segmentation.size != [h, w] {
                return Err(Error::Format(format!(
                    "{}: {:?} does not match image size [{h}, {w}]",
                    at("segmentation.size"),
                    r.segmentation.size
                )));
            }
            let mask = rle_decode(&r.segmentation)
                .map_err(|e| Error::Format(format!("{}: {e}", at("segmentation.counts"))))?;
            let area = r.segmentation.area();
            if r.area != area {
                return Err(Error::Format(format!(
                    "{}: {} but the mask has {area} pixels",
                    at("area"),
                    r.area
                )));
            }
            let tight = bbox_array(BBox::of_mask(&mask));
            if r.bbox != tight {
                return Err(Error::Format(format!(
                    "{}: {:?} but the mask spans {tight:?}",
                    at("bbox"),
                    r.bbox
                )));
            }
            if let Some(s) = r.score {
                if !s.is_finite() {
                    return Err(Error::Format(format!("{}: {s} is not finite", at("score"))));
                }
            }
        }
        Ok(())
    }

    /// Compact JSON with fixed key order and shortest round-trip floats,
    /// terminated by a newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)
            .map_err(|e| Error::Format(format!("cannot serialize annotations: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let set: AnnotationSet = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Format(format!("{}: {}", e.path(), e.inner())))?;
        set.validate()?;
        Ok(set)
    }
}

pub fn export_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = set.to_json()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn import_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationSet::from_json(&text)
}
