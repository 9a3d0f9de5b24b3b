//! Patch feature grids exported by the feature extractor.
//!
//! A grid lives on disk as two files sharing a stem:
//!
//! * `<stem>.npy`: an NPY v1.0 array, `'<f4'`, C order, shape `(D, H, W)`;
//! * `<stem>.json`: geometry sidecar with `image_id`, `orig_width`,
//!   `orig_height`, `resized_width`, `resized_height`, `patch_size` and an
//!   informational `model` tag.
//!
//! Patch `i` of the flattened grid is `(y, x)` with `i = y * W + x`.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use ndarray_npy::{ReadNpyError, ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors shorter than this cannot be normalized.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

/// Sidecar metadata written next to every feature tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub image_id: String,
    pub orig_width: usize,
    pub orig_height: usize,
    pub resized_width: usize,
    pub resized_height: usize,
    pub patch_size: usize,
    #[serde(default)]
    pub model: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    meta: GridMetadata,
    /// `[D, H, W]`, always in standard layout.
    features: Array3<f32>,
    normalized: bool,
}

impl FeatureGrid {
    /// Builds a grid from an in-memory tensor, checking shape against geometry.
    pub fn new(meta: GridMetadata, features: Array3<f32>) -> Result<Self> {
        let features = features.as_standard_layout().into_owned();
        validate(&meta, &features)?;
        Ok(FeatureGrid {
            meta,
            features,
            normalized: false,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.meta.image_id
    }

    pub fn metadata(&self) -> &GridMetadata {
        &self.meta
    }

    pub fn with_image_id(mut self, id: impl Into<String>) -> Self {
        self.meta.image_id = id.into();
        self
    }

    pub fn features(&self) -> &Array3<f32> {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len_of(Axis(0))
    }

    pub fn height(&self) -> usize {
        self.features.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.features.len_of(Axis(2))
    }

    /// Number of patches, i.e. graph nodes.
    pub fn n_nodes(&self) -> usize {
        self.height() * self.width()
    }

    pub fn patch_size(&self) -> usize {
        self.meta.patch_size
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Feature vector of patch `i` widened to 64 bits.
    pub fn patch_vector(&self, i: usize) -> Vec<f64> {
        let (y, x) = (i / self.width(), i % self.width());
        self.features
            .index_axis(Axis(2), x)
            .index_axis(Axis(1), y)
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }

    /// The `[N, D]` patch matrix K (one row per patch) in 64-bit.
    pub fn patch_matrix(&self) -> Array2<f64> {
        let (d, n) = (self.dim(), self.n_nodes());
        let flat = self
            .features
            .view()
            .into_shape_with_order((d, n))
            .expect("standard layout");
        flat.t().mapv(f64::from)
    }

    /// Rescales every patch vector to unit L2 norm.
    ///
    /// The norm is taken in 64-bit and the quotient rounded back to 32-bit so
    /// that a normalized grid still serializes losslessly.
    pub fn normalize(&self) -> Result<FeatureGrid> {
        let (h, w) = (self.height(), self.width());
        let mut out = self.features.clone();
        for y in 0..h {
            for x in 0..w {
                let mut lane = out.slice_mut(ndarray::s![.., y, x]);
                let norm = lane
                    .iter()
                    .map(|&v| f64::from(v) * f64::from(v))
                    .sum::<f64>()
                    .sqrt();
                if !(norm >= MIN_FEATURE_NORM) {
                    return Err(Error::Data(format!(
                        "patch {} (y={y}, x={x}) has near-zero norm {norm:e}",
                        y * w + x
                    )));
                }
                lane.mapv_inplace(|v| (f64::from(v) / norm) as f32);
            }
        }
        Ok(FeatureGrid {
            meta: self.meta.clone(),
            features: out,
            normalized: true,
        })
    }
}

fn validate(meta: &GridMetadata, features: &Array3<f32>) -> Result<()> {
    let (d, h, w) = features.dim();
    if d < 1 || h < 2 || w < 2 {
        return Err(Error::Validation(format!(
            "feature tensor shape [{d}, {h}, {w}] needs D >= 1, H >= 2, W >= 2"
        )));
    }
    if meta.patch_size == 0 || meta.orig_width == 0 || meta.orig_height == 0 {
        return Err(Error::Validation(
            "patch_size and original dimensions must be positive".into(),
        ));
    }
    if meta.resized_height != h * meta.patch_size || meta.resized_width != w * meta.patch_size {
        return Err(Error::Validation(format!(
            "metadata resized {}x{} with patch {} implies a {}x{} grid, tensor has {h}x{w}",
            meta.resized_width,
            meta.resized_height,
            meta.patch_size,
            meta.resized_width / meta.patch_size,
            meta.resized_height / meta.patch_size,
        )));
    }
    Ok(())
}

/// Sidecar path for a tensor path: same stem, `.json` extension.
pub fn sidecar_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("json")
}

/// Loads an unnormalized grid from `<stem>.npy` and its sidecar.
pub fn load_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let features = Array3::<f32>::read_npy(BufReader::new(file)).map_err(|e| match e {
        ReadNpyError::Io(source) => Error::io(path, source),
        ReadNpyError::WrongNdim(_, got) => Error::Validation(format!(
            "{}: expected a 3-d (D, H, W) tensor, header has {got} dimensions",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;

    let meta_path = sidecar_path(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: GridMetadata = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;

    if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{}: non-finite value at flat index {bad}",
            path.display()
        )));
    }
    let grid = FeatureGrid::new(meta, features)?;
    for i in 0..grid.n_nodes() {
        let norm = grid.patch_vector(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < MIN_FEATURE_NORM {
            return Err(Error::Data(format!(
                "{}: patch {i} is a zero vector",
                path.display()
            )));
        }
    }
    Ok(grid)
}

/// Writes `<stem>.npy` (little-endian f32, C order) and `<stem>.json`.
pub fn save_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    grid.features
        .write_npy(std::io::BufWriter::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let meta_path = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&grid.meta).expect("metadata serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}
