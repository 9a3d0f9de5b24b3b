//! Boundary-augmented saliency and foreground/background orientation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Neighborhood {
    Four,
    #[default]
    Eight,
}

impl Neighborhood {
    /// Neighbor offsets `(dy, dx)` in raster order.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Neighborhood::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Neighborhood::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }

    pub fn size(self) -> usize {
        self.offsets().len()
    }
}

impl From<Neighborhood> for u8 {
    fn from(n: Neighborhood) -> u8 {
        n.size() as u8
    }
}

impl TryFrom<u8> for Neighborhood {
    type Error = Error;

    fn try_from(k: u8) -> Result<Self> {
        match k {
            4 => Ok(Neighborhood::Four),
            8 => Ok(Neighborhood::Eight),
            other => Err(Error::Parameter(format!("neighborhood must be 4 or 8, got {other}"))),
        }
    }
}

impl FromStr for Neighborhood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("neighborhood must be 4 or 8, got {s:?}")))?;
        Neighborhood::try_from(k)
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.size())
    }
}

/// Mean absolute difference between each cell and its neighbors, with the map
/// extended past its border by edge replication.
pub fn boundary_field(raw: &Array2<f64>, neighborhood: Neighborhood) -> Result<Array2<f64>> {
    let (h, w) = raw.dim();
    if h < 2 || w < 2 {
        return Err(Error::Parameter(format!(
            "boundary field needs a map of at least 2x2, got {h}x{w}"
        )));
    }
    let offsets = neighborhood.offsets();
    let k = offsets.len() as f64;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let center = raw[[y, x]];
        let mut acc = 0.0;
        for &(dy, dx) in offsets {
            let ny = clamp(y as isize + dy, h);
            let nx = clamp(x as isize + dx, w);
            acc += (center - raw[[ny, nx]]).abs();
        }
        acc / k
    }))
}

/// `X_a = X − X_b`.
pub fn augment(raw: &Array2<f64>, boundary: &Array2<f64>) -> Result<Array2<f64>> {
    if raw.dim() != boundary.dim() {
        return Err(Error::Contract(format!(
            "raw map {:?} and boundary map {:?} differ in shape",
            raw.dim(),
            boundary.dim()
        )));
    }
    Ok(raw - boundary)
}

#[derive(Debug, Clone)]
pub struct SaliencyField {
    pub raw: Array2<f64>,
    pub boundary: Array2<f64>,
    pub augmented: Array2<f64>,
    pub neighborhood: Neighborhood,
}

impl SaliencyField {
    /// Reshapes a Fiedler vector to `height × width` and augments it.
    pub fn from_fiedler(
        fiedler: &Array1<f64>,
        height: usize,
        width: usize,
        neighborhood: Neighborhood,
    ) -> Result<Self> {
        let raw = fiedler
            .clone()
            .into_shape_with_order((height, width))
            .map_err(|_| {
                Error::Contract(format!(
                    "vector of length {} cannot be shaped {height}x{width}",
                    fiedler.len()
                ))
            })?;
        let boundary = boundary_field(&raw, neighborhood)?;
        let augmented = augment(&raw, &boundary)?;
        Ok(SaliencyField {
            raw,
            boundary,
            augmented,
            neighborhood,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipReason {
    /// The above-mean side held three or more image corners.
    CornerRule,
    /// `|max| < |min|`.
    MaxminRule,
    None,
}

#[derive(Debug, Clone)]
pub struct Bipartition {
    /// `v`: the augmented field, negated when a flip rule fired.
    pub oriented: Array2<f64>,
    pub foreground: Array2<bool>,
    pub threshold: f64,
    pub flipped: bool,
    pub flip_reason: FlipReason,
}

fn mean(map: &Array2<f64>) -> f64 {
    map.iter().fold(0.0, |acc, &v| acc + v) / map.len() as f64
}

/// Orients the augmented field so the foreground is the above-mean side and
/// splits it.
///
/// The corner rule is checked first: if the candidate foreground (entries
/// strictly above the mean) contains at least three of the four corner
/// patches the field is negated. Otherwise the field is negated when its
/// largest magnitude is on the negative side.
pub fn orient_and_split(augmented: &Array2<f64>) -> Bipartition {
    let (h, w) = augmented.dim();
    let m = mean(augmented);
    let corners = [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)];
    let corners_above = corners.iter().filter(|&&c| augmented[c] > m).count();
    let max = augmented.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = augmented.iter().cloned().fold(f64::INFINITY, f64::min);

    let flip_reason = if corners_above >= 3 {
        FlipReason::CornerRule
    } else if max.abs() < min.abs() {
        FlipReason::MaxminRule
    } else {
        FlipReason::None
    };
    let flipped = flip_reason != FlipReason::None;
    let oriented = if flipped {
        augmented.mapv(|v| -v)
    } else {
        augmented.clone()
    };
    let threshold = mean(&oriented);
    let foreground = oriented.mapv(|v| v > threshold);
    Bipartition {
        oriented,
        foreground,
        threshold,
        flipped,
        flip_reason,
    }
}
