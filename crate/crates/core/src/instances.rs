//! Connected components, the cumulative-saliency filter, pixel masks and
//! confidence scores.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::Bipartition;

/// Foreground regions under 4-connectivity.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    /// 0 is background; ids `1..=len` follow first-encounter raster order.
    pub labels: Array2<u32>,
    /// Sum of the oriented field over each component, indexed by `id - 1`.
    pub sums: Vec<f64>,
    /// Patch count per component, indexed by `id - 1`.
    pub areas: Vec<usize>,
    /// Component ids by descending sum, ties by lower id.
    pub order: Vec<u32>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn sum_of(&self, id: u32) -> f64 {
        self.sums[id as usize - 1]
    }

    pub fn area_of(&self, id: u32) -> usize {
        self.areas[id as usize - 1]
    }

    pub fn mask_of(&self, id: u32) -> Array2<bool> {
        self.labels.mapv(|l| l == id)
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

/// Labels 4-connected foreground regions (two-pass union-find).
pub fn label_components(foreground: &Array2<bool>) -> (Array2<u32>, usize) {
    let (h, w) = foreground.dim();
    let mut provisional = Array2::<u32>::zeros((h, w));
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !foreground[[y, x]] {
                continue;
            }
            let up = if y > 0 { provisional[[y - 1, x]] } else { 0 };
            let left = if x > 0 { provisional[[y, x - 1]] } else { 0 };
            provisional[[y, x]] = match (up, left) {
                (0, 0) => {
                    let id = parent.len() as u32;
                    parent.push(id);
                    id
                }
                (a, 0) | (0, a) => a,
                (a, b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                    lo
                }
            };
        }
    }
    // Roots are the smallest provisional id in their set, and provisional ids
    // grow in raster order, so numbering roots by first encounter keeps the
    // raster-order convention.
    let mut final_id = vec![0u32; parent.len()];
    let mut count = 0u32;
    let labels = provisional.mapv(|p| {
        if p == 0 {
            return 0;
        }
        let r = find(&mut parent, p) as usize;
        if final_id[r] == 0 {
            count += 1;
            final_id[r] = count;
        }
        final_id[r]
    });
    (labels, count as usize)
}

/// Components of `foreground` with their sums over `oriented`.
pub fn connected_components(
    foreground: &Array2<bool>,
    oriented: &Array2<f64>,
) -> Result<ComponentSet> {
    if foreground.dim() != oriented.dim() {
        return Err(Error::Contract(format!(
            "foreground {:?} and oriented field {:?} differ in shape",
            foreground.dim(),
            oriented.dim()
        )));
    }
    let (labels, count) = label_components(foreground);
    let mut sums = vec![0.0; count];
    let mut areas = vec![0usize; count];
    for (&l, &v) in labels.iter().zip(oriented.iter()) {
        if l > 0 {
            sums[l as usize - 1] += v;
            areas[l as usize - 1] += 1;
        }
    }
    let order = descending_order(&sums)
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect();
    Ok(ComponentSet {
        labels,
        sums,
        areas,
        order,
    })
}

fn descending_order(sums: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    order
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("filter threshold must be in (0, 1), got {tau}")))
    }
}

/// Indices (into `sums`) kept by the cumulative-share filter, in rank order.
///
/// Sums are clamped at zero before taking shares. When nothing is positive
/// the component with the largest area wins (lowest index on ties).
pub fn filter_prefix(sums: &[f64], areas: &[usize], tau: f64) -> Result<Vec<usize>> {
    check_tau(tau)?;
    if sums.len() != areas.len() {
        return Err(Error::Contract(format!(
            "{} sums but {} areas",
            sums.len(),
            areas.len()
        )));
    }
    if sums.is_empty() {
        return Ok(Vec::new());
    }
    let order = descending_order(sums);
    let total = order.iter().fold(0.0, |acc, &i| acc + sums[i].max(0.0));
    if total <= 0.0 {
        let mut best = 0;
        for (i, &a) in areas.iter().enumerate() {
            if a > areas[best] {
                best = i;
            }
        }
        return Ok(vec![best]);
    }
    let mut cumulative = 0.0;
    for (taken, &i) in order.iter().enumerate() {
        cumulative += sums[i].max(0.0);
        if cumulative / total >= tau {
            return Ok(order[..=taken].to_vec());
        }
    }
    Ok(order)
}

/// Component ids kept by the filter, highest sum first.
pub fn rank_filter(components: &ComponentSet, tau: f64) -> Result<Vec<u32>> {
    Ok(filter_prefix(&components.sums, &components.areas, tau)?
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect())
}

/// Bilinear resize of a binary map (half-pixel centers, edge clamped),
/// thresholded at 0.5 inclusive.
pub fn upsample_mask(patch_mask: &Array2<bool>, out_height: usize, out_width: usize) -> Array2<bool> {
    let (h, w) = patch_mask.dim();
    let taps = |out: usize, size: usize| -> Vec<(usize, usize, f64)> {
        let scale = size as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(size - 1);
                let hi = (lo + 1).min(size - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(out_height, h);
    let cols = taps(out_width, w);
    let at = |y: usize, x: usize| if patch_mask[[y, x]] { 1.0 } else { 0.0 };
    Array2::from_shape_fn((out_height, out_width), |(oy, ox)| {
        let (y0, y1, fy) = rows[oy];
        let (x0, x1, fx) = cols[ox];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy >= 0.5
    })
}

/// Linearly decreasing confidences from 1.0 down to 0.5.
pub fn assign_scores(n_masks: usize) -> Result<Vec<f64>> {
    match n_masks {
        0 => Err(Error::Parameter("at least one mask is needed to assign scores".into())),
        1 => Ok(vec![1.0]),
        n => {
            let denom = (2 * n - 2) as f64;
            Ok((0..n).map(|k| 1.0 - k as f64 / denom).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Tight box around the true cells, `None` for an empty mask.
    pub fn of_mask(mask: &Array2<bool>) -> Option<BBox> {
        let mut extent: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), &on) in mask.indexed_iter() {
            if on {
                extent = Some(match extent {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        extent.map(|(x0, y0, x1, y1)| BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

#[derive(Debug, Clone)]
pub struct InstanceMask {
    pub component_id: u32,
    pub patch_mask: Array2<bool>,
    pub pixel_mask: Array2<bool>,
    pub bbox: BBox,
    /// Pixel count of `pixel_mask`.
    pub area: u64,
    pub saliency_sum: f64,
    pub rank: usize,
    pub score: f64,
}

/// Runs components → filter → upsampling → scoring on one bipartition.
pub fn extract_instances(
    split: &Bipartition,
    tau: f64,
    orig_height: usize,
    orig_width: usize,
) -> Result<(ComponentSet, Vec<InstanceMask>)> {
    check_tau(tau)?;
    let components = connected_components(&split.foreground, &split.oriented)?;
    let selected = rank_filter(&components, tau)?;
    let mut kept = Vec::with_capacity(selected.len());
    for id in selected {
        let patch_mask = components.mask_of(id);
        let pixel_mask = upsample_mask(&patch_mask, orig_height, orig_width);
        let Some(bbox) = BBox::of_mask(&pixel_mask) else {
            continue;
        };
        let area = pixel_mask.iter().filter(|&&p| p).count() as u64;
        kept.push((id, patch_mask, pixel_mask, bbox, area));
    }
    if kept.is_empty() {
        return Ok((components, Vec::new()));
    }
    let scores = assign_scores(kept.len())?;
    let masks = kept
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(rank, ((id, patch_mask, pixel_mask, bbox, area), score))| InstanceMask {
            component_id: id,
            saliency_sum: components.sum_of(id),
            patch_mask,
            pixel_mask,
            bbox,
            area,
            rank,
            score,
        })
        .collect();
    Ok((components, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_pixels_are_separate() {
        let fg = array![[true, false], [false, true]];
        let (labels, n) = label_components(&fg);
        assert_eq!(n, 2);
        assert_eq!(labels, array![[1, 0], [0, 2]]);
    }

    #[test]
    fn full_map_is_one_component() {
        let (labels, n) = label_components(&Array2::from_elem((5, 7), true));
        assert_eq!(n, 1);
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn u_shape_merges() {
        let fg = array![
            [true, false, true],
            [true, false, true],
            [true, true, true],
        ];
        let (labels, n) = label_components(&fg);
        assert_eq!(n, 1);
        assert_eq!(labels[[0, 2]], 1);
    }

    #[test]
    fn components_rank_by_sum() {
        let fg = array![[true, false, true], [false, false, true]];
        let v = array![[0.5, 0.0, 1.0], [0.0, 0.0, 2.0]];
        let set = connected_components(&fg, &v).unwrap();
        assert_eq!(set.sums, vec![0.5, 3.0]);
        assert_eq!(set.areas, vec![1, 2]);
        assert_eq!(set.order, vec![2, 1]);
    }

    #[test]
    fn worked_filter_example() {
        let kept = filter_prefix(&[5.0, 3.0, 1.5, 0.5], &[1, 1, 1, 1], 0.95).unwrap();
        assert_eq!(kept, vec![0, 1, 2]);
        assert_eq!(filter_prefix(&[-2.0], &[3], 0.5).unwrap(), vec![0]);
        assert_eq!(filter_prefix(&[7.0], &[3], 0.99).unwrap(), vec![0]);
    }

    #[test]
    fn non_positive_totals_fall_back_to_area() {
        let kept = filter_prefix(&[-1.0, 0.0, -0.5], &[2, 3, 5], 0.95).unwrap();
        assert_eq!(kept, vec![2]);
    }

    #[test]
    fn filter_rejects_bad_tau() {
        for tau in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(filter_prefix(&[1.0], &[1], tau).is_err());
        }
    }

    #[test]
    fn scores() {
        assert_eq!(assign_scores(1).unwrap(), vec![1.0]);
        assert_eq!(assign_scores(3).unwrap(), vec![1.0, 0.75, 0.5]);
        assert!(assign_scores(0).is_err());
    }

    #[test]
    fn full_mask_upsamples_full() {
        let up = upsample_mask(&Array2::from_elem((3, 4), true), 17, 29);
        assert!(up.iter().all(|&p| p));
    }

    #[test]
    fn single_patch_blob() {
        let mut m = Array2::from_elem((4, 4), false);
        m[[1, 2]] = true;
        let up = upsample_mask(&m, 32, 32);
        let bbox = BBox::of_mask(&up).unwrap();
        assert_eq!((bbox.x, bbox.y, bbox.w, bbox.h), (16, 8, 8, 8));
        assert!(up[[11, 19]] && up[[12, 20]]);
    }

    #[test]
    fn bbox_of_empty_is_none() {
        assert!(BBox::of_mask(&Array2::from_elem((2, 2), false)).is_none());
    }
}
