//! Class-agnostic AP / AR with COCO-style greedy matching and 101-point
//! interpolation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationRecord, AnnotationSet, RleMask};
use crate::error::{Error, Result};

pub const RECALL_POINTS: usize = 101;
pub const MAX_DETS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    #[default]
    Segm,
    Bbox,
}

impl FromStr for IouType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "segm" | "mask" => Ok(IouType::Segm),
            "bbox" | "box" => Ok(IouType::Bbox),
            other => Err(Error::Parameter(format!(
                "unknown IoU type {other:?} (expected segm or bbox)"
            ))),
        }
    }
}

/// `0.50:0.05:0.95`, generated the way `numpy.linspace` does it.
pub fn default_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

fn runs(rle: &RleMask) -> Vec<(u64, u64)> {
    let mut out = Vec::with_capacity(rle.counts.len() / 2);
    let mut pos = 0;
    for (i, &c) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            out.push((pos, pos + c));
        }
        pos += c;
    }
    out
}

/// `|a ∩ b| / |a ∪ b|` computed on the run lists; 0 for two empty masks.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64> {
    if a.size != b.size {
        return Err(Error::Contract(format!(
            "masks of size {:?} and {:?} cannot be compared",
            a.size, b.size
        )));
    }
    let (ra, rb) = (runs(a), runs(b));
    let (mut i, mut j, mut inter) = (0, 0, 0u64);
    while i < ra.len() && j < rb.len() {
        let lo = ra[i].0.max(rb[j].0);
        let hi = ra[i].1.min(rb[j].1);
        if hi > lo {
            inter += hi - lo;
        }
        if ra[i].1 < rb[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU of two `[x, y, w, h]` boxes.
pub fn bbox_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Matching outcome for one image at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One flag per prediction in descending score order.
    pub true_positive: Vec<bool>,
    /// Prediction index (in score order) matched to each GT, if any.
    pub gt_matches: Vec<Option<usize>>,
}

/// Greedy matching: predictions in the given order each take the unmatched
/// GT with the highest IoU ≥ `threshold` (lowest GT index on ties).
pub fn greedy_match(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> MatchResult {
    let mut gt_matches = vec![None; n_gt];
    let true_positive = ious
        .iter()
        .enumerate()
        .map(|(d, row)| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_matches[g].is_some() || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                gt_matches[g] = Some(d);
                true
            } else {
                false
            }
        })
        .collect();
    MatchResult {
        true_positive,
        gt_matches,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    /// Interpolated precision at each recall point.
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// 101-point interpolated AP from detections `(score, is_tp)` pooled over
/// images in image order. Returns `None` when there is no ground truth.
pub fn pr_curve(detections: &[(f64, bool)], n_gt: usize) -> Option<PrCurve> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut rc = Vec::with_capacity(order.len());
    let mut pr = Vec::with_capacity(order.len());
    for &i in &order {
        if detections[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        rc.push(tp as f64 / n_gt as f64);
        pr.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let recall = linspace(0.0, 1.0, RECALL_POINTS);
    let precision: Vec<f64> = recall
        .iter()
        .map(|&r| {
            let idx = rc.partition_point(|&x| x < r);
            pr.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    let ap = precision.iter().sum::<f64>() / RECALL_POINTS as f64;
    Some(PrCurve {
        recall,
        precision,
        ap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    /// −1 when there is no ground truth.
    pub ap: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// AP at IoU 0.5, when 0.5 is among the thresholds.
    pub ap50: Option<f64>,
    /// Mean AP over the thresholds.
    pub ap: f64,
    /// Mean recall over the thresholds with at most 100 predictions per image.
    pub ar100: f64,
    pub iou_type: IouType,
    pub per_threshold: Vec<ThresholdMetrics>,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_pred: usize,
}

impl Metrics {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:>8}  {:>8}", "IoU", "AP", "recall");
        for t in &self.per_threshold {
            let _ = writeln!(s, "{:>6.2}  {:>8.4}  {:>8.4}", t.iou, t.ap, t.recall);
        }
        let ap50 = self.ap50.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "{} AP50 {ap50}  AP {:.4}  AR@{MAX_DETS} {:.4}  ({} images, {} gt, {} predictions)",
            match self.iou_type {
                IouType::Segm => "segm",
                IouType::Bbox => "bbox",
            },
            self.ap,
            self.ar100,
            self.n_images,
            self.n_gt,
            self.n_pred
        );
        s
    }
}

fn mean_valid(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v
        .filter(|x| *x >= 0.0)
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        -1.0
    } else {
        sum / n as f64
    }
}

/// Scores `preds` against `gts`. Images are those listed in `gts`.
pub fn evaluate(
    preds: &AnnotationSet,
    gts: &AnnotationSet,
    thresholds: &[f64],
    iou_type: IouType,
) -> Result<Metrics> {
    if thresholds.is_empty() {
        return Err(Error::Parameter("at least one IoU threshold is needed".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::Parameter(format!("IoU threshold {t} is outside (0, 1]")));
    }
    let slot: HashMap<u64, usize> = gts
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.id, i))
        .collect();
    let mut gt_by_image: Vec<Vec<&AnnotationRecord>> = vec![Vec::new(); gts.images.len()];
    for g in &gts.annotations {
        let &i = slot.get(&g.image_id).ok_or_else(|| {
            Error::Validation(format!("ground truth {} refers to unknown image {}", g.id, g.image_id))
        })?;
        gt_by_image[i].push(g);
    }
    let mut pred_by_image: Vec<Vec<&AnnotationRecord>> = vec![Vec::new(); gts.images.len()];
    for p in &preds.annotations {
        let &i = slot.get(&p.image_id).ok_or_else(|| {
            Error::Validation(format!("prediction {} refers to unknown image {}", p.id, p.image_id))
        })?;
        match p.score {
            Some(s) if s.is_finite() => {}
            _ => {
                return Err(Error::Validation(format!(
                    "prediction {} has no finite score",
                    p.id
                )))
            }
        }
        pred_by_image[i].push(p);
    }

    let per_image: Vec<(Vec<f64>, Vec<MatchResult>)> = pred_by_image
        .par_iter_mut()
        .zip(gt_by_image.par_iter())
        .map(|(dets, gt)| -> Result<_> {
            // Stable sort keeps input order among equal scores.
            dets.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));
            dets.truncate(MAX_DETS);
            let ious = dets
                .iter()
                .map(|d| {
                    gt.iter()
                        .map(|g| match iou_type {
                            IouType::Segm => mask_iou(&d.segmentation, &g.segmentation)
                                .map_err(|e| Error::Validation(format!("prediction {}: {e}", d.id))),
                            IouType::Bbox => Ok(bbox_iou(&d.bbox, &g.bbox)),
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let scores = dets.iter().map(|d| d.score.unwrap()).collect();
            let matches = thresholds
                .iter()
                .map(|&t| greedy_match(&ious, gt.len(), t))
                .collect();
            Ok((scores, matches))
        })
        .collect::<Result<_>>()?;

    let n_gt: usize = gt_by_image.iter().map(Vec::len).sum();
    let per_threshold: Vec<ThresholdMetrics> = thresholds
        .iter()
        .enumerate()
        .map(|(ti, &iou)| {
            let mut detections = Vec::new();
            let mut matched = 0usize;
            for (scores, matches) in &per_image {
                let m = &matches[ti];
                detections.extend(scores.iter().copied().zip(m.true_positive.iter().copied()));
                matched += m.gt_matches.iter().filter(|g| g.is_some()).count();
            }
            match pr_curve(&detections, n_gt) {
                Some(curve) => ThresholdMetrics {
                    iou,
                    ap: curve.ap,
                    recall: matched as f64 / n_gt as f64,
                },
                None => ThresholdMetrics {
                    iou,
                    ap: -1.0,
                    recall: -1.0,
                },
            }
        })
        .collect();

    Ok(Metrics {
        ap50: per_threshold
            .iter()
            .find(|t| (t.iou - 0.5).abs() < 1e-12)
            .map(|t| t.ap),
        ap: mean_valid(per_threshold.iter().map(|t| t.ap)),
        ar100: mean_valid(per_threshold.iter().map(|t| t.recall)),
        iou_type,
        n_images: gts.images.len(),
        n_gt,
        n_pred: preds.annotations.len(),
        per_threshold,
    })
}
