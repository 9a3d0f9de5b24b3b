use cutonce::annotations::{rle_decode, AnnotationRecord, AnnotationSet, ImageEntry};
use cutonce::evaluation::{default_thresholds, evaluate, IouType, Metrics};
use ndarray::Array2;
use proptest::prelude::*;

const SIDE: usize = 6;

#[derive(Debug, Clone)]
struct Instance {
    /// Per image: GT rectangles and scored predicted rectangles.
    images: Vec<(Vec<Rect>, Vec<(Rect, f64)>)>,
}

type Rect = (usize, usize, usize, usize);

fn draw(r: Rect) -> Array2<bool> {
    let (y, x, h, w) = r;
    Array2::from_shape_fn((SIDE, SIDE), |(py, px)| {
        (y..y + h).contains(&py) && (x..x + w).contains(&px)
    })
}

fn rect() -> impl Strategy<Value = Rect> {
    (0..SIDE, 0..SIDE).prop_flat_map(|(y, x)| (Just(y), Just(x), 1..=SIDE - y, 1..=SIDE - x))
}

/// Scores come from a coarse grid so that ties happen.
fn score() -> impl Strategy<Value = f64> {
    (1u32..8).prop_map(|k| k as f64 / 8.0)
}

fn instance() -> impl Strategy<Value = Instance> {
    prop::collection::vec(
        (
            prop::collection::vec(rect(), 0..=5),
            prop::collection::vec((rect(), score()), 0..=5),
        ),
        1..=3,
    )
    .prop_map(|images| Instance { images })
}

fn sets(inst: &Instance, transform: impl Fn(f64) -> f64) -> (AnnotationSet, AnnotationSet) {
    let mut gt = AnnotationSet::default();
    let mut pred = AnnotationSet::default();
    let (mut gid, mut pid) = (1, 1);
    for (i, (gts, preds)) in inst.images.iter().enumerate() {
        let image = ImageEntry {
            id: i as u64 + 10,
            file_name: format!("{i}"),
            width: SIDE,
            height: SIDE,
        };
        gt.images.push(image.clone());
        pred.images.push(image);
        for &r in gts {
            gt.annotations.push(AnnotationRecord::from_mask(gid, i as u64 + 10, &draw(r)));
            gid += 1;
        }
        for &(r, s) in preds {
            let mut a = AnnotationRecord::from_mask(pid, i as u64 + 10, &draw(r));
            a.score = Some(transform(s));
            pred.annotations.push(a);
            pid += 1;
        }
    }
    (pred, gt)
}

fn pixel_iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exhaustive reference: decode every mask, match each image greedily,
/// pool, then for every recall point take the best precision over all
/// operating points at or beyond it.
fn oracle(pred: &AnnotationSet, gt: &AnnotationSet, t: f64) -> (f64, f64) {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0;
    let mut matched = 0;
    for img in &gt.images {
        let gts: Vec<Array2<bool>> = gt
            .annotations
            .iter()
            .filter(|a| a.image_id == img.id)
            .map(|a| rle_decode(&a.segmentation).unwrap())
            .collect();
        let mut dets: Vec<(f64, Array2<bool>)> = pred
            .annotations
            .iter()
            .filter(|a| a.image_id == img.id)
            .map(|a| (a.score.unwrap(), rle_decode(&a.segmentation).unwrap()))
            .collect();
        dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        n_gt += gts.len();
        let mut taken = vec![false; gts.len()];
        for (s, m) in &dets {
            let mut best: Option<usize> = None;
            let mut best_iou = t;
            for (g, gm) in gts.iter().enumerate() {
                let iou = pixel_iou(m, gm);
                if !taken[g] && iou >= best_iou && best.is_none_or(|_| iou > best_iou) {
                    best = Some(g);
                    best_iou = iou;
                }
            }
            if let Some(g) = best {
                taken[g] = true;
                matched += 1;
            }
            pooled.push((*s, best.is_some()));
        }
    }
    if n_gt == 0 {
        return (-1.0, -1.0);
    }
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut table = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for &(_, hit) in &pooled {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        table.push((tp / n_gt as f64, tp / (tp + fp)));
    }
    let mut ap = 0.0;
    for i in 0..101 {
        // numpy.linspace(0, 1, 101)
        let r = if i == 100 { 1.0 } else { i as f64 * 0.01 };
        let p = table
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += p;
    }
    (ap / 101.0, matched as f64 / n_gt as f64)
}

/// Drops GT rectangles overlapping an earlier one in the same image.
fn disjoint_gt(mut inst: Instance) -> Instance {
    for (gts, _) in &mut inst.images {
        let mut kept: Vec<Rect> = Vec::new();
        for &r in gts.iter() {
            let m = draw(r);
            if kept.iter().all(|&k| draw(k).iter().zip(&m).all(|(a, b)| !(*a && *b))) {
                kept.push(r);
            }
        }
        *gts = kept;
    }
    inst
}

fn run(pred: &AnnotationSet, gt: &AnnotationSet) -> Metrics {
    evaluate(pred, gt, &default_thresholds(), IouType::Segm).unwrap()
}

#[test]
fn worked_examples() {
    let g = (1, 1, 3, 3);
    // exact match
    let (p, gt) = sets(&Instance { images: vec![(vec![g], vec![(g, 0.9)])] }, |s| s);
    let m = run(&p, &gt);
    assert_eq!((m.ap50, m.ar100), (Some(1.0), 1.0));
    // correct at 0.9, spurious at 0.8
    let (p, gt) = sets(
        &Instance { images: vec![(vec![g], vec![(g, 0.9), ((4, 4, 2, 2), 0.8)])] },
        |s| s,
    );
    assert_eq!(run(&p, &gt).ap50, Some(1.0));
    // 3x3 prediction inside a 4x5 GT: 9/20
    let mut gt = AnnotationSet::default();
    gt.images.push(ImageEntry { id: 1, file_name: "a".into(), width: SIDE, height: SIDE });
    let mut p = gt.clone();
    let gm = draw((0, 0, 4, 5));
    let pm = draw((1, 1, 3, 3));
    assert_eq!(pixel_iou(&pm, &gm), 0.45);
    gt.annotations.push(AnnotationRecord::from_mask(1, 1, &gm));
    let mut r = AnnotationRecord::from_mask(1, 1, &pm);
    r.score = Some(1.0);
    p.annotations.push(r);
    let m = evaluate(&p, &gt, &[0.5], IouType::Segm).unwrap();
    assert_eq!(m.ap50, Some(0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_exhaustive_oracle(inst in instance()) {
        let (pred, gt) = sets(&inst, |s| s);
        let m = run(&pred, &gt);
        for tm in &m.per_threshold {
            let (ap, recall) = oracle(&pred, &gt, tm.iou);
            prop_assert_eq!(tm.ap, ap, "AP at {}", tm.iou);
            prop_assert_eq!(tm.recall, recall, "recall at {}", tm.iou);
            prop_assert!(tm.ap == -1.0 || (0.0..=1.0).contains(&tm.ap));
        }
    }

    #[test]
    fn monotone_score_transform_changes_nothing(inst in instance()) {
        let (pred, gt) = sets(&inst, |s| s);
        let (pred2, _) = sets(&inst, |s| (3.0 * s).exp() - 7.0);
        let (a, b) = (run(&pred, &gt), run(&pred2, &gt));
        prop_assert_eq!(a.per_threshold, b.per_threshold);
    }

    /// Above 0.5 with disjoint GTs each prediction has at most one candidate,
    /// so which GTs get matched cannot depend on the score order.
    #[test]
    fn recall_ignores_score_order(inst in instance(), seed in any::<u64>()) {
        let inst = disjoint_gt(inst);
        let (pred, gt) = sets(&inst, |s| s);
        let (pred2, _) = sets(&inst, |s| ((s * 8.0) as u64 ^ seed) as f64);
        let (a, b) = (run(&pred, &gt), run(&pred2, &gt));
        for (x, y) in a.per_threshold.iter().zip(&b.per_threshold) {
            if x.iou > 0.5 {
                prop_assert_eq!(x.recall, y.recall);
            }
        }
    }

    /// With pairwise-disjoint GT masks, a prediction can clear an IoU above
    /// 0.5 with at most one GT, so its copy can only add a false positive.
    #[test]
    fn duplicate_never_raises_ap(inst in instance(), pick in any::<prop::sample::Index>()) {
        let inst = disjoint_gt(inst);
        let (mut pred, gt) = sets(&inst, |s| s);
        if pred.annotations.is_empty() {
            return Ok(());
        }
        let before = run(&pred, &gt);
        let mut dup = pred.annotations[pick.index(pred.annotations.len())].clone();
        dup.id = 1000;
        pred.annotations.push(dup);
        let after = run(&pred, &gt);
        for (a, b) in before.per_threshold.iter().zip(&after.per_threshold) {
            if a.iou > 0.5 {
                prop_assert!(b.ap <= a.ap, "{} -> {} at {}", a.ap, b.ap, a.iou);
            }
        }
    }
}
