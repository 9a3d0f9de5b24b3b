use std::collections::VecDeque;

use cutonce::instances::{
    assign_scores, connected_components, extract_instances, filter_prefix, label_components,
    rank_filter, upsample_mask, BBox,
};
use cutonce::saliency::orient_and_split;
use ndarray::Array2;
use proptest::prelude::*;

/// Breadth-first flood fill started from each unvisited foreground cell in
/// raster order.
fn flood_fill(fg: &Array2<bool>) -> (Array2<u32>, usize) {
    let (h, w) = fg.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut next = 0u32;
    for y in 0..h {
        for x in 0..w {
            if !fg[[y, x]] || labels[[y, x]] != 0 {
                continue;
            }
            next += 1;
            labels[[y, x]] = next;
            let mut queue = VecDeque::from([(y, x)]);
            while let Some((cy, cx)) = queue.pop_front() {
                let mut visit = |ny: usize, nx: usize| {
                    if fg[[ny, nx]] && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = next;
                        queue.push_back((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx);
                }
                if cx > 0 {
                    visit(cy, cx - 1);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1);
                }
            }
        }
    }
    (labels, next as usize)
}

/// For each prefix length, recompute the share from scratch and stop at the
/// first one reaching `tau`.
fn scan_oracle(sums: &[f64], areas: &[usize], tau: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].partial_cmp(&sums[a]).unwrap().then(a.cmp(&b)));
    let clamped: Vec<f64> = order.iter().map(|&i| sums[i].max(0.0)).collect();
    let total: f64 = clamped.iter().fold(0.0, |a, v| a + v);
    if total <= 0.0 {
        let best_area = areas.iter().max().unwrap();
        return vec![areas.iter().position(|a| a == best_area).unwrap()];
    }
    for k in 1..=order.len() {
        let head = clamped[..k].iter().fold(0.0, |a, v| a + v);
        if head / total >= tau {
            return order[..k].to_vec();
        }
    }
    order
}

/// Bilinear sample of the {0,1} map at a continuous source coordinate
/// clamped into the grid.
fn reference_upsample(mask: &Array2<bool>, oh: usize, ow: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    let v = |y: usize, x: usize| if mask[[y, x]] { 1.0 } else { 0.0 };
    let axis = |o: usize, out: usize, size: usize| {
        let s = ((o as f64 + 0.5) * (size as f64 / out as f64) - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(size - 1);
        (i0, i1, s - i0 as f64)
    };
    Array2::from_shape_fn((oh, ow), |(oy, ox)| {
        let (y0, y1, ty) = axis(oy, oh, h);
        let (x0, x1, tx) = axis(ox, ow, w);
        let top = v(y0, x0) * (1.0 - tx) + v(y0, x1) * tx;
        let bottom = v(y1, x0) * (1.0 - tx) + v(y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty >= 0.5
    })
}

fn mask_strategy(max: usize, density: f64) -> impl Strategy<Value = Array2<bool>> {
    (1usize..=max, 1usize..=max).prop_flat_map(move |(h, w)| {
        prop::collection::vec(prop::bool::weighted(density), h * w)
            .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
    })
}

#[test]
fn diagonal_cells_are_separate() {
    let fg = ndarray::array![[true, false], [false, true]];
    assert_eq!(label_components(&fg).1, 2);
    assert_eq!(label_components(&Array2::from_elem((5, 7), true)).1, 1);
    assert_eq!(label_components(&Array2::from_elem((5, 7), false)).1, 0);
}

#[test]
fn worked_filter_example() {
    assert_eq!(filter_prefix(&[5.0, 3.0, 1.5, 0.5], &[1, 1, 1, 1], 0.95).unwrap(), vec![0, 1, 2]);
    assert_eq!(filter_prefix(&[0.2], &[3], 0.999).unwrap(), vec![0]);
    assert!(filter_prefix(&[1.0], &[1], 1.0).is_err());
    assert!(filter_prefix(&[1.0], &[1], 0.0).is_err());
}

#[test]
fn scores_examples() {
    assert_eq!(assign_scores(1).unwrap(), vec![1.0]);
    assert_eq!(assign_scores(3).unwrap(), vec![1.0, 0.75, 0.5]);
    for n in 2..=100 {
        let s = assign_scores(n).unwrap();
        assert_eq!(s[n - 1], 0.5);
        assert!(s.windows(2).all(|p| p[0] > p[1]));
    }
    assert!(assign_scores(0).is_err());
}

#[test]
fn single_patch_blob() {
    let mut m = Array2::from_elem((4, 4), false);
    m[[1, 2]] = true;
    let up = upsample_mask(&m, 32, 32);
    assert_eq!(BBox::of_mask(&up), Some(BBox { x: 16, y: 8, w: 8, h: 8 }));
    // per-axis weights inside the cell are 15/16, 13/16, 11/16, 9/16 (twice
    // each); 10 ordered weight pairs reach a product of 1/2, so 40 pixels
    assert_eq!(up.iter().filter(|&&p| p).count(), 40);
    assert!(upsample_mask(&Array2::from_elem((3, 5), true), 37, 41).iter().all(|&p| p));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn labels_match_flood_fill(fg in mask_strategy(60, 0.55)) {
        let (labels, count) = label_components(&fg);
        let (reference, ref_count) = flood_fill(&fg);
        prop_assert_eq!(count, ref_count);
        prop_assert_eq!(labels, reference);
    }

    #[test]
    fn filter_matches_scan(
        sums in prop::collection::vec(-2.0f64..10.0, 1..30),
        tau in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let areas: Vec<usize> = sums.iter().enumerate().map(|(i, _)| ((seed >> (i % 60)) & 7) as usize + 1).collect();
        prop_assert_eq!(filter_prefix(&sums, &areas, tau).unwrap(), scan_oracle(&sums, &areas, tau));
    }

    #[test]
    fn filter_all_nonpositive_picks_largest_area(
        sums in prop::collection::vec(-5.0f64..=0.0, 1..20),
        areas in prop::collection::vec(1usize..50, 20),
    ) {
        let areas = &areas[..sums.len()];
        let kept = filter_prefix(&sums, areas, 0.95).unwrap();
        prop_assert_eq!(kept, scan_oracle(&sums, areas, 0.95));
    }

    #[test]
    fn filter_is_monotone_in_tau(
        sums in prop::collection::vec(-2.0f64..10.0, 1..30),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let areas = vec![1; sums.len()];
        let small = filter_prefix(&sums, &areas, lo).unwrap();
        let large = filter_prefix(&sums, &areas, hi).unwrap();
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn upsample_matches_reference(
        m in mask_strategy(12, 0.5),
        oh in 1usize..100,
        ow in 1usize..100,
    ) {
        prop_assert_eq!(upsample_mask(&m, oh, ow), reference_upsample(&m, oh, ow));
    }

    #[test]
    fn checkerboard_round_trip(h in 1usize..16, w in 1usize..16, p in 1usize..16, phase in 0usize..2) {
        let m = Array2::from_shape_fn((h, w), |(y, x)| (y + x + phase) % 2 == 0);
        let up = upsample_mask(&m, h * p, w * p);
        let back = Array2::from_shape_fn((h, w), |(y, x)| up[[y * p + p / 2, x * p + p / 2]]);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn extracted_instances_hold_invariants(
        values in prop::collection::vec(-1.0f64..1.0, 20 * 20),
        h in 2usize..20,
        w in 2usize..20,
        scale in 1usize..6,
    ) {
        let map = Array2::from_shape_vec((h, w), values[..h * w].to_vec()).unwrap();
        let split = orient_and_split(&map);
        let (comps, masks) = extract_instances(&split, 0.95, h * scale + 1, w * scale).unwrap();
        let expected = rank_filter(&comps, 0.95).unwrap();
        prop_assert_eq!(masks.iter().map(|m| m.component_id).collect::<Vec<_>>(), expected);
        let mut seen = Array2::from_elem((h, w), false);
        for (k, m) in masks.iter().enumerate() {
            prop_assert_eq!(m.rank, k);
            prop_assert_eq!(m.patch_mask.clone(), comps.mask_of(m.component_id));
            for (s, &p) in seen.iter_mut().zip(&m.patch_mask) {
                prop_assert!(!(p && *s));
                *s |= p;
            }
            prop_assert_eq!(Some(m.bbox), BBox::of_mask(&m.pixel_mask));
            prop_assert_eq!(m.area, m.pixel_mask.iter().filter(|&&p| p).count() as u64);
            prop_assert!(m.area > 0);
            prop_assert_eq!(m.saliency_sum, comps.sum_of(m.component_id));
            prop_assert!((0.5..=1.0).contains(&m.score));
        }
        for pair in masks.windows(2) {
            prop_assert!(pair[0].saliency_sum >= pair[1].saliency_sum);
            prop_assert!(pair[0].score > pair[1].score);
        }
        // distinct components are never 4-adjacent
        let c = connected_components(&split.foreground, &split.oriented).unwrap();
        for ((y, x), &l) in c.labels.indexed_iter() {
            if l == 0 { continue; }
            if y + 1 < h { let o = c.labels[[y + 1, x]]; prop_assert!(o == 0 || o == l); }
            if x + 1 < w { let o = c.labels[[y, x + 1]]; prop_assert!(o == 0 || o == l); }
        }
    }
}
