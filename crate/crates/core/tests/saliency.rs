use cutonce::saliency::{augment, boundary_field, orient_and_split, FlipReason, Neighborhood, SaliencyField};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// Explicitly padded copy of the map: one extra ring, each ring cell copying
/// its nearest in-map cell.
fn pad(raw: &Array2<f64>) -> Array2<f64> {
    let (h, w) = raw.dim();
    let mut p = Array2::zeros((h + 2, w + 2));
    for y in 0..h + 2 {
        for x in 0..w + 2 {
            let sy = y.saturating_sub(1).min(h - 1);
            let sx = x.saturating_sub(1).min(w - 1);
            p[[y, x]] = raw[[sy, sx]];
        }
    }
    p
}

fn reference_boundary(raw: &Array2<f64>, nb: Neighborhood) -> Array2<f64> {
    let (h, w) = raw.dim();
    let p = pad(raw);
    // neighbors in row-major order around the centre
    let list: &[(usize, usize)] = match nb {
        Neighborhood::Four => &[(0, 1), (1, 0), (1, 2), (2, 1)],
        Neighborhood::Eight => &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)],
    };
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let c = p[[y + 1, x + 1]];
            let mut acc = 0.0;
            for &(dy, dx) in list {
                acc += (c - p[[y + dy, x + dx]]).abs();
            }
            out[[y, x]] = acc / list.len() as f64;
        }
    }
    out
}

fn map_strategy(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (2usize..=max, 2usize..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(-10.0f64..10.0, h * w)
            .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
    })
}

fn nb_strategy() -> impl Strategy<Value = Neighborhood> {
    prop_oneof![Just(Neighborhood::Four), Just(Neighborhood::Eight)]
}

#[test]
fn peak_example() {
    let mut raw = Array2::zeros((3, 3));
    raw[[1, 1]] = 1.0;
    let b = boundary_field(&raw, Neighborhood::Eight).unwrap();
    assert_eq!(b, reference_boundary(&raw, Neighborhood::Eight));
    assert_eq!(b[[1, 1]], 1.0);
    assert_eq!(b[[0, 0]], 0.125);
}

#[test]
fn neither_rule_fires_on_balanced_map() {
    // |max| = |min|, only two corners above the mean
    let map = ndarray::array![[1.0, -1.0, 0.0], [0.0, 0.0, 0.0], [-1.0, 1.0, 0.0]];
    let split = orient_and_split(&map);
    assert!(!split.flipped);
    assert_eq!(split.flip_reason, FlipReason::None);
}

#[test]
fn maxmin_rule_keeps_the_extreme_patch() {
    let mut map = Array2::from_elem((4, 4), 0.5);
    for c in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        map[c] = 0.0;
    }
    map[[1, 1]] = -4.0;
    let split = orient_and_split(&map);
    assert_eq!(split.flip_reason, FlipReason::MaxminRule);
    // flipped: 4 at (1,1), 0 at the corners, -0.5 elsewhere; mean -3/32
    let mut expected = Array2::from_elem((4, 4), false);
    for c in [(0, 0), (0, 3), (3, 0), (3, 3), (1, 1)] {
        expected[c] = true;
    }
    assert_eq!(split.threshold, -3.0 / 32.0);
    assert_eq!(split.foreground, expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn boundary_equals_padded_loop(raw in map_strategy(16), nb in nb_strategy()) {
        let b = boundary_field(&raw, nb).unwrap();
        let reference = reference_boundary(&raw, nb);
        for (a, r) in b.iter().zip(&reference) {
            prop_assert_eq!(a.to_bits(), r.to_bits());
        }
        prop_assert!(b.iter().all(|&v| v >= 0.0));
        let aug = augment(&raw, &b).unwrap();
        for ((a, r), bv) in aug.iter().zip(&raw).zip(&b) {
            prop_assert_eq!(a.to_bits(), (r - bv).to_bits());
        }
    }

    #[test]
    fn boundary_shifts_with_interior_pattern(
        ph in 1usize..5,
        pw in 1usize..5,
        values in prop::collection::vec(-3.0f64..3.0, 16),
        background in -1.0f64..1.0,
        (dy, dx) in (0usize..4, 0usize..4),
        nb in nb_strategy(),
    ) {
        let (h, w) = (ph + 4 + 4, pw + 4 + 4);
        let place = |y0: usize, x0: usize| {
            let mut m = Array2::from_elem((h, w), background);
            for y in 0..ph {
                for x in 0..pw {
                    m[[y0 + y, x0 + x]] = values[y * 4 + x];
                }
            }
            m
        };
        let a = boundary_field(&place(2, 2), nb).unwrap();
        let b = boundary_field(&place(2 + dy, 2 + dx), nb).unwrap();
        for y in 0..h - dy {
            for x in 0..w - dx {
                prop_assert_eq!(a[[y, x]].to_bits(), b[[y + dy, x + dx]].to_bits());
            }
        }
    }

    #[test]
    fn split_is_a_mean_threshold_partition(map in map_strategy(12)) {
        let s = orient_and_split(&map);
        let mean = s.oriented.iter().fold(0.0, |a, &v| a + v) / s.oriented.len() as f64;
        prop_assert_eq!(s.threshold, mean);
        for (f, v) in s.foreground.iter().zip(&s.oriented) {
            prop_assert_eq!(*f, *v > s.threshold);
        }
        let expected = if s.flipped { map.mapv(|v| -v) } else { map.clone() };
        prop_assert_eq!(&s.oriented, &expected);
        prop_assert_eq!(s.flipped, s.flip_reason != FlipReason::None);
    }

    #[test]
    fn orientation_ignores_input_sign(map in map_strategy(12)) {
        let a = orient_and_split(&map);
        let b = orient_and_split(&map.mapv(|v| -v));
        if a.flipped != b.flipped {
            prop_assert_eq!(a.foreground, b.foreground);
        }
    }

    #[test]
    fn field_from_vector(h in 2usize..10, w in 2usize..10, seed in any::<u64>(), nb in nb_strategy()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Array1<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = SaliencyField::from_fiedler(&v, h, w, nb).unwrap();
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(f.raw[[y, x]], v[y * w + x]);
            }
        }
        prop_assert_eq!(&f.boundary, &reference_boundary(&f.raw, nb));
        prop_assert!(SaliencyField::from_fiedler(&v, h + 1, w, nb).is_err());
    }
}
