//! Cross-checks the half-disk winding count against a dense uniform scan of
//! a rectangle and against the block index of the marginal curves.

use std::f64::consts::PI;

use hstab_core::charfn::eval_char;
use hstab_core::marginal::distance_to_curves;
use hstab_core::spectral::initial_radius;
use hstab_core::{block_index, count_unstable, BlockIndex, SystemParams};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zeros of `F` inside `[delta, side] x [-side, side]`, or `None` when the
/// sampling is too coarse to trust.
fn rectangle_count(p: &SystemParams, side: f64) -> Option<usize> {
    let delta = 1e-9;
    let per_side = 20_000;
    let corners = [
        Complex64::new(delta, -side),
        Complex64::new(side, -side),
        Complex64::new(side, side),
        Complex64::new(delta, side),
    ];
    let mut total = 0.0;
    let mut prev = eval_char(p, corners[0]).ok()?;
    for e in 0..4 {
        let (from, to) = (corners[e], corners[(e + 1) % 4]);
        for i in 1..=per_side {
            let s = from + (to - from) * (i as f64 / per_side as f64);
            let f = eval_char(p, s).ok()?;
            let step = (f / prev).arg();
            if step.abs() > PI / 3.0 {
                return None;
            }
            total += step;
            prev = f;
        }
    }
    let turns = total / (2.0 * PI);
    ((turns - turns.round()).abs() < 0.1 && turns > -0.5).then(|| turns.round() as usize)
}

#[test]
fn winding_count_matches_rectangle_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 60 {
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let lambda = rng.gen_range(0.3..3.0);
        let length = rng.gen_range(0.1..4.0);
        let k = rng.gen_range(-0.95..0.95);
        if distance_to_curves(a, b, lambda, k, length).unwrap() < 0.05 {
            continue;
        }
        let p = SystemParams::new(a, b, lambda, length, k).unwrap();
        let side = 4.0 * initial_radius(&p);
        let Some(expect) = rectangle_count(&p, side) else {
            continue;
        };
        let got = count_unstable(&p, None).unwrap();
        assert_eq!(got.n_unstable, expect, "{p:?}");
        checked += 1;
    }
}

#[test]
fn winding_count_matches_block_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 200 {
        let (a, b) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let lambda = rng.gen_range(0.2..4.0);
        let length = rng.gen_range(0.05..5.0);
        let k = rng.gen_range(-0.98..0.98);
        if distance_to_curves(a, b, lambda, k, length).unwrap() < 0.02 {
            continue;
        }
        let p = SystemParams::new(a, b, lambda, length, k).unwrap();
        let BlockIndex::Count(n) = block_index(&p).unwrap() else {
            panic!("off-margin point reported marginal: {p:?}");
        };
        assert_eq!(count_unstable(&p, None).unwrap().n_unstable, n, "{p:?}");
        checked += 1;
    }
}

#[test]
fn seeds_refine_to_unstable_roots() {
    use hstab_core::{refine_root, seed_unstable_roots};
    for k in [2.0, -2.0, 3.5, -1.5] {
        let p = SystemParams::new(1.0, 1.0, 1.0, 1.0, k).unwrap();
        for seed in seed_unstable_roots(&p, 5, 10).unwrap() {
            let root = refine_root(&p, seed, 1e-10).unwrap();
            assert!(root.re > 0.0);
            assert!(eval_char(&p, root).unwrap().norm() < 1e-10);
        }
    }
}
