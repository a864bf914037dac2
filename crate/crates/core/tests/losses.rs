use dicesm::gradcheck::gradient_check;
use dicesm::losses::overlap::{value, value_and_grad, Region};
use dicesm::{LabelField, Loss, LossKind, ProbField, ReductionSpec, TensorF, TverskyParams};
use proptest::prelude::*;

const GOLDEN: f64 = 1.618_033_988_749_895;

fn t(alpha: f64, beta: f64, gamma: f64) -> TverskyParams {
    TverskyParams { alpha, beta, gamma }
}

fn f(r: Region, a: &[f64], b: &[f64]) -> f64 {
    value(r, &TverskyParams::default(), a, b, 0.0)
}

fn hard_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| f64::from(u8::from(b))), len)
}

fn pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|p| (prop::collection::vec(0.0..=1.0f64, p), prop::collection::vec(0.0..=1.0f64, p)))
}

fn triple(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|p| {
        let v = || prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], p);
        (v(), v(), v())
    })
}

/// Set-based Dice of two 0/1 vectors, by counting.
fn set_dice(a: &[f64], b: &[f64]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x == 1.0 && **y == 1.0).count();
    let (na, nb) = (a.iter().filter(|v| **v == 1.0).count(), b.iter().filter(|v| **v == 1.0).count());
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sdl_matches_dml_on_hard_labels(
        (x, y) in (1..=64usize).prop_flat_map(|p| (prop_oneof![prop::collection::vec(0.0..=1.0f64, p), hard_vec(p)], hard_vec(p)))
    ) {
        let s = f(Region::Sdl, &x, &y);
        prop_assert!((s - f(Region::Dml1, &x, &y)).abs() < 1e-12);
        prop_assert!((s - f(Region::Dml2, &x, &y)).abs() < 1e-12);
    }

    #[test]
    fn one_minus_sdl_is_set_dice((a, b) in (1..=64usize).prop_flat_map(|p| (hard_vec(p), hard_vec(p)))) {
        let d = if a.iter().chain(&b).all(|v| *v == 0.0) { 1.0 } else { 1.0 - f(Region::Sdl, &a, &b) };
        prop_assert!((d - set_dice(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn semimetric_axioms((a, b) in pair(32)) {
        for r in [Region::Dml1, Region::Dml2, Region::Jml1, Region::Jml2] {
            prop_assert!(f(r, &a, &a).abs() < 1e-12);
            prop_assert!((f(r, &a, &b) - f(r, &b, &a)).abs() < 1e-12);
            if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9) {
                prop_assert!(f(r, &a, &b) > 0.0);
            } else {
                prop_assert!(f(r, &a, &b) < 1e-6);
            }
        }
    }

    #[test]
    fn relaxed_triangle((a, b, c) in triple(16)) {
        for (r, rho) in [(Region::Dml1, GOLDEN), (Region::Dml2, GOLDEN), (Region::Jml1, 1.0), (Region::Jml2, 1.0)] {
            prop_assert!(f(r, &a, &c) <= rho * (f(r, &a, &b) + f(r, &b, &c)) + 1e-12, "{:?}", r);
        }
    }

    #[test]
    fn dml1_never_exceeds_dml2((x, y) in pair(64)) {
        prop_assert!(f(Region::Dml1, &x, &y) <= f(Region::Dml2, &x, &y) + 1e-12);
    }

    #[test]
    fn stl_equals_ctl_on_hard_labels(
        (x, y) in (1..=32usize).prop_flat_map(|p| (prop::collection::vec(0.0..=1.0f64, p), hard_vec(p))),
        alpha in 0.0..1.0f64, beta in 0.0..1.0f64,
    ) {
        prop_assume!(alpha + beta > 0.0);
        let tp = t(alpha, beta, 1.0);
        let stl = value(Region::Stl, &tp, &x, &y, 0.0);
        prop_assert!((stl - value(Region::Ctl, &tp, &x, &y, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn ctl_half_half_is_dml1_and_reflexive((x, y) in pair(32), alpha in 0.05..1.0f64, beta in 0.05..1.0f64) {
        prop_assert!((f(Region::Ctl, &x, &y) - f(Region::Dml1, &x, &y)).abs() < 1e-12);
        let tp = t(alpha, beta, 1.0);
        prop_assert!(value(Region::Ctl, &tp, &x, &x, 0.0).abs() < 1e-12);
        if x.iter().zip(&y).any(|(a, b)| (a - b).abs() > 1e-9) {
            prop_assert!(value(Region::Ctl, &tp, &x, &y, 0.0) > 0.0);
        }
    }

    #[test]
    fn flat_gradient_matches_differences((x, y) in pair(8), r in prop::sample::select(vec![
        Region::Sdl, Region::Sjl, Region::Jml1, Region::Jml2, Region::Dml1, Region::Dml2, Region::Stl, Region::Ctl, Region::Cftl,
    ])) {
        prop_assume!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() > 1e-3));
        prop_assume!(x.iter().all(|v| *v > 1e-3 && *v < 1.0 - 1e-3));
        let tp = t(0.6, 0.3, 1.7);
        let (_, g) = value_and_grad(r, &tp, &x, &y, 0.0, 0.0);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (value(r, &tp, &up, &y, 0.0) - value(r, &tp, &down, &y, 0.0)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-2), "{:?} {} vs {}", r, g[i], fd);
        }
    }
}

fn scalar(r: Region, tp: &TverskyParams, x: f64, y: f64) -> f64 {
    value(r, tp, &[x], &[y], 0.0)
}

fn grid_argmin(r: Region, tp: &TverskyParams, y: f64) -> f64 {
    (0..=1000)
        .map(|i| f64::from(i) / 1000.0)
        .min_by(|a, b| scalar(r, tp, *a, y).total_cmp(&scalar(r, tp, *b, y)))
        .unwrap()
}

#[test]
fn compatible_losses_are_minimized_at_the_label() {
    let tp = t(0.7, 0.3, 1.0);
    for i in 0..100 {
        let y = 0.005 + 0.99 * f64::from(i) / 99.0;
        for r in [Region::Dml1, Region::Dml2, Region::Ctl] {
            let m = grid_argmin(r, &tp, y);
            assert!((m - y).abs() <= 1e-3 + 1e-12, "{r:?} y={y} argmin={m}");
        }
        for r in [Region::Sdl, Region::Sjl, Region::Stl] {
            let m = grid_argmin(r, &tp, y);
            assert!(m == 0.0 || m == 1.0, "{r:?} y={y} argmin={m}");
        }
    }
}

#[test]
fn sdl_prefers_the_vertex_for_half_label() {
    let d = TverskyParams::default();
    assert!((scalar(Region::Sdl, &d, 1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    assert!((scalar(Region::Sdl, &d, 0.5, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(grid_argmin(Region::Sdl, &d, 0.5), 1.0);
}

#[test]
fn focal_exponent_flattens_near_and_steepens_far() {
    let y = 0.8;
    let ctl = |x: f64| scalar(Region::Ctl, &t(0.7, 0.3, 1.0), x, y);
    let cftl = |x: f64, g: f64| scalar(Region::Cftl, &t(0.7, 0.3, g), x, y);
    for g in [1.5, 2.0, 3.0] {
        // CTL < 1 everywhere on this slice, so powers shrink it
        for x in [0.7, 0.75, 0.85, 0.9] {
            assert!(cftl(x, g) < ctl(x), "x={x} g={g}");
        }
        // relative growth between a near and a far point is steeper
        let near = 0.78;
        let far = 0.1;
        assert!(cftl(far, g) / cftl(near, g) > ctl(far) / ctl(near));
        assert!((cftl(y, g)).abs() < 1e-15);
    }
}

#[test]
fn witness_triple_needs_three_halves() {
    let (a, b, c) = ([0.0, 1.0], [1.0, 1.0], [1.0, 0.0]);
    let ratio = f(Region::Dml1, &a, &c) / (f(Region::Dml1, &a, &b) + f(Region::Dml1, &b, &c));
    assert!((ratio - 1.5).abs() < 1e-12);
    let ratio2 = f(Region::Dml2, &a, &c) / (f(Region::Dml2, &a, &b) + f(Region::Dml2, &b, &c));
    assert!(ratio2 <= GOLDEN + 1e-12);
}

#[test]
fn field_gradients_match_differences_for_every_loss() {
    let x = TensorF::new(vec![3, 2, 2], vec![0.2, 0.5, 0.3, 0.6, 0.5, 0.1, 0.4, 0.2, 0.3, 0.4, 0.3, 0.2]).unwrap();
    let y = TensorF::new(vec![3, 2, 2], vec![0.6, 0.2, 0.1, 0.1, 0.3, 0.7, 0.1, 0.8, 0.1, 0.1, 0.8, 0.1]).unwrap();
    for kind in LossKind::ALL {
        let loss = Loss::new(kind).with_tversky(t(0.4, 0.7, 2.0));
        let g = gradient_check(&loss, &x, &y, &ReductionSpec::default(), 1e-6).unwrap();
        assert!(g.rel_error() < 1e-5, "{kind:?}: {g:?}");
    }
}

#[test]
fn soft_stl_needs_override() {
    let x = ProbField::from_vec(1, 1, 2, vec![0.3, 0.6]).unwrap();
    let y = LabelField::soft(TensorF::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap()).unwrap();
    let red = ReductionSpec::default();
    assert!(Loss::new(LossKind::Stl).evaluate(&x, &y, &red).is_err());
    assert!(Loss::new(LossKind::Stl).allowing_soft_stl().evaluate(&x, &y, &red).is_ok());
}
