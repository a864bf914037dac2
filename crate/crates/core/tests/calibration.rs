use dicesm::calibration::{
    beta_kernel, calibrate_field, dirichlet_kernel, sample_key_points, verify_bias_bound, Atom, FiniteDistribution,
    KdeCalibrator, KdeSpec, KeyPointSet, PixelScope,
};
use dicesm::{Hardness, LabelField, ProbField, TensorF};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Composite Simpson rule on `[0, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, b: f64, n: usize) -> f64 {
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

/// `∫₀¹ f`, substituting `z = u⁸` near 0 and `1 - z = u⁸` near 1 so that
/// endpoint powers like `z^0.04` become smooth.
fn integrate_unit(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let b = 0.5f64.powf(1.0 / 8.0);
    let lo = simpson(|u| f(u.powi(8)) * 8.0 * u.powi(7), b, n);
    let hi = simpson(|u| f(1.0 - u.powi(8)) * 8.0 * u.powi(7), b, n);
    lo + hi
}

#[test]
fn beta_kernel_integrates_to_one() {
    for h in [0.5, 0.1, 0.01, 1e-3] {
        for key in [0.0, 0.02, 0.3, 0.5, 0.77, 1.0] {
            let integral = integrate_unit(|z| beta_kernel(z, key, h).unwrap(), 100_000);
            assert!((integral - 1.0).abs() < 1e-6, "h={h} key={key}: {integral}");
        }
    }
}

proptest! {
    #[test]
    fn two_class_dirichlet_is_beta(z in 0.0..=1.0f64, key in 0.0..=1.0f64, h in prop::sample::select(vec![1e-3, 1e-2, 0.1, 1.0])) {
        let b = beta_kernel(z, key, h).unwrap();
        let d = dirichlet_kernel(&[z, 1.0 - z], &[key, 1.0 - key], h).unwrap();
        prop_assert!((b - d).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", b, d);
    }

    #[test]
    fn calibrated_rows_stay_on_simplex(
        seed in any::<u64>(), classes in 2usize..=4, n in 1usize..=40,
        h in prop::sample::select(vec![1e-4, 1e-3, 1e-2, 0.5]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut simplex = || {
            let v: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-6).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let keys = KeyPointSet {
            confidences: (0..n).map(|_| simplex()).collect(),
            labels: (0..n).map(|_| simplex()).collect(),
            provenance: (0..n).collect(),
        };
        let kde = KdeCalibrator::new(&keys, h).unwrap();
        let out = kde.calibrate(&simplex());
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn kde_recovers_a_known_calibration_map() {
    // labels drawn with P(y = 1 | f) = f², so E[y | f] = f²
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut confidences = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let f: f64 = rng.random();
        confidences.push(vec![f]);
        labels.push(vec![f64::from(u8::from(rng.random::<f64>() < f * f))]);
    }
    let keys = KeyPointSet {
        confidences,
        labels,
        provenance: (0..n).collect(),
    };
    let kde = KdeCalibrator::new(&keys, 1e-3).unwrap();
    let grid: Vec<f64> = (1..100).map(|i| f64::from(i) / 100.0).collect();
    let mae = grid
        .iter()
        .map(|&f| (kde.try_calibrate(&[f]).unwrap()[0] - f * f).abs())
        .sum::<f64>()
        / grid.len() as f64;
    assert!(mae < 0.05, "mean absolute error {mae}");
}

/// Bias and calibration error recomputed by pairing every atom with every
/// other atom of equal confidence.
fn oracle(atoms: &[Atom]) -> (f64, f64) {
    let bias = atoms.iter().map(|a| a.prob * (a.bayes - a.confidence)).sum::<f64>().abs();
    let mut ce = 0.0;
    let mut seen = vec![false; atoms.len()];
    for i in 0..atoms.len() {
        if seen[i] {
            continue;
        }
        let (mut mass, mut acc) = (0.0, 0.0);
        for j in i..atoms.len() {
            if atoms[j].confidence == atoms[i].confidence {
                seen[j] = true;
                mass += atoms[j].prob;
                acc += atoms[j].prob * atoms[j].bayes;
            }
        }
        if mass > 0.0 {
            ce += (acc - mass * atoms[i].confidence).abs();
        }
    }
    (bias, ce)
}

#[test]
fn bias_never_exceeds_calibration_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let levels: Vec<f64> = (0..rng.random_range(1..=n)).map(|_| rng.random()).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let atoms: Vec<Atom> = raw
            .iter()
            .map(|w| Atom {
                prob: w / total,
                confidence: levels[rng.random_range(0..levels.len())],
                bayes: rng.random(),
            })
            .collect();
        let rep = verify_bias_bound(&FiniteDistribution { atoms: atoms.clone() }).unwrap();
        let (bias, ce) = oracle(&atoms);
        assert!((rep.bias - bias).abs() < 1e-12);
        assert!((rep.calib_error - ce).abs() < 1e-12);
        violations += usize::from(!rep.holds || bias > ce + 1e-12);
    }
    assert_eq!(violations, 0);
}

#[test]
fn calibrated_model_has_zero_bias() {
    let atoms = vec![
        Atom { prob: 0.25, confidence: 0.2, bayes: 0.2 },
        Atom { prob: 0.75, confidence: 0.9, bayes: 0.9 },
    ];
    let rep = verify_bias_bound(&FiniteDistribution { atoms }).unwrap();
    assert_eq!(rep.bias, 0.0);
    assert_eq!(rep.calib_error, 0.0);
}

fn field(h: usize, w: usize, seed: u64) -> (ProbField, LabelField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label: Vec<f64> = (0..h * w).map(|k| f64::from(u8::from(k % w < w / 2))).collect();
    let pred: Vec<f64> = label
        .iter()
        .map(|&y| (0.7 * y + 0.15 + 0.1 * rng.random::<f64>()).clamp(0.0, 1.0))
        .collect();
    (
        ProbField::from_vec(1, h, w, pred).unwrap(),
        LabelField::from_vec(1, h, w, label, Hardness::Hard).unwrap(),
    )
}

#[test]
fn kernel_evaluations_scale_with_pixels_times_keys() {
    for (h, w, n_key) in [(8, 8, 16), (16, 16, 16), (16, 16, 64), (32, 16, 32)] {
        let (p, y) = field(h, w, 3);
        let spec = KdeSpec {
            n_key,
            ..KdeSpec::default()
        };
        let keys = sample_key_points(std::slice::from_ref(&p), std::slice::from_ref(&y), &spec).unwrap();
        let (_, stats) = calibrate_field(&p, &y, &spec).unwrap();
        assert_eq!(stats.kernel_evals, (h * w * keys.len()) as u64);
        assert!(keys.len() >= n_key && keys.len() <= n_key + 1);
    }
}

#[test]
fn boundary_scope_only_touches_selected_pixels() {
    let (p, y) = field(8, 8, 9);
    let spec = KdeSpec {
        n_key: 16,
        pixel_scope: PixelScope::MisclassifiedAndBoundary,
        ..KdeSpec::default()
    };
    let (out, stats) = calibrate_field(&p, &y, &spec).unwrap();
    // the label edge sits between columns 3 and 4; predictions are all correct
    for i in 0..8 {
        for j in 0..8 {
            let k = i * 8 + j;
            if !(3..=4).contains(&j) {
                assert_eq!(out.foreground()[k], p.foreground()[k]);
            }
        }
    }
    assert_eq!(stats.kernel_evals, 16 * 16);
}

#[test]
fn stratified_sampling_covers_minority_class() {
    let h = 16;
    let label: Vec<f64> = (0..h * h).map(|k| f64::from(u8::from(k == 0))).collect();
    let y = LabelField::new(TensorF::new(vec![1, h, h], label).unwrap(), Hardness::Hard).unwrap();
    let p = ProbField::from_vec(1, h, h, vec![0.3; h * h]).unwrap();
    let keys = sample_key_points(&[p], &[y], &KdeSpec { n_key: 8, ..KdeSpec::default() }).unwrap();
    assert!(keys.provenance.contains(&0));
    assert!(keys.provenance.windows(2).all(|w| w[0] < w[1]));
}
