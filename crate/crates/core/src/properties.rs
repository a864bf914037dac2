//! Randomized invariant suite over the losses and the calibration code.
//!
//! Every property runs on seeded random inputs and records how many trials
//! passed and the largest violation seen. [`Mutation::Sign`] swaps the
//! `sign(0)` convention of the gradients so that the suite can be shown to
//! catch a real bug.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{verify_bias_bound, Atom, FiniteDistribution, KdeCalibrator, KeyPointSet};
use crate::error::Result;
use crate::gradcheck::gradient_check;
use crate::losses::overlap::{value, Region};
use crate::losses::{Loss, LossKind, ReductionSpec, TverskyParams};
use crate::rng::derive_seed;
use crate::tensor::TensorF;

/// Smallest ρ for which the Dice semimetric losses satisfy the relaxed
/// triangle inequality.
pub const GOLDEN_RHO: f64 = 1.618_033_988_749_895;

const TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
// the two sides of a kink have different curvature, so central differences
// there carry an O(h) error
// round-off in the differences is ~1e-10, so tiny gradients need a floor
const NORM_FLOOR: f64 = 1e-4;
const KINK_STEP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// Use `sign(0) = +1` in every `|x − y|` subgradient.
    Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub trials: u64,
    pub passed: u64,
    pub max_violation: f64,
}

impl PropertyResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            passed: 0,
            max_violation: 0.0,
        }
    }

    /// Records a trial whose violation is `v` (zero or less means pass).
    fn record(&mut self, v: f64) {
        self.trials += 1;
        if v <= 0.0 {
            self.passed += 1;
        } else {
            self.max_violation = self.max_violation.max(v);
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub trials: usize,
    pub mutation: Mutation,
    pub properties: Vec<PropertyResult>,
    /// `dml1(a, c) / (dml1(a, b) + dml1(b, c))` for the witness triple.
    pub witness_ratio: f64,
    pub all_passed: bool,
}

fn soft(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.random::<f64>()).collect()
}

fn hard(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect()
}

fn len(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=64)
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const DEFAULT_T: TverskyParams = TverskyParams {
    alpha: 0.5,
    beta: 0.5,
    gamma: 1.0,
};

fn f(r: Region, a: &[f64], b: &[f64]) -> f64 {
    value(r, &DEFAULT_T, a, b, 0.0)
}

/// The witness triple `a = [0, 1]`, `b = [1, 1]`, `c = [1, 0]`.
pub fn witness_ratio() -> f64 {
    let (a, b, c) = ([0.0, 1.0], [1.0, 1.0], [1.0, 0.0]);
    f(Region::Dml1, &a, &c) / (f(Region::Dml1, &a, &b) + f(Region::Dml1, &b, &c))
}

/// Runs every property for `trials` random cases (the gradient, bias and
/// kernel checks use at most 1000) and collects the outcome.
pub fn check_properties(trials: usize, seed: u64, mutation: Mutation) -> Result<PropertyReport> {
    let trials = trials.max(1);
    let mut props = vec![hard_identity(trials, derive_seed(seed, 0))];
    props.extend(semimetric(trials, derive_seed(seed, 1)));
    props.extend(triangle(trials, derive_seed(seed, 2)));
    props.push(dml_order(trials, derive_seed(seed, 3)));
    props.extend(tversky(trials, derive_seed(seed, 4)));
    props.extend(gradients(trials.min(1000), derive_seed(seed, 5), mutation)?);
    props.push(bias_bound(trials.min(1000), derive_seed(seed, 6))?);
    props.push(kde_simplex(trials.min(200), derive_seed(seed, 7))?);

    let witness = witness_ratio();
    let mut w = PropertyResult::new("witness_ratio");
    w.record((witness - 1.5).abs() - TOL);
    props.push(w);

    let all_passed = props.iter().all(PropertyResult::ok);
    Ok(PropertyReport {
        seed,
        trials,
        mutation,
        properties: props,
        witness_ratio: witness,
        all_passed,
    })
}

fn hard_identity(trials: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = PropertyResult::new("hard_label_identity");
    for _ in 0..trials {
        let p = len(&mut rng);
        let x = if rng.random() { hard(&mut rng, p) } else { soft(&mut rng, p) };
        let y = hard(&mut rng, p);
        let s = f(Region::Sdl, &x, &y);
        let v = (s - f(Region::Dml1, &x, &y)).abs().max((s - f(Region::Dml2, &x, &y)).abs());
        r.record(v - TOL);
    }
    r
}

const SEMIMETRICS: [Region; 5] = [Region::Dml1, Region::Dml2, Region::Jml1, Region::Jml2, Region::Ctl];

fn semimetric(trials: usize, seed: u64) -> [PropertyResult; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refl = PropertyResult::new("reflexivity");
    let mut pos = PropertyResult::new("positivity");
    let mut sym = PropertyResult::new("symmetry");
    for _ in 0..trials {
        let p = len(&mut rng);
        let a = soft(&mut rng, p);
        let b = soft(&mut rng, p);
        let sep = inf_dist(&a, &b);
        let (mut rv, mut pv, mut sv) = (f64::MIN, f64::MIN, f64::MIN);
        for r in SEMIMETRICS {
            rv = rv.max(f(r, &a, &a).abs() - TOL);
            if sep > 1e-6 && f(r, &a, &b) <= 0.0 {
                pv = pv.max(sep);
            }
            if r != Region::Ctl {
                sv = sv.max((f(r, &a, &b) - f(r, &b, &a)).abs() - TOL);
            }
        }
        refl.record(rv);
        pos.record(pv);
        sym.record(sv);
    }
    [refl, pos, sym]
}

fn triangle(trials: usize, seed: u64) -> [PropertyResult; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dml = PropertyResult::new("relaxed_triangle_dml");
    let mut jml = PropertyResult::new("triangle_jml");
    for _ in 0..trials {
        let p = len(&mut rng);
        // mix in hard vectors: the extremal cases live on the vertices
        let pick = |rng: &mut ChaCha8Rng| if rng.random_bool(0.3) { hard(rng, p) } else { soft(rng, p) };
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let gap = |r: Region, rho: f64| f(r, &a, &c) - rho * (f(r, &a, &b) + f(r, &b, &c)) - TOL;
        dml.record(gap(Region::Dml1, GOLDEN_RHO).max(gap(Region::Dml2, GOLDEN_RHO)));
        jml.record(gap(Region::Jml1, 1.0).max(gap(Region::Jml2, 1.0)));
    }
    [dml, jml]
}

fn dml_order(trials: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = PropertyResult::new("dml1_le_dml2");
    for _ in 0..trials {
        let p = len(&mut rng);
        let (x, y) = (soft(&mut rng, p), soft(&mut rng, p));
        r.record(f(Region::Dml1, &x, &y) - f(Region::Dml2, &x, &y) - TOL);
    }
    r
}

fn tversky(trials: usize, seed: u64) -> [PropertyResult; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hard_eq = PropertyResult::new("stl_eq_ctl_on_hard_labels");
    let mut half = PropertyResult::new("ctl_half_eq_dml1");
    for _ in 0..trials {
        let p = len(&mut rng);
        let t = TverskyParams {
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            gamma: 1.0,
        };
        let x = soft(&mut rng, p);
        let y = hard(&mut rng, p);
        let v = (value(Region::Stl, &t, &x, &y, 0.0) - value(Region::Ctl, &t, &x, &y, 0.0)).abs();
        hard_eq.record(v - TOL);
        let ys = soft(&mut rng, p);
        half.record((f(Region::Ctl, &x, &ys) - f(Region::Dml1, &x, &ys)).abs() - TOL);
    }
    [hard_eq, half]
}

fn gradients(trials: usize, seed: u64, mutation: Mutation) -> Result<[PropertyResult; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let red = ReductionSpec::default();
    let sign_at_zero = match mutation {
        Mutation::None => 0.0,
        Mutation::Sign => 1.0,
    };
    let mut interior = PropertyResult::new("gradient_interior");
    let mut kinks = PropertyResult::new("gradient_at_kinks");
    for trial in 0..trials {
        let classes = if trial % 2 == 0 { 1 } else { 3 };
        let p = rng.random_range(1..=8);
        let n = classes * p;
        let t = TverskyParams {
            alpha: rng.random_range(0.1..0.9),
            beta: rng.random_range(0.1..0.9),
            gamma: rng.random_range(1.0..3.0),
        };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        // keep every |x − y| above 1e-3 so no probe crosses a kink
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| loop {
                let yi: f64 = rng.random();
                if (xi - yi).abs() > 1e-3 {
                    break yi;
                }
            })
            .collect();
        let xt = TensorF::new(vec![classes, 1, p], x.clone())?;
        let yt = TensorF::new(vec![classes, 1, p], y)?;
        // away from zero: the curvature there grows like 1 / x³
        let at_kink = TensorF::new(vec![classes, 1, p], x.iter().map(|v| 0.2 + 0.75 * v).collect())?;
        // the focal power converges like h^(γ - 1) at x == y
        let t_kink = TverskyParams {
            gamma: t.gamma + 1.0,
            ..t
        };
        let mut worst = f64::MIN;
        let mut worst_kink = f64::MIN;
        for kind in LossKind::ALL {
            let mut loss = Loss::new(kind).with_tversky(t);
            loss.sign_at_zero = sign_at_zero;
            let g = gradient_check(&loss, &xt, &yt, &red, FD_STEP)?;
            worst = worst.max(g.scaled_error(NORM_FLOOR) - GRAD_TOL);
            if kind.region().is_some_and(has_abs_term) {
                // x == y: the one-sided slopes cancel, the subgradient must be 0
                let mut loss = loss.with_tversky(t_kink);
                loss.sign_at_zero = sign_at_zero;
                let g = gradient_check(&loss, &at_kink, &at_kink, &red, KINK_STEP)?;
                worst_kink = worst_kink.max(g.scaled_error(1.0) - GRAD_TOL);
            }
        }
        interior.record(worst);
        kinks.record(worst_kink);
    }
    Ok([interior, kinks])
}

fn has_abs_term(r: Region) -> bool {
    matches!(
        r,
        Region::Jml1 | Region::Jml2 | Region::Dml1 | Region::Dml2 | Region::Ctl | Region::Cftl
    )
}

fn bias_bound(trials: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = PropertyResult::new("bias_le_calibration_error");
    for _ in 0..trials {
        let n = rng.random_range(1..=12);
        // few distinct confidences so that atoms share E[y | f]
        let levels: Vec<f64> = (0..rng.random_range(1..=n)).map(|_| rng.random()).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let atoms = w
            .into_iter()
            .map(|prob| Atom {
                prob,
                confidence: levels[rng.random_range(0..levels.len())],
                bayes: rng.random(),
            })
            .collect();
        let rep = verify_bias_bound(&FiniteDistribution { atoms })?;
        r.record(rep.bias - rep.calib_error - TOL);
    }
    Ok(r)
}

fn kde_simplex(trials: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = PropertyResult::new("kde_output_on_simplex");
    let simplex = |rng: &mut ChaCha8Rng, c: usize| {
        let v: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    for _ in 0..trials {
        let c = rng.random_range(2..=4);
        let n = rng.random_range(1..=32);
        let keys = KeyPointSet {
            confidences: (0..n).map(|_| simplex(&mut rng, c)).collect(),
            labels: (0..n).map(|_| simplex(&mut rng, c)).collect(),
            provenance: (0..n).collect(),
        };
        let h = [1e-3, 1e-2, 0.1, 1.0][rng.random_range(0..4)];
        let kde = KdeCalibrator::new(&keys, h)?;
        let out = kde.calibrate(&simplex(&mut rng, c));
        let sum: f64 = out.iter().sum();
        let outside = out.iter().map(|v| (-v).max(v - 1.0)).fold(0.0, f64::max);
        r.record(((sum - 1.0).abs() - 1e-9).max(outside));
    }
    Ok(r)
}
