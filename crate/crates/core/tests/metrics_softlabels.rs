use dicesm::io::{decode, encode};
use dicesm::metrics::{
    bdice, dice_from_iou, ece, hard_dice, iou_from_dice, thresholded_dice, BDiceSpec, CalibRecord, EceSpec,
};
use dicesm::softlabels::{
    label_smoothing, majority_vote, make_targets, uniform_average, weighted_average, SoftLabelSpec, Strategy as Rule,
    TieBreak, WeightScope,
};
use dicesm::{Hardness, LabelField, ProbField, RaterStack, TensorF};
use proptest::prelude::*;

fn bits(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| f64::from(u8::from(b))), len)
}

fn hard(width: usize, data: Vec<f64>) -> LabelField {
    LabelField::from_vec(1, 1, width, data, Hardness::Hard).unwrap()
}

/// `k` binary raters over `p` pixels.
fn raters(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (k, 1..=24usize).prop_flat_map(|(k, p)| prop::collection::vec(bits(p), k))
}

fn stack_of(rs: &[Vec<f64>]) -> RaterStack {
    RaterStack::new(rs.iter().map(|r| hard(r.len(), r.clone())).collect()).unwrap()
}

proptest! {
    #[test]
    fn tensor_files_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|i| f64::from(((seed as usize + i * 7919) % 1000) as f32 / 999.0)).collect();
        let t = TensorF::new(dims, data).unwrap();
        let back = decode(&encode(&t).unwrap()).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn majority_is_thresholded_average_for_odd_k(rs in (0..3usize).prop_flat_map(|h| raters(2 * h + 1..=2 * h + 1))) {
        let s = stack_of(&rs);
        let mv = majority_vote(&s, TieBreak::Background).unwrap();
        let avg = uniform_average(&s).unwrap();
        for (m, a) in mv.foreground().iter().zip(avg.foreground()) {
            prop_assert_eq!(*m, f64::from(u8::from(*a > 0.5)));
        }
    }

    #[test]
    fn averages_ignore_rater_order(rs in raters(1..=6), rot in 0usize..6) {
        let s = stack_of(&rs);
        let mut rotated = rs.clone();
        rotated.rotate_left(rot % rs.len());
        let r = stack_of(&rotated);
        let (u1, u2) = (uniform_average(&s).unwrap(), uniform_average(&r).unwrap());
        for (a, b) in u1.foreground().iter().zip(u2.foreground()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (w1, w2) = (weighted_average(&s, TieBreak::Background).unwrap(), weighted_average(&r, TieBreak::Background).unwrap());
        for (a, b) in w1.foreground().iter().zip(w2.foreground()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn every_strategy_yields_a_valid_label(rs in raters(1..=5), eps in 0.0..0.9f64, seed in any::<u64>()) {
        let stacks = vec![stack_of(&rs), stack_of(&rs)];
        for strategy in [Rule::Majority, Rule::RandomRater, Rule::UniformAvg, Rule::WeightedAvg, Rule::LabelSmoothing] {
            for weights in [WeightScope::PerImage, WeightScope::PerDataset] {
                let spec = SoftLabelSpec { strategy, epsilon: eps, seed, weights, ..SoftLabelSpec::default() };
                for y in make_targets(&spec, &stacks).unwrap() {
                    prop_assert!(LabelField::new(y.tensor().clone(), Hardness::Soft).is_ok());
                }
            }
        }
    }

    #[test]
    fn single_threshold_bdice_is_hard_dice((x, y) in (1..=32usize).prop_flat_map(|p| (prop::collection::vec(0.0..=1.0f64, p), bits(p)))) {
        let p = x.len();
        let pred = ProbField::from_vec(1, 1, p, x.clone()).unwrap();
        let label = hard(p, y);
        let spec = BDiceSpec { thresholds: vec![0.5], ..BDiceSpec::default() };
        let bin = hard(p, x.iter().map(|v| f64::from(u8::from(*v > 0.5))).collect());
        prop_assert!((bdice(&pred, &label, &spec).unwrap() - hard_dice(&bin, &label, 0).unwrap()).abs() < 1e-12);
        prop_assert!((thresholded_dice(&pred, &label).unwrap() - hard_dice(&bin, &label, 0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ece_ignores_record_order(
        recs in prop::collection::vec((0.0..=1.0f64, prop::bool::ANY), 1..200), rot in 0usize..200,
    ) {
        let mut a = CalibRecord::default();
        for (c, l) in &recs {
            a.confidences.push(*c);
            a.labels.push(f64::from(u8::from(*l)));
        }
        let mut b = a.clone();
        b.confidences.rotate_left(rot % recs.len());
        b.labels.rotate_left(rot % recs.len());
        let (ea, eb) = (ece(&a, &EceSpec::default()).unwrap(), ece(&b, &EceSpec::default()).unwrap());
        prop_assert!((ea - eb).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ea));
    }

    #[test]
    fn iou_dice_maps_are_increasing_inverses(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        prop_assume!(a < b);
        prop_assert!(dice_from_iou(a).unwrap() < dice_from_iou(b).unwrap());
        prop_assert!(iou_from_dice(a).unwrap() < iou_from_dice(b).unwrap());
        prop_assert!((iou_from_dice(dice_from_iou(a).unwrap()).unwrap() - a).abs() < 1e-12);
    }
}

#[test]
fn ece_hand_case() {
    // one occupied bin: confidence 0.9, accuracy 0.8
    let rec = CalibRecord {
        confidences: vec![0.9; 10],
        labels: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0].to_vec(),
    };
    assert!((ece(&rec, &EceSpec::default()).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn smoothing_one_hot_binary() {
    let y = hard(2, vec![1.0, 0.0]);
    let s = label_smoothing(&y, 0.1).unwrap();
    assert!((s.foreground()[0] - 0.95).abs() < 1e-15);
    assert!((s.foreground()[1] - 0.05).abs() < 1e-15);
}

#[test]
fn noise_free_raters_give_hard_average() {
    let r = vec![vec![1.0, 0.0, 1.0, 1.0]; 5];
    let avg = uniform_average(&stack_of(&r)).unwrap();
    assert!(avg.is_hard_valued());
    assert_eq!(avg.foreground(), &[1.0, 0.0, 1.0, 1.0]);
}
