use gonogo_core::evalkit::{
    auc, benchmark, calibrate_threshold, f1_score, metrics, AblationMode, AblationSpec, ConfusionCounts,
};
use gonogo_core::scoring::{Branch, Decision};
use gonogo_core::CoreError;
use gonogo_tensor::Tensor;
use proptest::prelude::*;

fn f1_of(threshold: f64, scores: &[(f64, bool)]) -> f64 {
    let tp = scores.iter().filter(|s| s.0 < threshold && s.1).count() as f64;
    let fp = scores.iter().filter(|s| s.0 < threshold && !s.1).count() as f64;
    let fn_ = scores.iter().filter(|s| s.0 >= threshold && s.1).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

#[test]
fn published_f1_rows_recomputed() {
    for (recall, precision, f1) in [(95.75, 92.96, 94.33), (68.50, 74.46, 71.35), (66.75, 56.09, 60.95), (66.75, 68.29, 67.51)] {
        let got = 100.0 * f1_score(precision / 100.0, recall / 100.0).unwrap();
        assert!((got - f1).abs() <= 0.01, "recall {recall} precision {precision}: {got} vs {f1}");
    }
}

#[test]
fn balanced_counts_give_one_half() {
    let m = metrics(&ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
    for v in [m.accuracy, m.recall, m.precision, m.f1] {
        assert_eq!(v, Some(0.5));
    }
}

#[test]
fn undefined_metrics_are_flagged() {
    let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 7 });
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(m.recall, None);
    assert_eq!(m.precision, None);
    assert_eq!(m.f1, None);
    assert_eq!(metrics(&ConfusionCounts::default()).accuracy, None);
}

#[test]
fn counts_from_decisions() {
    let p = [Decision::Go, Decision::Go, Decision::NoGo, Decision::NoGo, Decision::Go];
    let t = [true, false, true, false, true];
    assert_eq!(
        ConfusionCounts::from_decisions(&p, &t),
        ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 1 }
    );
}

proptest! {
    #[test]
    fn metric_identities(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        let m = metrics(&c);
        let total = tp + fp + fn_ + tn;
        if total > 0 {
            prop_assert!((m.accuracy.unwrap() - (tp + tn) as f64 / total as f64).abs() < 1e-12);
        }
        if let Some(f1) = m.f1 {
            let (p, r) = (m.precision.unwrap(), m.recall.unwrap());
            prop_assert!((1.0 / f1 - 0.5 * (1.0 / p + 1.0 / r)).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_matches_exhaustive_sweep(raw in prop::collection::vec((0u8..20, any::<bool>()), 2..40)) {
        let scores: Vec<(f64, bool)> = raw.iter().map(|&(s, t)| (f64::from(s) / 10.0, t)).collect();
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let cal = calibrate_threshold(&scores).unwrap();
        let mut candidates: Vec<f64> = scores.iter().map(|s| s.0).collect();
        candidates.push(2.0);
        candidates.sort_by(f64::total_cmp);
        let best = candidates.iter().map(|&t| f1_of(t, &scores)).fold(0.0, f64::max);
        prop_assert!((cal.f1 - best).abs() < 1e-12);
        prop_assert!((f1_of(cal.threshold, &scores) - best).abs() < 1e-12);
        let smallest = candidates.iter().copied().find(|&t| f1_of(t, &scores) == best).unwrap();
        prop_assert!(cal.threshold <= smallest + 1e-12);
    }

    #[test]
    fn auc_matches_pair_count(raw in prop::collection::vec((0u8..10, any::<bool>()), 2..40)) {
        let scores: Vec<(f64, bool)> = raw.iter().map(|&(s, t)| (f64::from(s), t)).collect();
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in scores.iter().filter(|s| s.1) {
            for n in scores.iter().filter(|s| !s.1) {
                pairs += 1.0;
                wins += if n.0 > p.0 { 1.0 } else if n.0 == p.0 { 0.5 } else { 0.0 };
            }
        }
        prop_assert!((auc(&scores).unwrap() - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn separated_scores_calibrate_to_f1_one() {
    let scores = [(0.1, true), (0.2, true), (0.5, false), (0.7, false)];
    let cal = calibrate_threshold(&scores).unwrap();
    assert_eq!(cal.f1, 1.0);
    assert!(cal.threshold > 0.2 && cal.threshold <= 0.5);
    assert_eq!(auc(&scores).unwrap(), 1.0);
}

#[test]
fn single_class_is_rejected() {
    let scores = [(0.1, true), (0.2, true)];
    assert!(matches!(calibrate_threshold(&scores), Err(CoreError::SingleClass { negatives: 0, .. })));
    assert!(matches!(auc(&scores), Err(CoreError::SingleClass { .. })));
}

#[test]
fn identity_benchmark_is_finite() {
    let x = Tensor::zeros(&[4, 3, 8, 8]);
    let r = benchmark(&x, 3, |t| {
        std::hint::black_box(t.sum());
        Ok(())
    })
    .unwrap();
    assert!(r.hz > 0.0 && r.hz.is_finite());
    assert_eq!(r.seconds.len(), 3);
    assert!(benchmark(&x, 2, |_| Ok(())).is_err());
}

#[test]
fn benchmark_sees_allocations() {
    let x = Tensor::zeros(&[1, 3, 8, 8]);
    let r = benchmark(&x, 3, |_| {
        std::hint::black_box(Tensor::<f32>::zeros(&[1000]));
        Ok(())
    })
    .unwrap();
    assert!(r.peak_bytes >= 4000);
}

#[test]
fn ablation_component_rules() {
    use Branch::*;
    assert!(AblationSpec::new(AblationMode::UnsupervisedOurs, &[Residual, Features]).is_err());
    assert!(AblationSpec::new(AblationMode::UnsupervisedBaseline, &[Features]).is_err());
    assert!(AblationSpec::new(AblationMode::SupervisedOurs, &[]).is_err());
    let r = AblationSpec::new(AblationMode::UnsupervisedOurs, &[Residual]).unwrap();
    let d = AblationSpec::new(AblationMode::UnsupervisedOurs, &[FeatureDiff]).unwrap();
    let rd = AblationSpec::new(AblationMode::UnsupervisedOurs, &[FeatureDiff, Residual]).unwrap();
    assert_eq!((r.lambda(0.1), d.lambda(0.1), rd.lambda(0.1)), (0.0, 1.0, 0.1));
    assert_eq!(rd.label(), "unsupervised R+D");
    assert!(rd.uses_masks());
    let base = AblationSpec::new(AblationMode::UnsupervisedBaseline, &[Residual, FeatureDiff]).unwrap();
    assert!(!base.uses_masks());
    let full = AblationSpec::new(AblationMode::SupervisedOurs, &[Features, Residual, FeatureDiff]).unwrap();
    assert_eq!(full.label(), "supervised R+D+F");
}
