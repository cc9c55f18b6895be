use proptest::prelude::*;

use seizure_core::dataset::{split, synthesize, SplitSpec};
use seizure_core::metrics::{compute_metrics, ConfusionMatrix};
use seizure_core::preprocess::{
    apply_scaler, dwt_haar, fit_scaler, idwt_haar, wavelet_denoise, ThresholdPolicy,
};

fn counts() -> impl Strategy<Value = ConfusionMatrix> {
    (0u64..2000, 0u64..2000, 0u64..2000, 0u64..2000)
        .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
        .prop_map(|(tp, tn, fp, fn_)| ConfusionMatrix::new(tp, tn, fp, fn_))
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-500.0f64..500.0, 178)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn csi_bounded_by_precision_and_recall(c in counts()) {
        let r = compute_metrics(&c).unwrap();
        prop_assert!(r.csi <= r.precision.min(r.recall) + 1e-12);
    }

    #[test]
    fn f1_forms_agree(c in counts()) {
        let r = compute_metrics(&c).unwrap();
        let den = 2 * c.tp + c.fp + c.fn_;
        let direct = if den == 0 { 0.0 } else { 2.0 * c.tp as f64 / den as f64 };
        prop_assert!((r.f1 - direct).abs() < 1e-12);
    }

    #[test]
    fn class_swap_keeps_accuracy_and_mcc(c in counts()) {
        let a = compute_metrics(&c).unwrap();
        let b = compute_metrics(&ConfusionMatrix::new(c.tn, c.tp, c.fn_, c.fp)).unwrap();
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        prop_assert!((a.mcc - b.mcc).abs() < 1e-12);
    }

    #[test]
    fn mcc_sign_rule(c in counts()) {
        let r = compute_metrics(&c).unwrap();
        let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den > 0.0 {
            let num = tp * tn - fp * fn_;
            prop_assert_eq!(r.mcc.partial_cmp(&0.0), num.partial_cmp(&0.0));
        }
        prop_assert!((-1.0..=1.0).contains(&r.mcc));
    }

    #[test]
    fn metrics_are_scale_invariant(c in counts(), k in 2u64..50) {
        let a = compute_metrics(&c).unwrap();
        let b = compute_metrics(&ConfusionMatrix::new(c.tp * k, c.tn * k, c.fp * k, c.fn_ * k)).unwrap();
        for (x, y) in [
            (a.accuracy, b.accuracy), (a.precision, b.precision), (a.recall, b.recall),
            (a.f1, b.f1), (a.csi, b.csi), (a.mcc, b.mcc),
        ] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_is_harmonic_mean_and_ranges_hold(c in counts()) {
        let r = compute_metrics(&c).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.csi] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let pr = r.precision + r.recall;
        let hm = if pr == 0.0 { 0.0 } else { 2.0 * r.precision * r.recall / pr };
        prop_assert!((r.f1 - hm).abs() < 1e-12);
    }

    #[test]
    fn haar_round_trip(x in signal()) {
        let y = idwt_haar(&dwt_haar(&x).unwrap()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9);
    }

    #[test]
    fn haar_preserves_energy(x in signal()) {
        let c = dwt_haar(&x).unwrap();
        let e: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.approx.iter().chain(&c.detail).map(|v| v * v).sum();
        prop_assert!((e - ec).abs() <= 1e-9 * e.max(f64::MIN_POSITIVE));
        prop_assert_eq!(c.approx.len(), 89);
        prop_assert_eq!(c.detail.len(), 89);
    }

    #[test]
    fn denoising_never_adds_energy(x in signal(), t in 0.0f64..50.0) {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for p in [ThresholdPolicy::Universal, ThresholdPolicy::Fixed(t)] {
            let y = wavelet_denoise(&x, p).unwrap();
            prop_assert_eq!(y.len(), x.len());
            prop_assert!(norm(&y) <= norm(&x) + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scaler_standardizes(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 2..40)) {
        prop_assume!(fit_scaler(&rows).is_ok());
        let p = fit_scaler(&rows).unwrap();
        let z = apply_scaler(&rows, &p).unwrap();
        let n = z.len() as f64;
        for j in 0..6 {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let s = (z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            // Columns that are constant up to rounding are rejected at fit.
            if p.std[j] > 1e-6 {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_partitions_rows(per_class in 3usize..30, seed in any::<u64>(), f in 0.2f64..0.8, stratified in any::<bool>()) {
        let d = synthesize(per_class, 11).unwrap();
        let spec = SplitSpec { train_fraction: f, seed, stratified };
        let (tr, te) = split(&d, &spec).unwrap();
        prop_assert_eq!(tr.len(), (f * d.len() as f64).round() as usize);
        let mut all: Vec<Vec<u64>> = tr.features.iter().chain(&te.features)
            .map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut orig: Vec<Vec<u64>> = d.features.iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
        if stratified {
            let want = f * d.n_positive() as f64;
            prop_assert!((tr.n_positive() as f64 - want).abs() <= 1.0);
        }
        prop_assert_eq!(split(&d, &spec).unwrap(), (tr, te));
    }
}
