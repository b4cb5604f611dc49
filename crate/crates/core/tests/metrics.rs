use fgv_core::binning::LocTarget;
use fgv_core::eval::{localisation_metrics, mean_accuracy, topk_report, BinErrorStats, MetricsReport, TopKCounter};
use proptest::prelude::*;

#[test]
fn table_row_mean() {
    let m = mean_accuracy(&[85.354, 87.380, 77.723, 81.095]);
    assert!((m - 82.888).abs() <= 0.001, "{m}");
    let r = MetricsReport::from_per_output([85.354, 87.380, 77.723, 81.095], 100);
    assert!((r.mean_accuracy.unwrap() - 82.888).abs() <= 0.001);
}

#[test]
fn hand_counted_topk() {
    // Six classes; the target's rank is written beside each row.
    let logits: [f32; 36] = [
        9.0, 1.0, 2.0, 3.0, 4.0, 5.0, // target 0: rank 1
        1.0, 2.0, 9.0, 3.0, 4.0, 5.0, // target 1: rank 5
        1.0, 8.0, 9.0, 3.0, 4.0, 5.0, // target 1: rank 2
        7.0, 7.0, 7.0, 7.0, 7.0, 7.0, // target 5: all tied, lower ids win, rank 6
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0, // target 4: tied with 0..3, after 5 and 0..3, rank 6
        5.0, 4.0, 3.0, 2.0, 1.0, 0.0, // target 4: rank 5
    ];
    let targets = [0, 1, 1, 5, 4, 4];
    let r = topk_report(&logits, 6, &targets).unwrap();
    assert_eq!(r.samples, 6);
    assert!((r.top1.unwrap() - 100.0 / 6.0).abs() < 1e-9);
    assert!((r.top5.unwrap() - 400.0 / 6.0).abs() < 1e-9);
}

#[test]
fn bin_distance_fractions() {
    let truth = [LocTarget::from_array([5, 5, 10, 10]); 4];
    let preds = [
        LocTarget::from_array([5, 6, 10, 14]),
        LocTarget::from_array([4, 5, 12, 10]),
        LocTarget::from_array([5, 5, 10, 9]),
        LocTarget::from_array([9, 5, 10, 10]),
    ];
    let mut st = BinErrorStats::default();
    for (p, t) in preds.iter().zip(&truth) {
        st.add(p, t);
    }
    assert_eq!(st.samples(), 4);
    assert_eq!(st.fractions(0), [0.5, 0.25, 0.0, 0.25]);
    assert_eq!(st.distance1(3), 0.25);
    assert_eq!(st.distance3_plus(3), 0.25);
    let (r, again) = localisation_metrics(&preds, &truth).unwrap();
    assert_eq!(again, st);
    assert_eq!(r.per_output.unwrap(), [50.0, 75.0, 75.0, 50.0]);
    assert!((r.mean_accuracy.unwrap() - 62.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn top1_never_exceeds_top5(data in prop::collection::vec(-5.0f32..5.0, 7 * 24), seed in 0usize..7) {
        let targets: Vec<usize> = (0..24).map(|i| (i * 3 + seed) % 7).collect();
        let mut c = TopKCounter::default();
        c.add(&data, 7, &targets).unwrap();
        let r = c.report();
        prop_assert!(r.top1.unwrap() <= r.top5.unwrap());
    }
}
