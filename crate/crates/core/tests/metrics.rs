use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use spinereport_core::labeling::{truth_ledger, Verdict};
use spinereport_core::metrics::{
    dice_per_class, instance_confusion, labeling_accuracy, mean_foreground_dice, mean_std, pixel_accuracy,
    pixel_confusion, CrossvalSummary, MetricsAccumulator,
};
use spinereport_core::phantom::generate_phantom;
use spinereport_core::report::{causal_background, reference_hypothesis, report_from_ledger, Template};
use spinereport_core::segmap::{Kind, SegmentationMap, NFS, NUM_CLASSES};

fn map(h: usize, w: usize, cells: &[u8]) -> SegmentationMap {
    SegmentationMap::new(h, w, cells.to_vec()).unwrap()
}

#[test]
fn identical_maps_score_one_everywhere() {
    let p = generate_phantom(3, 0.5, (128, 128)).unwrap();
    assert_eq!(pixel_accuracy(&p.truth, &p.truth).unwrap(), 1.0);
    assert_eq!(dice_per_class(&p.truth, &p.truth).unwrap(), [1.0; NUM_CLASSES]);
}

#[test]
fn dice_hand_cases() {
    // |P| = 4, |T| = 4, overlap 2.
    let p = map(2, 4, &[1, 1, 1, 1, 0, 0, 0, 0]);
    let t = map(2, 4, &[0, 0, 1, 1, 1, 1, 0, 0]);
    assert_eq!(dice_per_class(&p, &t).unwrap()[1], 0.5);
    // Disjoint equal areas.
    let t = map(2, 4, &[0, 0, 0, 0, 1, 1, 1, 1]);
    assert_eq!(dice_per_class(&p, &t).unwrap()[1], 0.0);
    // Absent in both.
    assert_eq!(dice_per_class(&p, &t).unwrap()[4], 1.0);
    assert_eq!(pixel_accuracy(&p, &t).unwrap(), 0.0);
    assert!(pixel_accuracy(&p, &map(4, 2, &[0; 8])).is_err());
    assert!(dice_per_class(&p, &map(1, 8, &[0; 8])).is_err());
}

#[test]
fn mean_dice_skips_background() {
    let mut d = [1.0; NUM_CLASSES];
    d[0] = 0.0;
    d[6] = 0.4;
    assert_abs_diff_eq!(mean_foreground_dice(&d), 5.4 / 6.0, epsilon = 1e-15);
}

#[test]
fn instance_and_pixel_confusions() {
    let p = generate_phantom(11, 0.5, (128, 128)).unwrap();
    let truth = truth_ledger(&p);
    let mut pred = truth.clone();
    let stenotic = truth.foramina.iter().filter(|f| f.verdict == Verdict::Abnormal).count();
    let normal = truth.foramina.len() - stenotic;
    for f in &mut pred.foramina {
        f.verdict = Verdict::Abnormal;
    }
    let c = instance_confusion(&pred, &truth, Kind::Foramen);
    assert_eq!((c.tp, c.fn_, c.fp, c.tn), (stenotic, 0, normal, 0));
    assert_eq!(c.sensitivity(), 1.0);
    assert_eq!(c.specificity(), if normal == 0 { 1.0 } else { 0.0 });

    let pred_map = map(1, 4, &[NFS, NFS, 0, 0]);
    let truth_map = map(1, 4, &[NFS, 0, NFS, 0]);
    let c = pixel_confusion(&pred_map, &truth_map, NFS).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
}

#[test]
fn labeling_accuracy_counts_missing_entries_as_misses() {
    let p = generate_phantom(12, 0.5, (128, 128)).unwrap();
    let truth = truth_ledger(&p);
    let mut pred = truth.clone();
    let n = truth.verdicts().len();
    pred.vertebrae.pop();
    assert_abs_diff_eq!(labeling_accuracy(&pred, &truth), (n - 1) as f64 / n as f64, epsilon = 1e-15);
    assert_eq!(labeling_accuracy(&truth, &truth), 1.0);
}

#[test]
fn corpus_metrics_from_truth_are_perfect_and_in_range() {
    let mut acc = MetricsAccumulator::default();
    for seed in 0..10 {
        let p = generate_phantom(seed, 0.5, (128, 128)).unwrap();
        let l = truth_ledger(&p);
        let r = report_from_ledger("x", &l, &causal_background(), &reference_hypothesis(), &Template::v1()).unwrap();
        acc.add(&p.truth, &p.truth, &l, &l, Some(&r)).unwrap();
    }
    let m = acc.finish().unwrap();
    assert_eq!(m.images, 10);
    for (name, v) in m.scalars() {
        assert_eq!(v, 1.0, "{name}");
    }
    assert_eq!(m.dice.len(), NUM_CLASSES);
    assert!(m.to_csv().starts_with("metric,value\npixel_accuracy,1.000000\n"));
    assert!(MetricsAccumulator::default().finish().is_err());
}

#[test]
fn crossval_mean_and_sample_std() {
    let (m, s) = mean_std(&[0.8, 0.9]);
    assert_abs_diff_eq!(m, 0.85, epsilon = 1e-15);
    assert_abs_diff_eq!(s, 0.005f64.sqrt(), epsilon = 1e-15);
    assert_eq!(mean_std(&[0.7, 0.7, 0.7]), (0.7, 0.0));

    let p = generate_phantom(5, 0.5, (64, 64)).unwrap();
    let l = truth_ledger(&p);
    let mut acc = MetricsAccumulator::default();
    acc.add(&p.truth, &p.truth, &l, &l, None).unwrap();
    let rec = acc.finish().unwrap();
    let cv = CrossvalSummary::new(vec![rec.clone(), rec.clone()]).unwrap();
    assert!(cv.summary.iter().all(|(_, _, sd)| *sd == 0.0));
    assert!(CrossvalSummary::new(vec![rec]).is_err());
}

fn pair() -> impl Strategy<Value = (SegmentationMap, SegmentationMap)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        let cells = proptest::collection::vec(0u8..7, h * w);
        (cells.clone(), cells).prop_map(move |(a, b)| (map(h, w, &a), map(h, w, &b)))
    })
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded((p, t) in pair()) {
        let a = dice_per_class(&p, &t).unwrap();
        let b = dice_per_class(&t, &p).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.iter().all(|d| (0.0..=1.0).contains(d)));
        let acc = pixel_accuracy(&p, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn swapping_roles_swaps_sensitivity_with_precision_not_specificity((p, t) in pair()) {
        let a = pixel_confusion(&p, &t, NFS).unwrap();
        let b = pixel_confusion(&t, &p, NFS).unwrap();
        prop_assert_eq!((a.tp, a.tn, a.fp, a.fn_), (b.tp, b.tn, b.fn_, b.fp));
    }
}
