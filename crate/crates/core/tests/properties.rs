use proptest::prelude::*;

use bat_core::adapter::{count_trainable_params, init_adapter_params, AdapterConfig, AdapterPlan, Stage, Variant};
use bat_core::eval::MetricReport;
use bat_core::rng::Rng;
use bat_core::synthdata::pnm;
use bat_core::synthdata::Frame;
use bat_core::{BBox, Graph, Tensor};

fn bbox() -> impl Strategy<Value = BBox> {
    (-50.0..150.0f64, -50.0..150.0f64, 0.1..80.0f64, 0.1..80.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

fn boxes(n: usize) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(bbox(), n)
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = a.iou(&b);
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_have_zero_iou(a in bbox(), gap in 0.0..10.0f64) {
        let b = BBox::new(a.x + a.w + gap, a.y, a.w, a.h);
        prop_assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn clipped_box_stays_inside(a in bbox(), w in 1.0..100.0f64, h in 1.0..100.0f64) {
        let c = a.clip(w, h);
        let [x0, y0, x1, y1] = c.corners();
        prop_assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= w + 1e-9 && y1 <= h + 1e-9);
        prop_assert!(c.w >= 0.0 && c.h >= 0.0);
    }

    #[test]
    fn curves_are_monotone_and_dual_dominates(
        (pred, rgb, tir) in (1usize..60).prop_flat_map(|n| (boxes(n), boxes(n), boxes(n)))
    ) {
        let r = MetricReport::compute(&pred, &rgb, &tir).unwrap();
        prop_assert!(r.pr_curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.sr_curve.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(r.mpr_curve.iter().zip(&r.pr_curve).all(|(m, p)| m >= p));
        prop_assert!(r.msr_curve.iter().zip(&r.sr_curve).all(|(m, s)| m >= s));
        prop_assert!(r.mpr >= r.pr && r.msr >= r.sr);
        for v in [r.pr, r.sr, r.mpr, r.msr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn perfect_predictions_score_one_at_headline(gt in (1usize..40).prop_flat_map(boxes)) {
        let r = MetricReport::compute(&gt, &gt, &gt).unwrap();
        prop_assert_eq!(r.pr, 1.0);
        prop_assert_eq!(r.mpr, 1.0);
        // Every threshold below 1 is passed with IoU exactly 1.
        prop_assert!(r.sr_curve[..r.sr_curve.len() - 1].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pnm_roundtrip(w in 1usize..20, h in 1usize..20, gray in any::<bool>(), seed in any::<u64>()) {
        let channels = if gray { 1 } else { 3 };
        let mut rng = Rng::new(seed);
        let pixels = (0..w * h * channels).map(|_| rng.below(256) as u8).collect();
        let frame = Frame { width: w, height: h, channels, pixels };
        let bytes = pnm::encode(&frame).unwrap();
        let back = pnm::decode(&bytes, std::path::Path::new("mem.pnm")).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn concat_then_slice_is_identity(rows_a in 1usize..5, rows_b in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut rand = |r: usize| Tensor::new([r, cols], (0..r * cols).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let (ta, tb) = (rand(rows_a), rand(rows_b));
        let mut g = Graph::new();
        let a = g.leaf("a", ta.clone()).unwrap();
        let b = g.leaf("b", tb.clone()).unwrap();
        let c = g.concat(&[a, b], 0).unwrap();
        let sa = g.slice(c, 0, 0, rows_a).unwrap();
        let sb = g.slice(c, 0, rows_a, rows_b).unwrap();
        prop_assert!(g.value(sa).bit_eq(&ta));
        prop_assert!(g.value(sb).bit_eq(&tb));
    }

    #[test]
    fn closed_form_count_matches_instantiation(
        num_layers in 1usize..6,
        mask in any::<u8>(),
        stage_pick in 0usize..3,
        d_t in 2usize..24,
        d_e in 1usize..8,
        bias in any::<bool>(),
        dual in any::<bool>(),
    ) {
        let layers: Vec<usize> = (1..=num_layers).filter(|l| mask & (1 << l) != 0).collect();
        let stages: &[Stage] = [&[Stage::Attention][..], &[Stage::Mlp], &[Stage::Attention, Stage::Mlp]][stage_pick];
        let variant = if dual { Variant::BatDual } else { Variant::Bat };
        let plan = AdapterPlan::new(variant, layers.clone(), stages, num_layers).unwrap();
        let cfg = AdapterConfig { d_t, d_e, include_bias: bias };
        let built = init_adapter_params(&plan, &cfg, &mut Rng::new(0)).unwrap();
        prop_assert_eq!(built.trainable_count(), count_trainable_params(&plan, &cfg));
        let sets = if dual { 2 } else { 1 };
        prop_assert_eq!(plan.instance_count(), layers.len() * stages.len() * sets);
    }
}
