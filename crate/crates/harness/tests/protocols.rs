use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssp_core::pipeline::baseline_match;
use ssp_core::{Mask, MaskKind, SspConfig};
use ssp_harness::analysis::{
    partial_prototype_experiment, similarity_stats, weak_label_bbox, with_box_supports,
    PrototypeSource,
};
use ssp_harness::eval::{ablation_table, evaluate, Ablation};
use ssp_harness::metrics::{iou, mae_all, mae_tp};
use ssp_harness::synth::{generate_indexed, suite, SyntheticSpec};
use ssp_oracle as oracle;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        height: 12,
        width: 12,
        channels: 16,
        ..SyntheticSpec::default()
    }
}

#[test]
fn zero_spread_baseline_covers_the_object() {
    let spec = SyntheticSpec::zero_spread();
    for id in 0..10 {
        let ep = generate_indexed(&spec, 1, id).unwrap();
        let m = baseline_match(&ep.supports, &ep.query, &SspConfig::default()).unwrap();
        let object = ep.query_gt.active_pixels();
        let hit = object.iter().filter(|&&p| m.m1.fg.data()[p] > 0.5).count();
        assert_eq!(hit, object.len(), "episode {id}");
    }
}

#[test]
fn zero_spread_self_prototypes_are_perfect() {
    let eps = suite(&SyntheticSpec::zero_spread(), 20, 1).unwrap();
    let r = partial_prototype_experiment(&eps, 1.0, 0.0, PrototypeSource::SelfSupport, 0).unwrap();
    assert_eq!(r.mean_iou, 1.0);
}

#[test]
fn zero_spread_ablation_rows_saturate() {
    let eps = suite(&SyntheticSpec::zero_spread(), 10, 1).unwrap();
    let cfg = SspConfig {
        temperature: 10.0,
        ..SspConfig::default()
    };
    let rows = ablation_table(&eps, &cfg, 0).unwrap();
    let labels: Vec<_> = rows.iter().map(|r| r.row).collect();
    assert_eq!(labels, ["baseline", "ssm", "ssm+asbp", "full"]);
    for r in rows {
        assert_eq!(r.miou, 1.0, "{}", r.row);
    }
}

#[test]
fn metrics_match_pixel_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let pred: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0..=1.0)).collect();
        let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        let p = Mask::new(h, w, MaskKind::Probability, pred.clone()).unwrap();
        let g = Mask::from_bools(h, w, &bits).unwrap();
        assert_eq!(iou(&p, &g), oracle::iou(&pred, g.data(), 0.5));
        assert!((mae_all(&p, &g) - oracle::mae_all(&pred, g.data())).abs() < 1e-12);
        match (mae_tp(&p, &g), oracle::mae_tp(&pred, g.data(), 0.5)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn synthetic_suite_has_gestalt_ordering() {
    let eps = suite(&small_spec(), 40, 1).unwrap();
    let r = similarity_stats(&eps, 500, 1);
    assert!(r.mean.fg_intra.unwrap() > r.mean.fg_cross.unwrap());
    assert!(r.mean.bg_intra.unwrap() > r.mean.bg_cross.unwrap());
    assert!(r.fg_margin.unwrap().lower > 0.0);
}

#[test]
fn reports_are_byte_identical_across_runs_and_pools() {
    let eps = suite(&small_spec(), 12, 2).unwrap();
    let cfg = SspConfig {
        temperature: 10.0,
        refine: true,
        ..SspConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            serde_json::to_string(&evaluate(&eps, &cfg, Ablation::Full, 9).unwrap()).unwrap()
        })
    };
    let serial = run(1);
    assert_eq!(serial, run(1));
    assert_eq!(serial, run(4));
    assert!(serial.contains("\"temperature\":10.0"));
}

#[test]
fn bounding_box_supports_still_evaluate() {
    let eps: Vec<_> = suite(&small_spec(), 5, 1)
        .unwrap()
        .iter()
        .map(|e| with_box_supports(e).unwrap())
        .collect();
    for e in &eps {
        assert!(e.supports[0].mask.count_active() > 0);
    }
    evaluate(&eps, &SspConfig::default(), Ablation::Full, 0).unwrap();
}

proptest! {
    #[test]
    fn bbox_matches_scan_and_covers_mask(
        h in 1usize..10,
        w in 1usize..10,
        bits in proptest::collection::vec(any::<bool>(), 100),
    ) {
        let bits = &bits[..h * w];
        prop_assume!(bits.iter().any(|&b| b));
        let m = Mask::from_bools(h, w, bits).unwrap();
        let b = weak_label_bbox(&m).unwrap();
        prop_assert_eq!(b.data(), &oracle::bounding_box(m.data(), h, w).unwrap()[..]);
        for p in m.active_pixels() {
            prop_assert!(b.is_set(p));
        }
    }
}
