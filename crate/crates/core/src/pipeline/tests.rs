use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssp_oracle as oracle;

use super::*;
use crate::tensor::{masked_average_pooling, pool_pixels, Role};

fn random_features(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
}

/// Object pixels cluster around one direction, background around another.
fn two_cluster_shot(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, spread: f32) -> Shot {
    let fg_dir: Vec<f32> = (0..c).map(|k| if k % 2 == 0 { 1.0 } else { 0.2 }).collect();
    let bg_dir: Vec<f32> = (0..c)
        .map(|k| if k % 2 == 0 { -0.3 } else { 1.0 })
        .collect();
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    let mask = Mask::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
        dy * dy + dx * dx <= (h.min(w) as f32 / 3.0).powi(2)
    })
    .unwrap();
    let cols: Vec<Vec<f32>> = (0..h * w)
        .map(|p| {
            let dir = if mask.is_set(p) { &fg_dir } else { &bg_dir };
            dir.iter()
                .map(|v| v + rng.random_range(-spread..spread))
                .collect()
        })
        .collect();
    Shot::new(FeatureMap::from_columns(h, w, &cols).unwrap(), mask).unwrap()
}

fn random_prob_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let data = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Mask::new(h, w, MaskKind::Probability, data).unwrap()
}

fn assert_valid(pred: &Prediction) {
    assert!(pred.max_sum_error() <= 1e-5, "{}", pred.max_sum_error());
    assert!(pred.fg.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn self_matching_predicts_object_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.3);
    let cfg = SspConfig::default();
    let base = baseline_match(std::slice::from_ref(&shot), &shot.features, &cfg).unwrap();
    let f = &shot.features;
    let fg = oracle::masked_average_pooling(f.data(), shot.mask.data(), 6, 64).unwrap();
    let bg = oracle::masked_average_pooling(f.data(), shot.mask.inverted().data(), 6, 64).unwrap();
    for p in shot.mask.active_pixels() {
        let x: Vec<f64> = f.column(p).iter().map(|&v| f64::from(v)).collect();
        // the oracle agrees the pixel is closer to the object prototype
        assert!(oracle::cosine(&fg, &x) > oracle::cosine(&bg, &x));
        assert!(base.m1.fg.data()[p] > 0.5);
    }
}

#[test]
fn identical_shots_match_single_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shot = two_cluster_shot(&mut rng, 4, 6, 6, 0.4);
    let query = random_features(&mut rng, 4, 6, 6);
    let cfg = SspConfig::default();
    let one = match_episode(
        std::slice::from_ref(&shot),
        &query,
        &cfg,
        MatchVariant::FULL,
    )
    .unwrap();
    let three = match_episode(
        &[shot.clone(), shot.clone(), shot],
        &query,
        &cfg,
        MatchVariant::FULL,
    )
    .unwrap();
    assert_eq!(one, three);
}

#[test]
fn aligned_object_gives_closed_form_probability() {
    // support object along e1, support background along -e1
    let mask = Mask::from_pixels(2, 2, &[0, 3]).unwrap();
    let cols = vec![
        vec![1.0, 0.0],
        vec![-2.0, 0.0],
        vec![-0.5, 0.0],
        vec![3.0, 0.0],
    ];
    let shot = Shot::new(FeatureMap::from_columns(2, 2, &cols).unwrap(), mask).unwrap();
    let query =
        FeatureMap::from_columns(1, 3, &[vec![0.5, 0.0], vec![-1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    for t in [1.0, 2.5] {
        let cfg = SspConfig {
            temperature: t,
            ..SspConfig::default()
        };
        let base = baseline_match(std::slice::from_ref(&shot), &query, &cfg).unwrap();
        let expected = 1.0 / (1.0 + (-2.0 * t).exp());
        for p in [0, 2] {
            assert!((f64::from(base.m1.fg.data()[p]) - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn support_without_foreground_is_an_error() {
    let f = FeatureMap::new(2, 2, 2, vec![1.0; 8]).unwrap();
    let empty = Shot::new(
        f.clone(),
        Mask::filled(2, 2, MaskKind::Binary, 0.0).unwrap(),
    )
    .unwrap();
    let cfg = SspConfig::default();
    assert_eq!(
        baseline_match(&[empty], &f, &cfg).unwrap_err(),
        SspError::EmptyMask
    );
    assert_eq!(
        baseline_match(&[], &f, &cfg).unwrap_err(),
        SspError::NoSupport
    );
}

#[test]
fn channel_mismatch_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shot = two_cluster_shot(&mut rng, 4, 4, 4, 0.1);
    let query = random_features(&mut rng, 5, 4, 4);
    assert!(matches!(
        baseline_match(&[shot], &query, &SspConfig::default()),
        Err(SspError::DimMismatch { .. })
    ));
}

#[test]
fn whole_image_support_masks_skip_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = two_cluster_shot(&mut rng, 3, 4, 4, 0.1);
    let full = Shot::new(
        random_features(&mut rng, 3, 4, 4),
        Mask::filled(4, 4, MaskKind::Binary, 1.0).unwrap(),
    )
    .unwrap();
    let (_, bg) = support_prototypes(&[a.clone(), full.clone()]).unwrap();
    let (_, bg_a) = support_prototypes(std::slice::from_ref(&a)).unwrap();
    assert_eq!(bg.values(), bg_a.values());
    assert_eq!(
        support_prototypes(&[full]).unwrap_err(),
        SspError::EmptyMask
    );
}

#[test]
fn threshold_examples() {
    let cfg = SspConfig::default();
    let high = Mask::filled(3, 3, MaskKind::Probability, 0.9).unwrap();
    let (fg, bg) = threshold_select(&high, &cfg);
    assert_eq!(fg.count_active(), 9);
    assert_eq!(bg.count_active(), 0);
    let half = Mask::filled(3, 3, MaskKind::Probability, 0.5).unwrap();
    let (fg, bg) = threshold_select(&half, &cfg);
    assert_eq!((fg.count_active(), bg.count_active()), (0, 0));
}

#[test]
fn threshold_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SspConfig::default();
    for _ in 0..20 {
        let m = random_prob_mask(&mut rng, 5, 7);
        let (fg, bg) = threshold_select(&m, &cfg);
        for (p, &v) in m.data().iter().enumerate() {
            let v = f64::from(v);
            assert_eq!(fg.is_set(p), v > 0.7);
            assert_eq!(bg.is_set(p), 1.0 - v > 0.6);
        }
    }
}

#[test]
fn self_support_fg_from_ground_truth_is_object_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shot = two_cluster_shot(&mut rng, 5, 6, 6, 0.5);
    let conf = random_prob_mask(&mut rng, 6, 6);
    let (p, source) = self_support_fg(
        &shot.features,
        &shot.mask,
        &conf,
        EmptyMaskFallback::SupportOnly,
    )
    .unwrap();
    let want = masked_average_pooling(&shot.features, &shot.mask, Role::Foreground).unwrap();
    assert_eq!(p.unwrap().values(), want.values());
    assert_eq!(source, Selection::Threshold);
}

#[test]
fn empty_estimate_support_only_degenerates_to_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = random_features(&mut rng, 4, 5, 5);
    let empty = Mask::filled(5, 5, MaskKind::Binary, 0.0).unwrap();
    let conf = random_prob_mask(&mut rng, 5, 5);
    let (p, source) = self_support_fg(&q, &empty, &conf, EmptyMaskFallback::SupportOnly).unwrap();
    assert!(p.is_none());
    assert_eq!(source, Selection::Absent);

    let fs = Prototype::new(Role::Foreground, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
    let bs = Prototype::new(Role::Background, vec![-1.0, 0.0, 0.5, 0.5]).unwrap();
    let ps = PrototypeSet::from_support(fs.clone(), bs.clone());
    let (fg, bg) = blend_prototypes(&ps, 5, 5, &SspConfig::default()).unwrap();
    assert_eq!(fg.values(), fs.values());
    assert_eq!(bg, PrototypeField::broadcast(&bs, 5, 5).unwrap());
}

#[test]
fn empty_estimate_top_k_pools_most_confident() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = random_features(&mut rng, 4, 6, 6);
    let empty = Mask::filled(6, 6, MaskKind::Binary, 0.0).unwrap();
    let conf = random_prob_mask(&mut rng, 6, 6);
    let (p, source) = self_support_fg(&q, &empty, &conf, EmptyMaskFallback::TopK(16)).unwrap();
    assert_eq!(source, Selection::TopK);
    let top = oracle::top_k(conf.data(), 16);
    let want = pool_pixels(&q, &top, Role::Foreground).unwrap();
    assert_eq!(p.unwrap().values(), want.values());
}

#[test]
fn top_k_larger_than_image_pools_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_features(&mut rng, 3, 2, 2);
    let empty = Mask::filled(2, 2, MaskKind::Binary, 0.0).unwrap();
    let conf = random_prob_mask(&mut rng, 2, 2);
    let (p, _) = self_support_fg(&q, &empty, &conf, EmptyMaskFallback::TopK(100)).unwrap();
    let all = Mask::filled(2, 2, MaskKind::Binary, 1.0).unwrap();
    let want = masked_average_pooling(&q, &all, Role::Foreground).unwrap();
    for (a, b) in p.unwrap().values().iter().zip(want.values()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn single_background_pixel_fills_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = random_features(&mut rng, 3, 4, 4);
    let est = Mask::from_pixels(4, 4, &[6]).unwrap();
    let field = adaptive_bg_prototype(&q, &est).unwrap();
    for p in 0..16 {
        assert_eq!(field.column(p), q.column(6));
    }
}

#[test]
fn identical_background_pixels_give_constant_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cols: Vec<Vec<f32>> = (0..16)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    cols[9] = cols[2].clone();
    let q = FeatureMap::from_columns(4, 4, &cols).unwrap();
    let est = Mask::from_pixels(4, 4, &[2, 9]).unwrap();
    let field = adaptive_bg_prototype(&q, &est).unwrap();
    for p in 0..16 {
        for (a, b) in field.column(p).iter().zip(&cols[2]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn adaptive_background_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let q = random_features(&mut rng, 3, 4, 4);
        let mut pixels: Vec<usize> = (0..16).collect();
        for i in (1..16).rev() {
            pixels.swap(i, rng.random_range(0..=i));
        }
        pixels.truncate(5);
        let est = Mask::from_pixels(4, 4, &pixels).unwrap();
        let field = adaptive_bg_prototype(&q, &est).unwrap();
        let want = oracle::adaptive_background(q.data(), &est.active_pixels(), 3, 16);
        for (a, b) in field.data().iter().zip(&want) {
            assert!((f64::from(*a) - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
        let a = affinity(&q, &pixels).unwrap();
        for j in 0..16 {
            assert!((a.column_sum(j) - 1.0).abs() <= 1e-5);
        }
    }
}

#[test]
fn adaptive_background_needs_pixels() {
    let q = FeatureMap::new(1, 2, 2, vec![1.0; 4]).unwrap();
    let empty = Mask::filled(2, 2, MaskKind::Binary, 0.0).unwrap();
    assert_eq!(
        adaptive_bg_prototype(&q, &empty).unwrap_err(),
        SspError::EmptyMask
    );
}

#[test]
fn blend_of_equal_prototypes_is_identity() {
    let v = Prototype::new(Role::Foreground, vec![0.25, -1.5, 2.0]).unwrap();
    let bgv = Prototype::new(Role::Background, vec![1.0, 1.0, -0.5]).unwrap();
    let mut ps = PrototypeSet::from_support(v.clone(), bgv.clone());
    ps.fg_self = Some(v.clone());
    ps.bg_self = Some(PrototypeField::broadcast(&bgv, 2, 2).unwrap());
    let (fg, bg) = blend_prototypes(&ps, 2, 2, &SspConfig::default()).unwrap();
    assert_eq!(fg.values(), v.values());
    assert_eq!(bg, PrototypeField::broadcast(&bgv, 2, 2).unwrap());
}

#[test]
fn blend_is_elementwise_mean_at_equal_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let (fs, bs, fq, bq) = (draw(4), draw(4), draw(4), draw(4 * 9));
    let mut ps = PrototypeSet::from_support(
        Prototype::new(Role::Foreground, fs.clone()).unwrap(),
        Prototype::new(Role::Background, bs.clone()).unwrap(),
    );
    ps.fg_self = Some(Prototype::new(Role::Foreground, fq.clone()).unwrap());
    ps.bg_self = Some(PrototypeField::new(4, 3, 3, bq.clone()).unwrap());
    let (fg, bg) = blend_prototypes(&ps, 3, 3, &SspConfig::default()).unwrap();
    for c in 0..4 {
        let want = (f64::from(fs[c]) + f64::from(fq[c])) / 2.0;
        assert!((f64::from(fg.values()[c]) - want).abs() < 1e-6);
        for p in 0..9 {
            let want = (f64::from(bs[c]) + f64::from(bq[c * 9 + p])) / 2.0;
            assert!((f64::from(bg.at(c, p)) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn blend_with_only_zero_weighted_members_fails() {
    let cfg = SspConfig {
        alpha1: 0.0,
        ..SspConfig::default()
    };
    let ps = PrototypeSet::from_support(
        Prototype::new(Role::Foreground, vec![1.0]).unwrap(),
        Prototype::new(Role::Background, vec![1.0]).unwrap(),
    );
    assert!(matches!(
        blend_prototypes(&ps, 1, 1, &cfg),
        Err(SspError::ZeroPrototype { .. })
    ));
}

#[test]
fn final_match_with_query_as_background_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let q = random_features(&mut rng, 4, 5, 5);
    let fg = Prototype::new(Role::Foreground, q.column(7)).unwrap();
    let field = PrototypeField::new(4, 5, 5, q.data().to_vec()).unwrap();
    let cfg = SspConfig {
        temperature: 3.0,
        ..SspConfig::default()
    };
    let (m2, scores) = final_match(&q, &fg, &field, &cfg).unwrap();
    assert!(scores.bg.data.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    let cf = oracle::cosine_map(fg.values(), q.data(), 4, 25);
    let cb = oracle::cosine_field_map(field.data(), q.data(), 4, 25);
    let (pf, _) = oracle::pairwise_softmax(&cf, &cb, 3.0);
    for (a, b) in m2.fg.data().iter().zip(&pf) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }
    // the bg field wins everywhere except where fg is equally close
    assert!(m2.fg.data().iter().all(|&v| v <= 0.5 + 1e-6));
    assert!((m2.fg.data()[7] - 0.5).abs() < 1e-6);
}

#[test]
fn final_match_equal_prototypes_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let q = random_features(&mut rng, 3, 4, 4);
    let p = Prototype::new(Role::Foreground, vec![0.3, 0.1, -0.7]).unwrap();
    let field = PrototypeField::broadcast(&p, 4, 4).unwrap();
    let (m2, _) = final_match(&q, &p, &field, &SspConfig::default()).unwrap();
    assert!(m2.fg.data().iter().chain(m2.bg.data()).all(|&v| v == 0.5));
}

#[test]
fn matching_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.6);
        let q = two_cluster_shot(&mut rng, 6, 8, 8, 0.6).features;
        let cfg = SspConfig {
            refine: true,
            temperature: 8.0,
            ..SspConfig::default()
        };
        match_episode(&[shot], &q, &cfg, MatchVariant::FULL).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn refine_with_support_only_weights_reproduces_m1() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let shot = two_cluster_shot(&mut rng, 5, 8, 8, 0.5);
    let q = two_cluster_shot(&mut rng, 5, 8, 8, 0.5).features;
    let cfg = SspConfig {
        temperature: 10.0,
        refine_alpha1: 1.0,
        refine_alpha2: 0.0,
        refine_alpha3: 0.0,
        refine: true,
        ..SspConfig::default()
    };
    let r = match_episode(&[shot], &q, &cfg, MatchVariant::FULL).unwrap();
    assert!(r.prototypes.fg_self.is_some());
    assert_eq!(r.m3.as_ref().unwrap(), &r.m1);
}

#[test]
fn refine_on_unchanged_mask_reuses_self_prototypes() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let shot = two_cluster_shot(&mut rng, 5, 8, 8, 0.5);
    let q = two_cluster_shot(&mut rng, 5, 8, 8, 0.5).features;
    let cfg = SspConfig {
        temperature: 10.0,
        refine_alpha1: 0.5,
        refine_alpha2: 0.25,
        refine_alpha3: 0.25,
        ..SspConfig::default()
    };
    let r = match_episode(std::slice::from_ref(&shot), &q, &cfg, MatchVariant::FULL).unwrap();
    // feeding m1 back in as "m2" rebuilds the same self-support prototypes
    let refined = refine(&q, &r.m1, &r.prototypes, &cfg, true).unwrap();
    assert_eq!(refined.fg_refined.as_ref(), r.prototypes.fg_self.as_ref());
    assert_eq!(refined.bg_refined.as_ref(), r.prototypes.bg_self.as_ref());
    // 0.5 P_s + 0.25 P_q + 0.25 P_q == 0.5 P_s + 0.5 P_q, so m3 equals m2
    let m2 = r.m2.unwrap();
    for (a, b) in refined.m3.fg.data().iter().zip(m2.fg.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn final_mask_is_beta_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let shot = two_cluster_shot(&mut rng, 6, 10, 10, 0.7);
    let q = two_cluster_shot(&mut rng, 6, 10, 10, 0.7).features;
    let cfg = SspConfig {
        temperature: 10.0,
        refine: true,
        ..SspConfig::default()
    };
    let r = match_episode(&[shot], &q, &cfg, MatchVariant::FULL).unwrap();
    let (m2, m3) = (r.m2.as_ref().unwrap(), r.m3.as_ref().unwrap());
    for p in 0..100 {
        let want = 0.3 * f64::from(m2.fg.data()[p]) + 0.7 * f64::from(m3.fg.data()[p]);
        assert!((f64::from(r.m_final.fg.data()[p]) - want).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&r.m_final.fg.data()[p]));
    }
    assert_valid(&r.m_final);
    assert!(r.diagnostics.refinement.is_some());
}

#[test]
fn without_refinement_final_equals_m2() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.5);
    let q = two_cluster_shot(&mut rng, 6, 8, 8, 0.5).features;
    let r = match_episode(&[shot], &q, &SspConfig::default(), MatchVariant::FULL).unwrap();
    assert_eq!(r.m2.as_ref(), Some(&r.m_final));
    assert!(r.m3.is_none());
}

#[test]
fn baseline_variant_stops_after_m1() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.5);
    let q = random_features(&mut rng, 6, 8, 8);
    let r = match_episode(&[shot], &q, &SspConfig::default(), MatchVariant::Baseline).unwrap();
    assert_eq!(r.m_final, r.m1);
    assert!(r.m2.is_none() && r.fg_star.is_none());
}

#[test]
fn global_background_variant_uses_one_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.4);
    let q = two_cluster_shot(&mut rng, 6, 8, 8, 0.4).features;
    let cfg = SspConfig {
        temperature: 10.0,
        ..SspConfig::default()
    };
    let r = match_episode(
        &[shot],
        &q,
        &cfg,
        MatchVariant::SelfSupport { adaptive_bg: false },
    )
    .unwrap();
    let field = r.prototypes.bg_self.unwrap();
    let first = field.column(0);
    assert!((0..64).all(|p| field.column(p) == first));
}

#[test]
fn empty_estimates_reproduce_baseline_exactly() {
    // taus near 1 select nothing at temperature 1
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let shot = two_cluster_shot(&mut rng, 6, 8, 8, 0.5);
    let q = two_cluster_shot(&mut rng, 6, 8, 8, 0.5).features;
    for refine in [false, true] {
        let cfg = SspConfig {
            tau_fg: 0.99,
            tau_bg: 0.99,
            refine,
            ..SspConfig::default()
        };
        let r = match_episode(std::slice::from_ref(&shot), &q, &cfg, MatchVariant::FULL).unwrap();
        let stats = r.diagnostics.first_pass.unwrap();
        assert_eq!((stats.fg_selected, stats.bg_selected), (0, 0));
        assert_eq!(stats.fg_source, Selection::Absent);
        let base = baseline_match(std::slice::from_ref(&shot), &q, &cfg).unwrap();
        assert_eq!(r.m_final, base.m1);
        assert_eq!(r.m2.unwrap(), base.m1);
    }
}

#[test]
fn predictions_are_valid_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for t in [1.0, 10.0, 50.0] {
        let shot = two_cluster_shot(&mut rng, 5, 7, 9, 0.8);
        let q = random_features(&mut rng, 5, 7, 9);
        let cfg = SspConfig {
            temperature: t,
            refine: true,
            empty_mask_fallback: EmptyMaskFallback::TopK(4),
            ..SspConfig::default()
        };
        let r = match_episode(&[shot], &q, &cfg, MatchVariant::FULL).unwrap();
        for pred in [Some(&r.m1), r.m2.as_ref(), r.m3.as_ref(), Some(&r.m_final)]
            .into_iter()
            .flatten()
        {
            assert_valid(pred);
        }
    }
}

#[test]
fn invalid_config_is_rejected_up_front() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let shot = two_cluster_shot(&mut rng, 3, 4, 4, 0.1);
    let cfg = SspConfig {
        beta1: 0.9,
        ..SspConfig::default()
    };
    assert!(matches!(
        match_episode(
            std::slice::from_ref(&shot),
            &shot.features,
            &cfg,
            MatchVariant::FULL
        ),
        Err(SspError::InvalidConfig(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_are_disjoint(
        probs in proptest::collection::vec(0.0f32..=1.0, 30),
        tau_fg in 0.01f64..0.99,
        tau_bg in 0.01f64..0.99,
    ) {
        prop_assume!(tau_fg + tau_bg >= 1.0);
        let m = Mask::new(5, 6, MaskKind::Probability, probs).unwrap();
        let cfg = SspConfig { tau_fg, tau_bg, ..SspConfig::default() };
        let (fg, bg) = threshold_select(&m, &cfg);
        for p in 0..30 {
            prop_assert!(!(fg.is_set(p) && bg.is_set(p)));
        }
    }

    #[test]
    fn prototype_scaling_leaves_predictions_unchanged(
        seed in any::<u64>(),
        scale in 0.05f32..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shot = two_cluster_shot(&mut rng, 4, 6, 6, 0.6);
        let q = random_features(&mut rng, 4, 6, 6);
        let cfg = SspConfig { temperature: 5.0, ..SspConfig::default() };
        let r = match_episode(&[shot], &q, &cfg, MatchVariant::FULL).unwrap();
        let fg = r.fg_star.as_ref().unwrap();
        let bg = r.bg_star.as_ref().unwrap();
        let scaled_bg = PrototypeField::new(
            4, 6, 6, bg.data().iter().map(|v| v * scale).collect()).unwrap();
        let (a, _) = final_match(&q, fg, bg, &cfg).unwrap();
        let (b, _) = final_match(&q, &fg.scaled(scale), &scaled_bg, &cfg).unwrap();
        for (x, y) in a.fg.data().iter().zip(b.fg.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn asbp_matches_oracle_on_small_shapes(
        c in 1usize..=8,
        h in 1usize..=8,
        w in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_features(&mut rng, c, h, w);
        let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.5)).collect();
        prop_assume!(bits.iter().any(|&b| b));
        let est = Mask::from_bools(h, w, &bits).unwrap();
        let field = adaptive_bg_prototype(&q, &est).unwrap();
        let want = oracle::adaptive_background(q.data(), &est.active_pixels(), c, h * w);
        for (a, b) in field.data().iter().zip(&want) {
            prop_assert!((f64::from(*a) - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }
}
