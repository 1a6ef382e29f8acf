//! Property tests for the metric identities, curve monotonicity,
//! fusion-rule ranges, fusion-oracle agreement, and simulator
//! invariants.

mod common;

use common::*;
use opfusion_core::{
    average_fusion, dempster_shafer_fuse, evaluate_scores, op_bilinear_fuse,
    orderless_bilinear_pool, pr_curve, sparse_reduce, FieldConfig, Metrics, Session, Tensor,
    Trajectory,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn counts() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (0usize..300, 0usize..300, 0usize..300, 0usize..300)
}

proptest! {
    #[test]
    fn metric_identities_on_integer_counts((tp, fp, fn_, tn) in counts()) {
        let m = Metrics::from_counts(tp, fp, fn_, tn, 0.5);
        let expect_p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let expect_r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        prop_assert_eq!(m.precision, expect_p);
        prop_assert_eq!(m.recall, expect_r);
        let expect_f1 = if expect_p + expect_r == 0.0 {
            0.0
        } else {
            2.0 * expect_p * expect_r / (expect_p + expect_r)
        };
        prop_assert_eq!(m.f1, expect_f1);
        prop_assert!((0.0..=1.0).contains(&m.precision));
        prop_assert!((0.0..=1.0).contains(&m.recall));
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
    }

    #[test]
    fn evaluate_counts_partition_the_dataset(
        scores in prop::collection::vec(0.0f64..1.0, 1..40),
        seed in any::<u64>(),
        threshold in 0.0f64..1.0,
    ) {
        let labels: Vec<u8> = scores
            .iter()
            .enumerate()
            .map(|(i, _)| ((seed >> (i % 64)) & 1) as u8)
            .collect();
        let m = evaluate_scores(&scores, &labels, threshold).unwrap();
        prop_assert_eq!(m.tp + m.fp + m.fn_ + m.tn, scores.len());
        let positives = labels.iter().filter(|&&l| l == 1).count();
        prop_assert_eq!(m.tp + m.fn_, positives);
    }

    #[test]
    fn pr_curve_is_monotone_and_matches_brute_force(
        raw in prop::collection::vec((0u8..10, prop::bool::ANY), 1..14),
    ) {
        // quantized scores force ties across samples
        let scores: Vec<f64> = raw.iter().map(|&(q, _)| q as f64 / 10.0).collect();
        let labels: Vec<u8> = raw.iter().map(|&(_, l)| u8::from(l)).collect();
        let curve = pr_curve(&scores, &labels).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[0].recall >= w[1].recall);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.precision));
            prop_assert!((0.0..=1.0).contains(&p.recall));
        }
        if labels.contains(&1) {
            prop_assert_eq!(curve.points[0].recall, 1.0);
        }
        let expected = brute_force_pr(&scores, &labels);
        prop_assert_eq!(curve.points.len(), expected.len());
        for (p, &(t, ep, er)) in curve.points.iter().zip(&expected) {
            prop_assert_eq!(p.threshold, t);
            prop_assert_eq!(p.precision, ep);
            prop_assert_eq!(p.recall, er);
        }
    }

    #[test]
    fn average_fusion_is_symmetric_monotone_and_bounded(
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        c in 0.0f64..=1.0,
    ) {
        let ab = average_fusion(a, b).unwrap();
        let ba = average_fusion(b, a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        let (lo, hi) = if a <= c { (a, c) } else { (c, a) };
        prop_assert!(average_fusion(lo, b).unwrap() <= average_fusion(hi, b).unwrap());
    }

    #[test]
    fn dempster_shafer_stays_in_range_and_is_symmetric(
        cv in 0.0f64..=1.0,
        uv in 0.0f64..=1.0,
        cs in 0.0f64..=1.0,
        us in 0.0f64..=1.0,
    ) {
        let d = dempster_shafer_fuse(cv, uv, cs, us).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.score), "score {}", d.score);
        prop_assert!(d.m_positive >= 0.0 && d.m_negative >= 0.0 && d.m_ignorance >= 0.0);
        prop_assert!((d.m_positive + d.m_negative + d.m_ignorance - 1.0).abs() < 1e-12);
        let swapped = dempster_shafer_fuse(cs, us, cv, uv).unwrap();
        prop_assert!((d.score - swapped.score).abs() < 1e-12);
    }

    #[test]
    fn fuse_and_orderless_match_naive_loops(
        u in 1usize..4, v in 1usize..4, t in 1usize..5,
        n in 1usize..5, m in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = rand_tensor(&[u, v, n], -2.0, 2.0, &mut rng);
        let z = rand_tensor(&[t, m], -2.0, 2.0, &mut rng);
        let fused = op_bilinear_fuse(&x, &z).unwrap();
        prop_assert!(max_abs_diff(&fused, &naive_fuse(&x, &z)) < 1e-12);
        let pooled = orderless_bilinear_pool(&x, &z).unwrap();
        prop_assert!(max_abs_diff(&pooled, &naive_orderless(&x, &z)) < 1e-10);
    }

    #[test]
    fn sparse_reduce_output_is_nonnegative(
        d in 1usize..6, n in 1usize..5, lead in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let feats = rand_tensor(&[lead, d], -2.0, 2.0, &mut rng);
        let w = rand_tensor(&[n, d], -1.0, 1.0, &mut rng);
        let out = sparse_reduce(&feats, &w).unwrap();
        prop_assert!(out.data.iter().all(|&v| v >= 0.0));
        let zeros = Tensor::zeros(&[n, d]);
        let out0 = sparse_reduce(&feats, &zeros).unwrap();
        prop_assert!(out0.data.iter().all(|&v| v == 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_stay_confined_and_continuous(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let traj = Trajectory::generate(60.0, -1.0, 20.0, &mut rng);
        let max_speed = traj.speeds.iter().cloned().fold(0.0f64, f64::max);
        for w in traj.positions.windows(2) {
            let step = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            prop_assert!(step <= max_speed * traj.dt + 1e-9);
        }
        for &(x, y) in &traj.positions {
            prop_assert!((0.0..=60.0).contains(&x) && (0.0..=60.0).contains(&y));
        }
    }

    #[test]
    fn window_labels_follow_the_radius_rule(
        px in 0.0f64..40.0,
        py in 0.0f64..40.0,
        session_seed in any::<u64>(),
    ) {
        let cfg = FieldConfig {
            sensors: vec![(0.0, 0.0), (20.0, 20.0)],
            field_size: 40.0,
            crop_px: 8,
            seismic_rate: 32,
            frame_rate: 2,
            session_s: 2.0,
            ..FieldConfig::default()
        };
        let session = Session {
            trajectory: Trajectory::stationary((px, py), -3.0, 8.0),
            duration_s: cfg.session_s,
            sensor_ids: vec![0, 1],
        };
        let windows = opfusion_core::window_and_label(&session, &cfg, session_seed);
        prop_assert_eq!(windows.len(), 2 * cfg.windows_per_session());
        for w in windows {
            let sensor = cfg.sensors[w.sensor_id as usize];
            let d = ((px - sensor.0).powi(2) + (py - sensor.1).powi(2)).sqrt() as f32;
            prop_assert!((w.distance - d).abs() < 1e-5);
            prop_assert_eq!(w.label == 1, w.distance < cfg.radius as f32);
        }
    }
}
