use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use promptvoc_core::activations::{adaptive_snake, condition_transform, snake, AdaptiveSnakeParams, SnakeParams};
use promptvoc_core::data::{pack_batches, sample_prompt_segment_with, target_range, Edge, SamplerConfig, TargetMode};
use promptvoc_core::dsp::mel::num_frames;
use promptvoc_core::dsp::{default_resampler_filter, downsample2x, upsample2x};
use promptvoc_core::features::io::{decode_feature_matrix, encode_feature_matrix};
use promptvoc_core::features::{mean_pool, FeatureMatrix, PromptFrames};
use promptvoc_core::vc::secs;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn snake_shifts_by_one_period(x in -20.0f64..20.0, alpha in 0.05f64..5.0, beta in 0.05f64..5.0) {
        let p = SnakeParams { alpha: vec![alpha], beta: vec![beta], log_scale: false };
        let shift = PI / alpha;
        let d = snake(&[x + shift], &p).unwrap()[0] - snake(&[x], &p).unwrap()[0];
        prop_assert!((d - shift).abs() <= 1e-9 * (1.0 + shift.abs() + x.abs()));
    }

    #[test]
    fn condition_transform_stays_inside_unit_interval(
        s in prop::collection::vec(-50.0f64..50.0, 3),
        w in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        for t in condition_transform(&s, &w, &b).unwrap() {
            prop_assert!(t.abs() <= 1.0 && t.is_finite());
        }
    }

    #[test]
    fn zero_map_gives_plain_snake(
        x in prop::collection::vec(-30.0f64..30.0, 2..40),
        la in -2.0f64..2.0,
        lb in -2.0f64..2.0,
        s in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let mut p = AdaptiveSnakeParams::zero_init(1, 3);
        p.base.alpha[0] = la;
        p.base.beta[0] = lb;
        let a = adaptive_snake(&x, &s, &p).unwrap();
        let b = snake(&x, &p.base).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn prompt_segments_respect_bounds(d in 600usize..5000, seed in any::<u64>()) {
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_prompt_segment_with(d, &cfg, &mut rng).unwrap();
        prop_assert!(s.len >= d.div_ceil(3) && s.len <= d / 2);
        prop_assert!(s.offset <= cfg.max_offset);
        prop_assert!(s.end() <= d);
        match s.edge {
            Edge::Begin => prop_assert_eq!(s.start, s.offset),
            Edge::End => prop_assert_eq!(d - s.end(), s.offset),
        }
        let (a, b) = target_range(d, &s, TargetMode::Complement);
        prop_assert!(a < b && b <= d);
        prop_assert!(b <= s.start || a >= s.end(), "target overlaps the prompt");
        prop_assert!(b - a >= d - s.end() && b - a >= s.start);
    }

    #[test]
    fn packing_covers_every_example_within_budget(
        durs in prop::collection::vec(0.1f64..12.0, 1..60),
        budget in 12.0f64..60.0,
    ) {
        let groups = pack_batches(&durs, budget).unwrap();
        let mut seen: Vec<usize> = groups.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..durs.len()).collect::<Vec<_>>());
        for g in &groups {
            prop_assert!(!g.is_empty());
            prop_assert!(g.iter().map(|&i| durs[i]).sum::<f64>() <= budget + 1e-9);
        }
    }

    #[test]
    fn mean_pool_ignores_frame_order(
        values in prop::collection::vec(-100.0f32..100.0, 8..200),
        seed in any::<u64>(),
    ) {
        let dim = 4;
        let n = values.len() / dim;
        let frames = PromptFrames::new(values[..n * dim].to_vec(), dim).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = mean_pool(&frames).unwrap();
        let b = mean_pool(&frames.permuted(&order).unwrap()).unwrap();
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn cosine_is_bounded_symmetric_and_scale_free(
        a in prop::collection::vec(-10.0f32..10.0, 6),
        b in prop::collection::vec(-10.0f32..10.0, 6),
        k in 0.01f32..100.0,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let c = secs(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - secs(&b, &a).unwrap()).abs() <= 1e-12);
        let scaled: Vec<f32> = a.iter().map(|v| v * k).collect();
        prop_assert!((c - secs(&scaled, &b).unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn feature_files_round_trip_any_bits(bits in prop::collection::vec(any::<u32>(), 0..64), cols in 1usize..5) {
        let rows = bits.len() / cols;
        let values: Vec<f32> = bits[..rows * cols]
            .iter()
            .map(|&b| f32::from_bits(b))
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let m = FeatureMatrix::new(rows, cols, values).unwrap();
        let back = decode_feature_matrix(&encode_feature_matrix(&m).unwrap()).unwrap();
        prop_assert_eq!(back.rows, rows);
        prop_assert_eq!(back.cols, cols);
        prop_assert!(back.values.iter().zip(&m.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn resampler_lengths(n in 1usize..3000) {
        let x: Vec<f32> = (0..n).map(|i| (i as f32 * 0.1).sin()).collect();
        let f = default_resampler_filter();
        prop_assert_eq!(upsample2x(&x, f).unwrap().len(), 2 * n);
        prop_assert_eq!(downsample2x(&x, f).unwrap().len(), n.div_ceil(2));
    }

    #[test]
    fn frame_count_is_ceiling(n in 1usize..1_000_000, hop in 1usize..1000) {
        let f = num_frames(n, hop);
        prop_assert!(f * hop >= n && (f - 1) * hop < n);
    }
}
