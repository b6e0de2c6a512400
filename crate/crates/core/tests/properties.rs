//! Randomized invariants, run with a pinned proptest seed.

use std::collections::HashSet;

use lbrm_core::attack::{classify, loss_ratio, resolve_theta, MembershipScore, ThetaRule};
use lbrm_core::data::{
    generate_synthetic, load_csv, save_csv, split_scenario1, split_scenario2, Family,
    SyntheticConfig,
};
use lbrm_core::dtw::{dtw_brute_force, dtw_distance, dtw_distance_banded};
use lbrm_core::harness::{evaluate_scores, MetricName};
use lbrm_core::metrics::{
    auroc, pairwise_auroc, roc_curve, tpr_at_fpr, tpr_at_top_percent, Direction, LabeledScores,
};
use lbrm_core::models::{Architecture, ImputerConfig, TrainedImputer};
use lbrm_core::{
    apply_mask, random_missing_mask, single_unit_mask, ImputationOracle, MaskMatrix, MaskSpec,
    TimeSeries,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config() -> Config {
    Config {
        cases: 96,
        rng_seed: RngSeed::Fixed(0x5eed_1b2a),
        failure_persistence: None,
        ..Config::default()
    }
}

fn series(max_len: usize, dims: usize) -> impl Strategy<Value = TimeSeries> {
    (1..=max_len).prop_flat_map(move |len| {
        prop::collection::vec(-5.0f64..5.0, len * dims)
            .prop_map(move |v| TimeSeries::new("s", len, dims, v).unwrap())
    })
}

fn pair(max_len: usize) -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
    (1usize..=2).prop_flat_map(move |d| (series(max_len, d), series(max_len, d)))
}

/// Scores drawn from a small grid so ties are common.
fn labeled(max_n: usize) -> impl Strategy<Value = LabeledScores> {
    prop::collection::vec((0u8..12, any::<bool>()), 2..max_n)
        .prop_filter("both classes", |v| {
            v.iter().any(|p| p.1) && v.iter().any(|p| !p.1)
        })
        .prop_map(|v| {
            LabeledScores::new(v.into_iter().map(|(s, m)| (s as f64 / 4.0, m)).collect()).unwrap()
        })
}

fn score(id: usize, l_t: f64, l_r: f64) -> MembershipScore {
    let (r, degenerate) = loss_ratio(l_t, l_r);
    MembershipScore {
        candidate_id: format!("c{id}"),
        l_t,
        l_r,
        r,
        degenerate,
    }
}

fn small_models() -> Vec<TrainedImputer> {
    let ae = ImputerConfig::new(
        Architecture::Autoencoder {
            hidden: vec![6],
            bottleneck: 3,
        },
        1,
        1,
        0.01,
    );
    let att = ImputerConfig::new(
        Architecture::Attention {
            model_dim: 4,
            heads: 2,
            blocks: 1,
            ff_dim: 4,
        },
        1,
        1,
        0.01,
    );
    vec![
        TrainedImputer::untrained(ae, 6, 2).unwrap(),
        TrainedImputer::untrained(att, 6, 2).unwrap(),
    ]
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dtw_matches_brute_force((a, b) in pair(6)) {
        let fast = dtw_distance(&a, &b).unwrap().value();
        let slow = dtw_brute_force(&a, &b).unwrap().value();
        prop_assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_identity((a, b) in pair(12)) {
        let ab = dtw_distance(&a, &b).unwrap().value();
        let ba = dtw_distance(&b, &a).unwrap().value();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert_eq!(dtw_distance(&a, &a).unwrap().value(), 0.0);
    }

    #[test]
    fn dtw_is_positively_homogeneous((a, b) in pair(10), c in 0.01f64..100.0) {
        let scale = |x: &TimeSeries| x.with_values(x.values().iter().map(|v| v * c).collect()).unwrap();
        let base = dtw_distance(&a, &b).unwrap().value();
        let scaled = dtw_distance(&scale(&a), &scale(&b)).unwrap().value();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (c * base).max(1.0));
    }

    #[test]
    fn dtw_band_never_beats_unconstrained((a, b) in pair(10), band in 0usize..4) {
        let free = dtw_distance(&a, &b).unwrap().value();
        let banded = dtw_distance_banded(&a, &b, Some(band)).unwrap().value();
        prop_assert!(banded + 1e-12 >= free);
    }

    #[test]
    fn single_unit_mask_hides_exactly_the_block(
        x in series(20, 2),
        start_frac in 0.0f64..1.0,
        len_frac in 0.0f64..1.0,
        dim in 0usize..2,
    ) {
        prop_assume!(x.len() >= 2);
        let block = 1 + ((x.len() - 2) as f64 * len_frac) as usize;
        let start = ((x.len() - block) as f64 * start_frac) as usize;
        let m = single_unit_mask(&x, MaskSpec::new(start, block, dim)).unwrap();
        for t in 0..x.len() {
            for d in 0..2 {
                let hidden = d == dim && t >= start && t < start + block;
                prop_assert_eq!(m.mask().is_observed(t, d), !hidden);
                let shown = m.series().get(t, d);
                prop_assert_eq!(shown, if hidden { 0.0 } else { x.get(t, d) });
            }
        }
        prop_assert_eq!(m.mask().missing_count(), block);
        prop_assert_eq!(m.original(), &x);
    }

    #[test]
    fn random_mask_hides_rounded_fraction(len in 1usize..40, dims in 1usize..4, f in 0.01f64..0.99, seed: u64) {
        let m = random_missing_mask((len, dims), f, seed).unwrap();
        let want = (f * (len * dims) as f64).round() as usize;
        prop_assert_eq!(m.missing_count(), want);
        prop_assert_eq!(m, random_missing_mask((len, dims), f, seed).unwrap());
    }

    #[test]
    fn models_keep_observed_entries(
        values in prop::collection::vec(-3.0f64..3.0, 12),
        observed in prop::collection::vec(any::<bool>(), 12),
    ) {
        let x = TimeSeries::new("k", 6, 2, values).unwrap();
        let mask = MaskMatrix::new(6, 2, observed).unwrap();
        let masked = apply_mask(&x, &mask).unwrap();
        for model in small_models() {
            let out = ImputationOracle::impute(&model, masked.series(), &mask).unwrap();
            prop_assert_eq!(out.shape(), x.shape());
            for (i, &seen) in mask.entries().iter().enumerate() {
                if seen {
                    prop_assert_eq!(out.values()[i].to_bits(), x.values()[i].to_bits());
                } else {
                    prop_assert!(out.values()[i].is_finite());
                }
            }
        }
    }

    #[test]
    fn ratio_is_scale_invariant(l_t in 1e-6f64..1e3, l_r in 1e-6f64..1e3, c in 1e-3f64..1e3) {
        let (r, _) = loss_ratio(l_t, l_r);
        let (rc, _) = loss_ratio(c * l_t, c * l_r);
        prop_assert!((r - rc).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn ratio_is_finite_and_nonnegative(l_t in 0.0f64..1e6, l_r in 0.0f64..1e6) {
        let (r, degenerate) = loss_ratio(l_t, l_r);
        prop_assert!(r.is_finite() && r >= 0.0);
        if degenerate {
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn classify_is_monotone_in_theta(
        losses in prop::collection::vec((0.0f64..5.0, 0.01f64..5.0), 1..40),
        a in 0.0f64..5.0,
        b in 0.0f64..5.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for (i, &(l_t, l_r)) in losses.iter().enumerate() {
            let s = score(i, l_t, l_r);
            if classify(&s, lo).is_member {
                prop_assert!(classify(&s, hi).is_member);
            }
        }
    }

    #[test]
    fn top_percent_flags_at_least_k(
        losses in prop::collection::vec((0.0f64..5.0, 0.01f64..5.0), 1..60),
        percent in 1.0f64..100.0,
    ) {
        let scores: Vec<_> = losses.iter().enumerate().map(|(i, &(t, r))| score(i, t, r)).collect();
        let rs: Vec<f64> = scores.iter().map(|s| s.r).collect();
        let theta = resolve_theta(ThetaRule::TopPercent { percent }, &rs, None).unwrap();
        let k = ((percent * rs.len() as f64 / 100.0).floor() as usize).max(1);
        let flagged = scores.iter().filter(|s| classify(s, theta).is_member).count();
        prop_assert!(flagged >= k);
        let strictly_below = rs.iter().filter(|&&r| r < theta).count();
        prop_assert!(strictly_below < k);
    }

    #[test]
    fn roc_is_monotone_with_fixed_endpoints(data in labeled(80)) {
        let curve = roc_curve(&data).unwrap();
        let pts = curve.points();
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].fpr > w[0].fpr || w[1].tpr > w[0].tpr);
        }
    }

    #[test]
    fn auroc_equals_pairwise_statistic(data in labeled(200)) {
        let a = auroc(&roc_curve(&data).unwrap());
        let b = pairwise_auroc(&data).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn label_flip_duality(data in labeled(120)) {
        let flipped = LabeledScores::new(data.pairs().iter().map(|&(s, m)| (s, !m)).collect()).unwrap();
        let a = auroc(&roc_curve(&data).unwrap());
        let f = auroc(&roc_curve(&flipped).unwrap());
        prop_assert!((a + f - 1.0).abs() <= 1e-12);
        // Reversing the direction is the same as negating the scores.
        let negated = LabeledScores::with_direction(
            data.pairs().iter().map(|&(s, m)| (-s, m)).collect(),
            Direction::HigherIsMember,
        ).unwrap();
        let n = auroc(&roc_curve(&negated).unwrap());
        prop_assert!((a - n).abs() <= 1e-12);
        let r = auroc(&roc_curve(&data.reversed()).unwrap());
        prop_assert!((a + r - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tpr_metrics_are_rates(data in labeled(100), cap in 0.01f64..0.99, percent in 1.0f64..100.0) {
        let curve = roc_curve(&data).unwrap();
        let t = tpr_at_fpr(&curve, cap).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        let top = tpr_at_top_percent(&data, percent).unwrap();
        prop_assert!((0.0..=1.0).contains(&top));
    }

    #[test]
    fn headline_metrics_ignore_theta_rule(
        losses in prop::collection::vec((0.0f64..5.0, 0.01f64..5.0, any::<bool>()), 4..50),
        n in 0.0f64..3.0,
        percent in 1.0f64..100.0,
        theta in 0.0f64..3.0,
    ) {
        prop_assume!(losses.iter().filter(|x| x.2).count() >= 1);
        prop_assume!(losses.iter().filter(|x| !x.2).count() >= 2);
        let scores: Vec<_> = losses.iter().enumerate().map(|(i, &(t, r, _))| score(i, t, r)).collect();
        let labels: Vec<bool> = losses.iter().map(|x| x.2).collect();
        let rules = [
            ThetaRule::StdRule { n },
            ThetaRule::TopPercent { percent },
            ThetaRule::Fixed { theta },
        ];
        let evals: Vec<_> = rules
            .iter()
            .map(|&rule| evaluate_scores(&scores, &labels, rule, &MetricName::all()).unwrap())
            .collect();
        for e in &evals[1..] {
            for (k, v) in &evals[0].lbrm {
                prop_assert_eq!(v.to_bits(), e.lbrm[k].to_bits());
            }
            for (k, v) in &evals[0].naive {
                prop_assert_eq!(v.to_bits(), e.naive[k].to_bits());
            }
        }
    }

    #[test]
    fn splits_are_exact_partitions(n in 5usize..120, seed: u64) {
        let data: Vec<TimeSeries> = (0..n)
            .map(|i| TimeSeries::univariate(format!("x{i}"), &[i as f64]).unwrap())
            .collect();
        for (split, sizes) in [
            (split_scenario1(&data, seed).unwrap(), (2 * n / 5, 2 * n / 5)),
            (split_scenario2(&data, seed).unwrap(), (3 * n / 5, n / 5)),
        ] {
            let (p, q, t) = split.sizes();
            prop_assert_eq!((p, q), sizes);
            prop_assert_eq!(p + q + t, n);
            let mut seen = HashSet::new();
            for s in split.public.iter().chain(&split.private).chain(&split.test) {
                prop_assert!(seen.insert(s.id().to_string()), "duplicate {}", s.id());
            }
            prop_assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn generator_is_deterministic(seed: u64, count in 1usize..6, len in 1usize..30, dims in 1usize..3) {
        let mut cfg = SyntheticConfig::new(Family::B, count, len, seed);
        cfg.dims = dims;
        let a = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&a, &generate_synthetic(&cfg).unwrap());
        prop_assert!(a.iter().all(|s| s.values().iter().all(|v| v.is_finite())));
    }
}

proptest! {
    #![proptest_config(Config { cases: 24, ..config() })]

    #[test]
    fn csv_round_trip_is_exact(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 6), 1..8),
    ) {
        // Values with at most 9 significant digits.
        let data: Vec<TimeSeries> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let v = v.iter().map(|x| format!("{x:.2e}").parse::<f64>().unwrap()).collect();
                TimeSeries::new(format!("id{i}"), 3, 2, v).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        save_csv(&data, &path).unwrap();
        prop_assert_eq!(load_csv(&path).unwrap(), data);
    }
}
