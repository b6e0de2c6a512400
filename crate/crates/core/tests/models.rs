use lbrm_core::data::{generate_synthetic, Family, SyntheticConfig};
use lbrm_core::models::{
    evaluate_mae, fine_tune, parity_check, train, Architecture, ImputerConfig, TrainedImputer,
};
use lbrm_core::{random_missing_mask, ImputationOracle, MaskMatrix, Result, TimeSeries};

fn corpus(family: Family, count: usize, len: usize, seed: u64) -> Vec<TimeSeries> {
    generate_synthetic(&SyntheticConfig::new(family, count, len, seed)).unwrap()
}

fn ae(epochs: usize, batch: usize) -> ImputerConfig {
    let arch = Architecture::Autoencoder {
        hidden: vec![32],
        bottleneck: 8,
    };
    let mut cfg = ImputerConfig::new(arch, epochs, batch, 0.01);
    cfg.seed = 3;
    cfg
}

/// Mean masked MAE on the training series themselves, averaged over a few mask draws.
fn train_mae(model: &TrainedImputer, data: &[TimeSeries]) -> f64 {
    (0..4)
        .map(|s| evaluate_mae(model, data, 0.2, 100 + s).unwrap())
        .sum::<f64>()
        / 4.0
}

struct Zero;

impl ImputationOracle for Zero {
    fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
        let v = observed
            .values()
            .iter()
            .zip(mask.entries())
            .map(|(&x, &seen)| if seen { x } else { 0.0 })
            .collect();
        observed.with_values(v)
    }
}

#[test]
fn more_epochs_lower_training_loss() {
    let data = corpus(Family::A, 16, 24, 1);
    let short = train(&data, &ae(1, 4)).unwrap();
    let long = train(&data, &ae(50, 4)).unwrap();
    assert_eq!(long.history().len(), 50);
    assert!(
        long.history().last() < short.history().last(),
        "{:?} vs {:?}",
        long.history().last(),
        short.history().last()
    );
}

#[test]
fn overfit_sweep_reduces_training_error() {
    let data = corpus(Family::A, 8, 24, 2);
    let losses: Vec<f64> = [1, 5, 25, 125]
        .iter()
        .map(|&e| *train(&data, &ae(e, 2)).unwrap().history().last().unwrap())
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "sweep not decreasing: {losses:?}");
    }
    assert!(losses[3] < losses[0] * 0.5, "{losses:?}");
}

#[test]
fn small_set_is_fitted_closely() {
    let data = corpus(Family::A, 4, 24, 3);
    let arch = Architecture::Autoencoder {
        hidden: vec![64],
        bottleneck: 16,
    };
    let mut cfg = ImputerConfig::new(arch, 5000, 2, 0.01);
    cfg.seed = 9;
    let model = train(&data, &cfg).unwrap();
    let mae = train_mae(&model, &data);
    assert!(mae < 0.05, "training MAE {mae}");
}

#[test]
fn single_series_is_memorized() {
    let data = corpus(Family::A, 1, 16, 4);
    let arch = Architecture::Autoencoder {
        hidden: vec![32],
        bottleneck: 8,
    };
    let mut cfg = ImputerConfig::new(arch, 3000, 1, 0.01);
    cfg.seed = 1;
    let mut model = train(&data, &cfg).unwrap();
    // The L1 loss keeps a constant-size gradient, so step the rate down to settle.
    for rate in [1e-3, 1e-4] {
        cfg.learning_rate = rate;
        model = fine_tune(&model, &data, &cfg).unwrap();
    }
    let mae = train_mae(&model, &data);
    assert!(mae < 1e-3, "memorization MAE {mae}");
}

#[test]
fn zero_predictor_mae_is_mean_absolute_value() {
    let x = TimeSeries::univariate("z", &[1.0, -2.0, 3.0, -4.0, 0.5, 2.5, -1.5, 0.0, 1.0, -3.0])
        .unwrap();
    let data = vec![x.clone()];
    let fraction = 0.3;
    let seed = 11;
    let mae = evaluate_mae(&Zero, &data, fraction, seed).unwrap();

    // Rebuild the hidden set the same way the evaluator draws it.
    let mut rng = lbrm_core::rng::seeded(seed);
    let mask = random_missing_mask(x.shape(), fraction, rand::RngCore::next_u64(&mut rng)).unwrap();
    let hidden: Vec<f64> = x
        .values()
        .iter()
        .zip(mask.entries())
        .filter(|(_, &seen)| !seen)
        .map(|(v, _)| v.abs())
        .collect();
    let expect = hidden.iter().sum::<f64>() / hidden.len() as f64;
    assert!((mae - expect).abs() < 1e-12, "{mae} vs {expect}");
}

#[test]
fn fine_tuning_fits_private_data_and_leaves_base_alone() {
    let public = corpus(Family::A, 24, 24, 5);
    let private = corpus(Family::A, 6, 24, 6);
    let base = train(&public, &ae(30, 8)).unwrap();
    let snapshot = base.clone();
    let tuned = fine_tune(&base, &private, &ae(200, 2)).unwrap();
    assert_eq!(base, snapshot);
    assert_ne!(tuned.params(), base.params());
    let before = train_mae(&base, &private);
    let after = train_mae(&tuned, &private);
    assert!(after < before, "private MAE {before} -> {after}");
}

#[test]
fn untrained_model_fails_tight_parity() {
    let data = corpus(Family::A, 16, 24, 7);
    let trained = train(&data, &ae(100, 4)).unwrap();
    let untrained = TrainedImputer::untrained(ae(1, 4), 24, 1).unwrap();
    let report = parity_check(&trained, &untrained, &data, 0.01, 8).unwrap();
    assert!(!report.passed, "{report:?}");
    assert!(report.gap > 0.01);
    assert!(report.target_mae < report.reference_mae);
}
