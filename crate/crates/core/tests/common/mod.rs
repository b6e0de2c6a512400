#![allow(dead_code)]

use lbrm_core::models::{Architecture, Network};
use lbrm_core::rng::seeded;
use lbrm_core::{MaskMatrix, TimeSeries};
use rand::Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_PROBES: usize = 20;

/// Largest relative error seen by a finite-difference probe run.
#[derive(Debug)]
pub struct GradReport {
    pub params: usize,
    pub probes: usize,
    pub worst: f64,
}

/// Autoencoder under 200 parameters: widths 8-6-3-6-4.
pub fn small_autoencoder() -> (Architecture, usize, usize) {
    (
        Architecture::Autoencoder {
            hidden: vec![6],
            bottleneck: 3,
        },
        4,
        1,
    )
}

/// Attention imputer under 200 parameters.
pub fn small_attention() -> (Architecture, usize, usize) {
    (
        Architecture::Attention {
            model_dim: 4,
            heads: 2,
            blocks: 1,
            ff_dim: 4,
        },
        5,
        1,
    )
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare `output_vjp` against central differences of `sum(w * output)`.
///
/// Each probe draws fresh parameters, a fresh input and mask, fresh output
/// weights and one parameter index.
pub fn check_gradients(arch: &Architecture, len: usize, dims: usize, seed: u64) -> GradReport {
    let net = Network::build(arch, len, dims).unwrap();
    let n = net.param_count();
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for probe in 0..GRAD_PROBES {
        let params = net.init_params(rng.random());
        let values: Vec<f64> = (0..len * dims)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let observed: Vec<bool> = (0..len * dims).map(|_| rng.random_bool(0.6)).collect();
        let mask = MaskMatrix::new(len, dims, observed.clone()).unwrap();
        let shown: Vec<f64> = values
            .iter()
            .zip(&observed)
            .map(|(&v, &o)| if o { v } else { 0.0 })
            .collect();
        let x = TimeSeries::new(format!("p{probe}"), len, dims, shown).unwrap();
        let w: Vec<f64> = (0..len * dims)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let analytic = net.output_vjp(&params, &x, &mask, &w);

        let objective = |p: &[f64]| -> f64 {
            net.predict(p, &x, &mask)
                .iter()
                .zip(&w)
                .map(|(o, wi)| o * wi)
                .sum()
        };
        let i = rng.random_range(0..n);
        let h = 1e-5;
        let mut plus = params.clone();
        plus[i] += h;
        let mut minus = params.clone();
        minus[i] -= h;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    GradReport {
        params: n,
        probes: GRAD_PROBES,
        worst,
    }
}
