mod common;

use common::*;
use lbrm_core::models::Network;

#[test]
fn networks_fit_the_probe_budget() {
    for (arch, len, dims) in [small_autoencoder(), small_attention()] {
        let n = Network::build(&arch, len, dims).unwrap().param_count();
        assert!(n <= 200, "{arch:?} has {n} parameters");
    }
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    let (arch, len, dims) = small_autoencoder();
    for seed in 0..5 {
        let r = check_gradients(&arch, len, dims, seed);
        assert!(r.worst <= GRAD_TOLERANCE, "seed {seed}: {r:?}");
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    let (arch, len, dims) = small_attention();
    for seed in 0..5 {
        let r = check_gradients(&arch, len, dims, seed);
        assert!(r.worst <= GRAD_TOLERANCE, "seed {seed}: {r:?}");
    }
}

#[test]
fn multivariate_attention_gradients() {
    let arch = lbrm_core::models::Architecture::Attention {
        model_dim: 4,
        heads: 1,
        blocks: 2,
        ff_dim: 3,
    };
    let r = check_gradients(&arch, 3, 2, 42);
    assert!(r.worst <= GRAD_TOLERANCE, "{r:?}");
}
