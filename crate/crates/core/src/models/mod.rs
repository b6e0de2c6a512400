//! Desk-scale imputers trained by masked reconstruction.
//!
//! Both architectures are differentiated by hand. Training minimizes the mean
//! absolute error on entries hidden by a fresh random mask per mini-batch, with
//! plain gradient descent plus optional momentum.

mod attention;
mod autoencoder;
pub mod linalg;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

pub use attention::Attention;
pub use autoencoder::Autoencoder;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::series::{
    apply_mask, random_missing_mask, ImputationOracle, MaskMatrix, MaskedSeries, TimeSeries,
};

/// Share of entries hidden by the MAE evaluation protocol.
pub const MAE_EVAL_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Autoencoder {
        /// Encoder widths; the decoder mirrors them.
        hidden: Vec<usize>,
        bottleneck: usize,
    },
    Attention {
        model_dim: usize,
        heads: usize,
        blocks: usize,
        ff_dim: usize,
    },
}

fn default_momentum() -> f64 {
    0.9
}

fn default_mask_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputerConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Share of entries hidden per training example.
    #[serde(default = "default_mask_fraction")]
    pub train_mask_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ImputerConfig {
    /// Default momentum, training mask fraction and seed.
    pub fn new(
        architecture: Architecture,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
    ) -> Self {
        Self {
            architecture,
            epochs,
            batch_size,
            learning_rate,
            momentum: default_momentum(),
            train_mask_fraction: default_mask_fraction(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.train_mask_fraction > 0.0 && self.train_mask_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "train_mask_fraction must lie in (0, 1), got {}",
                self.train_mask_fraction
            )));
        }
        if let Architecture::Attention {
            model_dim, heads, ..
        } = self.architecture
        {
            if heads == 0 || model_dim % heads != 0 {
                return Err(Error::Argument(format!(
                    "model_dim {model_dim} must be divisible by heads {heads}"
                )));
            }
        }
        Ok(())
    }
}

/// A contiguous run of parameters initialised from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamBlock {
    offset: usize,
    size: usize,
    fan_in: usize,
}

impl ParamBlock {
    pub(crate) fn new(offset: usize, size: usize, fan_in: usize) -> Self {
        Self {
            offset,
            size,
            fan_in,
        }
    }
}

/// A concrete network for a fixed `(T, D)` window.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Autoencoder(Autoencoder),
    Attention(Attention),
}

enum Cache {
    Autoencoder(autoencoder::Cache),
    Attention(attention::Cache),
}

impl Network {
    pub fn build(arch: &Architecture, len: usize, dims: usize) -> Result<Self> {
        match arch {
            Architecture::Autoencoder { hidden, bottleneck } => Ok(Network::Autoencoder(
                Autoencoder::new(len, dims, hidden, *bottleneck)?,
            )),
            &Architecture::Attention {
                model_dim,
                heads,
                blocks,
                ff_dim,
            } => Ok(Network::Attention(Attention::new(
                len, dims, model_dim, heads, blocks, ff_dim,
            )?)),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Network::Autoencoder(n) => n.param_count(),
            Network::Attention(n) => n.param_count(),
        }
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let blocks = match self {
            Network::Autoencoder(n) => n.blocks(),
            Network::Attention(n) => n.blocks(),
        };
        let mut rng = seeded(seed);
        let mut params = vec![0.0; self.param_count()];
        for b in blocks {
            let bound = 1.0 / (b.fan_in as f64).sqrt();
            for p in &mut params[b.offset..b.offset + b.size] {
                *p = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn forward(&self, params: &[f64], observed: &[f64], mask: &[f64]) -> Cache {
        match self {
            Network::Autoencoder(n) => Cache::Autoencoder(n.forward(params, observed, mask)),
            Network::Attention(n) => Cache::Attention(n.forward(params, observed, mask)),
        }
    }

    fn output<'c>(&self, cache: &'c Cache) -> &'c [f64] {
        match cache {
            Cache::Autoencoder(c) => Autoencoder::output(c),
            Cache::Attention(c) => Attention::output(c),
        }
    }

    fn backward(&self, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        match (self, cache) {
            (Network::Autoencoder(n), Cache::Autoencoder(c)) => n.backward(params, c, d_out, grad),
            (Network::Attention(n), Cache::Attention(c)) => n.backward(params, c, d_out, grad),
            _ => unreachable!("cache built by a different network"),
        }
    }

    /// Raw network output for every entry, before observed values are copied back.
    pub fn predict(&self, params: &[f64], observed: &TimeSeries, mask: &MaskMatrix) -> Vec<f64> {
        let cache = self.forward(params, observed.values(), &mask.as_f64());
        self.output(&cache).to_vec()
    }

    /// Gradient of `sum_i d_out[i] * output[i]` with respect to `params`.
    pub fn output_vjp(
        &self,
        params: &[f64],
        observed: &TimeSeries,
        mask: &MaskMatrix,
        d_out: &[f64],
    ) -> Vec<f64> {
        let cache = self.forward(params, observed.values(), &mask.as_f64());
        let mut grad = vec![0.0; params.len()];
        self.backward(params, &cache, d_out, &mut grad);
        grad
    }

    /// Mean absolute error over the hidden entries of the batch.
    pub fn masked_mae(&self, params: &[f64], batch: &[MaskedSeries]) -> f64 {
        let (mut total, mut count) = (0.0, 0usize);
        for x in batch {
            let out = self.predict(params, x.series(), x.mask());
            for ((o, t), &seen) in out
                .iter()
                .zip(x.original().values())
                .zip(x.mask().entries())
            {
                if !seen {
                    total += (o - t).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// [`Network::masked_mae`] and its gradient with respect to `params`.
    pub fn masked_mae_with_gradient(
        &self,
        params: &[f64],
        batch: &[MaskedSeries],
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let (mut total, mut count) = (0.0, 0usize);
        for x in batch {
            let mask = x.mask().as_f64();
            let cache = self.forward(params, x.series().values(), &mask);
            let out = self.output(&cache);
            let mut d_out = vec![0.0; out.len()];
            let mut any = false;
            for (i, ((o, t), &seen)) in out
                .iter()
                .zip(x.original().values())
                .zip(x.mask().entries())
                .enumerate()
            {
                if !seen {
                    let e = o - t;
                    total += e.abs();
                    count += 1;
                    d_out[i] = if e > 0.0 {
                        1.0
                    } else if e < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    any = true;
                }
            }
            if any {
                self.backward(params, &cache, &d_out, &mut grad);
            }
        }
        if count == 0 {
            return (0.0, grad);
        }
        let n = count as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}

/// A trained imputer: configuration, window shape, flat parameters and the
/// per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedImputer {
    config: ImputerConfig,
    len: usize,
    dims: usize,
    params: Vec<f64>,
    history: Vec<f64>,
    network: Network,
}

impl TrainedImputer {
    /// Wrap explicit parameters, e.g. for hand-built or untrained models.
    pub fn from_parts(
        config: ImputerConfig,
        len: usize,
        dims: usize,
        params: Vec<f64>,
        history: Vec<f64>,
    ) -> Result<Self> {
        let network = Network::build(&config.architecture, len, dims)?;
        if params.len() != network.param_count() {
            return Err(Error::Shape(format!(
                "network needs {} parameters, got {}",
                network.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Argument("non-finite model parameter".into()));
        }
        Ok(Self {
            config,
            len,
            dims,
            params,
            history,
            network,
        })
    }

    /// Freshly initialised, untrained model.
    pub fn untrained(config: ImputerConfig, len: usize, dims: usize) -> Result<Self> {
        config.validate()?;
        let network = Network::build(&config.architecture, len, dims)?;
        let params = network.init_params(config.seed);
        Self::from_parts(config, len, dims, params, Vec::new())
    }

    pub fn config(&self) -> &ImputerConfig {
        &self.config
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.dims)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn impute(&self, x: &MaskedSeries) -> Result<TimeSeries> {
        self.impute_masked(x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            config: self.config.clone(),
            len: self.len,
            dims: self.dims,
            params: self.params.clone(),
            history: self.history.clone(),
        };
        let text = serde_json::to_string(&file)?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!(
                "{}: unsupported model format `{}`",
                path.display(),
                file.format
            )));
        }
        Self::from_parts(file.config, file.len, file.dims, file.params, file.history)
    }
}

const MODEL_FORMAT: &str = "lbrm-imputer/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ImputerConfig,
    len: usize,
    dims: usize,
    params: Vec<f64>,
    history: Vec<f64>,
}

impl ImputationOracle for TrainedImputer {
    fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
        if observed.shape() != (self.len, self.dims) || mask.shape() != observed.shape() {
            return Err(Error::Shape(format!(
                "model expects {}x{}, got series {:?} with mask {:?}",
                self.len,
                self.dims,
                observed.shape(),
                mask.shape()
            )));
        }
        let raw = self.network.predict(&self.params, observed, mask);
        let values = raw
            .iter()
            .zip(observed.values())
            .zip(mask.entries())
            .map(|((r, v), &seen)| if seen { *v } else { *r })
            .collect();
        observed.with_values(values)
    }
}

fn common_shape(data: &[TimeSeries]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::Argument("training set is empty".into()))?;
    let shape = first.shape();
    if let Some(bad) = data.iter().find(|s| s.shape() != shape) {
        return Err(Error::Shape(format!(
            "series `{}` is {:?}, expected {:?}",
            bad.id(),
            bad.shape(),
            shape
        )));
    }
    Ok(shape)
}

fn run_descent(
    network: &Network,
    mut params: Vec<f64>,
    data: &[TimeSeries],
    cfg: &ImputerConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let shape = data[0].shape();
    let mut rng = seeded(seed);
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let mask = random_missing_mask(shape, cfg.train_mask_fraction, rng.next_u64())?;
                    apply_mask(&data[i], &mask)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grad) = network.masked_mae_with_gradient(&params, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss;
            batches += 1;
        }
        history.push(loss_sum / batches as f64);
    }
    Ok((params, history))
}

/// Train a fresh imputer on `dataset`. Deterministic for a given config.
pub fn train(dataset: &[TimeSeries], cfg: &ImputerConfig) -> Result<TrainedImputer> {
    cfg.validate()?;
    let (len, dims) = common_shape(dataset)?;
    let network = Network::build(&cfg.architecture, len, dims)?;
    let init = network.init_params(cfg.seed);
    let (params, history) = run_descent(
        &network,
        init,
        dataset,
        cfg,
        crate::rng::derive_seed(cfg.seed, "batches"),
    )?;
    Ok(TrainedImputer {
        config: cfg.clone(),
        len,
        dims,
        params,
        history,
        network,
    })
}

/// Continue training from `base` on `private` only. `base` is left untouched;
/// `cfg` supplies the schedule and must name the same architecture.
pub fn fine_tune(
    base: &TrainedImputer,
    private: &[TimeSeries],
    cfg: &ImputerConfig,
) -> Result<TrainedImputer> {
    cfg.validate()?;
    if cfg.architecture != base.config.architecture {
        return Err(Error::Argument(
            "fine-tuning config names a different architecture than the base model".into(),
        ));
    }
    let shape = common_shape(private)?;
    if shape != (base.len, base.dims) {
        return Err(Error::Shape(format!(
            "base model expects {}x{}, private data is {:?}",
            base.len, base.dims, shape
        )));
    }
    let (params, history) = run_descent(
        &base.network,
        base.params.clone(),
        private,
        cfg,
        crate::rng::derive_seed(cfg.seed, "fine-tune"),
    )?;
    Ok(TrainedImputer {
        config: cfg.clone(),
        len: base.len,
        dims: base.dims,
        params,
        history,
        network: base.network.clone(),
    })
}

/// Hide `fraction` of each series at random, impute, and average the absolute
/// error over hidden entries only.
pub fn evaluate_mae<O: ImputationOracle + ?Sized>(
    model: &O,
    data: &[TimeSeries],
    fraction: f64,
    seed: u64,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "missing fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = seeded(seed);
    let (mut total, mut count) = (0.0, 0usize);
    for x in data {
        let mask = random_missing_mask(x.shape(), fraction, rng.next_u64())?;
        let masked = apply_mask(x, &mask)?;
        let imputed = model.impute_masked(&masked)?;
        for ((a, b), &seen) in imputed.values().iter().zip(x.values()).zip(mask.entries()) {
            if !seen {
                total += (a - b).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Argument("evaluation hid no entries".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub target_mae: f64,
    pub reference_mae: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare test-set MAE of target and reference under the same masks.
pub fn parity_check<T, R>(
    target: &T,
    reference: &R,
    test: &[TimeSeries],
    tolerance: f64,
    seed: u64,
) -> Result<ParityReport>
where
    T: ImputationOracle + ?Sized,
    R: ImputationOracle + ?Sized,
{
    if !(tolerance > 0.0) {
        return Err(Error::Argument(format!(
            "parity tolerance must be > 0, got {tolerance}"
        )));
    }
    let target_mae = evaluate_mae(target, test, MAE_EVAL_FRACTION, seed)?;
    let reference_mae = evaluate_mae(reference, test, MAE_EVAL_FRACTION, seed)?;
    let gap = (target_mae - reference_mae).abs();
    Ok(ParityReport {
        target_mae,
        reference_mae,
        gap,
        tolerance,
        passed: gap <= tolerance,
    })
}
