//! Multivariate time series, observedness masks and the black-box imputation
//! boundary.
//!
//! Values are stored row-major: entry `(t, d)` lives at `t * dims + d`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// A `T x D` matrix of finite reals with an identifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    id: String,
    len: usize,
    dims: usize,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, len: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if len == 0 || dims == 0 {
            return Err(Error::Shape(format!(
                "series must have T >= 1 and D >= 1, got {len}x{dims}"
            )));
        }
        if values.len() != len * dims {
            return Err(Error::Shape(format!(
                "expected {} values for a {len}x{dims} series, got {}",
                len * dims,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value at (t={}, dim={})",
                pos / dims,
                pos % dims
            )));
        }
        Ok(Self {
            id: id.into(),
            len,
            dims,
            values,
        })
    }

    /// Single-dimension series from a slice of values.
    pub fn univariate(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(id, values.len(), 1, values.to_vec())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Never true: a series holds at least one step.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of dimensions `D`.
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.dims)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dims + d]
    }

    /// The `D` values at step `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Same id and shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.id.clone(), self.len, self.dims, values)
    }
}

/// Binary `T x D` indicator: `true` means observed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMatrix {
    len: usize,
    dims: usize,
    observed: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(len: usize, dims: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != len * dims {
            return Err(Error::Shape(format!(
                "mask needs {} entries for {len}x{dims}, got {}",
                len * dims,
                observed.len()
            )));
        }
        Ok(Self {
            len,
            dims,
            observed,
        })
    }

    pub fn all_observed(len: usize, dims: usize) -> Self {
        Self {
            len,
            dims,
            observed: vec![true; len * dims],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.dims)
    }

    pub fn is_observed(&self, t: usize, d: usize) -> bool {
        self.observed[t * self.dims + d]
    }

    pub fn entries(&self) -> &[bool] {
        &self.observed
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Entries as `1.0` (observed) / `0.0` (missing), row-major.
    pub fn as_f64(&self) -> Vec<f64> {
        self.observed
            .iter()
            .map(|&o| if o { 1.0 } else { 0.0 })
            .collect()
    }
}

/// A series with some entries hidden. The oracle sees `series` and `mask`;
/// `original` stays with the auditor for loss computation.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSeries {
    series: TimeSeries,
    mask: MaskMatrix,
    original: TimeSeries,
}

impl MaskedSeries {
    /// The series as presented to an oracle: missing entries hold `0.0`.
    pub fn series(&self) -> &TimeSeries {
        &self.series
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn original(&self) -> &TimeSeries {
        &self.original
    }
}

/// Black-box imputation: a series with hidden entries goes in, a completed
/// series of the same shape comes out.
///
/// Implementations are expected to copy observed entries through unchanged.
pub trait ImputationOracle: Sync {
    fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries>;

    fn impute_masked(&self, x: &MaskedSeries) -> Result<TimeSeries> {
        self.impute(x.series(), x.mask())
    }
}

impl<O: ImputationOracle + ?Sized> ImputationOracle for &O {
    fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
        (**self).impute(observed, mask)
    }
}

/// Wraps an oracle and counts the queries made against it.
#[derive(Debug)]
pub struct CountingOracle<O> {
    inner: O,
    queries: AtomicU64,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            queries: AtomicU64::new(0),
        }
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: ImputationOracle> ImputationOracle for CountingOracle<O> {
    fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.impute(observed, mask)
    }
}

/// A contiguous block of hidden time steps in one dimension: `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub start: usize,
    pub len: usize,
    pub dim: usize,
}

impl MaskSpec {
    pub fn new(start: usize, len: usize, dim: usize) -> Self {
        Self { start, len, dim }
    }
}

/// Hide one block of `spec.len` steps in dimension `spec.dim`.
pub fn single_unit_mask(x: &TimeSeries, spec: MaskSpec) -> Result<MaskedSeries> {
    let (len, dims) = x.shape();
    if spec.len == 0 {
        return Err(Error::Range("mask block length must be >= 1".into()));
    }
    if spec.len >= len {
        return Err(Error::DegenerateMask(format!(
            "block of {} steps leaves nothing observed in a series of {len} steps",
            spec.len
        )));
    }
    if spec.dim >= dims {
        return Err(Error::Range(format!(
            "mask dimension {} out of range for D = {dims}",
            spec.dim
        )));
    }
    if spec.start + spec.len > len {
        return Err(Error::Range(format!(
            "mask block [{}, {}) exceeds series length {len}",
            spec.start,
            spec.start + spec.len
        )));
    }
    let mut observed = vec![true; len * dims];
    for t in spec.start..spec.start + spec.len {
        observed[t * dims + spec.dim] = false;
    }
    apply_mask(x, &MaskMatrix::new(len, dims, observed)?)
}

/// Uniformly hide exactly `round(fraction * T * D)` entries.
pub fn random_missing_mask(shape: (usize, usize), fraction: f64, seed: u64) -> Result<MaskMatrix> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "missing fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let (len, dims) = shape;
    let total = len * dims;
    let hidden = (fraction * total as f64).round() as usize;
    let mut rng = seeded(seed);
    let mut observed = vec![true; total];
    for i in index::sample(&mut rng, total, hidden) {
        observed[i] = false;
    }
    MaskMatrix::new(len, dims, observed)
}

/// Zero out hidden entries; keep the untouched series as `original`.
pub fn apply_mask(x: &TimeSeries, m: &MaskMatrix) -> Result<MaskedSeries> {
    if x.shape() != m.shape() {
        return Err(Error::Shape(format!(
            "series is {:?} but mask is {:?}",
            x.shape(),
            m.shape()
        )));
    }
    let values = x
        .values()
        .iter()
        .zip(m.entries())
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    Ok(MaskedSeries {
        series: x.with_values(values)?,
        mask: m.clone(),
        original: x.clone(),
    })
}

/// Per-dimension location and scale recorded by [`zscore_normalize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormParams {
    pub fn denormalize(&self, x: &TimeSeries) -> Result<TimeSeries> {
        if x.dims() != self.mean.len() {
            return Err(Error::Shape(format!(
                "normalization has {} dims, series has {}",
                self.mean.len(),
                x.dims()
            )));
        }
        let dims = x.dims();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % dims] + self.mean[i % dims])
            .collect();
        x.with_values(values)
    }
}

/// Per-dimension z-score with the population standard deviation. A constant
/// dimension maps to zeros and records a unit scale.
pub fn zscore_normalize(x: &TimeSeries) -> (TimeSeries, NormParams) {
    let (len, dims) = x.shape();
    let n = len as f64;
    let mut mean = vec![0.0; dims];
    let mut scale = vec![1.0; dims];
    let mut constant = vec![true; dims];
    for d in 0..dims {
        let mu = (0..len).map(|t| x.get(t, d)).sum::<f64>() / n;
        let var = (0..len).map(|t| (x.get(t, d) - mu).powi(2)).sum::<f64>() / n;
        let sigma = var.sqrt();
        mean[d] = mu;
        if sigma > 1e-12 * mu.abs().max(1.0) {
            scale[d] = sigma;
            constant[d] = false;
        }
    }
    let values = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = i % dims;
            if constant[d] {
                0.0
            } else {
                (v - mean[d]) / scale[d]
            }
        })
        .collect();
    let normalized = x
        .with_values(values)
        .expect("normalized values of a finite series are finite");
    (normalized, NormParams { mean, scale })
}
