//! Synthetic corpora, scenario splits and CSV ingestion.
//!
//! CSV layout: header `id,t,dim,value`, one row per entry. Rows of one series
//! need not be contiguous; every series in a file must share `(T, D)`.

use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::series::TimeSeries;

/// Frequencies (cycles per step) below this belong to family A, above to B.
pub const FAMILY_SPLIT_FREQUENCY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

impl Family {
    pub fn default_frequency(self) -> [f64; 2] {
        match self {
            Family::A => [0.02, 0.06],
            Family::B => [0.15, 0.3],
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Family::A => "a",
            Family::B => "b",
        }
    }
}

fn default_amplitude() -> [f64; 2] {
    [0.5, 1.5]
}

fn default_noise() -> [f64; 2] {
    [0.05, 0.4]
}

fn default_components() -> [usize; 2] {
    [1, 3]
}

fn default_ar() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub family: Family,
    pub count: usize,
    pub len: usize,
    #[serde(default = "one")]
    pub dims: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sinusoid frequency range in cycles per step; defaults to the family band.
    #[serde(default)]
    pub frequency: Option<[f64; 2]>,
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    /// Per-series innovation scale of the AR(1) noise, drawn uniformly.
    #[serde(default = "default_noise")]
    pub noise: [f64; 2],
    #[serde(default = "default_ar")]
    pub ar_coefficient: f64,
    /// Inclusive range for the number of sinusoids per dimension.
    #[serde(default = "default_components")]
    pub components: [usize; 2],
    /// Prefix for generated ids; defaults to the family letter.
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn one() -> usize {
    1
}

impl SyntheticConfig {
    pub fn new(family: Family, count: usize, len: usize, seed: u64) -> Self {
        Self {
            family,
            count,
            len,
            dims: 1,
            seed,
            frequency: None,
            amplitude: default_amplitude(),
            noise: default_noise(),
            ar_coefficient: default_ar(),
            components: default_components(),
            id_prefix: None,
        }
    }

    pub fn frequency_band(&self) -> [f64; 2] {
        self.frequency
            .unwrap_or_else(|| self.family.default_frequency())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.count == 0 || self.len == 0 || self.dims == 0 {
            return bad("count, len and dims must be >= 1".into());
        }
        let [lo, hi] = self.frequency_band();
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered([lo, hi]) || lo <= 0.0 || hi > 0.5 {
            return bad(format!("frequency range [{lo}, {hi}] must lie in (0, 0.5]"));
        }
        let in_band = match self.family {
            Family::A => hi < FAMILY_SPLIT_FREQUENCY,
            Family::B => lo > FAMILY_SPLIT_FREQUENCY,
        };
        if !in_band {
            return bad(format!(
                "family {:?} frequencies [{lo}, {hi}] cross the family boundary {FAMILY_SPLIT_FREQUENCY}",
                self.family
            ));
        }
        if !ordered(self.amplitude) || self.amplitude[0] < 0.0 {
            return bad("amplitude range must be ordered and nonnegative".into());
        }
        if !ordered(self.noise) || self.noise[0] < 0.0 {
            return bad("noise range must be ordered and nonnegative".into());
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return bad(format!(
                "AR coefficient must lie in (-1, 1), got {}",
                self.ar_coefficient
            ));
        }
        if self.components[0] == 0 || self.components[0] > self.components[1] {
            return bad("components range must be ordered and start at >= 1".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl rand::Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Sums of in-band sinusoids with random phases plus stationary AR(1) noise.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<TimeSeries>> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let prefix = cfg
        .id_prefix
        .clone()
        .unwrap_or_else(|| cfg.family.id_prefix().to_string());
    let band = cfg.frequency_band();
    let phi = cfg.ar_coefficient;
    let stationary = 1.0 / (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let noise = uniform(&mut rng, cfg.noise);
        let mut values = vec![0.0; cfg.len * cfg.dims];
        for d in 0..cfg.dims {
            let k = rng.random_range(cfg.components[0]..=cfg.components[1]);
            for _ in 0..k {
                let f = uniform(&mut rng, band);
                let a = uniform(&mut rng, cfg.amplitude);
                let phase = rng.random_range(0.0..TAU);
                for t in 0..cfg.len {
                    values[t * cfg.dims + d] += a * (TAU * f * t as f64 + phase).sin();
                }
            }
            let mut e: f64 = StandardNormal.sample(&mut rng);
            e *= noise * stationary;
            for t in 0..cfg.len {
                if t > 0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    e = phi * e + noise * z;
                }
                values[t * cfg.dims + d] += e;
            }
        }
        out.push(TimeSeries::new(
            format!("{prefix}{i:05}"),
            cfg.len,
            cfg.dims,
            values,
        )?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Public,
    Private,
    Test,
}

/// Disjoint public / private / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSplit {
    pub public: Vec<TimeSeries>,
    pub private: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
}

impl ScenarioSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.public.len(), self.private.len(), self.test.len())
    }

    /// Which subset holds `id`, if any.
    pub fn provenance(&self, id: &str) -> Option<Subset> {
        let has = |set: &[TimeSeries]| set.iter().any(|s| s.id() == id);
        if has(&self.public) {
            Some(Subset::Public)
        } else if has(&self.private) {
            Some(Subset::Private)
        } else if has(&self.test) {
            Some(Subset::Test)
        } else {
            None
        }
    }
}

fn split(data: &[TimeSeries], seed: u64, public: usize, private: usize) -> Result<ScenarioSplit> {
    let mut ids = HashSet::with_capacity(data.len());
    if let Some(dup) = data.iter().find(|s| !ids.insert(s.id())) {
        return Err(Error::Argument(format!(
            "duplicate series id `{}`",
            dup.id()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeded(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok(ScenarioSplit {
        public: pick(&order[..public]),
        private: pick(&order[public..public + private]),
        test: pick(&order[public + private..]),
    })
}

fn require_five(n: usize) -> Result<()> {
    if n < 5 {
        return Err(Error::Argument(format!(
            "scenario splits need at least 5 series, got {n}"
        )));
    }
    Ok(())
}

/// `floor(2N/5)` public, `floor(2N/5)` private, remainder test.
pub fn split_scenario1(data: &[TimeSeries], seed: u64) -> Result<ScenarioSplit> {
    let n = data.len();
    require_five(n)?;
    split(data, seed, 2 * n / 5, 2 * n / 5)
}

/// `floor(3N/5)` public, `floor(N/5)` private, remainder test.
pub fn split_scenario2(data: &[TimeSeries], seed: u64) -> Result<ScenarioSplit> {
    let n = data.len();
    require_five(n)?;
    split(data, seed, 3 * n / 5, n / 5)
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    t: usize,
    dim: usize,
    value: f64,
}

/// Read a corpus. Series keep the order in which their ids first appear.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["id", "t", "dim", "value"] {
        return Err(Error::Schema(format!(
            "{}: expected header `id,t,dim,value`",
            path.display()
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, usize, f64)>> = HashMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record.deserialize(None).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !row.value.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("value `{}` is not finite", row.value),
            });
        }
        let entries = rows.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            Vec::new()
        });
        entries.push((row.t, row.dim, row.value));
    }

    let mut shape = None;
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let entries = &rows[&id];
        let len = entries.iter().map(|e| e.0).max().unwrap_or(0) + 1;
        let dims = entries.iter().map(|e| e.1).max().unwrap_or(0) + 1;
        let mut values = vec![None; len * dims];
        for &(t, d, v) in entries {
            if values[t * dims + d].replace(v).is_some() {
                return Err(Error::Schema(format!(
                    "series `{id}` has two values for t={t}, dim={d}"
                )));
            }
        }
        let values: Vec<f64> = values
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Schema(format!("series `{id}` is missing entries")))?;
        match shape {
            None => shape = Some((len, dims)),
            Some(s) if s != (len, dims) => {
                return Err(Error::Schema(format!(
                    "series `{id}` is {len}x{dims} but earlier series are {}x{}",
                    s.0, s.1
                )))
            }
            _ => {}
        }
        out.push(TimeSeries::new(id, len, dims, values)?);
    }
    Ok(out)
}

/// Write a corpus; rows ordered by series, then `t`, then `dim`.
pub fn save_csv(data: &[TimeSeries], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| Error::Schema(e.to_string());
        writer
            .write_record(["id", "t", "dim", "value"])
            .map_err(csv_err)?;
        for s in data {
            for t in 0..s.len() {
                for d in 0..s.dims() {
                    writer
                        .write_record([
                            s.id().to_string(),
                            t.to_string(),
                            d.to_string(),
                            s.get(t, d).to_string(),
                        ])
                        .map_err(csv_err)?;
                }
            }
        }
        writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    }
    crate::harness::write_atomic(path.as_ref(), &buf)
}
