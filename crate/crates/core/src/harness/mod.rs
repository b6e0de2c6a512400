//! End-to-end experiment pipelines for the two threat scenarios.
//!
//! Scenario 1: the target is trained on the private set only and the
//! reference on a public set from a different distribution.
//! Scenario 2: a base model is trained on the public set and fine-tuned on the
//! private set to give the target; the base doubles as the reference.
//!
//! Both methods are evaluated from one scoring pass: the loss-only baseline
//! reads `l_t` out of the same score records the ratio attack produces.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, GeneratorOverrides, MetricName, OUT_DIR_ENV};

use crate::attack::{score_all, AttackReport, MembershipScore, ThetaRule};
use crate::data::{generate_synthetic, load_csv, split_scenario1, split_scenario2, Family};
use crate::error::{Error, Result};
use crate::metrics::{auroc, roc_curve, tpr_at_fpr, tpr_at_top_percent, LabeledScores, RocCurve};
use crate::models::{
    evaluate_mae, fine_tune, parity_check, train, ImputerConfig, ParityReport, TrainedImputer,
    MAE_EVAL_FRACTION,
};
use crate::rng::derive_seed;
use crate::series::{zscore_normalize, TimeSeries};

pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.json";
pub const ROC_LBRM_FILE: &str = "roc_lbrm.csv";
pub const ROC_NAIVE_FILE: &str = "roc_naive.csv";
pub const TIMING_FILE: &str = "timing.json";

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Requested metrics for one method, keyed by metric name.
pub type MetricBlock = BTreeMap<String, f64>;

pub fn metric_block(
    data: &LabeledScores,
    metrics: &[MetricName],
) -> Result<(MetricBlock, RocCurve)> {
    let curve = roc_curve(data)?;
    let mut block = MetricBlock::new();
    for &m in metrics {
        let v = match m {
            MetricName::Auroc => auroc(&curve),
            MetricName::TprAt01 => tpr_at_fpr(&curve, 0.1)?,
            MetricName::TprAtTop25 => tpr_at_top_percent(data, 25.0)?,
        };
        block.insert(m.key().to_string(), v);
    }
    Ok((block, curve))
}

/// Verdicts plus threshold-free metrics for both methods.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub attack: AttackReport,
    pub lbrm: MetricBlock,
    pub naive: MetricBlock,
    pub lbrm_roc: RocCurve,
    pub naive_roc: RocCurve,
}

/// Classify `scores` under `rule` and compute metrics from the raw scores.
/// For the std rule the known nonmembers are the candidates labeled `false`.
pub fn evaluate_scores(
    scores: &[MembershipScore],
    labels: &[bool],
    rule: ThetaRule,
    metrics: &[MetricName],
) -> Result<Evaluation> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let nonmember_r: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &m)| !m)
        .map(|(s, _)| s.r)
        .collect();
    let attack = AttackReport::from_scores(scores, rule, Some(&nonmember_r))?;
    let ratio = LabeledScores::from_parts(&scores.iter().map(|s| s.r).collect::<Vec<_>>(), labels)?;
    let loss =
        LabeledScores::from_parts(&scores.iter().map(|s| s.l_t).collect::<Vec<_>>(), labels)?;
    let (lbrm, lbrm_roc) = metric_block(&ratio, metrics)?;
    let (naive, naive_roc) = metric_block(&loss, metrics)?;
    Ok(Evaluation {
        attack,
        lbrm,
        naive,
        lbrm_roc,
        naive_roc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub public: usize,
    pub private: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeTable {
    pub target_train: f64,
    pub target_test: f64,
    pub reference_train: f64,
    pub reference_test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub lbrm: MetricBlock,
    pub naive: MetricBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocFiles {
    pub lbrm: String,
    pub naive: String,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: u8,
    pub seed: u64,
    pub split: SplitSizes,
    pub members: usize,
    pub nonmembers: usize,
    pub parity: ParityReport,
    pub mae: MaeTable,
    pub methods: MethodTable,
    pub theta: f64,
    pub theta_rule: ThetaRule,
    pub roc_files: RocFiles,
    pub config: ExperimentConfig,
}

/// Everything a scenario run produces.
#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub report: ExperimentReport,
    pub evaluation: Evaluation,
    pub candidate_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub target: TrainedImputer,
    pub reference: TrainedImputer,
    /// Scenario 2: the public model before fine-tuning.
    pub base: Option<TrainedImputer>,
    pub elapsed: Duration,
}

struct Partition {
    public: Vec<TimeSeries>,
    private: Vec<TimeSeries>,
    test: Vec<TimeSeries>,
}

fn normalize_all(cfg: &ExperimentConfig, data: Vec<TimeSeries>) -> Vec<TimeSeries> {
    if !cfg.normalize {
        return data;
    }
    data.iter().map(|s| zscore_normalize(s).0).collect()
}

fn corpus(cfg: &ExperimentConfig, family: Family, label: &str) -> Result<Vec<TimeSeries>> {
    let seed = derive_seed(cfg.seed, label);
    match &cfg.data {
        DataConfig::Synthetic { .. } => {
            let synth = cfg
                .data
                .synthetic(family, seed)
                .expect("synthetic source yields a generator config");
            generate_synthetic(&synth)
        }
        DataConfig::Csv { path, .. } => load_csv(path),
    }
}

fn partition(cfg: &ExperimentConfig) -> Result<Partition> {
    let split_seed = derive_seed(cfg.seed, "split");
    let main = corpus(cfg, Family::A, "data/private")?;
    match cfg.scenario {
        1 => {
            let own = split_scenario1(&main, split_seed)?;
            let public = match &cfg.data {
                DataConfig::Synthetic { .. } => {
                    let other = corpus(cfg, Family::B, "data/public")?;
                    split_scenario1(&other, derive_seed(cfg.seed, "split/public"))?.public
                }
                DataConfig::Csv {
                    public_path: Some(p),
                    ..
                } => split_scenario1(&load_csv(p)?, derive_seed(cfg.seed, "split/public"))?.public,
                DataConfig::Csv { .. } => own.public,
            };
            Ok(Partition {
                public,
                private: own.private,
                test: own.test,
            })
        }
        _ => {
            let s = split_scenario2(&main, split_seed)?;
            Ok(Partition {
                public: s.public,
                private: s.private,
                test: s.test,
            })
        }
    }
}

fn seeded_config(cfg: &ImputerConfig, master: u64, label: &str) -> ImputerConfig {
    ImputerConfig {
        seed: derive_seed(master, label),
        ..cfg.clone()
    }
}

/// Run the configured scenario without touching the filesystem (beyond CSV input).
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let parts = partition(cfg)?;
    let public = normalize_all(cfg, parts.public);
    let private = normalize_all(cfg, parts.private);
    let test = normalize_all(cfg, parts.test);

    let (target, reference, base) = match cfg.scenario {
        1 => {
            let target_cfg = cfg.target.as_ref().expect("validated");
            let reference = train(
                &public,
                &seeded_config(&cfg.reference, cfg.seed, "reference"),
            )?;
            let target = train(&private, &seeded_config(target_cfg, cfg.seed, "target"))?;
            (target, reference, None)
        }
        _ => {
            let tune_cfg = cfg.fine_tune.as_ref().expect("validated");
            let base = train(&public, &seeded_config(&cfg.reference, cfg.seed, "base"))?;
            let target = fine_tune(
                &base,
                &private,
                &seeded_config(tune_cfg, cfg.seed, "fine_tune"),
            )?;
            let reference = if cfg.independent_reference {
                train(
                    &public,
                    &seeded_config(&cfg.reference, cfg.seed, "reference"),
                )?
            } else {
                base.clone()
            };
            (target, reference, Some(base))
        }
    };

    let mae_seed = derive_seed(cfg.seed, "mae");
    let parity = parity_check(&target, &reference, &test, cfg.parity_tolerance, mae_seed)?;
    if !parity.passed && !cfg.override_parity {
        return Err(Error::Parity(Box::new(parity)));
    }
    let mae = MaeTable {
        target_train: evaluate_mae(&target, &private, MAE_EVAL_FRACTION, mae_seed)?,
        target_test: parity.target_mae,
        reference_train: evaluate_mae(&reference, &public, MAE_EVAL_FRACTION, mae_seed)?,
        reference_test: parity.reference_mae,
    };

    let candidates: Vec<TimeSeries> = private.iter().chain(&test).cloned().collect();
    let labels: Vec<bool> = (0..candidates.len()).map(|i| i < private.len()).collect();
    let mut attack_cfg = cfg.attack.clone();
    attack_cfg.seed = derive_seed(cfg.seed, "attack");
    let scores = score_all(&target, &reference, &candidates, &attack_cfg)?;
    let evaluation = evaluate_scores(&scores, &labels, attack_cfg.theta_rule, &cfg.metrics)?;

    let mut echo = cfg.clone();
    echo.output_dir = None;
    let report = ExperimentReport {
        scenario: cfg.scenario,
        seed: cfg.seed,
        split: SplitSizes {
            public: public.len(),
            private: private.len(),
            test: test.len(),
        },
        members: private.len(),
        nonmembers: test.len(),
        parity,
        mae,
        methods: MethodTable {
            lbrm: evaluation.lbrm.clone(),
            naive: evaluation.naive.clone(),
        },
        theta: evaluation.attack.theta,
        theta_rule: evaluation.attack.theta_rule,
        roc_files: RocFiles {
            lbrm: ROC_LBRM_FILE.into(),
            naive: ROC_NAIVE_FILE.into(),
        },
        config: echo,
    };
    Ok(ScenarioOutcome {
        report,
        evaluation,
        candidate_ids: candidates.iter().map(|c| c.id().to_string()).collect(),
        labels,
        target,
        reference,
        base,
        elapsed: started.elapsed(),
    })
}

pub fn run_scenario1(cfg: &ExperimentConfig) -> Result<ScenarioOutcome> {
    if cfg.scenario != 1 {
        return Err(Error::Argument(format!(
            "config is for scenario {}",
            cfg.scenario
        )));
    }
    run_scenario(cfg)
}

pub fn run_scenario2(cfg: &ExperimentConfig) -> Result<ScenarioOutcome> {
    if cfg.scenario != 2 {
        return Err(Error::Argument(format!(
            "config is for scenario {}",
            cfg.scenario
        )));
    }
    run_scenario(cfg)
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    id: String,
    member: bool,
}

/// `scores.json`: the attack report plus ground-truth labels.
pub fn scores_json(attack: &AttackReport, ids: &[String], labels: &[bool]) -> Result<String> {
    let mut value = attack.to_value()?;
    let rows: Vec<LabelRow> = ids
        .iter()
        .zip(labels)
        .map(|(id, &member)| LabelRow {
            id: id.clone(),
            member,
        })
        .collect();
    value["labels"] = serde_json::to_value(rows)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// Candidate ids with their membership flags.
pub type Labels = Vec<(String, bool)>;

/// Read a saved attack report and, when present, its embedded labels.
pub fn load_scores(path: &Path) -> Result<(AttackReport, Option<Labels>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report = AttackReport::from_json(&text)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let labels = match value.get("labels") {
        Some(v) => {
            let rows: Vec<LabelRow> = serde_json::from_value(v.clone())?;
            Some(rows.into_iter().map(|r| (r.id, r.member)).collect())
        }
        None => None,
    };
    Ok((report, labels))
}

/// Write `report.json`, `scores.json`, both ROC files and `timing.json` into `dir`.
pub fn write_outputs(outcome: &ScenarioOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut report = serde_json::to_string_pretty(&outcome.report)?;
    report.push('\n');
    let timing = format!(
        "{{\n  \"wall_clock_seconds\": {}\n}}\n",
        outcome.elapsed.as_secs_f64()
    );
    let files = [
        (REPORT_FILE, report),
        (
            SCORES_FILE,
            scores_json(
                &outcome.evaluation.attack,
                &outcome.candidate_ids,
                &outcome.labels,
            )?,
        ),
        (ROC_LBRM_FILE, outcome.evaluation.lbrm_roc.to_csv()),
        (ROC_NAIVE_FILE, outcome.evaluation.naive_roc.to_csv()),
        (TIMING_FILE, timing),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
