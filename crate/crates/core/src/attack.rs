//! Reference-calibrated loss-ratio membership attack.
//!
//! For a candidate `x`, one block of `x` is hidden, both the target and the
//! reference imputer complete it, and each completion is scored against the
//! original with DTW. The score is `R(x) = L_T(x) / L_R(x)`; a candidate is
//! called a member when `R(x) <= theta`. The loss-only baseline uses `L_T(x)`
//! from the same queries.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::dtw_distance;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::series::{single_unit_mask, ImputationOracle, MaskSpec, TimeSeries};

/// Floor on `L_R` when forming the ratio.
pub const EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub candidate_id: String,
    pub l_t: f64,
    pub l_r: f64,
    pub r: f64,
    /// Both losses fell below [`EPSILON`]; `r` was set to 1.
    #[serde(default)]
    pub degenerate: bool,
}

/// `(r, degenerate)` for a pair of losses.
pub fn loss_ratio(l_t: f64, l_r: f64) -> (f64, bool) {
    if l_t < EPSILON && l_r < EPSILON {
        (1.0, true)
    } else {
        (l_t / l_r.max(EPSILON), false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaRule {
    /// Mean plus `n` population standard deviations of known-nonmember scores.
    StdRule {
        n: f64,
    },
    /// The `percent`% lowest candidate scores are called members.
    TopPercent {
        percent: f64,
    },
    Fixed {
        theta: f64,
    },
}

/// Where the hidden blocks go for each candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Block starts evenly spread over the series; dimensions cycle.
    #[default]
    Even,
    /// Uniform block starts and dimensions, seeded per candidate id.
    Random,
}

fn default_block_len() -> usize {
    1
}

fn default_repeats() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Steps hidden per query.
    #[serde(default = "default_block_len")]
    pub block_len: usize,
    /// Hidden-block placements averaged per candidate.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub seed: u64,
    pub theta_rule: ThetaRule,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            block_len: default_block_len(),
            repeats: default_repeats(),
            placement: Placement::Even,
            seed: 0,
            theta_rule: ThetaRule::TopPercent { percent: 25.0 },
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Argument("repeats must be >= 1".into()));
        }
        if self.block_len == 0 {
            return Err(Error::Range("mask block length must be >= 1".into()));
        }
        match self.theta_rule {
            ThetaRule::StdRule { n } if !n.is_finite() => Err(Error::Argument(format!(
                "std_rule n must be finite, got {n}"
            ))),
            ThetaRule::TopPercent { percent } if !(percent > 0.0 && percent <= 100.0) => Err(
                Error::Argument(format!("top_percent must lie in (0, 100], got {percent}")),
            ),
            ThetaRule::Fixed { theta } if !theta.is_finite() => Err(Error::Argument(format!(
                "fixed theta must be finite, got {theta}"
            ))),
            _ => Ok(()),
        }
    }

    /// Hidden blocks used for `x`. Identical for every oracle queried on `x`.
    pub fn mask_schedule(&self, x: &TimeSeries) -> Result<Vec<MaskSpec>> {
        self.validate()?;
        let (len, dims) = x.shape();
        if self.block_len >= len {
            return Err(Error::DegenerateMask(format!(
                "block of {} steps leaves nothing observed in a series of {len} steps",
                self.block_len
            )));
        }
        let starts = len - self.block_len + 1;
        let specs = match self.placement {
            Placement::Even => (0..self.repeats)
                .map(|k| {
                    let start = (2 * k + 1) * starts / (2 * self.repeats);
                    MaskSpec::new(start, self.block_len, k % dims)
                })
                .collect(),
            Placement::Random => {
                let mut rng = seeded(derive_seed(self.seed, x.id()));
                (0..self.repeats)
                    .map(|_| {
                        let start = rng.random_range(0..starts);
                        let dim = rng.random_range(0..dims);
                        MaskSpec::new(start, self.block_len, dim)
                    })
                    .collect()
            }
        };
        Ok(specs)
    }
}

fn wrap(candidate: &str, e: Error) -> Error {
    Error::Oracle {
        candidate: candidate.to_string(),
        source: Box::new(e),
    }
}

fn dtw_loss<O: ImputationOracle + ?Sized>(
    oracle: &O,
    x: &TimeSeries,
    spec: MaskSpec,
) -> Result<f64> {
    let masked = single_unit_mask(x, spec)?;
    let imputed = oracle.impute_masked(&masked).map_err(|e| wrap(x.id(), e))?;
    if imputed.shape() != x.shape() {
        return Err(wrap(
            x.id(),
            Error::Shape(format!(
                "oracle returned {:?} for a {:?} query",
                imputed.shape(),
                x.shape()
            )),
        ));
    }
    Ok(dtw_distance(&imputed, masked.original())?.value())
}

/// Mean DTW loss of `oracle` over the schedule.
fn mean_loss<O: ImputationOracle + ?Sized>(
    oracle: &O,
    x: &TimeSeries,
    schedule: &[MaskSpec],
) -> Result<f64> {
    let mut total = 0.0;
    for &spec in schedule {
        total += dtw_loss(oracle, x, spec)?;
    }
    Ok(total / schedule.len() as f64)
}

/// Score one candidate against target and reference.
pub fn lbrm_score<T, R>(
    target: &T,
    reference: &R,
    x: &TimeSeries,
    cfg: &AttackConfig,
) -> Result<MembershipScore>
where
    T: ImputationOracle + ?Sized,
    R: ImputationOracle + ?Sized,
{
    let schedule = cfg.mask_schedule(x)?;
    let l_t = mean_loss(target, x, &schedule)?;
    let l_r = mean_loss(reference, x, &schedule)?;
    let (r, degenerate) = loss_ratio(l_t, l_r);
    Ok(MembershipScore {
        candidate_id: x.id().to_string(),
        l_t,
        l_r,
        r,
        degenerate,
    })
}

/// Loss-only baseline: the target half of [`lbrm_score`].
pub fn naive_loss_score<T: ImputationOracle + ?Sized>(
    target: &T,
    x: &TimeSeries,
    cfg: &AttackConfig,
) -> Result<f64> {
    let schedule = cfg.mask_schedule(x)?;
    mean_loss(target, x, &schedule)
}

fn mean_and_population_std(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `theta = mean + n * std` over scores of known nonmembers (population std).
pub fn calibrate_theta_std(nonmember_scores: &[f64], n: f64) -> Result<f64> {
    if nonmember_scores.len() < 2 {
        return Err(Error::Argument(format!(
            "std rule needs at least 2 nonmember scores, got {}",
            nonmember_scores.len()
        )));
    }
    let (mean, std) = mean_and_population_std(nonmember_scores);
    Ok(mean + n * std)
}

/// Number selected by a top-`percent` rule over `n` items: `floor(percent * n / 100)`, at least 1.
pub fn top_count(percent: f64, n: usize) -> usize {
    ((percent * n as f64 / 100.0).floor() as usize).clamp(1, n.max(1))
}

/// `theta` = the k-th smallest score with `k = floor(percent/100 * N)`, `k >= 1`.
pub fn calibrate_theta_topk(scores: &[f64], percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::Argument(format!(
            "percent must lie in (0, 100], got {percent}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::Argument("no scores to calibrate on".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[top_count(percent, sorted.len()) - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_id: String,
    pub is_member: bool,
    pub score: MembershipScore,
}

pub fn classify(score: &MembershipScore, theta: f64) -> Verdict {
    Verdict {
        candidate_id: score.candidate_id.clone(),
        is_member: score.r <= theta,
        score: score.clone(),
    }
}

/// Resolve the threshold from candidate scores and, for the std rule, the
/// scores of known nonmembers.
pub fn resolve_theta(
    rule: ThetaRule,
    candidate_r: &[f64],
    nonmember_r: Option<&[f64]>,
) -> Result<f64> {
    match rule {
        ThetaRule::StdRule { n } => {
            let known = nonmember_r.ok_or_else(|| {
                Error::Argument("std_rule needs scores of known nonmembers".into())
            })?;
            calibrate_theta_std(known, n)
        }
        ThetaRule::TopPercent { percent } => calibrate_theta_topk(candidate_r, percent),
        ThetaRule::Fixed { theta } => {
            if theta.is_finite() {
                Ok(theta)
            } else {
                Err(Error::Argument(format!(
                    "fixed theta must be finite, got {theta}"
                )))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub theta: f64,
    pub theta_rule: ThetaRule,
    pub verdicts: Vec<Verdict>,
}

impl AttackReport {
    /// Classify precomputed scores under `rule`.
    pub fn from_scores(
        scores: &[MembershipScore],
        rule: ThetaRule,
        nonmember_r: Option<&[f64]>,
    ) -> Result<Self> {
        let r: Vec<f64> = scores.iter().map(|s| s.r).collect();
        let theta = resolve_theta(rule, &r, nonmember_r)?;
        Ok(Self {
            theta,
            theta_rule: rule,
            verdicts: scores.iter().map(|s| classify(s, theta)).collect(),
        })
    }

    pub fn scores(&self) -> impl Iterator<Item = &MembershipScore> {
        self.verdicts.iter().map(|v| &v.score)
    }

    pub(crate) fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(ReportFile::from(self))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ReportFile = serde_json::from_str(text)?;
        Ok(file.into())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        crate::harness::write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    theta: f64,
    theta_rule: ThetaRule,
    per_candidate: Vec<CandidateRow>,
}

#[derive(Serialize, Deserialize)]
struct CandidateRow {
    id: String,
    l_t: f64,
    l_r: f64,
    r: f64,
    is_member: bool,
}

impl From<&AttackReport> for ReportFile {
    fn from(report: &AttackReport) -> Self {
        Self {
            theta: report.theta,
            theta_rule: report.theta_rule,
            per_candidate: report
                .verdicts
                .iter()
                .map(|v| CandidateRow {
                    id: v.candidate_id.clone(),
                    l_t: v.score.l_t,
                    l_r: v.score.l_r,
                    r: v.score.r,
                    is_member: v.is_member,
                })
                .collect(),
        }
    }
}

impl From<ReportFile> for AttackReport {
    fn from(file: ReportFile) -> Self {
        let verdicts = file
            .per_candidate
            .into_iter()
            .map(|row| Verdict {
                candidate_id: row.id.clone(),
                is_member: row.is_member,
                score: MembershipScore {
                    candidate_id: row.id,
                    l_t: row.l_t,
                    l_r: row.l_r,
                    r: row.r,
                    degenerate: row.l_t < EPSILON && row.l_r < EPSILON,
                },
            })
            .collect();
        Self {
            theta: file.theta,
            theta_rule: file.theta_rule,
            verdicts,
        }
    }
}

/// Score every candidate in parallel, preserving input order.
pub fn score_all<T, R>(
    target: &T,
    reference: &R,
    candidates: &[TimeSeries],
    cfg: &AttackConfig,
) -> Result<Vec<MembershipScore>>
where
    T: ImputationOracle + ?Sized,
    R: ImputationOracle + ?Sized,
{
    cfg.validate()?;
    candidates
        .par_iter()
        .map(|x| lbrm_score(target, reference, x, cfg))
        .collect()
}

/// Score all candidates and classify them under `cfg.theta_rule`.
///
/// `known_nonmembers` feeds the std rule; series already in `candidates`
/// (same id and values) are not queried twice.
pub fn run_attack<T, R>(
    target: &T,
    reference: &R,
    candidates: &[TimeSeries],
    cfg: &AttackConfig,
    known_nonmembers: &[TimeSeries],
) -> Result<AttackReport>
where
    T: ImputationOracle + ?Sized,
    R: ImputationOracle + ?Sized,
{
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to attack".into()));
    }
    let scores = score_all(target, reference, candidates, cfg)?;
    let nonmember_r = match cfg.theta_rule {
        ThetaRule::StdRule { .. } => {
            let seen: HashMap<&str, usize> = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (c.id(), i))
                .collect();
            let (reused, fresh): (Vec<_>, Vec<_>) = known_nonmembers.iter().partition(|x| {
                seen.get(x.id())
                    .is_some_and(|&i| candidates[i].values() == x.values())
            });
            let fresh: Vec<TimeSeries> = fresh.into_iter().cloned().collect();
            let mut r: Vec<f64> = reused.iter().map(|x| scores[seen[x.id()]].r).collect();
            r.extend(
                score_all(target, reference, &fresh, cfg)?
                    .iter()
                    .map(|s| s.r),
            );
            Some(r)
        }
        _ => None,
    };
    AttackReport::from_scores(&scores, cfg.theta_rule, nonmember_r.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::MaskMatrix;

    /// Returns the stored truth for known ids and a constant elsewhere.
    struct Memorizer(Vec<TimeSeries>);

    impl ImputationOracle for Memorizer {
        fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
            let known = self.0.iter().find(|s| s.id() == observed.id());
            let values = observed
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| match (mask.entries()[i], known) {
                    (true, _) => *v,
                    (false, Some(s)) => s.values()[i],
                    (false, None) => 0.5,
                })
                .collect();
            observed.with_values(values)
        }
    }

    /// Fills hidden entries with a constant.
    struct Constant(f64);

    impl ImputationOracle for Constant {
        fn impute(&self, observed: &TimeSeries, mask: &MaskMatrix) -> Result<TimeSeries> {
            let values = observed
                .values()
                .iter()
                .zip(mask.entries())
                .map(|(v, &seen)| if seen { *v } else { self.0 })
                .collect();
            observed.with_values(values)
        }
    }

    struct Failing;

    impl ImputationOracle for Failing {
        fn impute(&self, _: &TimeSeries, _: &MaskMatrix) -> Result<TimeSeries> {
            Err(Error::Argument("offline".into()))
        }
    }

    fn series(id: &str) -> TimeSeries {
        let v: Vec<f64> = (0..8).map(|t| (t as f64 * 0.9).sin() * 2.0).collect();
        TimeSeries::univariate(id, &v).unwrap()
    }

    fn fixed(theta: f64) -> AttackConfig {
        AttackConfig {
            theta_rule: ThetaRule::Fixed { theta },
            ..AttackConfig::default()
        }
    }

    #[test]
    fn perfect_memorization_gives_zero_ratio() {
        let x = series("m");
        let target = Memorizer(vec![x.clone()]);
        let score = lbrm_score(&target, &Constant(5.0), &x, &fixed(1.0)).unwrap();
        assert_eq!(score.l_t, 0.0);
        assert_eq!(score.r, 0.0);
        assert!(score.l_r > 0.0);
        assert_eq!(naive_loss_score(&target, &x, &fixed(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn same_oracle_ratio_is_one() {
        let x = series("a");
        let oracle = Constant(0.3);
        let score = lbrm_score(&oracle, &oracle, &x, &fixed(1.0)).unwrap();
        assert_eq!(score.r, 1.0);
        assert!(!score.degenerate);
    }

    #[test]
    fn both_perfect_is_degenerate() {
        let x = series("d");
        let oracle = Memorizer(vec![x.clone()]);
        let score = lbrm_score(&oracle, &oracle, &x, &fixed(1.0)).unwrap();
        assert!(score.degenerate);
        assert_eq!(score.r, 1.0);
    }

    #[test]
    fn even_schedule() {
        let x = TimeSeries::new("x", 10, 2, vec![0.0; 20]).unwrap();
        let cfg = fixed(1.0);
        let specs = cfg.mask_schedule(&x).unwrap();
        let starts: Vec<usize> = specs.iter().map(|s| s.start).collect();
        let dims: Vec<usize> = specs.iter().map(|s| s.dim).collect();
        assert_eq!(starts, vec![1, 3, 6, 8]);
        assert_eq!(dims, vec![0, 1, 0, 1]);

        let mut cfg = fixed(1.0);
        cfg.block_len = 10;
        assert!(matches!(
            cfg.mask_schedule(&x),
            Err(Error::DegenerateMask(_))
        ));
    }

    #[test]
    fn random_schedule_is_seeded_per_candidate() {
        let mut cfg = fixed(1.0);
        cfg.placement = Placement::Random;
        cfg.repeats = 6;
        let a = cfg.mask_schedule(&series("a")).unwrap();
        assert_eq!(a, cfg.mask_schedule(&series("a")).unwrap());
        assert!(a.iter().all(|s| s.start < 8));
    }

    #[test]
    fn oracle_failures_name_the_candidate() {
        let x = series("victim");
        match lbrm_score(&Failing, &Constant(0.0), &x, &fixed(1.0)) {
            Err(Error::Oracle { candidate, .. }) => assert_eq!(candidate, "victim"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn theta_std_examples() {
        assert_eq!(calibrate_theta_std(&[1.0, 1.0, 1.0], 2.0).unwrap(), 1.0);
        // population sigma of {0.8, 1.0, 1.2} = sqrt(0.08 / 3) = 0.163299...
        let t = calibrate_theta_std(&[0.8, 1.0, 1.2], 1.0).unwrap();
        assert!((t - (1.0 + (0.08f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((t - 1.1633).abs() < 1e-4);
        let scores = [0.3, 0.9, 2.0];
        assert_eq!(
            calibrate_theta_std(&scores, 0.0).unwrap(),
            scores.iter().sum::<f64>() / 3.0
        );
        assert!(calibrate_theta_std(&[1.0], 1.0).is_err());
    }

    #[test]
    fn theta_topk_examples() {
        let scores = [0.9, 0.2, 1.4, 0.5];
        assert_eq!(calibrate_theta_topk(&scores, 25.0).unwrap(), 0.2);
        assert_eq!(calibrate_theta_topk(&scores, 100.0).unwrap(), 1.4);
        assert_eq!(calibrate_theta_topk(&[0.7; 5], 20.0).unwrap(), 0.7);
        // floor(10% of 4) = 0 is lifted to one selection
        assert_eq!(calibrate_theta_topk(&scores, 10.0).unwrap(), 0.2);
        for bad in [0.0, -1.0, 100.5, f64::NAN] {
            assert!(calibrate_theta_topk(&scores, bad).is_err());
        }
        assert_eq!(top_count(29.0, 100), 29);
    }

    #[test]
    fn classify_is_inclusive() {
        let mk = |r| MembershipScore {
            candidate_id: "c".into(),
            l_t: r,
            l_r: 1.0,
            r,
            degenerate: false,
        };
        assert!(classify(&mk(0.5), 0.7).is_member);
        assert!(classify(&mk(0.7), 0.7).is_member);
        assert!(!classify(&mk(1.1), 1.0).is_member);
    }

    #[test]
    fn run_attack_contract() {
        let members: Vec<_> = (0..3).map(|i| series(&format!("m{i}"))).collect();
        let candidates: Vec<_> = members
            .iter()
            .cloned()
            .chain((0..3).map(|i| series(&format!("n{i}"))))
            .collect();
        let target = Memorizer(members);
        let reference = Constant(0.25);
        let report = run_attack(&target, &reference, &candidates, &fixed(1e9), &[]).unwrap();
        assert_eq!(report.verdicts.len(), candidates.len());
        assert!(report.verdicts.iter().all(|v| v.is_member));
        let ids: Vec<_> = report
            .verdicts
            .iter()
            .map(|v| v.candidate_id.as_str())
            .collect();
        assert_eq!(ids, vec!["m0", "m1", "m2", "n0", "n1", "n2"]);

        let cfg = AttackConfig {
            theta_rule: ThetaRule::StdRule { n: 0.0 },
            ..AttackConfig::default()
        };
        let report = run_attack(&target, &reference, &candidates, &cfg, &candidates[3..]).unwrap();
        let member_flags: Vec<bool> = report.verdicts.iter().map(|v| v.is_member).collect();
        assert_eq!(member_flags[..3], [true, true, true]);

        assert!(run_attack(&target, &reference, &[], &fixed(1.0), &[]).is_err());
        let err = run_attack(&target, &reference, &candidates, &cfg, &[]);
        assert!(err.is_err());
    }

    #[test]
    fn report_json_layout() {
        let scores = vec![MembershipScore {
            candidate_id: "a".into(),
            l_t: 0.5,
            l_r: 1.0,
            r: 0.5,
            degenerate: false,
        }];
        let report =
            AttackReport::from_scores(&scores, ThetaRule::Fixed { theta: 1.0 }, None).unwrap();
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["theta"], 1.0);
        assert_eq!(json["theta_rule"]["rule"], "fixed");
        let row = &json["per_candidate"][0];
        for key in ["id", "l_t", "l_r", "r", "is_member"] {
            assert!(row.get(key).is_some(), "missing {key}");
        }
        assert_eq!(
            AttackReport::from_json(&report.to_json().unwrap()).unwrap(),
            report
        );
    }
}
