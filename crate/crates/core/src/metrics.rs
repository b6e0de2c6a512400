//! Threshold-free evaluation of membership scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::top_count;
use crate::error::{Error, Result};

/// Which end of the score range indicates membership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    LowerIsMember,
    HigherIsMember,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    pairs: Vec<(f64, bool)>,
    direction: Direction,
}

impl LabeledScores {
    /// Lower scores are more member-like.
    pub fn new(pairs: Vec<(f64, bool)>) -> Result<Self> {
        Self::with_direction(pairs, Direction::LowerIsMember)
    }

    pub fn with_direction(pairs: Vec<(f64, bool)>, direction: Direction) -> Result<Self> {
        if let Some((s, _)) = pairs.iter().find(|(s, _)| s.is_nan()) {
            return Err(Error::Argument(format!("score {s} is not a number")));
        }
        Ok(Self { pairs, direction })
    }

    pub fn from_parts(scores: &[f64], members: &[bool]) -> Result<Self> {
        if scores.len() != members.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} labels",
                scores.len(),
                members.len()
            )));
        }
        Self::new(
            scores
                .iter()
                .copied()
                .zip(members.iter().copied())
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[(f64, bool)] {
        &self.pairs
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn reversed(&self) -> Self {
        let direction = match self.direction {
            Direction::LowerIsMember => Direction::HigherIsMember,
            Direction::HigherIsMember => Direction::LowerIsMember,
        };
        Self {
            pairs: self.pairs.clone(),
            direction,
        }
    }

    pub fn member_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.1).count()
    }

    pub fn nonmember_count(&self) -> usize {
        self.pairs.len() - self.member_count()
    }

    /// Scores mapped so that smaller always means more member-like.
    fn keyed(&self) -> Vec<(f64, f64, bool)> {
        let sign = match self.direction {
            Direction::LowerIsMember => 1.0,
            Direction::HigherIsMember => -1.0,
        };
        let mut keyed: Vec<_> = self.pairs.iter().map(|&(s, m)| (sign * s, s, m)).collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        keyed
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.member_count(), self.nonmember_count());
        if p == 0 || n == 0 {
            return Err(Error::Argument(format!(
                "ROC needs both classes, got {p} members and {n} nonmembers"
            )));
        }
        Ok((p, n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores on the member side of this value (inclusive) are called members.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    /// `fpr,tpr,threshold` rows. The origin's threshold is written as `-inf`
    /// (or `inf` for higher-is-member scores).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        out
    }
}

/// Sweep the threshold over every distinct score. Tied scores share one point.
pub fn roc_curve(data: &LabeledScores) -> Result<RocCurve> {
    let (p, n) = data.require_both_classes()?;
    let keyed = data.keyed();
    let origin = match data.direction {
        Direction::LowerIsMember => f64::NEG_INFINITY,
        Direction::HigherIsMember => f64::INFINITY,
    };
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: origin,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        let threshold = keyed[i].1;
        while i < keyed.len() && keyed[i].0 == key {
            if keyed[i].2 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auroc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// `P(member more member-like than nonmember) + P(tie) / 2` by comparing every
/// member/nonmember pair.
pub fn pairwise_auroc(data: &LabeledScores) -> Result<f64> {
    let (p, n) = data.require_both_classes()?;
    let better = |m: f64, o: f64| match data.direction {
        Direction::LowerIsMember => m < o,
        Direction::HigherIsMember => m > o,
    };
    let mut credit = 0.0;
    for &(m, _) in data.pairs.iter().filter(|x| x.1) {
        for &(o, _) in data.pairs.iter().filter(|x| !x.1) {
            if better(m, o) {
                credit += 1.0;
            } else if m == o {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (p as f64 * n as f64))
}

/// Highest TPR among curve points with `fpr <= fpr_cap`; no interpolation.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_cap: f64) -> Result<f64> {
    if !(fpr_cap > 0.0 && fpr_cap < 1.0) {
        return Err(Error::Argument(format!(
            "FPR cap must lie in (0, 1), got {fpr_cap}"
        )));
    }
    Ok(curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_cap)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Flag the `floor(percent/100 * N)` most member-like scores (boundary ties
/// included) and return the share of all members that were flagged.
pub fn tpr_at_top_percent(data: &LabeledScores, percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::Argument(format!(
            "percent must lie in (0, 100], got {percent}"
        )));
    }
    let members = data.member_count();
    if members == 0 {
        return Err(Error::Argument(
            "no members among the labeled scores".into(),
        ));
    }
    let keyed = data.keyed();
    let cut = keyed[top_count(percent, keyed.len()) - 1].0;
    let hit = keyed.iter().filter(|k| k.0 <= cut && k.2).count();
    Ok(hit as f64 / members as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub auroc: f64,
    pub tpr_at_0_1: f64,
    pub tpr_at_top25: f64,
}

pub fn summarize(data: &LabeledScores) -> Result<MetricsSummary> {
    let curve = roc_curve(data)?;
    Ok(MetricsSummary {
        auroc: auroc(&curve),
        tpr_at_0_1: tpr_at_fpr(&curve, 0.1)?,
        tpr_at_top25: tpr_at_top_percent(data, 25.0)?,
    })
}
