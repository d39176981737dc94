//! Classification metrics for guard predictions and progress accounting
//! for task runs.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::TaskReport;
use crate::corpus::{oracle_label, Sample};
use crate::guards::{CompletenessGuard, FeasibilityGuard};
use crate::sim::Scenario;

/// Scores at or above this count as positive predictions.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Undefined without a positive label.
    pub average_precision: Option<f64>,
    /// Undefined without a positive label.
    pub f1: Option<f64>,
    pub n: usize,
    pub confusion: Confusion,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("score {0} is outside [0, 1]")]
    BadScore(String),
}

/// Mean, over positives, of precision at each positive's rank. Ranks sort
/// by descending score; equal scores keep input order.
pub fn average_precision(pairs: &[(f64, bool)]) -> Option<f64> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if pairs[i].1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

pub fn compute_metrics(pairs: &[(f64, bool)]) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((s, _)) = pairs.iter().find(|(s, _)| !(0.0..=1.0).contains(s)) {
        return Err(EvalError::BadScore(s.to_string()));
    }
    let mut c = Confusion::default();
    for &(score, label) in pairs {
        match (score >= THRESHOLD, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let n = pairs.len();
    let positives = c.tp + c.fn_;
    Ok(MetricsReport {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        average_precision: average_precision(pairs),
        f1: (positives > 0).then(|| 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64),
        n,
        confusion: c,
        threshold: THRESHOLD,
    })
}

/// Anything that scores corpus samples.
pub trait SampleJudge: Sync {
    /// Positive-class score in [0, 1].
    fn score(&self, sample: &Sample) -> Result<f64, String>;
}

/// Ground truth, with scenarios looked up by the sample's scenario id.
#[derive(Debug, Clone, Default)]
pub struct OracleJudge {
    scenarios: BTreeMap<String, Scenario>,
}

impl OracleJudge {
    pub fn new(scenarios: impl IntoIterator<Item = Scenario>) -> Self {
        OracleJudge { scenarios: scenarios.into_iter().map(|s| (s.scenario_id.clone(), s)).collect() }
    }
}

impl SampleJudge for OracleJudge {
    fn score(&self, sample: &Sample) -> Result<f64, String> {
        let scenario = match &sample.seed_meta().scenario_id {
            Some(id) => Some(self.scenarios.get(id).ok_or_else(|| format!("unknown scenario {id}"))?),
            None => None,
        };
        oracle_label(sample, scenario)
            .map(|b| if b { 1.0 } else { 0.0 })
            .ok_or_else(|| "completeness sample without a scenario".to_string())
    }
}

/// Scores samples with guard backends.
pub struct GuardJudge<'a> {
    pub feasibility: &'a dyn FeasibilityGuard,
    pub completeness: &'a dyn CompletenessGuard,
}

impl SampleJudge for GuardJudge<'_> {
    fn score(&self, sample: &Sample) -> Result<f64, String> {
        let verdict = match sample {
            Sample::Feasibility { screen, command, .. } => self.feasibility.check_feasible(screen, command),
            Sample::Completeness { screen_before, screen_after, command, .. } => {
                self.completeness.check_complete(Some(screen_before), screen_after, command)
            }
        };
        verdict.map(|v| v.score).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    /// Samples whose backend call failed; scored as negatives.
    pub failures: usize,
    pub failure_rate: f64,
    pub sampled: Option<SampleSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub k: usize,
    pub seed: u64,
}

/// Indices of a seeded subsample of size `min(k, len)`, in input order.
pub fn subsample_indices(len: usize, spec: SampleSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, spec.k.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

/// Score every (optionally subsampled) sample and compute metrics.
/// Backend failures count as score 0.
pub fn evaluate_predictor(
    samples: &[Sample],
    judge: &dyn SampleJudge,
    sample: Option<SampleSpec>,
) -> Result<EvalReport, EvalError> {
    let chosen: Vec<&Sample> = match sample {
        Some(spec) => subsample_indices(samples.len(), spec).into_iter().map(|i| &samples[i]).collect(),
        None => samples.iter().collect(),
    };
    let scored: Vec<(Result<f64, String>, bool)> =
        chosen.par_iter().map(|s| (judge.score(s), s.label() == 1)).collect();
    let mut failures = 0;
    let pairs: Vec<(f64, bool)> = scored
        .into_iter()
        .map(|(r, label)| match r {
            Ok(score) => (score.clamp(0.0, 1.0), label),
            Err(e) => {
                log::warn!("backend failed on a sample: {e}");
                failures += 1;
                (0.0, label)
            }
        })
        .collect();
    let metrics = compute_metrics(&pairs)?;
    Ok(EvalReport { failure_rate: failures as f64 / metrics.n as f64, metrics, failures, sampled: sample })
}

/// "valid/total (expert) mark", e.g. `4/7 (9) ✗`.
pub fn progress_row(report: &TaskReport) -> String {
    format!(
        "{}/{} ({}) {}",
        report.valid_steps,
        report.total_steps,
        report.expert_steps,
        if report.success() { "✓" } else { "✗" }
    )
}

/// Aligned text table: one row per scenario, one column per config.
pub fn progress_table(configs: &[&str], rows: &[(String, Vec<TaskReport>)]) -> String {
    let mut cells: Vec<Vec<String>> =
        vec![std::iter::once("scenario".to_string()).chain(configs.iter().map(|c| c.to_string())).collect()];
    for (name, reports) in rows {
        cells.push(std::iter::once(name.clone()).chain(reports.iter().map(progress_row)).collect());
    }
    let ncols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> =
            row.iter().enumerate().map(|(i, s)| format!("{s}{}", " ".repeat(widths[i] - s.chars().count()))).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::{EndStatus, TerminationReason};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ap_worked_example() {
        let pairs = [(0.9, true), (0.8, false), (0.7, true), (0.6, true)];
        let m = compute_metrics(&pairs).unwrap();
        assert!(close(m.average_precision.unwrap(), (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0));
    }

    #[test]
    fn f1_from_counts() {
        // tp=2, fp=1, fn=1
        let pairs = [(0.9, true), (0.8, true), (0.7, false), (0.1, true), (0.2, false)];
        let m = compute_metrics(&pairs).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        let (p, r) = (2.0 / 3.0, 2.0 / 3.0);
        assert!(close(m.f1.unwrap(), 2.0 * p * r / (p + r)));
    }

    #[test]
    fn perfect_predictor() {
        let pairs = [(1.0, true), (0.0, false), (0.98, true), (0.02, false)];
        let m = compute_metrics(&pairs).unwrap();
        assert_eq!((m.accuracy, m.average_precision, m.f1), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn undefined_without_positives() {
        let m = compute_metrics(&[(0.3, false)]).unwrap();
        assert_eq!((m.average_precision, m.f1), (None, None));
        assert_eq!(compute_metrics(&[]).unwrap_err(), EvalError::Empty);
        assert!(compute_metrics(&[(1.5, true)]).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        assert!(close(average_precision(&[(0.5, false), (0.5, true)]).unwrap(), 0.5));
        assert!(close(average_precision(&[(0.5, true), (0.5, false)]).unwrap(), 1.0));
    }

    fn report(v: u32, t: u32, e: u32, ok: bool) -> TaskReport {
        TaskReport {
            scenario_id: "x".into(),
            instruction: String::new(),
            valid_steps: v,
            total_steps: t,
            expert_steps: e,
            end_status: if ok { EndStatus::Success } else { EndStatus::Failure },
            termination_reason: if ok { TerminationReason::GoalReached } else { TerminationReason::PlannerDone },
            planner_calls: 0,
            total_replans: 0,
            step_log: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn progress_rows() {
        assert_eq!(progress_row(&report(4, 7, 9, false)), "4/7 (9) ✗");
        assert_eq!(progress_row(&report(9, 9, 9, true)), "9/9 (9) ✓");
        assert_eq!(progress_row(&report(0, 0, 3, false)), "0/0 (3) ✗");
    }

    #[test]
    fn table_aligns_columns() {
        let t = progress_table(&["A", "B"], &[("row9".into(), vec![report(4, 7, 9, false), report(9, 9, 9, true)])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].find('A'), lines[1].find('4'));
    }

    #[test]
    fn subsample_is_deterministic() {
        let spec = SampleSpec { k: 10, seed: 3 };
        let a = subsample_indices(100, spec);
        assert_eq!(a, subsample_indices(100, spec));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_indices(5, spec).len(), 5);
    }
}
