//! Exact-match micro precision/recall/F1, multi-run confidence intervals and
//! table-shaped reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{Task, TaskTuple};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction and gold sentence ids differ (first mismatch: `{0}`)")]
    IdMismatch(String),
    #[error("sentence id `{0}` occurs more than once")]
    DuplicateId(String),
    #[error("at least two runs are needed for a confidence interval, got {0}")]
    TooFewRuns(usize),
}

/// How aspect surface strings are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AspectMatch {
    /// Case-sensitive exact match.
    #[default]
    Exact,
    /// Lowercase both sides first.
    Lowercase,
}

impl AspectMatch {
    pub fn describe(self) -> &'static str {
        match self {
            AspectMatch::Exact => "exact (case-sensitive)",
            AspectMatch::Lowercase => "lowercased",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub id: String,
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub pred_count: usize,
    pub gold_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aspect_match: AspectMatch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sentence: Option<Vec<SentenceScore>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, pred_count: usize, gold_count: usize) -> Self {
        let precision = ratio(tp, pred_count);
        let recall = ratio(tp, gold_count);
        EvalReport {
            tp,
            pred_count,
            gold_count,
            precision,
            recall,
            f1: f1_score(precision, recall),
            aspect_match: AspectMatch::Exact,
            per_sentence: None,
        }
    }
}

/// Tuples of one sentence, keyed by sentence id.
pub type SentenceTuples = (String, Vec<TaskTuple>);

fn index(rows: &[SentenceTuples], matching: AspectMatch) -> Result<BTreeMap<&str, BTreeSet<TaskTuple>>, EvalError> {
    let mut out = BTreeMap::new();
    for (id, tuples) in rows {
        let set = tuples
            .iter()
            .map(|t| match matching {
                AspectMatch::Exact => t.clone(),
                AspectMatch::Lowercase => t.lowercased(),
            })
            .collect();
        if out.insert(id.as_str(), set).is_some() {
            return Err(EvalError::DuplicateId(id.clone()));
        }
    }
    Ok(out)
}

/// Micro-averaged exact-match scores. Both sides are deduplicated per
/// sentence before counting; ids must match one-to-one.
pub fn micro_scores(
    predictions: &[SentenceTuples],
    gold: &[SentenceTuples],
    matching: AspectMatch,
    per_sentence: bool,
) -> Result<EvalReport, EvalError> {
    let pred = index(predictions, matching)?;
    let gold = index(gold, matching)?;
    if let Some(id) = pred
        .keys()
        .find(|k| !gold.contains_key(*k))
        .or_else(|| gold.keys().find(|k| !pred.contains_key(*k)))
    {
        return Err(EvalError::IdMismatch(id.to_string()));
    }
    let mut rows = Vec::new();
    let (mut tp, mut pred_count, mut gold_count) = (0, 0, 0);
    for (id, g) in &gold {
        let p = &pred[id];
        let hit = p.intersection(g).count();
        tp += hit;
        pred_count += p.len();
        gold_count += g.len();
        rows.push(SentenceScore {
            id: id.to_string(),
            tp: hit,
            pred: p.len(),
            gold: g.len(),
        });
    }
    let mut report = EvalReport::from_counts(tp, pred_count, gold_count);
    report.aspect_match = matching;
    report.per_sentence = per_sentence.then_some(rows);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub run_f1s: Vec<f64>,
    pub mean: f64,
    pub ci_halfwidth: f64,
}

/// Mean with a two-sided 95% Student-t interval over runs.
pub fn aggregate_runs(run_f1s: &[f64]) -> Result<RunAggregate, EvalError> {
    let n = run_f1s.len();
    if n < 2 {
        return Err(EvalError::TooFewRuns(n));
    }
    let nf = n as f64;
    let mean = run_f1s.iter().sum::<f64>() / nf;
    let var = run_f1s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok(RunAggregate {
        run_f1s: run_f1s.to_vec(),
        mean,
        ci_halfwidth: t * var.sqrt() / nf.sqrt(),
    })
}

/// Row key of a results table: task plus the source→target language pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub task: Task,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// `mean±halfwidth` in F1 points with one decimal.
pub fn format_cell(agg: &RunAggregate) -> String {
    format!("{:.1}±{:.1}", agg.mean * 100.0, agg.ci_halfwidth * 100.0)
}

/// One row per task, one column per `source→target` pair, both sorted.
/// Missing cells render as `-`. The first line records the aspect matching
/// mode.
pub fn emit_report(cells: &BTreeMap<CellKey, RunAggregate>, format: ReportFormat, matching: AspectMatch) -> String {
    let pairs: BTreeSet<(&str, &str)> = cells.keys().map(|k| (k.source.as_str(), k.target.as_str())).collect();
    let tasks: BTreeSet<Task> = cells.keys().map(|k| k.task).collect();
    let mut header = vec!["task".to_string()];
    header.extend(pairs.iter().map(|(s, t)| format!("{s}→{t}")));

    let rows: Vec<Vec<String>> = tasks
        .iter()
        .map(|&task| {
            let mut row = vec![task.name().to_string()];
            row.extend(pairs.iter().map(|(s, t)| {
                let key = CellKey {
                    task,
                    source: s.to_string(),
                    target: t.to_string(),
                };
                cells.get(&key).map_or_else(|| "-".to_string(), format_cell)
            }));
            row
        })
        .collect();

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            writeln!(out, "# aspect matching: {}", matching.describe()).unwrap();
            for row in std::iter::once(&header).chain(&rows) {
                writeln!(out, "{}", row.join(",")).unwrap();
            }
        }
        ReportFormat::Markdown => {
            writeln!(out, "<!-- aspect matching: {} -->", matching.describe()).unwrap();
            writeln!(out, "| {} |", header.join(" | ")).unwrap();
            writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
            for row in &rows {
                writeln!(out, "| {} |", row.join(" | ")).unwrap();
            }
        }
    }
    out
}
