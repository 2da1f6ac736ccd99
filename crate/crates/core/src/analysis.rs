//! Post-hoc statistics over finished runs: paired Wilcoxon tests, per-method
//! summaries, and per-step quantiles of best-so-far reward.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::driver::TraceRow;

/// Below this many non-zero differences the exact null distribution is used.
pub const EXACT_THRESHOLD: usize = 10;
const MIN_NONZERO: usize = 5;
/// Absolute differences closer than this share a rank.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("only {0} non-zero differences; at least 5 are needed")]
    InsufficientData(usize),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("invalid score {0}")]
    InvalidScore(f64),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Favors {
    A,
    B,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
    /// Which column has the larger rank sum of positive differences.
    pub favors: Favors,
}

/// Average ranks (1-based) of `values`, with near-equal values tied.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] - values[order[start]] <= TIE_EPS {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Count of sign assignments giving each doubled positive-rank sum.
fn exact_null(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0.0f64; total + 1];
    ways[0] = 1.0;
    for &r in doubled {
        for s in (r..=total).rev() {
            ways[s] += ways[s - r];
        }
    }
    ways
}

/// Two-sided signed-rank test of `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(AnalysisError::Alignment(format!(
            "column lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(&bad) = a.iter().chain(b).find(|x| !x.is_finite()) {
        return Err(AnalysisError::InvalidScore(bad));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, y)| x - y)
        .collect();
    let n = diffs.len();
    if n < MIN_NONZERO {
        return Err(AnalysisError::InsufficientData(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| r)
        .sum();
    let statistic = w_plus.min(w_minus);
    let exact = n < EXACT_THRESHOLD;
    let p_value = if exact {
        // Average ranks are multiples of one half, so doubling makes them integral.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let ways = exact_null(&doubled);
        let cutoff = (2.0 * statistic).round() as usize;
        let below: f64 = ways[..=cutoff].iter().sum();
        (2.0 * below / 2f64.powi(n as i32)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite ranks"));
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            var -= (t * t * t - t) / 48.0;
        }
        let z = (statistic - mean) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.cdf(z)).min(1.0)
    };
    let favors = match w_plus.partial_cmp(&w_minus) {
        Some(Ordering::Greater) => Favors::A,
        Some(Ordering::Less) => Favors::B,
        _ => Favors::Neither,
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        p_value,
        n_effective: n,
        exact,
        favors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub median: f64,
    /// Tasks on which this method ties for the top score.
    pub best_count: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// `table[task][method]`. Every method tied for a task's top score is credited.
pub fn summarize(methods: &[&str], table: &[Vec<f64>]) -> Result<Vec<MethodSummary>> {
    if methods.is_empty() || table.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if let Some((i, row)) = table
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != methods.len())
    {
        return Err(AnalysisError::Alignment(format!(
            "task {i} has {} scores for {} methods",
            row.len(),
            methods.len()
        )));
    }
    let mut best = vec![0usize; methods.len()];
    for row in table {
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, &s) in row.iter().enumerate() {
            if s == top {
                best[k] += 1;
            }
        }
    }
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let column: Vec<f64> = table.iter().map(|r| r[k]).collect();
            MethodSummary {
                method: m.to_string(),
                median: median(&column).expect("non-empty table"),
                best_count: best[k],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepQuantiles {
    pub step: u64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Per-step min, median and max of best-so-far reward across traces.
pub fn aggregate_traces(traces: &[Vec<TraceRow>]) -> Result<Vec<StepQuantiles>> {
    let first = traces.first().ok_or(AnalysisError::Empty)?;
    if let Some(t) = traces.iter().find(|t| t.len() != first.len()) {
        return Err(AnalysisError::Alignment(format!(
            "traces have {} and {} steps",
            first.len(),
            t.len()
        )));
    }
    (0..first.len())
        .map(|i| {
            let step = first[i].step;
            if traces.iter().any(|t| t[i].step != step) {
                return Err(AnalysisError::Alignment(format!(
                    "step numbers disagree at row {i}"
                )));
            }
            let values: Vec<f64> = traces.iter().map(|t| t[i].best_reward).collect();
            Ok(StepQuantiles {
                step,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                median: median(&values).expect("at least one trace"),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

pub fn write_quantiles(path: &Path, rows: &[StepQuantiles]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[MethodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_statistic() {
        let a = [1.0, 2.0, 3.0, 4.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!((r.w_plus, r.w_minus, r.statistic), (10.0, 5.0, 5.0));
        assert!(r.exact);
        assert_eq!(r.favors, Favors::A);
    }

    #[test]
    fn identical_columns_insufficient() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(AnalysisError::InsufficientData(0))
        ));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[0.3, 0.1, 0.3, 0.2]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn all_positive_small_sample() {
        // Only one of 2^6 sign patterns is at least this extreme in each tail.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn summary_with_ties() {
        let table = vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.3]];
        let s = summarize(&["x", "y"], &table).unwrap();
        assert_eq!(s[0].best_count, 2);
        assert_eq!(s[1].best_count, 2);
        assert_eq!(s[0].median, 0.5);
        let single = summarize(&["x"], &[vec![0.1], vec![0.2]]).unwrap();
        assert_eq!(single[0].best_count, 2);
    }

    fn trace(values: &[f64]) -> Vec<TraceRow> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| TraceRow {
                step: i as u64 + 1,
                reward: v,
                best_reward: v,
                alpha: 0.01,
                instruction: String::new(),
            })
            .collect()
    }

    #[test]
    fn single_trace_quantiles() {
        let q = aggregate_traces(&[trace(&[0.1, 0.4, 0.4])]).unwrap();
        assert!(q.iter().all(|r| r.min == r.median && r.median == r.max));
        assert_eq!(q[1].max, 0.4);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            aggregate_traces(&[trace(&[0.1]), trace(&[0.1, 0.2])]),
            Err(AnalysisError::Alignment(_))
        ));
    }
}
