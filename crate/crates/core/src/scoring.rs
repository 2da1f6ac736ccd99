//! Per-example scoring functions and readability indices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("unknown metric `{0}`")]
    InvalidMetric(String),
    #[error("gold list is empty")]
    InvalidGold,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, ScoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    ExactMatch,
    F1Token,
    SetMatch,
    InList,
    #[serde(rename = "rouge-1")]
    Rouge1,
    #[serde(rename = "rouge-2")]
    Rouge2,
    #[serde(rename = "rouge-l")]
    RougeL,
    ContainsAnswer,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::ExactMatch,
        MetricKind::F1Token,
        MetricKind::SetMatch,
        MetricKind::InList,
        MetricKind::Rouge1,
        MetricKind::Rouge2,
        MetricKind::RougeL,
        MetricKind::ContainsAnswer,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "exact-match",
            MetricKind::F1Token => "f1-token",
            MetricKind::SetMatch => "set-match",
            MetricKind::InList => "in-list",
            MetricKind::Rouge1 => "rouge-1",
            MetricKind::Rouge2 => "rouge-2",
            MetricKind::RougeL => "rouge-l",
            MetricKind::ContainsAnswer => "contains-answer",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MetricKind {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| ScoreError::InvalidMetric(s.to_string()))
    }
}

/// Text clean-up applied to both prediction and reference before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextNormalization {
    pub lowercase: bool,
    /// Strip punctuation from both ends of every token.
    pub strip_punctuation: bool,
    pub collapse_whitespace: bool,
}

impl Default for TextNormalization {
    fn default() -> Self {
        TextNormalization {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
        }
    }
}

impl TextNormalization {
    /// Compares raw strings.
    pub fn strict() -> Self {
        TextNormalization {
            lowercase: false,
            strip_punctuation: false,
            collapse_whitespace: false,
        }
    }

    pub fn apply(&self, text: &str) -> String {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        if !self.strip_punctuation && !self.collapse_whitespace {
            return text;
        }
        if !self.strip_punctuation {
            return text.split_whitespace().collect::<Vec<_>>().join(" ");
        }
        let tokens = text
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
            .filter(|t| !t.is_empty());
        if self.collapse_whitespace {
            tokens.collect::<Vec<_>>().join(" ")
        } else {
            // Keep the original spacing between surviving tokens.
            let mut out = String::new();
            let mut rest = text.as_str();
            for tok in text.split_whitespace() {
                let at = rest.find(tok).expect("token comes from text");
                out.push_str(&rest[..at]);
                out.push_str(tok.trim_matches(|c: char| c.is_ascii_punctuation()));
                rest = &rest[at + tok.len()..];
            }
            out.push_str(rest);
            out
        }
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.apply(text)
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }
}

pub fn em_score(pred: &str, gold: &str, norm: &TextNormalization) -> f64 {
    if norm.apply(pred) == norm.apply(gold) {
        1.0
    } else {
        0.0
    }
}

fn counts<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for it in items {
        *map.entry(it).or_insert(0) += 1;
    }
    map
}

fn overlap_f1(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    // Equal to 2PR / (P + R), with a single rounding.
    (2 * overlap) as f64 / (pred_len + gold_len) as f64
}

fn clipped_overlap<T: std::hash::Hash + Eq>(
    pred: HashMap<T, usize>,
    gold: &HashMap<T, usize>,
) -> usize {
    pred.iter()
        .map(|(k, c)| (*c).min(gold.get(k).copied().unwrap_or(0)))
        .sum()
}

/// Token-multiset F1. Two empty texts score 1.
pub fn f1_token(pred: &str, gold: &str, norm: &TextNormalization) -> f64 {
    let p = norm.tokens(pred);
    let g = norm.tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let overlap = clipped_overlap(counts(p.iter()), &counts(g.iter()));
    overlap_f1(overlap, p.len(), g.len())
}

fn item_set(text: &str, norm: &TextNormalization) -> BTreeSet<String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .map(|item| norm.apply(item))
        .filter(|item| !item.is_empty())
        .collect()
}

/// Items are separated by commas or whitespace; order and duplicates are ignored.
pub fn set_match(pred: &str, gold: &str, norm: &TextNormalization) -> f64 {
    if item_set(pred, norm) == item_set(gold, norm) {
        1.0
    } else {
        0.0
    }
}

pub fn in_list(pred: &str, gold: &[&str], norm: &TextNormalization) -> Result<f64> {
    if gold.is_empty() {
        return Err(ScoreError::InvalidGold);
    }
    let p = norm.apply(pred);
    Ok(if gold.iter().any(|g| norm.apply(g) == p) {
        1.0
    } else {
        0.0
    })
}

/// 1 if the normalized reference occurs as a contiguous token run in the prediction.
pub fn contains_answer(pred: &str, gold: &str, norm: &TextNormalization) -> f64 {
    let p = norm.tokens(pred);
    let g = norm.tokens(gold);
    if g.is_empty() {
        return if p.is_empty() { 1.0 } else { 0.0 };
    }
    if p.windows(g.len()).any(|w| w == g.as_slice()) {
        1.0
    } else {
        0.0
    }
}

/// ROUGE-N F1 with clipped n-gram counts.
pub fn rouge_n(pred: &str, gold: &str, n: usize, norm: &TextNormalization) -> Result<f64> {
    if n != 1 && n != 2 {
        return Err(ScoreError::InvalidArgument(format!(
            "rouge order {n} not in {{1, 2}}"
        )));
    }
    let p = norm.tokens(pred);
    let g = norm.tokens(gold);
    if p.len() < n || g.len() < n {
        return Ok(0.0);
    }
    let pg: Vec<&[String]> = p.windows(n).collect();
    let gg: Vec<&[String]> = g.windows(n).collect();
    let overlap = clipped_overlap(counts(pg.iter().copied()), &counts(gg.iter().copied()));
    Ok(overlap_f1(overlap, pg.len(), gg.len()))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 over tokens.
pub fn rouge_l(pred: &str, gold: &str, norm: &TextNormalization) -> f64 {
    let p = norm.tokens(pred);
    let g = norm.tokens(gold);
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    overlap_f1(lcs_len(&p, &g), p.len(), g.len())
}

/// Scores `pred` against every reference and keeps the best.
pub fn score(
    metric: MetricKind,
    pred: &str,
    references: &[&str],
    norm: &TextNormalization,
) -> Result<f64> {
    if references.is_empty() {
        return Err(ScoreError::InvalidGold);
    }
    if metric == MetricKind::InList {
        return in_list(pred, references, norm);
    }
    let mut best = 0.0f64;
    for gold in references {
        let s = match metric {
            MetricKind::ExactMatch => em_score(pred, gold, norm),
            MetricKind::F1Token => f1_token(pred, gold, norm),
            MetricKind::SetMatch => set_match(pred, gold, norm),
            MetricKind::Rouge1 => rouge_n(pred, gold, 1, norm)?,
            MetricKind::Rouge2 => rouge_n(pred, gold, 2, norm)?,
            MetricKind::RougeL => rouge_l(pred, gold, norm),
            MetricKind::ContainsAnswer => contains_answer(pred, gold, norm),
            MetricKind::InList => unreachable!(),
        };
        best = best.max(s);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readability {
    pub flesch_reading_ease: f64,
    pub flesch_kincaid_grade: f64,
    pub coleman_liau: f64,
}

/// Vowel groups, minus a silent final `e` (but not `-le`), at least one.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if w.is_empty() {
        return 0;
    }
    let vowel = |c: char| "aeiouy".contains(c);
    let mut groups = 0;
    let mut in_group = false;
    for &c in &w {
        if vowel(c) {
            if !in_group {
                groups += 1;
            }
            in_group = true;
        } else {
            in_group = false;
        }
    }
    let n = w.len();
    if n > 2 && w[n - 1] == 'e' && !vowel(w[n - 2]) && !(w[n - 2] == 'l' && !vowel(w[n - 3])) {
        groups -= 1;
    }
    groups.max(1)
}

pub fn readability(text: &str) -> Result<Readability> {
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect();
    if words.is_empty() {
        return Err(ScoreError::InvalidArgument(
            "readability of empty text".into(),
        ));
    }
    let sentences = text
        .split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
        .max(1) as f64;
    let n_words = words.len() as f64;
    let syllables: usize = words.iter().map(|w| count_syllables(w).max(1)).sum();
    let letters = words
        .iter()
        .flat_map(|w| w.chars())
        .filter(|c| c.is_alphanumeric())
        .count() as f64;
    let wps = n_words / sentences;
    let spw = syllables as f64 / n_words;
    let l = letters / n_words * 100.0;
    let s = sentences / n_words * 100.0;
    Ok(Readability {
        flesch_reading_ease: 206.835 - 1.015 * wps - 84.6 * spw,
        flesch_kincaid_grade: 0.39 * wps + 11.8 * spw - 15.59,
        coleman_liau: 0.0588 * l - 0.296 * s - 15.8,
    })
}
