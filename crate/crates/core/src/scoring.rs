//! Popularity scorers, templated explanations and per-window ranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::{read_jsonl, write_jsonl, Sample};
use crate::similarity::{embed_text, token_slot, tokenize, DEFAULT_EMBED_DIM};

/// Points used by the linear-trend scorer.
pub const TREND_POINTS: usize = 6;
/// Histories shorter than this are explained mainly by their features.
pub const FEATURE_DOMINANCE_THRESHOLD: usize = 2;
pub const NO_HISTORY_PHRASE: &str = "no historical popularity data";

/// Least-squares line through `(k, ys[k])`; returns `(intercept, slope)`.
/// Fewer than two points give a flat line.
pub fn fit_line(ys: &[f64]) -> (f64, f64) {
    let n = ys.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    if n < 2 {
        return (y_mean, 0.0);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    (y_mean - slope * x_mean, slope)
}

/// Stand-in scorers for a learned popularity model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    LastValue,
    MovingAverage {
        window: usize,
    },
    #[default]
    LinearTrend,
}

impl ScorerSpec {
    pub fn parse(kind: &str, window: usize) -> Result<Self> {
        let spec = match kind {
            "last_value" => ScorerSpec::LastValue,
            "moving_average" => ScorerSpec::MovingAverage { window },
            "linear_trend" => ScorerSpec::LinearTrend,
            other => {
                return Err(Error::config(
                    "scorer",
                    format!("unknown scorer `{other}` (expected last_value, moving_average or linear_trend)"),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let ScorerSpec::MovingAverage { window: 0 } = self {
            return Err(Error::config("scorer_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Predicted popularity for the sample's target window, never negative.
pub fn score(spec: &ScorerSpec, sample: &Sample) -> f64 {
    let h: Vec<f64> = sample.history.iter().map(|&c| c as f64).collect();
    if h.is_empty() {
        return 0.0;
    }
    let v = match *spec {
        ScorerSpec::LastValue => h[h.len() - 1],
        ScorerSpec::MovingAverage { window } => {
            let tail = &h[h.len() - window.min(h.len())..];
            tail.iter().sum::<f64>() / tail.len() as f64
        }
        ScorerSpec::LinearTrend => {
            let tail = &h[h.len() - TREND_POINTS.min(h.len())..];
            let (a, b) = fit_line(tail);
            a + b * tail.len() as f64
        }
    };
    v.max(0.0)
}

pub fn score_samples(spec: &ScorerSpec, samples: &[Sample], exec: Exec) -> Vec<f64> {
    exec.map(samples, |s| score(spec, s))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub trend_section: String,
    pub feature_section: String,
    pub integration_section: String,
}

impl ExplanationRecord {
    pub fn render(&self) -> String {
        format!(
            "[Trend]: {} [Feature]: {} [Integration]: {}",
            self.trend_section, self.feature_section, self.integration_section
        )
    }

    /// Inverse of [`render`](Self::render); `None` unless all three markers
    /// appear in order.
    pub fn parse(text: &str) -> Option<Self> {
        let rest = text.strip_prefix("[Trend]: ")?;
        let (trend, rest) = rest.split_once(" [Feature]: ")?;
        let (feature, integration) = rest.split_once(" [Integration]: ")?;
        Some(Self {
            trend_section: trend.to_string(),
            feature_section: feature.to_string(),
            integration_section: integration.to_string(),
        })
    }
}

/// Distinct tokens of `text` (first spelling kept) ordered by the weight of
/// their bucket in the text's own hashing embedding, heaviest first; ties keep
/// text order.
pub fn salient_tokens(text: &str, dim: usize, n: usize) -> Vec<String> {
    let Ok(emb) = embed_text(text, dim) else {
        return Vec::new();
    };
    let mut seen = HashSet::new();
    let mut toks: Vec<(usize, &str, f64)> = Vec::new();
    for (pos, tok) in tokenize(text).enumerate() {
        if !seen.insert(tok.to_lowercase()) {
            continue;
        }
        let (idx, sign) = token_slot(tok, dim);
        toks.push((pos, tok, sign * emb.0[idx]));
    }
    toks.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    toks.into_iter().take(n).map(|t| t.1.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Explainer {
    pub embed_dim: usize,
}

impl Default for Explainer {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl Explainer {
    pub fn explain(&self, sample: &Sample, score: f64) -> ExplanationRecord {
        ExplanationRecord {
            trend_section: trend_section(sample),
            feature_section: feature_section(&sample.metadata.description_text, self.embed_dim),
            integration_section: integration_section(sample, score),
        }
    }
}

fn trend_section(sample: &Sample) -> String {
    let t = sample.target_window;
    let h = &sample.history;
    if h.is_empty() {
        return format!(
            "There is {NO_HISTORY_PHRASE} before window {t}, so the trend cannot be assessed."
        );
    }
    let w0 = sample.first_window;
    let last = h[h.len() - 1];
    let mean = h.iter().sum::<u64>() as f64 / h.len() as f64;
    // first occurrence of the extreme value
    let (peak_k, peak) = h.iter().enumerate().fold(
        (0, h[0]),
        |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
    );
    let (low_k, low) = h.iter().enumerate().fold(
        (0, h[0]),
        |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc },
    );
    let tail: Vec<f64> = h[h.len() - TREND_POINTS.min(h.len())..]
        .iter()
        .map(|&c| c as f64)
        .collect();
    let slope = fit_line(&tail).1;
    let direction = if slope > 0.05 {
        "upward"
    } else if slope < -0.05 {
        "downward"
    } else {
        "flat"
    };
    format!(
        "Over windows {w0}-{end}, the most recent value is {last}, the average is {mean:.2}, \
         the peak is {peak} in window {pw} and the low is {low} in window {lw}; \
         the last {k} window(s) trend {direction} ({slope:+.2} per window).",
        end = t - 1,
        pw = w0 + peak_k as u32,
        lw = w0 + low_k as u32,
        k = tail.len(),
    )
}

fn feature_section(text: &str, dim: usize) -> String {
    let toks = salient_tokens(text, dim, 2);
    match toks.as_slice() {
        [a, b] => format!(
            "The description highlights \"{a}\" and \"{b}\", its most characteristic attributes."
        ),
        [a] => format!(
            "The description mentions only \"{a}\", which gives limited attribute evidence."
        ),
        _ => "The item has no descriptive metadata, so no attributes can be cited.".to_string(),
    }
}

fn integration_section(sample: &Sample, score: f64) -> String {
    let t = sample.target_window;
    if sample.history.len() < FEATURE_DOMINANCE_THRESHOLD {
        format!(
            "With little or no history the item features dominate, and the predicted popularity score for window {t} is {score:.2}."
        )
    } else {
        format!(
            "The historical trend dominates the item features, and the predicted popularity score for window {t} is {score:.2}."
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub item_id: String,
    pub target_window: u32,
    pub predicted_score: f64,
    pub rank: Option<usize>,
    pub explanation: ExplanationRecord,
}

/// On-disk prediction: key names are fixed by the downstream contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predict_popularity_score: f64,
    pub explanation_of_score: String,
}

impl From<&Prediction> for PredictionRecord {
    fn from(p: &Prediction) -> Self {
        Self {
            sample_id: p.sample_id.clone(),
            predict_popularity_score: p.predicted_score,
            explanation_of_score: p.explanation.render(),
        }
    }
}

pub fn predict(
    samples: &[Sample],
    scores: &[f64],
    explainer: &Explainer,
    exec: Exec,
) -> Result<Vec<Prediction>> {
    if samples.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: scores.len(),
        });
    }
    let pairs: Vec<(&Sample, f64)> = samples.iter().zip(scores.iter().copied()).collect();
    exec.try_map(&pairs, |(s, sc)| {
        if !sc.is_finite() || *sc < 0.0 {
            return Err(Error::Invalid(format!("score for {} is {sc}", s.sample_id)));
        }
        Ok(Prediction {
            sample_id: s.sample_id.clone(),
            item_id: s.item_id.clone(),
            target_window: s.target_window,
            predicted_score: *sc,
            rank: None,
            explanation: explainer.explain(s, *sc),
        })
    })
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_jsonl(path, preds.iter().map(PredictionRecord::from))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub rank: usize,
    pub item_id: String,
    pub score: f64,
}

/// Sort one window's predictions by score (descending, ties by item id) and
/// keep the first `n`.
pub fn rank_window(predictions: &[Prediction], n: usize) -> Result<Vec<RankedItem>> {
    let mut seen = HashSet::new();
    for p in predictions {
        if !seen.insert(p.item_id.as_str()) {
            return Err(Error::Duplicate(p.item_id.clone()));
        }
    }
    if let Some(first) = predictions.first() {
        if let Some(p) = predictions
            .iter()
            .find(|p| p.target_window != first.target_window)
        {
            return Err(Error::Invalid(format!(
                "ranking mixes windows {} and {}",
                first.target_window, p.target_window
            )));
        }
    }
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| {
        b.predicted_score
            .total_cmp(&a.predicted_score)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(sorted
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, p)| RankedItem {
            rank: i + 1,
            item_id: p.item_id.clone(),
            score: p.predicted_score,
        })
        .collect())
}

pub fn write_ranked_tsv(path: &Path, ranked: &[RankedItem]) -> Result<()> {
    let mut buf = String::from("rank\titem_id\tscore\n");
    for r in ranked {
        buf.push_str(&format!("{}\t{}\t{}\n", r.rank, r.item_id, r.score));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_ranked_tsv(path: &Path) -> Result<Vec<RankedItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::Invalid(format!(
                "{}:{}: malformed ranked row",
                path.display(),
                i + 1
            ))
        };
        let mut cols = line.split('\t');
        let rank = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let item_id = cols.next().ok_or_else(bad)?.to_string();
        let score = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        out.push(RankedItem {
            rank,
            item_id,
            score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub score: f64,
}

/// Load an external score file and return scores aligned with `required`.
/// Every required sample must be present with a finite nonnegative score.
pub fn load_scores(path: &Path, required: &[Sample]) -> Result<Vec<f64>> {
    let rows: Vec<ScoreRecord> = read_jsonl(path)?;
    let mut by_id = BTreeMap::new();
    for r in rows {
        if !r.score.is_finite() || r.score < 0.0 {
            return Err(Error::Invalid(format!(
                "{}: score for {} is {}",
                path.display(),
                r.sample_id,
                r.score
            )));
        }
        if by_id.insert(r.sample_id.clone(), r.score).is_some() {
            return Err(Error::Duplicate(r.sample_id));
        }
    }
    let missing: Vec<&str> = required
        .iter()
        .filter(|s| !by_id.contains_key(&s.sample_id))
        .map(|s| s.sample_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "{}: missing scores for {} sample(s), e.g. {}",
            path.display(),
            missing.len(),
            missing[0]
        )));
    }
    Ok(required.iter().map(|s| by_id[&s.sample_id]).collect())
}

pub fn write_scores(path: &Path, samples: &[Sample], scores: &[f64]) -> Result<()> {
    write_jsonl(
        path,
        samples.iter().zip(scores).map(|(s, &score)| ScoreRecord {
            sample_id: s.sample_id.clone(),
            score,
        }),
    )
}
