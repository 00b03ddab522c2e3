//! Pairwise sample similarity: trend shape via dynamic time warping, momentum
//! via a Gaussian kernel over change rates, and metadata via cosine of text
//! embeddings, fused by a weighted sum.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, write_jsonl, ItemMetadata, PopularitySeries, Sample};

/// Upper clamp for change rates.
pub const MAX_CHANGE_RATE: f64 = 100.0;
pub const DEFAULT_EMBED_DIM: usize = 256;
pub const MIN_EMBED_DIM: usize = 8;

/// Minimum cumulative alignment cost between `a` and `b` under monotone,
/// boundary-anchored warping with absolute-difference point cost.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    // Two rolling rows of the cumulative cost matrix; column 0 is the +inf
    // boundary.
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = (x - y).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
        prev[0] = f64::INFINITY;
    }
    Ok(prev[m])
}

/// `1 / (1 + dtw)`. Two empty sequences are identical (1.0); empty against
/// non-empty is maximally dissimilar (0.0).
pub fn sim_trend(a: &[f64], b: &[f64]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 1.0 / (1.0 + dtw_distance(a, b).expect("both non-empty")),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMode {
    /// Raw popularity counts.
    #[default]
    Raw,
    /// Each sequence divided by its own maximum.
    Max,
}

pub fn trend_sequence(history: &[u64], mode: TrendMode) -> Vec<f64> {
    let raw = history.iter().map(|&c| c as f64);
    match mode {
        TrendMode::Raw => raw.collect(),
        TrendMode::Max => {
            let max = history.iter().copied().max().unwrap_or(0) as f64;
            if max > 0.0 {
                raw.map(|v| v / max).collect()
            } else {
                raw.collect()
            }
        }
    }
}

/// Relative popularity change between consecutive windows.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ChangeRate(pub f64);

impl ChangeRate {
    /// `(cur - prev) / prev`, total over all inputs: a zero denominator is
    /// treated as 1, and the result is clamped to `[-1, MAX_CHANGE_RATE]`.
    pub fn between(prev: u64, cur: u64) -> Self {
        let denom = if prev == 0 { 1.0 } else { prev as f64 };
        let r = (cur as f64 - prev as f64) / denom;
        ChangeRate(r.clamp(-1.0, MAX_CHANGE_RATE))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Change rate of `series` into `at_window`.
pub fn change_rate(series: &PopularitySeries, at_window: u32) -> ChangeRate {
    let prev = if at_window == 0 {
        0
    } else {
        series.count_at(at_window - 1)
    };
    ChangeRate::between(prev, series.count_at(at_window))
}

/// Momentum of a sample. With a label the rate is taken into the target
/// window (training-time mining); without one it is the last observed step.
pub fn sample_change_rate(sample: &Sample) -> ChangeRate {
    let h = &sample.history;
    match sample.label {
        Some(label) => ChangeRate::between(sample.last_count(), label),
        None => {
            let prev = if h.len() >= 2 { h[h.len() - 2] } else { 0 };
            ChangeRate::between(prev, sample.last_count())
        }
    }
}

/// Gaussian kernel over change rates.
pub fn sim_latest(r1: ChangeRate, r2: ChangeRate, sigma: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::config("sigma", "must be a positive finite number"));
    }
    let d = r1.0 - r2.0;
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Split into alphanumeric runs, preserving the original spelling.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
}

/// Bucket and sign of a lowercased token.
pub fn token_slot(token: &str, dim: usize) -> (usize, f64) {
    let mut h = fnv::FnvHasher::default();
    h.write(token.to_lowercase().as_bytes());
    let v = h.finish();
    let sign = if v >> 63 == 0 { 1.0 } else { -1.0 };
    ((v % dim as u64) as usize, sign)
}

/// Signed feature-hashing embedding of the description text, L2-normalized.
/// Empty text (or text that cancels out exactly) yields the zero vector.
pub fn embed_metadata(meta: &ItemMetadata, dim: usize) -> Result<Embedding> {
    embed_text(&meta.description_text, dim)
}

pub fn embed_text(text: &str, dim: usize) -> Result<Embedding> {
    if dim < MIN_EMBED_DIM {
        return Err(Error::config(
            "embed_dim",
            format!("must be at least {MIN_EMBED_DIM}, got {dim}"),
        ));
    }
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        let (idx, sign) = token_slot(tok, dim);
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Embedding(v))
}

/// Cosine similarity clamped to `[0, 1]`; zero vectors give 0.
pub fn sim_meta(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch {
            expected: e1.dim(),
            actual: e2.dim(),
        });
    }
    let (n1, n2) = (e1.norm(), e2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = e1.0.iter().zip(&e2.0).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(0.0, 1.0))
}

/// Item embeddings keyed by item id, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Embedding>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    item_id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    /// Hash-embed every metadata entry.
    pub fn from_metadata<'a>(
        metadata: impl IntoIterator<Item = &'a ItemMetadata>,
        dim: usize,
    ) -> Result<Self> {
        let mut t = Self::new(dim);
        for m in metadata {
            t.insert(m.item_id.clone(), embed_metadata(m, dim)?)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, item_id: String, e: Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: e.dim(),
            });
        }
        if e.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite embedding for `{item_id}`"
            )));
        }
        self.vectors.insert(item_id, e);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Result<&Embedding> {
        self.vectors
            .get(item_id)
            .ok_or_else(|| Error::MissingEmbedding(item_id.to_string()))
    }

    /// Fill in hash embeddings for items that have none.
    pub fn fill_missing<'a>(
        &mut self,
        metadata: impl IntoIterator<Item = &'a ItemMetadata>,
    ) -> Result<usize> {
        let mut added = 0;
        for m in metadata {
            if !self.vectors.contains_key(&m.item_id) {
                let e = embed_metadata(m, self.dim)?;
                self.vectors.insert(m.item_id.clone(), e);
                added += 1;
            }
        }
        Ok(added)
    }

    /// Load precomputed vectors (`{"item_id", "vector"}` per line); every
    /// vector must share the first one's dimension.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<EmbeddingRow> = read_jsonl(path)?;
        let dim = rows.first().map_or(0, |r| r.vector.len());
        if dim == 0 {
            return Err(Error::Invalid(format!(
                "{}: no embeddings or zero-length vector",
                path.display()
            )));
        }
        let mut t = Self::new(dim);
        for r in rows {
            if t.vectors.contains_key(&r.item_id) {
                return Err(Error::Duplicate(r.item_id));
            }
            t.insert(r.item_id, Embedding(r.vector))?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(
            path,
            self.vectors.iter().map(|(k, v)| EmbeddingRow {
                item_id: k.clone(),
                vector: v.0.clone(),
            }),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.2,
            gamma: 0.4,
            sigma: 1.0,
        }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config {
                    field: name,
                    reason: format!("must be a nonnegative finite number, got {v}"),
                });
            }
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::config(
                "alpha",
                "alpha + beta + gamma must be positive",
            ));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::config("sigma", "must be a positive finite number"));
        }
        Ok(())
    }

    pub fn fuse(&self, trend: f64, latest: f64, meta: f64) -> f64 {
        self.alpha * trend + self.beta * latest + self.gamma * meta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityBreakdown {
    pub trend: f64,
    pub latest: f64,
    pub meta: f64,
    pub total: f64,
}

/// Everything needed to score a pair of samples.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityContext<'a> {
    pub weights: SimilarityWeights,
    pub embeddings: &'a EmbeddingTable,
    pub trend_mode: TrendMode,
}

impl<'a> SimilarityContext<'a> {
    pub fn new(weights: SimilarityWeights, embeddings: &'a EmbeddingTable) -> Self {
        Self {
            weights,
            embeddings,
            trend_mode: TrendMode::Raw,
        }
    }

    pub fn with_trend_mode(mut self, mode: TrendMode) -> Self {
        self.trend_mode = mode;
        self
    }

    pub fn components(&self, s1: &Sample, s2: &Sample) -> Result<SimilarityBreakdown> {
        let trend = sim_trend(
            &trend_sequence(&s1.history, self.trend_mode),
            &trend_sequence(&s2.history, self.trend_mode),
        );
        let latest = sim_latest(
            sample_change_rate(s1),
            sample_change_rate(s2),
            self.weights.sigma,
        )?;
        let meta = sim_meta(
            self.embeddings.get(&s1.item_id)?,
            self.embeddings.get(&s2.item_id)?,
        )?;
        Ok(SimilarityBreakdown {
            trend,
            latest,
            meta,
            total: self.weights.fuse(trend, latest, meta),
        })
    }

    pub fn sim_total(&self, s1: &Sample, s2: &Sample) -> Result<f64> {
        Ok(self.components(s1, s2)?.total)
    }
}

/// Write `sample_id_a sample_id_b sim_trend sim_latest sim_meta sim_total`
/// rows for every unordered pair `i < j`.
pub fn write_pairwise_tsv(
    path: &Path,
    samples: &[Sample],
    ctx: &SimilarityContext<'_>,
) -> Result<()> {
    let mut buf =
        String::from("sample_id_a\tsample_id_b\tsim_trend\tsim_latest\tsim_meta\tsim_total\n");
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let c = ctx.components(a, b)?;
            buf.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                a.sample_id, b.sample_id, c.trend, c.latest, c.meta, c.total
            ));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}
