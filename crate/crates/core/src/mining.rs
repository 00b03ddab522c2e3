//! Contrastive triplet mining over a candidate pool.
//!
//! Candidates are ranked against each anchor by fused similarity, descending,
//! with ties broken by ascending sample id. The first `n_pos` form the positive
//! set. In batch mode the rest of the anchor's group are negatives; in global
//! mode `k` negatives are drawn uniformly from the remainder.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::Sample;
use crate::similarity::SimilarityContext;

pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_N_POS: usize = 2;
pub const DEFAULT_GLOBAL_NEGATIVES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Batch,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub pool_mode: PoolMode,
    pub batch_size: usize,
    pub n_pos: usize,
    /// Negatives sampled per anchor in global mode.
    pub global_negatives: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            pool_mode: PoolMode::Batch,
            batch_size: DEFAULT_BATCH_SIZE,
            n_pos: DEFAULT_N_POS,
            global_negatives: DEFAULT_GLOBAL_NEGATIVES,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pos == 0 {
            return Err(Error::config("n_pos", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if self.pool_mode == PoolMode::Batch && self.batch_size < self.n_pos + 1 {
            return Err(Error::config(
                "batch_size",
                format!("must exceed n_pos ({})", self.n_pos),
            ));
        }
        Ok(())
    }
}

/// Dense symmetric matrix of fused similarities, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Pairwise fused similarity over `pool`, one row per task.
pub fn similarity_matrix(
    pool: &[Sample],
    ctx: &SimilarityContext<'_>,
    exec: Exec,
) -> Result<SimilarityMatrix> {
    if pool.is_empty() {
        return Err(Error::Invalid(
            "similarity matrix over an empty pool".into(),
        ));
    }
    let n = pool.len();
    // Upper triangle only; the lower half is mirrored so symmetry is exact.
    let rows: Vec<Vec<f64>> = exec.try_map_range(n, |i| {
        pool[i + 1..]
            .iter()
            .map(|b| ctx.sim_total(&pool[i], b))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        data[i * n + i] = 1.0;
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix { n, data })
}

/// Order candidates for `anchor` by similarity descending, then id ascending.
fn rank_candidates(
    anchor: usize,
    members: &[usize],
    ids: &[&str],
    sims: &SimilarityMatrix,
) -> Vec<(usize, f64)> {
    let mut c: Vec<(usize, f64)> = members
        .iter()
        .copied()
        .filter(|&m| m != anchor)
        .map(|m| (m, sims.get(anchor, m)))
        .collect();
    c.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a.0].cmp(ids[b.0]))
    });
    c
}

/// Split `n` indices into `ceil(n / batch)` groups whose sizes differ by at
/// most one, so no group exceeds `batch` and the tail is never tiny.
pub fn balanced_groups(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    if n == 0 {
        return Vec::new();
    }
    let groups = n.div_ceil(batch);
    let base = n / groups;
    let extra = n % groups;
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

fn check_unique(pool: &[Sample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pool.len());
    for s in pool {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::Duplicate(s.sample_id.clone()));
        }
    }
    Ok(())
}

fn id_hash(id: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(id.as_bytes());
    h.finish()
}

/// Mine one triplet per anchor. Anchors whose group is too small to supply
/// `n_pos` positives are skipped with a warning.
pub fn mine_triplets(
    pool: &[Sample],
    ctx: &SimilarityContext<'_>,
    cfg: &MiningConfig,
    exec: Exec,
) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    check_unique(pool)?;
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    // Canonical order first so the seeded shuffle does not depend on input order.
    let mut canonical: Vec<usize> = (0..pool.len()).collect();
    canonical.sort_by(|&a, &b| pool[a].sample_id.cmp(&pool[b].sample_id));

    match cfg.pool_mode {
        PoolMode::Batch => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            canonical.shuffle(&mut rng);
            let groups = balanced_groups(&canonical, cfg.batch_size);
            let per_group = exec.map(&groups, |g| mine_group(pool, g, ctx, cfg.n_pos));
            let mut out = Vec::new();
            for r in per_group {
                out.extend(r?);
            }
            Ok(out)
        }
        PoolMode::Global => {
            let sims = similarity_matrix(pool, ctx, exec)?;
            let ids: Vec<&str> = pool.iter().map(|s| s.sample_id.as_str()).collect();
            if pool.len() < cfg.n_pos + 1 {
                log::warn!(
                    "pool of {} cannot supply {} positives; no triplets",
                    pool.len(),
                    cfg.n_pos
                );
                return Ok(Vec::new());
            }
            let all: Vec<usize> = (0..pool.len()).collect();
            let out = exec.map(&canonical, |&a| {
                let ranked = rank_candidates(a, &all, &ids, &sims);
                let (pos, rest) = ranked.split_at(cfg.n_pos);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ id_hash(ids[a]));
                let k = cfg.global_negatives.min(rest.len());
                let mut picked: Vec<(usize, f64)> =
                    rest.choose_multiple(&mut rng, k).copied().collect();
                picked.sort_by(|x, y| {
                    y.1.partial_cmp(&x.1)
                        .unwrap_or(Ordering::Equal)
                        .then_with(|| ids[x.0].cmp(ids[y.0]))
                });
                Triplet {
                    anchor: ids[a].to_string(),
                    positives: pos.iter().map(|p| ids[p.0].to_string()).collect(),
                    negatives: picked.iter().map(|p| ids[p.0].to_string()).collect(),
                }
            });
            Ok(out)
        }
    }
}

fn mine_group(
    pool: &[Sample],
    group: &[usize],
    ctx: &SimilarityContext<'_>,
    n_pos: usize,
) -> Result<Vec<Triplet>> {
    let members: Vec<Sample> = group.iter().map(|&i| pool[i].clone()).collect();
    if members.len() < n_pos + 1 {
        log::warn!(
            "group of {} cannot supply {} positives; {} anchor(s) skipped",
            members.len(),
            n_pos,
            members.len()
        );
        return Ok(Vec::new());
    }
    let sims = similarity_matrix(&members, ctx, Exec::Sequential)?;
    let ids: Vec<&str> = members.iter().map(|s| s.sample_id.as_str()).collect();
    let local: Vec<usize> = (0..members.len()).collect();
    let mut anchors = local.clone();
    anchors.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    Ok(anchors
        .into_iter()
        .map(|a| {
            let ranked = rank_candidates(a, &local, &ids, &sims);
            let (pos, neg) = ranked.split_at(n_pos);
            Triplet {
                anchor: ids[a].to_string(),
                positives: pos.iter().map(|p| ids[p.0].to_string()).collect(),
                negatives: neg.iter().map(|p| ids[p.0].to_string()).collect(),
            }
        })
        .collect())
}

/// Mine within a single explicit group (no shuffling or partitioning).
pub fn mine_within(
    group: &[Sample],
    ctx: &SimilarityContext<'_>,
    n_pos: usize,
) -> Result<Vec<Triplet>> {
    if n_pos == 0 {
        return Err(Error::config("n_pos", "must be at least 1"));
    }
    check_unique(group)?;
    let idx: Vec<usize> = (0..group.len()).collect();
    mine_group(group, &idx, ctx, n_pos)
}

/// Check that every positive is at least as similar to the anchor as every
/// negative, and that the sets are disjoint and exclude the anchor.
pub fn check_triplet(t: &Triplet, sim: impl Fn(&str, &str) -> Result<f64>) -> Result<()> {
    let pos: HashSet<&str> = t.positives.iter().map(String::as_str).collect();
    if pos.contains(t.anchor.as_str())
        || t.negatives
            .iter()
            .any(|n| n == &t.anchor || pos.contains(n.as_str()))
    {
        return Err(Error::Invariant(format!(
            "triplet for {} has overlapping sets",
            t.anchor
        )));
    }
    let min_pos = t
        .positives
        .iter()
        .map(|p| sim(&t.anchor, p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let max_neg = t
        .negatives
        .iter()
        .map(|n| sim(&t.anchor, n))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if min_pos < max_neg {
        return Err(Error::Invariant(format!(
            "triplet for {}: positive similarity {min_pos} below negative {max_neg}",
            t.anchor
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ItemMetadata;
    use crate::similarity::{EmbeddingTable, SimilarityWeights};

    fn sample(id: &str, history: Vec<u64>, label: u64, text: &str) -> Sample {
        Sample {
            sample_id: id.into(),
            item_id: id.into(),
            target_window: 10,
            first_window: 1,
            history,
            metadata: ItemMetadata {
                item_id: id.into(),
                description_text: text.into(),
                attributes: None,
            },
            label: Some(label),
        }
    }

    fn table(pool: &[Sample]) -> EmbeddingTable {
        EmbeddingTable::from_metadata(pool.iter().map(|s| &s.metadata), 32).unwrap()
    }

    #[test]
    fn one_by_one_matrix() {
        let pool = vec![sample("a", vec![1, 2], 3, "x")];
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        let m = similarity_matrix(&pool, &ctx, Exec::Sequential).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn identical_samples_have_unit_similarity() {
        let mut b = sample("a", vec![1, 2], 3, "red shoe");
        b.sample_id = "b".into();
        let pool = vec![sample("a", vec![1, 2], 3, "red shoe"), b];
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        let m = similarity_matrix(&pool, &ctx, Exec::Parallel).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn positives_are_most_similar() {
        // trend-only weights so the fixture's similarities are easy to read:
        // b matches the anchor exactly, c is far away.
        let pool = vec![
            sample("a", vec![1, 2, 3], 4, ""),
            sample("b", vec![1, 2, 3], 4, ""),
            sample("c", vec![9, 0, 9], 4, ""),
        ];
        let t = table(&pool);
        let w = SimilarityWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            sigma: 1.0,
        };
        let ctx = SimilarityContext::new(w, &t);
        let ts = mine_within(&pool, &ctx, 1).unwrap();
        assert_eq!(ts[0].anchor, "a");
        assert_eq!(ts[0].positives, vec!["b"]);
        assert_eq!(ts[0].negatives, vec!["c"]);
    }

    #[test]
    fn ties_break_by_id() {
        let pool = vec![
            sample("z", vec![1], 1, ""),
            sample("y", vec![1], 1, ""),
            sample("x", vec![1], 1, ""),
        ];
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        let ts = mine_within(&pool, &ctx, 1).unwrap();
        let z = ts.iter().find(|t| t.anchor == "z").unwrap();
        assert_eq!(z.positives, vec!["x"]);
        assert_eq!(z.negatives, vec!["y"]);
    }

    #[test]
    fn batch_cardinalities() {
        let pool: Vec<Sample> = (0..8)
            .map(|i| sample(&format!("s{i}"), vec![i, i + 1], i, "t"))
            .collect();
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        let ts = mine_triplets(&pool, &ctx, &MiningConfig::default(), Exec::Sequential).unwrap();
        assert_eq!(ts.len(), 8);
        for tr in &ts {
            assert_eq!(tr.positives.len(), 2);
            assert_eq!(tr.negatives.len(), 5);
        }
    }

    #[test]
    fn balanced_groups_respect_batch_size() {
        let order: Vec<usize> = (0..17).collect();
        let g = balanced_groups(&order, 8);
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6, 5]);
        assert_eq!(
            balanced_groups(&order[..9], 8)
                .iter()
                .map(Vec::len)
                .collect::<Vec<_>>(),
            vec![5, 4]
        );
        assert!(balanced_groups(&[], 8).is_empty());
    }

    #[test]
    fn undersized_pool_skipped() {
        let pool = vec![sample("a", vec![1], 1, ""), sample("b", vec![2], 1, "")];
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        assert!(mine_within(&pool, &ctx, 2).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = MiningConfig {
            n_pos: 0,
            ..MiningConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::Config { field: "n_pos", .. })
        ));
        let small = MiningConfig {
            batch_size: 2,
            ..MiningConfig::default()
        };
        assert!(small.validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let pool = vec![
            sample("a", vec![1], 1, ""),
            sample("a", vec![2], 1, ""),
            sample("b", vec![2], 1, ""),
        ];
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        assert!(matches!(
            mine_within(&pool, &ctx, 1),
            Err(Error::Duplicate(_))
        ));
    }

    #[test]
    fn global_mode_samples_k_negatives() {
        let pool: Vec<Sample> = (0..12)
            .map(|i| sample(&format!("s{i:02}"), vec![i % 4, i % 3], i, "t"))
            .collect();
        let t = table(&pool);
        let ctx = SimilarityContext::new(SimilarityWeights::default(), &t);
        let cfg = MiningConfig {
            pool_mode: PoolMode::Global,
            seed: 9,
            ..MiningConfig::default()
        };
        let a = mine_triplets(&pool, &ctx, &cfg, Exec::Parallel).unwrap();
        let mut rev = pool.clone();
        rev.reverse();
        let b = mine_triplets(&rev, &ctx, &cfg, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        for tr in &a {
            assert_eq!(tr.positives.len(), 2);
            assert_eq!(tr.negatives.len(), 6);
            check_triplet(tr, |x, y| {
                let sx = pool.iter().find(|s| s.sample_id == x).unwrap();
                let sy = pool.iter().find(|s| s.sample_id == y).unwrap();
                ctx.sim_total(sx, sy)
            })
            .unwrap();
        }
    }
}
