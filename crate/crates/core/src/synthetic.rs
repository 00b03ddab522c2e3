//! Seeded synthetic corpus with a handful of planted items whose popularity
//! grows linearly and dominates every window.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{write_jsonl, InteractionRecord, ItemMetadata, SECONDS_PER_DAY};

/// 2010-01-01T00:00:00Z.
pub const DEFAULT_ORIGIN: i64 = 1_262_304_000;

const VOCAB: &[&str] = &[
    "Comedy",
    "Drama",
    "Thriller",
    "Romance",
    "Documentary",
    "Animated",
    "Kitchen",
    "Garden",
    "Wireless",
    "Leather",
    "Organic",
    "Vintage",
    "Portable",
    "Ceramic",
    "Cotton",
    "Bamboo",
    "Stainless",
    "Handmade",
    "Deluxe",
    "Compact",
    "starring",
    "featuring",
    "designed",
    "classic",
    "family",
    "outdoor",
    "travel",
    "winter",
    "summer",
    "premium",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub items: usize,
    pub windows: u32,
    pub planted: usize,
    pub users: usize,
    pub window_days: u32,
    pub origin: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            items: 50,
            windows: 12,
            planted: 5,
            users: 400,
            window_days: 30,
            origin: DEFAULT_ORIGIN,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// Count of planted item `p` in window `w`.
    pub fn planted_count(&self, p: usize, w: u32) -> usize {
        20 + 4 * w as usize + p
    }

    pub const BACKGROUND_MAX: usize = 8;

    pub fn validate(&self) -> Result<()> {
        if self.planted > self.items {
            return Err(Error::config(
                "planted",
                "cannot exceed the number of items",
            ));
        }
        if self.windows == 0 || self.window_days == 0 {
            return Err(Error::config(
                "windows",
                "need at least one window of at least one day",
            ));
        }
        let peak = self.planted_count(self.planted.saturating_sub(1), self.windows - 1);
        if self.users < peak.max(Self::BACKGROUND_MAX) {
            return Err(Error::config(
                "users",
                format!("need at least {peak} users"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub interactions: Vec<InteractionRecord>,
    pub metadata: Vec<ItemMetadata>,
    pub planted: Vec<String>,
    /// Exact popularity of every item; entry `k` is window `k + 1`.
    pub counts: BTreeMap<String, Vec<usize>>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<String> = (0..cfg.items).map(|i| format!("item_{i:03}")).collect();
    let mut order: Vec<usize> = (0..cfg.items).collect();
    order.shuffle(&mut rng);
    let mut planted_idx = order[..cfg.planted].to_vec();
    planted_idx.sort_unstable();

    let window_secs = cfg.window_days as i64 * SECONDS_PER_DAY;
    let mut counts = BTreeMap::new();
    let mut interactions = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let planted = planted_idx.iter().position(|&p| p == i);
        // most background items exist from the start, the rest appear later
        let first = match planted {
            Some(_) => 0,
            None if rng.gen_bool(0.7) => 0,
            None => rng.gen_range(1..cfg.windows),
        };
        let mut per_window = vec![0; cfg.windows as usize];
        for w in first..cfg.windows {
            let c = match planted {
                Some(p) => cfg.planted_count(p, w),
                None => rng.gen_range(0..=SyntheticConfig::BACKGROUND_MAX),
            };
            per_window[w as usize] = c;
            for u in index::sample(&mut rng, cfg.users, c) {
                let ts = cfg.origin + w as i64 * window_secs + rng.gen_range(0..window_secs);
                interactions.push(InteractionRecord {
                    user_id: format!("user_{u:04}"),
                    item_id: id.clone(),
                    timestamp: ts,
                });
            }
        }
        counts.insert(id.clone(), per_window);
    }
    // pin the first event to the origin so the inferred origin matches it
    if let Some(first) = interactions.iter_mut().min_by_key(|r| r.timestamp) {
        first.timestamp = cfg.origin;
    }
    interactions.sort_by(|a, b| {
        (a.timestamp, &a.user_id, &a.item_id).cmp(&(b.timestamp, &b.user_id, &b.item_id))
    });

    let metadata = ids
        .iter()
        .map(|id| {
            let n = rng.gen_range(4..9);
            let words: Vec<&str> = (0..n)
                .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
                .collect();
            ItemMetadata {
                item_id: id.clone(),
                description_text: format!("{} ({id}).", words.join(" ")),
                attributes: None,
            }
        })
        .collect();

    Ok(SyntheticCorpus {
        interactions,
        metadata,
        planted: planted_idx.into_iter().map(|i| ids[i].clone()).collect(),
        counts,
    })
}

impl SyntheticCorpus {
    /// Write `interactions.jsonl` and `metadata.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inter = dir.join("interactions.jsonl");
        let meta = dir.join("metadata.jsonl");
        write_jsonl(&inter, &self.interactions)?;
        write_jsonl(&meta, &self.metadata)?;
        Ok((inter, meta))
    }
}
