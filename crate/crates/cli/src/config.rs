//! Flat pipeline configuration: TOML file, then `TRENDREC_*` environment
//! variables, then `--set key=value` flags, each layer overriding the last.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trendrec::contrastive::{DEFAULT_DROPOUT, DEFAULT_HIDDEN_DIM, DEFAULT_OUT_DIM, DEFAULT_TAU};
use trendrec::eval::TruthFilter;
use trendrec::ingest::{CountMode, DatasetSplit, WindowConfig, WindowRange};
use trendrec::mining::{
    MiningConfig, PoolMode, DEFAULT_BATCH_SIZE, DEFAULT_GLOBAL_NEGATIVES, DEFAULT_N_POS,
};
use trendrec::scoring::ScorerSpec;
use trendrec::similarity::{SimilarityWeights, TrendMode, DEFAULT_EMBED_DIM, MIN_EMBED_DIM};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "TRENDREC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub interactions: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    /// Precomputed item embeddings; items without one get a hash embedding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// External score file used instead of the built-in scorer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub strict: bool,
    /// 0 uses every core; 1 runs sequentially.
    pub threads: usize,

    pub window_days: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<i64>,
    pub count_mode: CountMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_windows: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_windows: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_windows: Option<[u32; 2]>,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub trend_mode: TrendMode,
    pub embed_dim: usize,

    pub n_pos: usize,
    pub pool_mode: PoolMode,
    pub batch_size: usize,
    pub global_negatives: usize,

    pub tau: f64,
    pub lambda: f64,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,

    pub scorer: String,
    pub scorer_window: usize,
    pub k_values: Vec<usize>,
    /// Window whose ranking is evaluated; defaults to the first test window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_window: Option<u32>,
    pub truth_filter: TruthFilter,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            interactions: PathBuf::from("interactions.jsonl"),
            metadata: None,
            embeddings: None,
            scores: None,
            out_dir: PathBuf::from("out"),
            strict: false,
            threads: 0,
            window_days: 30,
            origin: None,
            count_mode: CountMode::Users,
            train_windows: None,
            val_windows: None,
            test_windows: None,
            alpha: 0.4,
            beta: 0.2,
            gamma: 0.4,
            sigma: 1.0,
            trend_mode: TrendMode::Raw,
            embed_dim: DEFAULT_EMBED_DIM,
            n_pos: DEFAULT_N_POS,
            pool_mode: PoolMode::Batch,
            batch_size: DEFAULT_BATCH_SIZE,
            global_negatives: DEFAULT_GLOBAL_NEGATIVES,
            tau: DEFAULT_TAU,
            lambda: 1.0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            out_dim: DEFAULT_OUT_DIM,
            dropout_rate: DEFAULT_DROPOUT,
            learning_rate: 0.05,
            epochs: 20,
            seed: 42,
            scorer: "linear_trend".into(),
            scorer_window: 3,
            k_values: vec![5, 10],
            eval_window: None,
            truth_filter: TruthFilter::All,
        }
    }
}

/// Offsets added to `seed` so each stage draws from its own stream.
pub mod seed_offset {
    pub const MINE: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = toml::Table::try_from(PipelineConfig::default())
        .expect("default config serializes")
        .keys()
        .cloned()
        .collect();
    for k in [
        "metadata",
        "embeddings",
        "scores",
        "origin",
        "train_windows",
        "val_windows",
        "test_windows",
        "eval_window",
    ] {
        keys.push(k.to_string());
    }
    keys
}

impl PipelineConfig {
    /// Build the effective config from an optional file, the environment and
    /// explicit `key=value` overrides.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|_| CliError::MissingArtifact(p.to_path_buf()))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let known = known_keys();
        for (name, value) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if known.contains(&key) {
                table.insert(key, parse_value(&value));
            } else {
                log::warn!("ignoring {name}: not a config key");
            }
        }
        for (k, v) in overrides {
            table.insert(k.clone(), parse_value(v));
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        WindowConfig::new(self.window_days, self.origin.unwrap_or(0))?;
        self.weights().validate()?;
        self.mining().validate()?;
        if self.embed_dim < MIN_EMBED_DIM {
            return Err(field(
                "embed_dim",
                format!("must be at least {MIN_EMBED_DIM}"),
            ));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(field("tau", "must be positive"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(field("lambda", "must be nonnegative"));
        }
        if self.hidden_dim == 0 {
            return Err(field("hidden_dim", "must be positive"));
        }
        if self.out_dim == 0 {
            return Err(field("out_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(field("dropout_rate", "must be in [0, 1)"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(field("learning_rate", "must be positive"));
        }
        self.scorer_spec()?;
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(field(
                "k_values",
                "must be a non-empty list of positive cutoffs",
            ));
        }
        let ranges = [self.train_windows, self.val_windows, self.test_windows];
        match ranges.iter().filter(|r| r.is_some()).count() {
            0 => {}
            3 => {
                self.explicit_split().expect("all set")?;
            }
            _ => {
                return Err(field(
                    "train_windows",
                    "train_windows, val_windows and test_windows must be set together",
                ))
            }
        }
        Ok(())
    }

    fn explicit_split(&self) -> Option<Result<DatasetSplit, CliError>> {
        let r = |w: [u32; 2]| WindowRange::new(w[0], w[1]);
        match (self.train_windows, self.val_windows, self.test_windows) {
            (Some(a), Some(b), Some(c)) => {
                Some(DatasetSplit::new(r(a), r(b), r(c)).map_err(Into::into))
            }
            _ => None,
        }
    }

    /// Explicit ranges if configured, otherwise the default split over
    /// `n_windows`.
    pub fn split(&self, n_windows: u32) -> Result<DatasetSplit, CliError> {
        match self.explicit_split() {
            Some(s) => s,
            None => Ok(DatasetSplit::default_for(n_windows)?),
        }
    }

    pub fn weights(&self) -> SimilarityWeights {
        SimilarityWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            pool_mode: self.pool_mode,
            batch_size: self.batch_size,
            n_pos: self.n_pos,
            global_negatives: self.global_negatives,
            seed: self.seed.wrapping_add(seed_offset::MINE),
        }
    }

    pub fn scorer_spec(&self) -> Result<ScorerSpec, CliError> {
        Ok(ScorerSpec::parse(&self.scorer, self.scorer_window)?)
    }
}

fn field(name: &'static str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("{name}: {}", reason.into()))
}
