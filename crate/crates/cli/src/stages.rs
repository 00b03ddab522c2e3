//! Pipeline stages. Each reads its predecessors' artifacts from the output
//! directory and writes its own, plus a manifest under `manifests/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trendrec::contrastive::{
    raw_embedding, softmax, supervised_ce, train_head, truth_distribution, write_loss_trace,
    FeatureScaler, ProjectionHead, TrainConfig, TREND_FEATURES,
};
use trendrec::eval::{evaluate, EvalRun};
use trendrec::ingest::{
    check_leakage, make_samples, parse_interactions, parse_metadata, read_jsonl, read_samples,
    series_from_windowed, user_truth, window_records, write_jsonl, write_samples, CountMode,
    DatasetSplit, InputFormat, ItemMetadata, PopularitySeries, Sample, WindowConfig,
    WindowedInteraction,
};
use trendrec::mining::{mine_triplets, Triplet};
use trendrec::scoring::{
    load_scores, predict, rank_window, read_ranked_tsv, score_samples, write_predictions,
    write_ranked_tsv, write_scores, Explainer, Prediction, ScoreRecord,
};
use trendrec::similarity::{write_pairwise_tsv, EmbeddingTable, SimilarityContext};
use trendrec::Exec;

use crate::config::{seed_offset, PipelineConfig};
use crate::error::CliError;

pub type StageResult<T = ()> = Result<T, CliError>;

pub mod files {
    pub const WINDOWED: &str = "windowed.jsonl";
    pub const SERIES: &str = "series.jsonl";
    pub const ITEMS: &str = "items.jsonl";
    pub const INGEST: &str = "ingest.json";
    pub const SPLIT: &str = "split.json";
    pub const SAMPLES_TRAIN: &str = "samples_train.jsonl";
    pub const SAMPLES_VAL: &str = "samples_val.jsonl";
    pub const SAMPLES_TEST: &str = "samples_test.jsonl";
    pub const EMBEDDINGS: &str = "embeddings.jsonl";
    pub const SIMILARITY: &str = "similarity.tsv";
    pub const TRIPLETS: &str = "triplets.jsonl";
    pub const HEAD: &str = "head.json";
    pub const SCALER: &str = "scaler.json";
    pub const LOSS_TRACE: &str = "loss_trace.csv";
    pub const HEAD_SUMMARY: &str = "head_summary.json";
    pub const SCORES: &str = "scores.jsonl";
    pub const RANKED: &str = "ranked.tsv";
    pub const OBJECTIVE: &str = "objective.json";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const METRICS: &str = "metrics.json";
    pub const MANIFESTS: &str = "manifests";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageName {
    Ingest,
    Split,
    Similarity,
    Mine,
    TrainHead,
    Score,
    Explain,
    Evaluate,
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::Ingest,
        StageName::Split,
        StageName::Similarity,
        StageName::Mine,
        StageName::TrainHead,
        StageName::Score,
        StageName::Explain,
        StageName::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Split => "split",
            StageName::Similarity => "similarity",
            StageName::Mine => "mine",
            StageName::TrainHead => "train-head",
            StageName::Score => "score",
            StageName::Explain => "explain",
            StageName::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    stage: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

/// Bookkeeping for one stage run: checks inputs exist, hashes them and
/// records outputs.
pub struct Stage<'a> {
    name: StageName,
    cfg: &'a PipelineConfig,
    out: &'a Path,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> StageResult<String> {
    let bytes = fs::read(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl<'a> Stage<'a> {
    fn new(name: StageName, cfg: &'a PipelineConfig) -> StageResult<Self> {
        let out = cfg.out_dir.as_path();
        fs::create_dir_all(out.join(files::MANIFESTS)).map_err(|e| trendrec::Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
        log::info!("stage {}: starting", name.as_str());
        Ok(Self {
            name,
            cfg,
            out,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Path of an input; it must exist.
    fn input(&mut self, path: PathBuf) -> StageResult<PathBuf> {
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path));
        }
        let hash = sha256_file(&path)?;
        log::info!(
            "stage {}: input {} sha256={hash}",
            self.name.as_str(),
            path.display()
        );
        self.inputs.insert(path.display().to_string(), hash);
        Ok(path)
    }

    fn artifact(&mut self, name: &str) -> StageResult<PathBuf> {
        self.input(self.out.join(name))
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self) -> StageResult {
        let dir = self.out.join(files::MANIFESTS);
        let stage = self.name.as_str();
        let config = self.cfg.to_toml();
        log::info!("stage {stage}: effective config\n{config}");
        write_text(&dir.join(format!("{stage}.config.toml")), &config)?;
        let manifest = Manifest {
            stage,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(trendrec::Error::from)?;
        write_text(&dir.join(format!("{stage}.manifest.json")), &(json + "\n"))?;
        log::info!("stage {stage}: done");
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> StageResult {
    fs::write(path, text).map_err(|e| {
        CliError::Core(trendrec::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StageResult {
    let json = serde_json::to_string_pretty(value).map_err(trendrec::Error::from)?;
    write_text(path, &(json + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> StageResult<T> {
    let text =
        fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
    Ok(serde_json::from_str(&text).map_err(trendrec::Error::from)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub origin: i64,
    pub window_days: u32,
    pub n_windows: u32,
    pub count_mode: CountMode,
    pub records: usize,
    pub malformed: usize,
    pub items: usize,
}

pub fn exec_for(cfg: &PipelineConfig) -> Exec {
    if cfg.threads == 1 {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

pub fn ingest(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Ingest, cfg)?;
    let exec = exec_for(cfg);
    let path = st.input(cfg.interactions.clone())?;
    let report = parse_interactions(&path, InputFormat::from_path(&path), cfg.strict)?;
    if report.records.is_empty() {
        return Err(CliError::Core(trendrec::Error::Invalid(format!(
            "{}: no valid interaction records",
            path.display()
        ))));
    }
    let wc = match cfg.origin {
        Some(o) => WindowConfig::new(cfg.window_days, o)?,
        None => WindowConfig::from_records(&report.records, cfg.window_days)?,
    };
    wc.validate_against(&report.records)?;
    let windowed = window_records(&report.records, &wc, cfg.count_mode)?;
    let series = series_from_windowed(&windowed, exec);
    let n_windows = windowed.iter().map(|w| w.window).max().unwrap_or(0);

    let mut metadata = match &cfg.metadata {
        Some(p) => parse_metadata(&st.input(p.clone())?)?,
        None => BTreeMap::new(),
    };
    for id in series.keys() {
        metadata
            .entry(id.clone())
            .or_insert_with(|| ItemMetadata::cold(id.clone()));
    }

    write_jsonl(&st.output(files::WINDOWED), &windowed)?;
    write_jsonl(&st.output(files::SERIES), series.values())?;
    write_jsonl(&st.output(files::ITEMS), metadata.values())?;
    let summary = IngestSummary {
        origin: wc.origin,
        window_days: wc.window_days,
        n_windows,
        count_mode: cfg.count_mode,
        records: report.records.len(),
        malformed: report.malformed,
        items: series.len(),
    };
    write_json(&st.output(files::INGEST), &summary)?;
    log::info!(
        "ingest: {} records ({} malformed), {} items, {} windows",
        summary.records,
        summary.malformed,
        summary.items,
        n_windows
    );
    st.finish()
}

fn read_items(st: &mut Stage<'_>) -> StageResult<BTreeMap<String, ItemMetadata>> {
    let rows: Vec<ItemMetadata> = read_jsonl(&st.artifact(files::ITEMS)?)?;
    Ok(rows.into_iter().map(|m| (m.item_id.clone(), m)).collect())
}

pub fn split(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Split, cfg)?;
    let summary: IngestSummary = read_json(&st.artifact(files::INGEST)?)?;
    let series: Vec<PopularitySeries> = read_jsonl(&st.artifact(files::SERIES)?)?;
    let series: BTreeMap<String, PopularitySeries> =
        series.into_iter().map(|s| (s.item_id.clone(), s)).collect();
    let items = read_items(&mut st)?;
    let split = cfg.split(summary.n_windows)?;
    if split.test.end > summary.n_windows {
        log::warn!(
            "test windows end at {} but the corpus has {} window(s)",
            split.test.end,
            summary.n_windows
        );
    }
    let samples = make_samples(&series, &items, &split)?;
    check_leakage(&samples)?;
    write_json(&st.output(files::SPLIT), &split)?;
    write_samples(&st.output(files::SAMPLES_TRAIN), &samples.train)?;
    write_samples(&st.output(files::SAMPLES_VAL), &samples.val)?;
    write_samples(&st.output(files::SAMPLES_TEST), &samples.test)?;
    log::info!(
        "split: {} train, {} val, {} test samples",
        samples.train.len(),
        samples.val.len(),
        samples.test.len()
    );
    st.finish()
}

fn read_split_samples(
    st: &mut Stage<'_>,
    items: &BTreeMap<String, ItemMetadata>,
    name: &str,
) -> StageResult<Vec<Sample>> {
    Ok(read_samples(&st.artifact(name)?, items)?)
}

pub fn similarity(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Similarity, cfg)?;
    let items = read_items(&mut st)?;
    let train = read_split_samples(&mut st, &items, files::SAMPLES_TRAIN)?;
    let table = match &cfg.embeddings {
        Some(p) => {
            let mut t = EmbeddingTable::load(&st.input(p.clone())?)?;
            let added = t.fill_missing(items.values())?;
            if added > 0 {
                log::warn!("{added} item(s) lack a precomputed embedding; using hash embeddings");
            }
            t
        }
        None => EmbeddingTable::from_metadata(items.values(), cfg.embed_dim)?,
    };
    table.save(&st.output(files::EMBEDDINGS))?;
    let ctx = SimilarityContext::new(cfg.weights(), &table).with_trend_mode(cfg.trend_mode);
    write_pairwise_tsv(&st.output(files::SIMILARITY), &train, &ctx)?;
    st.finish()
}

pub fn mine(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Mine, cfg)?;
    let items = read_items(&mut st)?;
    let train = read_split_samples(&mut st, &items, files::SAMPLES_TRAIN)?;
    let table = EmbeddingTable::load(&st.artifact(files::EMBEDDINGS)?)?;
    let ctx = SimilarityContext::new(cfg.weights(), &table).with_trend_mode(cfg.trend_mode);
    let triplets = mine_triplets(&train, &ctx, &cfg.mining(), exec_for(cfg))?;
    log::info!(
        "mine: {} triplets from {} samples",
        triplets.len(),
        train.len()
    );
    write_jsonl(&st.output(files::TRIPLETS), &triplets)?;
    st.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSummary {
    pub triplets: usize,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn train(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::TrainHead, cfg)?;
    let items = read_items(&mut st)?;
    let train = read_split_samples(&mut st, &items, files::SAMPLES_TRAIN)?;
    let table = EmbeddingTable::load(&st.artifact(files::EMBEDDINGS)?)?;
    let triplets: Vec<Triplet> = read_jsonl(&st.artifact(files::TRIPLETS)?)?;

    let scaler = FeatureScaler::fit(&train);
    let exec = exec_for(cfg);
    let raws = exec.try_map(&train, |s| raw_embedding(s, &table, &scaler))?;
    let embeddings: BTreeMap<String, Vec<f64>> = train
        .iter()
        .map(|s| s.sample_id.clone())
        .zip(raws)
        .collect();
    let head = ProjectionHead::new(
        table.dim() + TREND_FEATURES,
        cfg.hidden_dim,
        cfg.out_dim,
        cfg.dropout_rate,
        cfg.seed.wrapping_add(seed_offset::HEAD_INIT),
    )?;
    let tc = TrainConfig {
        tau: cfg.tau,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed.wrapping_add(seed_offset::DROPOUT),
    };
    let outcome = train_head(head, &triplets, &embeddings, &tc, exec)?;
    let final_loss = outcome
        .trace
        .last()
        .copied()
        .unwrap_or(outcome.initial_loss);
    log::info!(
        "train-head: loss {:.6} -> {:.6} over {} epoch(s)",
        outcome.initial_loss,
        final_loss,
        cfg.epochs
    );
    outcome.head.save(&st.output(files::HEAD))?;
    write_json(&st.output(files::SCALER), &scaler)?;
    write_loss_trace(
        &st.output(files::LOSS_TRACE),
        outcome.initial_loss,
        &outcome.trace,
    )?;
    write_json(
        &st.output(files::HEAD_SUMMARY),
        &HeadSummary {
            triplets: triplets.len(),
            epochs: cfg.epochs,
            initial_loss: outcome.initial_loss,
            final_loss,
        },
    )?;
    st.finish()
}

fn eval_window(cfg: &PipelineConfig, split: &DatasetSplit) -> StageResult<u32> {
    let w = cfg.eval_window.unwrap_or(split.test.start);
    if !split.test.contains(w) {
        return Err(CliError::Config(format!(
            "eval_window: {w} is outside test_windows [{}, {}]",
            split.test.start, split.test.end
        )));
    }
    Ok(w)
}

fn in_window(samples: &[Sample], w: u32) -> Vec<Sample> {
    samples
        .iter()
        .filter(|s| s.target_window == w)
        .cloned()
        .collect()
}

#[derive(Debug, Serialize)]
struct Objective {
    window: u32,
    supervised: f64,
    contrastive: Option<f64>,
    lambda: f64,
    total: f64,
}

pub fn score(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Score, cfg)?;
    let items = read_items(&mut st)?;
    let split: DatasetSplit = read_json(&st.artifact(files::SPLIT)?)?;
    let test = read_split_samples(&mut st, &items, files::SAMPLES_TEST)?;
    let window = eval_window(cfg, &split)?;
    let exec = exec_for(cfg);

    let (scored, scores) = match &cfg.scores {
        Some(p) => {
            let target = in_window(&test, window);
            let s = load_scores(&st.input(p.clone())?, &target)?;
            (target, s)
        }
        None => {
            let s = score_samples(&cfg.scorer_spec()?, &test, exec);
            (test, s)
        }
    };
    write_scores(&st.output(files::SCORES), &scored, &scores)?;

    let (target, target_scores): (Vec<&Sample>, Vec<f64>) = scored
        .iter()
        .zip(&scores)
        .filter(|(s, _)| s.target_window == window)
        .map(|(s, &v)| (s, v))
        .unzip();
    let preds: Vec<Prediction> = target
        .iter()
        .zip(&target_scores)
        .map(|(s, &v)| bare_prediction(s, v))
        .collect();
    let ranked = rank_window(&preds, preds.len())?;
    write_ranked_tsv(&st.output(files::RANKED), &ranked)?;

    if !target.is_empty() {
        let labels: Vec<u64> = target.iter().map(|s| s.label.unwrap_or(0)).collect();
        let supervised = supervised_ce(&truth_distribution(&labels), &softmax(&target_scores))?;
        let summary_path = cfg.out_dir.join(files::HEAD_SUMMARY);
        let contrastive = if summary_path.is_file() {
            let summary: HeadSummary = read_json(&st.input(summary_path)?)?;
            Some(summary.final_loss)
        } else {
            None
        };
        let objective = Objective {
            window,
            supervised,
            contrastive,
            lambda: cfg.lambda,
            total: trendrec::contrastive::combined_loss(
                supervised,
                contrastive.unwrap_or(0.0),
                cfg.lambda,
            ),
        };
        write_json(&st.output(files::OBJECTIVE), &objective)?;
    }
    st.finish()
}

fn bare_prediction(s: &Sample, score: f64) -> Prediction {
    Prediction {
        sample_id: s.sample_id.clone(),
        item_id: s.item_id.clone(),
        target_window: s.target_window,
        predicted_score: score,
        rank: None,
        explanation: trendrec::scoring::ExplanationRecord {
            trend_section: String::new(),
            feature_section: String::new(),
            integration_section: String::new(),
        },
    }
}

pub fn explain(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Explain, cfg)?;
    let items = read_items(&mut st)?;
    let test = read_split_samples(&mut st, &items, files::SAMPLES_TEST)?;
    let rows: Vec<ScoreRecord> = read_jsonl(&st.artifact(files::SCORES)?)?;
    let by_id: BTreeMap<&str, &Sample> = test.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut scores = Vec::with_capacity(rows.len());
    for r in &rows {
        let s = by_id
            .get(r.sample_id.as_str())
            .ok_or_else(|| trendrec::Error::UnknownSample(r.sample_id.clone()))?;
        samples.push((*s).clone());
        scores.push(r.score);
    }
    let explainer = Explainer {
        embed_dim: cfg.embed_dim,
    };
    let mut preds = predict(&samples, &scores, &explainer, exec_for(cfg))?;
    // ranks are assigned within each target window
    let windows: BTreeSet<u32> = preds.iter().map(|p| p.target_window).collect();
    for w in windows {
        let group: Vec<Prediction> = preds
            .iter()
            .filter(|p| p.target_window == w)
            .cloned()
            .collect();
        let ranked = rank_window(&group, group.len())?;
        let rank_of: BTreeMap<&str, usize> = ranked
            .iter()
            .map(|r| (r.item_id.as_str(), r.rank))
            .collect();
        for p in preds.iter_mut().filter(|p| p.target_window == w) {
            p.rank = Some(rank_of[p.item_id.as_str()]);
        }
    }
    write_predictions(&st.output(files::PREDICTIONS), &preds)?;
    st.finish()
}

pub fn eval(cfg: &PipelineConfig) -> StageResult {
    let mut st = Stage::new(StageName::Evaluate, cfg)?;
    let items = read_items(&mut st)?;
    let split: DatasetSplit = read_json(&st.artifact(files::SPLIT)?)?;
    let test = read_split_samples(&mut st, &items, files::SAMPLES_TEST)?;
    let windowed: Vec<WindowedInteraction> = read_jsonl(&st.artifact(files::WINDOWED)?)?;
    let window = eval_window(cfg, &split)?;
    let target = in_window(&test, window);

    let ranked_list: Vec<String> = match &cfg.scores {
        Some(p) => {
            let scores = load_scores(&st.input(p.clone())?, &target)?;
            let preds: Vec<Prediction> = target
                .iter()
                .zip(&scores)
                .map(|(s, &v)| bare_prediction(s, v))
                .collect();
            rank_window(&preds, preds.len())?
                .into_iter()
                .map(|r| r.item_id)
                .collect()
        }
        None => read_ranked_tsv(&st.artifact(files::RANKED)?)?
            .into_iter()
            .map(|r| r.item_id)
            .collect(),
    };
    let cold: BTreeSet<String> = target
        .iter()
        .filter(|s| s.is_cold_start())
        .map(|s| s.item_id.clone())
        .collect();
    let run = EvalRun {
        ranked_list,
        user_truth: cfg.truth_filter.apply(user_truth(&windowed, window), &cold),
        item_truth: target
            .iter()
            .map(|s| (s.item_id.clone(), s.label.unwrap_or(0)))
            .collect(),
        k_values: cfg.k_values.clone(),
    };
    let report = evaluate(&run, exec_for(cfg))?;
    log::info!(
        "evaluate: window {window}, {} users, {} items",
        report.users,
        report.items
    );
    report.save(&st.output(files::METRICS))?;
    st.finish()
}

pub fn run(stage: StageName, cfg: &PipelineConfig) -> StageResult {
    match stage {
        StageName::Ingest => ingest(cfg),
        StageName::Split => split(cfg),
        StageName::Similarity => similarity(cfg),
        StageName::Mine => mine(cfg),
        StageName::TrainHead => train(cfg),
        StageName::Score => score(cfg),
        StageName::Explain => explain(cfg),
        StageName::Evaluate => eval(cfg),
    }
}

pub fn run_all(cfg: &PipelineConfig) -> StageResult {
    for stage in StageName::ALL {
        run(stage, cfg)?;
    }
    Ok(())
}
