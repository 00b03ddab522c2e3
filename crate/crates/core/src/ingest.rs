//! Interaction log ingestion, windowing and temporal sample construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl InteractionRecord {
    fn is_valid(&self) -> bool {
        self.timestamp >= 0 && !self.user_id.is_empty() && !self.item_id.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub item_id: String,
    #[serde(default)]
    pub description_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BTreeMap<String, String>>,
}

impl ItemMetadata {
    pub fn cold(item_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Guess from the file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub records: Vec<InteractionRecord>,
    pub malformed: usize,
    /// 1-based line numbers of malformed lines (header is line 1 for CSV).
    pub malformed_lines: Vec<usize>,
}

/// Parse an interaction log. Malformed lines (bad syntax, missing fields,
/// negative timestamps, empty ids) are counted; with `strict` any malformed
/// line is fatal, otherwise a warning is logged.
pub fn parse_interactions(path: &Path, format: InputFormat, strict: bool) -> Result<ParseReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report = match format {
        InputFormat::Jsonl => parse_jsonl_records(&text),
        InputFormat::Csv => parse_csv_records(&text),
    };
    if report.malformed > 0 {
        if strict {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                malformed: report.malformed,
                first_line: report.malformed_lines[0],
            });
        }
        log::warn!(
            "{}: skipped {} malformed line(s)",
            path.display(),
            report.malformed
        );
    }
    Ok(report)
}

fn parse_jsonl_records(text: &str) -> ParseReport {
    let mut report = ParseReport::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<InteractionRecord>(line) {
            Ok(rec) if rec.is_valid() => report.records.push(rec),
            _ => {
                report.malformed += 1;
                report.malformed_lines.push(idx + 1);
            }
        }
    }
    report
}

fn parse_csv_records(text: &str) -> ParseReport {
    let mut report = ParseReport::default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for row in reader.deserialize::<InteractionRecord>() {
        match row {
            Ok(rec) if rec.is_valid() => report.records.push(rec),
            Ok(_) | Err(_) => {
                report.malformed += 1;
                // position() is unavailable on some deserialize errors; count
                // data rows instead (header is line 1).
                report
                    .malformed_lines
                    .push(report.records.len() + report.malformed + 1);
            }
        }
    }
    report
}

/// Read item metadata JSONL. Duplicate item ids are rejected.
pub fn parse_metadata(path: &Path) -> Result<BTreeMap<String, ItemMetadata>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let meta: ItemMetadata = serde_json::from_str(line)
            .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        if meta.item_id.is_empty() {
            return Err(Error::Invalid(format!(
                "{}:{}: empty item_id",
                path.display(),
                idx + 1
            )));
        }
        if out.contains_key(&meta.item_id) {
            return Err(Error::Duplicate(meta.item_id));
        }
        out.insert(meta.item_id.clone(), meta);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_days: u32,
    /// Epoch seconds at which window 1 starts.
    pub origin: i64,
}

impl WindowConfig {
    pub fn new(window_days: u32, origin: i64) -> Result<Self> {
        if window_days == 0 {
            return Err(Error::config("window_days", "must be at least 1"));
        }
        Ok(Self {
            window_days,
            origin,
        })
    }

    /// Origin at midnight UTC of the earliest event, 30-day windows.
    pub fn from_records(records: &[InteractionRecord], window_days: u32) -> Result<Self> {
        let min = records.iter().map(|r| r.timestamp).min().unwrap_or(0);
        Self::new(window_days, min - min.rem_euclid(SECONDS_PER_DAY))
    }

    pub fn window_seconds(&self) -> i64 {
        i64::from(self.window_days) * SECONDS_PER_DAY
    }

    /// Check `origin <= every timestamp`.
    pub fn validate_against(&self, records: &[InteractionRecord]) -> Result<()> {
        match records.iter().map(|r| r.timestamp).min() {
            Some(min) if min < self.origin => Err(Error::BeforeOrigin {
                timestamp: min,
                origin: self.origin,
            }),
            _ => Ok(()),
        }
    }
}

/// 1-based index of the window containing `timestamp`.
pub fn window_index(timestamp: i64, cfg: &WindowConfig) -> Result<u32> {
    if timestamp < cfg.origin {
        return Err(Error::BeforeOrigin {
            timestamp,
            origin: cfg.origin,
        });
    }
    let idx = (timestamp - cfg.origin) / cfg.window_seconds() + 1;
    u32::try_from(idx).map_err(|_| Error::Invalid(format!("window index {idx} overflows")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Distinct users per (item, window).
    #[default]
    Users,
    /// Raw event count per (item, window).
    Events,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularitySeries {
    pub item_id: String,
    pub first_window: u32,
    /// `counts[k]` is the popularity in window `first_window + k`.
    pub counts: Vec<u64>,
}

impl PopularitySeries {
    pub fn last_window(&self) -> u32 {
        self.first_window + self.counts.len() as u32 - 1
    }

    /// Popularity in `window`; zero outside the observed range.
    pub fn count_at(&self, window: u32) -> u64 {
        if window < self.first_window {
            return 0;
        }
        self.counts
            .get((window - self.first_window) as usize)
            .copied()
            .unwrap_or(0)
    }

    /// Dense history for windows `first_window..before`, zero padded past the
    /// last observed window.
    pub fn history_before(&self, before: u32) -> Vec<u64> {
        (self.first_window..before)
            .map(|w| self.count_at(w))
            .collect()
    }
}

/// One (user, item, window) observation after windowing. With distinct-user
/// counting these are deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowedInteraction {
    pub user_id: String,
    pub item_id: String,
    pub window: u32,
}

/// Map every record to its window. Output is sorted and, for
/// [`CountMode::Users`], deduplicated.
pub fn window_records(
    records: &[InteractionRecord],
    cfg: &WindowConfig,
    mode: CountMode,
) -> Result<Vec<WindowedInteraction>> {
    let mut out = records
        .iter()
        .map(|r| {
            Ok(WindowedInteraction {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                window: window_index(r.timestamp, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    if mode == CountMode::Users {
        out.dedup();
    }
    Ok(out)
}

/// Aggregate records into per-item popularity series.
pub fn build_series(
    records: &[InteractionRecord],
    cfg: &WindowConfig,
    mode: CountMode,
    exec: Exec,
) -> Result<BTreeMap<String, PopularitySeries>> {
    let windowed = window_records(records, cfg, mode)?;
    Ok(series_from_windowed(&windowed, exec))
}

pub fn series_from_windowed(
    windowed: &[WindowedInteraction],
    exec: Exec,
) -> BTreeMap<String, PopularitySeries> {
    let mut by_item: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for w in windowed {
        by_item.entry(&w.item_id).or_default().push(w.window);
    }
    let groups: Vec<(&str, Vec<u32>)> = by_item.into_iter().collect();
    let series = exec.map(&groups, |(item, windows)| {
        let first = *windows.iter().min().expect("non-empty group");
        let last = *windows.iter().max().expect("non-empty group");
        let mut counts = vec![0u64; (last - first + 1) as usize];
        for &w in windows {
            counts[(w - first) as usize] += 1;
        }
        PopularitySeries {
            item_id: (*item).to_string(),
            first_window: first,
            counts,
        }
    });
    series.into_iter().map(|s| (s.item_id.clone(), s)).collect()
}

/// Inclusive range of windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRange {
    pub start: u32,
    pub end: u32,
}

impl WindowRange {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, w: u32) -> bool {
        self.start <= w && w <= self.end
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: WindowRange,
    pub val: WindowRange,
    pub test: WindowRange,
}

impl DatasetSplit {
    pub fn new(train: WindowRange, val: WindowRange, test: WindowRange) -> Result<Self> {
        let split = Self { train, val, test };
        split.validate()?;
        Ok(split)
    }

    /// Last window is test, second-to-last validation, the rest training.
    pub fn default_for(n_windows: u32) -> Result<Self> {
        if n_windows < 3 {
            return Err(Error::config(
                "split",
                format!("default split needs at least 3 windows, corpus has {n_windows}"),
            ));
        }
        Self::new(
            WindowRange::new(1, n_windows - 2),
            WindowRange::new(n_windows - 1, n_windows - 1),
            WindowRange::new(n_windows, n_windows),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("train_windows", self.train),
            ("val_windows", self.val),
            ("test_windows", self.test),
        ] {
            if r.start == 0 || r.start > r.end {
                return Err(Error::Config {
                    field: name,
                    reason: format!("invalid range [{}, {}]", r.start, r.end),
                });
            }
        }
        if self.val.start != self.train.end + 1 {
            return Err(Error::config(
                "val_windows",
                "must start immediately after train_windows",
            ));
        }
        if self.test.start != self.val.end + 1 {
            return Err(Error::config(
                "test_windows",
                "must start immediately after val_windows",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub item_id: String,
    pub target_window: u32,
    pub first_window: u32,
    /// Popularity for windows `first_window..target_window`.
    pub history: Vec<u64>,
    pub metadata: ItemMetadata,
    pub label: Option<u64>,
}

impl Sample {
    pub fn make_id(item_id: &str, target_window: u32) -> String {
        format!("{item_id}@{target_window}")
    }

    pub fn is_cold_start(&self) -> bool {
        self.history.is_empty()
    }

    /// Popularity in the window just before the target (0 for cold start).
    pub fn last_count(&self) -> u64 {
        self.history.last().copied().unwrap_or(0)
    }
}

/// Flat on-disk form of a [`Sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub item_id: String,
    pub target_window: u32,
    pub history: Vec<u64>,
    pub first_window: u32,
    pub description_text: String,
    pub label: Option<u64>,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            sample_id: s.sample_id.clone(),
            item_id: s.item_id.clone(),
            target_window: s.target_window,
            history: s.history.clone(),
            first_window: s.first_window,
            description_text: s.metadata.description_text.clone(),
            label: s.label,
        }
    }
}

impl SampleRecord {
    pub fn into_sample(self, metadata: Option<&ItemMetadata>) -> Sample {
        let mut meta = metadata
            .cloned()
            .unwrap_or_else(|| ItemMetadata::cold(self.item_id.clone()));
        meta.description_text = self.description_text;
        Sample {
            sample_id: self.sample_id,
            item_id: self.item_id,
            target_window: self.target_window,
            first_window: self.first_window,
            history: self.history,
            metadata: meta,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSamples {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitSamples {
    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

fn samples_for_range(
    series: &BTreeMap<String, PopularitySeries>,
    metadata: &BTreeMap<String, ItemMetadata>,
    range: WindowRange,
) -> Vec<Sample> {
    let mut out = Vec::new();
    for target in range.iter() {
        for s in series.values() {
            if s.first_window > target {
                continue;
            }
            let meta = metadata
                .get(&s.item_id)
                .cloned()
                .unwrap_or_else(|| ItemMetadata::cold(s.item_id.clone()));
            out.push(Sample {
                sample_id: Sample::make_id(&s.item_id, target),
                item_id: s.item_id.clone(),
                target_window: target,
                first_window: s.first_window,
                history: s.history_before(target),
                metadata: meta,
                label: Some(s.count_at(target)),
            });
        }
    }
    out
}

/// Emit one sample per (item, target window) for every window of each split
/// range in which the item already exists. Ordered by (window, item id).
pub fn make_samples(
    series: &BTreeMap<String, PopularitySeries>,
    metadata: &BTreeMap<String, ItemMetadata>,
    split: &DatasetSplit,
) -> Result<SplitSamples> {
    split.validate()?;
    let missing = series
        .keys()
        .filter(|id| !metadata.contains_key(*id))
        .count();
    if missing > 0 {
        log::warn!("{missing} item(s) have no metadata; using empty descriptions");
    }
    Ok(SplitSamples {
        train: samples_for_range(series, metadata, split.train),
        val: samples_for_range(series, metadata, split.val),
        test: samples_for_range(series, metadata, split.test),
    })
}

/// Assert the temporal ordering of the emitted splits and that no history
/// reaches its own target window.
pub fn check_leakage(samples: &SplitSamples) -> Result<()> {
    fn bounds(xs: &[Sample]) -> Option<(u32, u32)> {
        let min = xs.iter().map(|s| s.target_window).min()?;
        let max = xs.iter().map(|s| s.target_window).max()?;
        Some((min, max))
    }
    let tr = bounds(&samples.train);
    let va = bounds(&samples.val);
    let te = bounds(&samples.test);
    let ordered = |a: Option<(u32, u32)>, b: Option<(u32, u32)>| match (a, b) {
        (Some((_, amax)), Some((bmin, _))) => amax < bmin,
        _ => true,
    };
    if !ordered(tr, va) || !ordered(va, te) || !ordered(tr, te) {
        return Err(Error::Invariant(
            "split target windows overlap or are out of order".into(),
        ));
    }
    for s in samples.all() {
        let hist_end = s.first_window as usize + s.history.len();
        if hist_end > s.target_window as usize {
            return Err(Error::Invariant(format!(
                "sample {} history reaches its target window",
                s.sample_id
            )));
        }
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_jsonl(path, samples.iter().map(SampleRecord::from))
}

pub fn read_samples(path: &Path, metadata: &BTreeMap<String, ItemMetadata>) -> Result<Vec<Sample>> {
    let records: Vec<SampleRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.sample_id.clone()) {
                return Err(Error::Duplicate(r.sample_id));
            }
            let meta = metadata.get(&r.item_id);
            Ok(r.into_sample(meta))
        })
        .collect()
}

/// Users and their item sets in one window.
pub fn user_truth(
    windowed: &[WindowedInteraction],
    window: u32,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for w in windowed.iter().filter(|w| w.window == window) {
        out.entry(w.user_id.clone())
            .or_default()
            .insert(w.item_id.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, ts: i64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            timestamp: ts,
        }
    }

    const ORIGIN: i64 = 1_262_304_000;

    fn cfg() -> WindowConfig {
        WindowConfig::new(30, ORIGIN).unwrap()
    }

    fn at(window: u32) -> i64 {
        ORIGIN + i64::from(window - 1) * 30 * SECONDS_PER_DAY + 3600
    }

    fn tmp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_single_jsonl_line() {
        let f = tmp(
            "{\"user_id\":\"u1\",\"item_id\":\"m1\",\"timestamp\":1262304000}\n",
            ".jsonl",
        );
        let r = parse_interactions(f.path(), InputFormat::Jsonl, true).unwrap();
        assert_eq!(r.records, vec![rec("u1", "m1", 1_262_304_000)]);
        assert_eq!(r.malformed, 0);
    }

    #[test]
    fn empty_file_is_empty() {
        let f = tmp("", ".jsonl");
        let r = parse_interactions(f.path(), InputFormat::Jsonl, true).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.malformed, 0);
    }

    #[test]
    fn malformed_lines_counted() {
        let body = "{\"user_id\":\"u1\",\"item_id\":\"m1\",\"timestamp\":5}\n\
                    {\"user_id\":\"u2\",\"item_id\":\"m1\"}\n\
                    {\"user_id\":\"u3\",\"item_id\":\"m2\",\"timestamp\":7}\n";
        let f = tmp(body, ".jsonl");
        let r = parse_interactions(f.path(), InputFormat::Jsonl, false).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.malformed, 1);
        assert_eq!(r.malformed_lines, vec![2]);
        let err = parse_interactions(f.path(), InputFormat::Jsonl, true).unwrap_err();
        assert!(matches!(
            err,
            Error::Malformed {
                malformed: 1,
                first_line: 2,
                ..
            }
        ));
    }

    #[test]
    fn negative_timestamp_and_empty_id_are_malformed() {
        let body = "{\"user_id\":\"\",\"item_id\":\"m1\",\"timestamp\":5}\n\
                    {\"user_id\":\"u\",\"item_id\":\"m1\",\"timestamp\":-1}\n";
        let f = tmp(body, ".jsonl");
        let r = parse_interactions(f.path(), InputFormat::Jsonl, false).unwrap();
        assert_eq!(r.malformed, 2);
    }

    #[test]
    fn parses_csv() {
        let f = tmp(
            "user_id,item_id,timestamp\nu1,m1,10\nu2,m2,oops\nu3,m3,12\n",
            ".csv",
        );
        assert_eq!(InputFormat::from_path(f.path()), InputFormat::Csv);
        let r = parse_interactions(f.path(), InputFormat::Csv, false).unwrap();
        assert_eq!(r.records, vec![rec("u1", "m1", 10), rec("u3", "m3", 12)]);
        assert_eq!(r.malformed, 1);
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = parse_interactions(Path::new("/nonexistent/x.jsonl"), InputFormat::Jsonl, false)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn window_boundaries() {
        let c = cfg();
        assert_eq!(window_index(ORIGIN, &c).unwrap(), 1);
        assert_eq!(
            window_index(ORIGIN + 30 * SECONDS_PER_DAY - 1, &c).unwrap(),
            1
        );
        assert_eq!(window_index(ORIGIN + 30 * SECONDS_PER_DAY, &c).unwrap(), 2);
        assert_eq!(window_index(ORIGIN + 59 * SECONDS_PER_DAY, &c).unwrap(), 2);
        assert!(matches!(
            window_index(ORIGIN - 1, &c),
            Err(Error::BeforeOrigin { .. })
        ));
    }

    #[test]
    fn zero_window_days_rejected() {
        assert!(WindowConfig::new(0, 0).is_err());
    }

    #[test]
    fn default_origin_is_midnight() {
        let c = WindowConfig::from_records(
            &[rec("u", "i", ORIGIN + 5000), rec("u", "j", ORIGIN + 90_000)],
            30,
        )
        .unwrap();
        assert_eq!(c.origin, ORIGIN);
        c.validate_against(&[rec("u", "i", ORIGIN)]).unwrap();
        assert!(c.validate_against(&[rec("u", "i", ORIGIN - 1)]).is_err());
    }

    #[test]
    fn single_window_aggregation() {
        let recs = vec![
            rec("a", "m", at(5)),
            rec("b", "m", at(5)),
            rec("c", "m", at(5)),
        ];
        let s = build_series(&recs, &cfg(), CountMode::Users, Exec::Sequential).unwrap();
        assert_eq!(s["m"].first_window, 5);
        assert_eq!(s["m"].counts, vec![3]);
    }

    #[test]
    fn duplicate_user_counted_once() {
        let recs = vec![
            rec("a", "m", at(1)),
            rec("a", "m", at(1) + 10),
            rec("b", "m", at(1)),
        ];
        let users = build_series(&recs, &cfg(), CountMode::Users, Exec::Sequential).unwrap();
        assert_eq!(users["m"].counts, vec![2]);
        let events = build_series(&recs, &cfg(), CountMode::Events, Exec::Sequential).unwrap();
        assert_eq!(events["m"].counts, vec![3]);
    }

    #[test]
    fn gaps_are_explicit_zeros() {
        let recs = vec![
            rec("a", "m", at(2)),
            rec("b", "m", at(2)),
            rec("a", "m", at(4)),
        ];
        let s = build_series(&recs, &cfg(), CountMode::Users, Exec::Sequential).unwrap();
        assert_eq!(s["m"].first_window, 2);
        assert_eq!(s["m"].counts, vec![2, 0, 1]);
        assert_eq!(s["m"].count_at(1), 0);
        assert_eq!(s["m"].count_at(9), 0);
    }

    fn series(item: &str, first: u32, counts: Vec<u64>) -> (String, PopularitySeries) {
        (
            item.to_string(),
            PopularitySeries {
                item_id: item.into(),
                first_window: first,
                counts,
            },
        )
    }

    #[test]
    fn release_window_sample_is_cold_start() {
        let s: BTreeMap<_, _> = [series("m", 3, vec![4, 5])].into_iter().collect();
        let split = DatasetSplit::new(
            WindowRange::new(1, 3),
            WindowRange::new(4, 4),
            WindowRange::new(5, 5),
        )
        .unwrap();
        let out = make_samples(&s, &BTreeMap::new(), &split).unwrap();
        // windows 1 and 2 precede the item's release
        assert_eq!(out.train.len(), 1);
        let cold = &out.train[0];
        assert_eq!(cold.target_window, 3);
        assert!(cold.history.is_empty());
        assert_eq!(cold.label, Some(4));
        assert_eq!(cold.metadata.description_text, "");
        // past the last observed window the item still exists, label is 0
        assert_eq!(out.test[0].history, vec![4, 5]);
        assert_eq!(out.test[0].label, Some(0));
    }

    #[test]
    fn history_truncated_before_target() {
        let counts: Vec<u64> = (1..=10).collect();
        let s: BTreeMap<_, _> = [series("m", 1, counts)].into_iter().collect();
        let split = DatasetSplit::default_for(10).unwrap();
        let out = make_samples(&s, &BTreeMap::new(), &split).unwrap();
        let t = &out.test[0];
        assert_eq!(t.target_window, 10);
        assert_eq!(t.history, (1..=9).collect::<Vec<u64>>());
        assert_eq!(t.label, Some(10));
        assert_eq!(out.train.len(), 8);
        check_leakage(&out).unwrap();
    }

    #[test]
    fn split_validation() {
        assert!(DatasetSplit::default_for(2).is_err());
        let gap = DatasetSplit::new(
            WindowRange::new(1, 3),
            WindowRange::new(5, 5),
            WindowRange::new(6, 6),
        );
        assert!(gap.is_err());
        let zero = DatasetSplit::new(
            WindowRange::new(0, 3),
            WindowRange::new(4, 4),
            WindowRange::new(5, 5),
        );
        assert!(zero.is_err());
    }

    #[test]
    fn user_truth_groups_by_user() {
        let w = vec![
            WindowedInteraction {
                user_id: "u".into(),
                item_id: "a".into(),
                window: 3,
            },
            WindowedInteraction {
                user_id: "u".into(),
                item_id: "b".into(),
                window: 3,
            },
            WindowedInteraction {
                user_id: "v".into(),
                item_id: "a".into(),
                window: 2,
            },
        ];
        let t = user_truth(&w, 3);
        assert_eq!(t.len(), 1);
        assert_eq!(t["u"].len(), 2);
    }
}
