//! Ranking metrics for a single global list: hit rate, NDCG and top-k overlap.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const DEFAULT_K_VALUES: [usize; 2] = [5, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub ranked_list: Vec<String>,
    pub user_truth: BTreeMap<String, BTreeSet<String>>,
    /// True popularity of each candidate item in the evaluated window.
    pub item_truth: BTreeMap<String, u64>,
    pub k_values: Vec<usize>,
}

impl EvalRun {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for item in &self.ranked_list {
            if !seen.insert(item.as_str()) {
                return Err(Error::Duplicate(item.clone()));
            }
        }
        if self.k_values.is_empty() {
            return Err(Error::config("k_values", "must list at least one cutoff"));
        }
        if self.k_values.contains(&0) {
            return Err(Error::config("k_values", "cutoffs must be positive"));
        }
        Ok(())
    }

    fn evaluable_users(&self) -> Result<Vec<&BTreeSet<String>>> {
        let users: Vec<_> = self.user_truth.values().filter(|t| !t.is_empty()).collect();
        if users.is_empty() {
            return Err(Error::Invalid(
                "no users with test interactions to evaluate".into(),
            ));
        }
        Ok(users)
    }

    fn top(&self, k: usize) -> &[String] {
        &self.ranked_list[..k.min(self.ranked_list.len())]
    }
}

/// Which truth items count when scoring users.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthFilter {
    #[default]
    All,
    /// Only items with no history before the evaluated window.
    Cold,
    Warm,
}

impl TruthFilter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "cold" => Ok(Self::Cold),
            "warm" => Ok(Self::Warm),
            other => Err(Error::config(
                "truth_filter",
                format!("unknown value `{other}` (expected all, cold or warm)"),
            )),
        }
    }

    /// Restrict every user's items; users left with nothing drop out of the
    /// hit-rate and NDCG denominators.
    pub fn apply(
        self,
        truth: BTreeMap<String, BTreeSet<String>>,
        cold_items: &BTreeSet<String>,
    ) -> BTreeMap<String, BTreeSet<String>> {
        if self == Self::All {
            return truth;
        }
        truth
            .into_iter()
            .map(|(u, items)| {
                let kept = items
                    .into_iter()
                    .filter(|i| cold_items.contains(i) == (self == Self::Cold))
                    .collect();
                (u, kept)
            })
            .collect()
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

fn user_ndcg(top: &[String], truth: &BTreeSet<String>, k: usize) -> f64 {
    let dcg: f64 = top
        .iter()
        .enumerate()
        .filter(|(_, item)| truth.contains(*item))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(truth.len())).map(discount).sum();
    dcg / idcg
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn hit_rate_at_k(run: &EvalRun, k: usize, exec: Exec) -> Result<f64> {
    let users = run.evaluable_users()?;
    let top = run.top(k);
    let hits = exec.map(&users, |truth| {
        if top.iter().any(|i| truth.contains(i)) {
            1.0
        } else {
            0.0
        }
    });
    Ok(mean(&hits))
}

pub fn ndcg_at_k(run: &EvalRun, k: usize, exec: Exec) -> Result<f64> {
    let users = run.evaluable_users()?;
    let top = run.top(k);
    let gains = exec.map(&users, |truth| user_ndcg(top, truth, k));
    Ok(mean(&gains))
}

/// Items ordered by true popularity, descending, ties by item id.
pub fn truth_ranking(item_truth: &BTreeMap<String, u64>) -> Vec<String> {
    let mut items: Vec<(&String, u64)> = item_truth.iter().map(|(i, &c)| (i, c)).collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    items.into_iter().map(|(i, _)| i.clone()).collect()
}

/// Overlap |A ∩ B| / |A ∪ B| of predicted and true top-k sets.
pub fn jaccard_at_k(run: &EvalRun, k: usize) -> Result<f64> {
    if run.item_truth.len() < k {
        return Err(Error::Invalid(format!(
            "jaccard@{k} needs at least {k} items with truth counts, found {}",
            run.item_truth.len()
        )));
    }
    let predicted: BTreeSet<&String> = run.top(k).iter().collect();
    let truth_top = truth_ranking(&run.item_truth);
    let actual: BTreeSet<&String> = truth_top[..k].iter().collect();
    Ok(set_jaccard(&predicted, &actual))
}

pub fn set_jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub jaccard: BTreeMap<usize, f64>,
    pub users: usize,
    pub items: usize,
}

impl MetricsReport {
    pub fn check_range(&self) -> Result<()> {
        for (name, m) in [
            ("hr", &self.hr),
            ("ndcg", &self.ndcg),
            ("jaccard", &self.jaccard),
        ] {
            for (k, v) in m {
                if !(0.0..=1.0 + 1e-12).contains(v) {
                    return Err(Error::Invariant(format!("{name}@{k} = {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn evaluate(run: &EvalRun, exec: Exec) -> Result<MetricsReport> {
    run.validate()?;
    let users = run.evaluable_users()?.len();
    let mut report = MetricsReport {
        hr: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        jaccard: BTreeMap::new(),
        users,
        items: run.ranked_list.len(),
    };
    for &k in &run.k_values {
        report.hr.insert(k, hit_rate_at_k(run, k, exec)?);
        report.ndcg.insert(k, ndcg_at_k(run, k, exec)?);
        report.jaccard.insert(k, jaccard_at_k(run, k)?);
    }
    report.check_range()?;
    Ok(report)
}
