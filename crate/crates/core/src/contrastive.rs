//! Projection head, contrastive and supervised objectives, and a plain
//! gradient-descent trainer for the head.
//!
//! The head maps a raw sample embedding `x` to
//! `LayerNorm(W2 · (relu(W1 · x + b1) ⊙ m))`, where `m` is an inverted-dropout
//! mask in training mode and all ones in evaluation mode. Layer normalization
//! has no learned affine parameters. Gradients are derived by hand; the tests
//! compare them against central finite differences.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::Sample;
use crate::mining::Triplet;
use crate::scoring::fit_line;
use crate::similarity::{sample_change_rate, EmbeddingTable};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const CE_EPS: f64 = 1e-12;
pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_HIDDEN_DIM: usize = 256;
pub const DEFAULT_OUT_DIM: usize = 128;
pub const TREND_FEATURES: usize = 8;

/// Dropout behaviour for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Inverted dropout with a mask drawn from `seed`.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub d_in: usize,
    pub d_hid: usize,
    pub d_out: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    /// `d_hid × d_in`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `d_out × d_hid`, row-major.
    pub w2: Vec<f64>,
}

/// Gradient with the same layout as the head's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            w1: vec![0.0; head.w1.len()],
            b1: vec![0.0; head.b1.len()],
            w2: vec![0.0; head.w2.len()],
        }
    }

    pub fn add_assign(&mut self, other: &HeadGrad) {
        for (a, b) in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .zip(other.w1.iter().chain(&other.b1).chain(&other.w2))
        {
            *a += b;
        }
    }

    /// Flat view in the order `w1, b1, w2`.
    pub fn flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pre_act: Vec<f64>,
    mask: Vec<f64>,
    hidden: Vec<f64>,
    centered: Vec<f64>,
    std: f64,
    pub out: Vec<f64>,
}

/// `w x` for row-major `w`, visiting only the nonzero entries of `x`.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let nz: Vec<usize> = (0..cols).filter(|&j| x[j] != 0.0).collect();
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            nz.iter().map(|&j| row[j] * x[j]).sum()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn xavier(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_out * fan_in)
        .map(|_| rng.gen_range(-a..a))
        .collect()
}

/// splitmix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ProjectionHead {
    /// Xavier-uniform weights, zero bias.
    pub fn new(
        d_in: usize,
        d_hid: usize,
        d_out: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        for (field, v) in [
            ("input_dim", d_in),
            ("hidden_dim", d_hid),
            ("out_dim", d_out),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config("dropout_rate", "must be in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = xavier(&mut rng, d_hid, d_in);
        let w2 = xavier(&mut rng, d_out, d_hid);
        Ok(Self {
            d_in,
            d_hid,
            d_out,
            dropout_rate,
            seed,
            w1,
            b1: vec![0.0; d_hid],
            w2,
        })
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len()
    }

    /// Mutable access to parameter `idx` in the flat order `w1, b1, w2`.
    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (n1, nb) = (self.w1.len(), self.b1.len());
        if idx < n1 {
            &mut self.w1[idx]
        } else if idx < n1 + nb {
            &mut self.b1[idx - n1]
        } else {
            &mut self.w2[idx - n1 - nb]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.len() == self.d_hid * self.d_in
            && self.b1.len() == self.d_hid
            && self.w2.len() == self.d_out * self.d_hid;
        if !ok {
            return Err(Error::Invalid(
                "projection head parameter shapes are inconsistent".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must be in [0, 1)"));
        }
        if self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Invariant(
                "non-finite projection head parameter".into(),
            ));
        }
        Ok(())
    }

    fn dropout_mask(&self, mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Train { seed } if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.d_hid)
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            _ => vec![1.0; self.d_hid],
        }
    }

    pub fn forward(&self, raw: &[f64], mode: Mode) -> Result<Forward> {
        if raw.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: raw.len(),
            });
        }
        let mut pre_act = matvec(&self.w1, self.d_hid, self.d_in, raw);
        for (z, b) in pre_act.iter_mut().zip(&self.b1) {
            *z += b;
        }
        let mask = self.dropout_mask(mode);
        let hidden: Vec<f64> = pre_act
            .iter()
            .zip(&mask)
            .map(|(&z, &m)| z.max(0.0) * m)
            .collect();
        let z2 = matvec(&self.w2, self.d_out, self.d_hid, &hidden);
        let n = self.d_out as f64;
        let mean = z2.iter().sum::<f64>() / n;
        let centered: Vec<f64> = z2.iter().map(|v| v - mean).collect();
        let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
        let out = centered
            .iter()
            .map(|c| c / (std + LAYER_NORM_EPS))
            .collect();
        Ok(Forward {
            pre_act,
            mask,
            hidden,
            centered,
            std,
            out,
        })
    }

    pub fn project(&self, raw: &[f64], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.forward(raw, mode)?.out)
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d out`.
    pub fn backward(&self, fwd: &Forward, raw: &[f64], d_out: &[f64], grad: &mut HeadGrad) {
        let n = self.d_out as f64;
        let denom = fwd.std + LAYER_NORM_EPS;
        // y = c / (s + eps), c = z - mean(z), s = sqrt(mean(c^2))
        let gc: f64 = dot(d_out, &fwd.centered);
        let ds_coeff = if fwd.std > 0.0 {
            gc / (denom * denom * n * fwd.std)
        } else {
            0.0
        };
        let mut d_c: Vec<f64> = d_out
            .iter()
            .zip(&fwd.centered)
            .map(|(g, c)| g / denom - ds_coeff * c)
            .collect();
        let mean_dc = d_c.iter().sum::<f64>() / n;
        d_c.iter_mut().for_each(|v| *v -= mean_dc);
        let d_z2 = d_c;

        // Units that are switched off contribute nothing in either direction.
        let active: Vec<usize> = (0..self.d_hid)
            .filter(|&k| fwd.pre_act[k] > 0.0 && fwd.mask[k] != 0.0)
            .collect();
        let mut d_hidden = vec![0.0; self.d_hid];
        for (r, &g) in d_z2.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = r * self.d_hid;
            for &k in &active {
                grad.w2[row + k] += g * fwd.hidden[k];
                d_hidden[k] += g * self.w2[row + k];
            }
        }
        for &k in &active {
            let g = d_hidden[k] * fwd.mask[k];
            if g == 0.0 {
                continue;
            }
            grad.b1[k] += g;
            let row = k * self.d_in;
            for (j, x) in raw.iter().enumerate() {
                if *x != 0.0 {
                    grad.w1[row + j] += g * x;
                }
            }
        }
    }

    /// `params -= lr * grad`.
    pub fn step(&mut self, grad: &HeadGrad, lr: f64) {
        for (p, g) in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .zip(grad.w1.iter().chain(&grad.b1).chain(&grad.w2))
        {
            *p -= lr * g;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let head: Self = serde_json::from_slice(&text)?;
        head.validate()?;
        Ok(head)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_contrast_inputs(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<()> {
    if positives.is_empty() {
        return Err(Error::Invalid("InfoNCE needs at least one positive".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::config("tau", "must be positive"));
    }
    for v in positives.iter().chain(negatives) {
        if v.len() != anchor.len() {
            return Err(Error::DimensionMismatch {
                expected: anchor.len(),
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// InfoNCE with multiple positives, dot-product similarity and temperature
/// inside the exponent.
pub fn info_nce(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<f64> {
    check_contrast_inputs(anchor, positives, negatives, tau)?;
    let pos: Vec<f64> = positives.iter().map(|p| dot(anchor, p) / tau).collect();
    let all: Vec<f64> = pos
        .iter()
        .copied()
        .chain(negatives.iter().map(|n| dot(anchor, n) / tau))
        .collect();
    Ok((log_sum_exp(&all) - log_sum_exp(&pos)).max(0.0))
}

/// InfoNCE value and its gradients with respect to every input vector.
#[derive(Debug, Clone)]
pub struct ContrastGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn info_nce_grad(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<ContrastGrad> {
    check_contrast_inputs(anchor, positives, negatives, tau)?;
    let pos: Vec<f64> = positives.iter().map(|p| dot(anchor, p) / tau).collect();
    let neg: Vec<f64> = negatives.iter().map(|n| dot(anchor, n) / tau).collect();
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let lse_all = log_sum_exp(&all);
    let lse_pos = log_sum_exp(&pos);
    // d loss / d logit_k = softmax_all(k) - [k positive] softmax_pos(k)
    let g_pos: Vec<f64> = pos
        .iter()
        .map(|l| (l - lse_all).exp() - (l - lse_pos).exp())
        .collect();
    let g_neg: Vec<f64> = neg.iter().map(|l| (l - lse_all).exp()).collect();

    let mut d_anchor = vec![0.0; anchor.len()];
    for (g, v) in g_pos
        .iter()
        .zip(positives)
        .chain(g_neg.iter().zip(negatives))
    {
        for (d, x) in d_anchor.iter_mut().zip(v.iter()) {
            *d += g * x / tau;
        }
    }
    let scaled = |g: f64| anchor.iter().map(|a| g * a / tau).collect::<Vec<_>>();
    Ok(ContrastGrad {
        loss: (lse_all - lse_pos).max(0.0),
        anchor: d_anchor,
        positives: g_pos.iter().map(|&g| scaled(g)).collect(),
        negatives: g_neg.iter().map(|&g| scaled(g)).collect(),
    })
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Cross-entropy `-Σ truth · ln(pred + ε)` between item distributions.
pub fn supervised_ce(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    check_distribution("truth", truth)?;
    check_distribution("pred", pred)?;
    Ok(-truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            if *t == 0.0 {
                0.0
            } else {
                t * (p + CE_EPS).ln()
            }
        })
        .sum::<f64>())
}

/// Normalize nonnegative counts; all-zero counts give the uniform distribution.
pub fn truth_distribution(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let n = counts.len().max(1) as f64;
        return vec![1.0 / n; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

pub fn combined_loss(sup: f64, con: f64, lambda: f64) -> f64 {
    sup + lambda * con
}

/// Triplet with ids resolved to positions in an embedding list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedTriplet {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Resolve triplet ids against `ids`; unknown ids are an error.
pub fn index_triplets(triplets: &[Triplet], ids: &[String]) -> Result<Vec<IndexedTriplet>> {
    let pos: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let look = |id: &String| {
        pos.get(id.as_str())
            .copied()
            .ok_or_else(|| Error::UnknownSample(id.clone()))
    };
    triplets
        .iter()
        .map(|t| {
            Ok(IndexedTriplet {
                anchor: look(&t.anchor)?,
                positives: t.positives.iter().map(look).collect::<Result<_>>()?,
                negatives: t.negatives.iter().map(look).collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn sample_mode(mode: Mode, idx: usize) -> Mode {
    match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train { seed } => Mode::Train {
            seed: mix_seed(seed, idx as u64),
        },
    }
}

fn triplet_inputs<'a>(
    t: &IndexedTriplet,
    outs: &'a [Vec<f64>],
) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    (
        t.positives.iter().map(|&i| outs[i].as_slice()).collect(),
        t.negatives.iter().map(|&i| outs[i].as_slice()).collect(),
    )
}

/// Mean InfoNCE over `triplets`, every embedding projected once. In training
/// mode each embedding gets its own mask derived from the seed and its index.
pub fn batch_loss(
    head: &ProjectionHead,
    raws: &[Vec<f64>],
    triplets: &[IndexedTriplet],
    tau: f64,
    mode: Mode,
    exec: Exec,
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let outs = exec.try_map_range(raws.len(), |i| head.project(&raws[i], sample_mode(mode, i)))?;
    let losses = exec.try_map(triplets, |t| {
        let (p, n) = triplet_inputs(t, &outs);
        info_nce(&outs[t.anchor], &p, &n, tau)
    })?;
    Ok(losses.iter().sum::<f64>() / triplets.len() as f64)
}

const BACKPROP_CHUNK: usize = 32;

/// Mean InfoNCE over `triplets` and its gradient with respect to the head.
pub fn batch_loss_and_grad(
    head: &ProjectionHead,
    raws: &[Vec<f64>],
    triplets: &[IndexedTriplet],
    tau: f64,
    mode: Mode,
    exec: Exec,
) -> Result<(f64, HeadGrad)> {
    let mut grad = HeadGrad::zeros_like(head);
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    let fwds = exec.try_map_range(raws.len(), |i| head.forward(&raws[i], sample_mode(mode, i)))?;
    let outs: Vec<Vec<f64>> = fwds.iter().map(|f| f.out.clone()).collect();
    let per_triplet = exec.try_map(triplets, |t| {
        let (p, n) = triplet_inputs(t, &outs);
        info_nce_grad(&outs[t.anchor], &p, &n, tau)
    })?;

    // Sequential accumulation keeps the result independent of thread count.
    let scale = 1.0 / triplets.len() as f64;
    let mut d_out = vec![vec![0.0; head.d_out]; raws.len()];
    let mut used = vec![false; raws.len()];
    let mut loss = 0.0;
    let add = |dst: &mut Vec<f64>, src: &[f64]| {
        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * scale);
    };
    for (t, g) in triplets.iter().zip(&per_triplet) {
        loss += g.loss;
        add(&mut d_out[t.anchor], &g.anchor);
        used[t.anchor] = true;
        for (&i, gp) in t.positives.iter().zip(&g.positives) {
            add(&mut d_out[i], gp);
            used[i] = true;
        }
        for (&i, gn) in t.negatives.iter().zip(&g.negatives) {
            add(&mut d_out[i], gn);
            used[i] = true;
        }
    }

    let active: Vec<usize> = (0..raws.len()).filter(|&i| used[i]).collect();
    let chunks: Vec<&[usize]> = active.chunks(BACKPROP_CHUNK).collect();
    let partials = exec.map(&chunks, |chunk| {
        let mut g = HeadGrad::zeros_like(head);
        for &i in chunk.iter() {
            head.backward(&fwds[i], &raws[i], &d_out[i], &mut g);
        }
        g
    });
    for p in &partials {
        grad.add_assign(p);
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            epochs: 20,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Evaluation-mode loss before the first update.
    pub initial_loss: f64,
    /// Evaluation-mode loss after each epoch.
    pub trace: Vec<f64>,
}

/// Full-batch gradient descent on mean InfoNCE over the triplets.
/// `embeddings` maps sample id to raw embedding.
pub fn train_head(
    head: ProjectionHead,
    triplets: &[Triplet],
    embeddings: &BTreeMap<String, Vec<f64>>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::config("learning_rate", "must be positive"));
    }
    if cfg.tau.is_nan() || cfg.tau <= 0.0 {
        return Err(Error::config("tau", "must be positive"));
    }
    head.validate()?;
    let ids: Vec<String> = embeddings.keys().cloned().collect();
    let raws: Vec<Vec<f64>> = embeddings.values().cloned().collect();
    let indexed = index_triplets(triplets, &ids)?;
    for r in &raws {
        if r.len() != head.d_in {
            return Err(Error::DimensionMismatch {
                expected: head.d_in,
                actual: r.len(),
            });
        }
    }

    let mut head = head;
    let initial_loss = batch_loss(&head, &raws, &indexed, cfg.tau, Mode::Eval, exec)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mode = Mode::Train {
            seed: mix_seed(cfg.seed, epoch as u64 + 1),
        };
        let (_, grad) = batch_loss_and_grad(&head, &raws, &indexed, cfg.tau, mode, exec)?;
        head.step(&grad, cfg.learning_rate);
        let loss = batch_loss(&head, &raws, &indexed, cfg.tau, Mode::Eval, exec)?;
        if !loss.is_finite() {
            return Err(Error::Invariant(format!(
                "loss diverged at epoch {}",
                epoch + 1
            )));
        }
        trace.push(loss);
    }
    Ok(TrainOutcome {
        head,
        initial_loss,
        trace,
    })
}

/// `epoch,loss` rows; epoch 0 is the loss before training.
pub fn write_loss_trace(path: &Path, initial: f64, trace: &[f64]) -> Result<()> {
    let mut buf = String::from("epoch,loss\n");
    buf.push_str(&format!("0,{initial}\n"));
    for (i, l) in trace.iter().enumerate() {
        buf.push_str(&format!("{},{l}\n", i + 1));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Label-free summary of a history: last value, mean, max, length, change
/// rate of the last step, least-squares slope, first value, zero windows.
pub fn trend_features(sample: &Sample) -> [f64; TREND_FEATURES] {
    let h: Vec<f64> = sample.history.iter().map(|&c| c as f64).collect();
    if h.is_empty() {
        return [0.0; TREND_FEATURES];
    }
    let n = h.len() as f64;
    let unlabeled = Sample {
        label: None,
        ..sample.clone()
    };
    [
        *h.last().unwrap(),
        h.iter().sum::<f64>() / n,
        h.iter().copied().fold(f64::MIN, f64::max),
        n,
        sample_change_rate(&unlabeled).value(),
        fit_line(&h).1,
        h[0],
        h.iter().filter(|&&v| v == 0.0).count() as f64,
    ]
}

/// Per-feature standardization fitted on the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(samples: &[Sample]) -> Self {
        let rows: Vec<[f64; TREND_FEATURES]> = samples.iter().map(trend_features).collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; TREND_FEATURES];
        let mut std = vec![0.0; TREND_FEATURES];
        for r in &rows {
            for k in 0..TREND_FEATURES {
                mean[k] += r[k] / n;
            }
        }
        for r in &rows {
            for k in 0..TREND_FEATURES {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn transform(&self, f: &[f64; TREND_FEATURES]) -> Vec<f64> {
        f.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Raw contrastive input: item metadata embedding followed by the
/// standardized trend features.
pub fn raw_embedding(
    sample: &Sample,
    table: &EmbeddingTable,
    scaler: &FeatureScaler,
) -> Result<Vec<f64>> {
    let meta = table.get(&sample.item_id)?;
    let mut v = meta.0.clone();
    v.extend(scaler.transform(&trend_features(sample)));
    Ok(v)
}
