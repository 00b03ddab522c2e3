//! Reference implementations written independently of the library code
//! paths. Shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trendrec::contrastive::{
    batch_loss, batch_loss_and_grad, IndexedTriplet, Mode, ProjectionHead,
};
use trendrec::ingest::Sample;
use trendrec::mining::Triplet;
use trendrec::similarity::SimilarityContext;
use trendrec::Exec;

/// Minimum path cost over every monotone path from (0,0) to the far corner,
/// found by plain recursion.
pub fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let here = (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(walk(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(walk(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(walk(a, b, i + 1, j + 1));
        }
        here + best
    }
    walk(a, b, 0, 0)
}

/// Sort every other member by similarity (descending, ties by id) and split
/// after `n_pos`.
pub fn sort_and_split(
    group: &[&Sample],
    ctx: &SimilarityContext<'_>,
    n_pos: usize,
) -> Vec<Triplet> {
    if group.len() < n_pos + 1 {
        return Vec::new();
    }
    let mut anchors: Vec<&Sample> = group.to_vec();
    anchors.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    anchors
        .iter()
        .map(|a| {
            let mut others: Vec<(f64, &str)> = group
                .iter()
                .filter(|o| o.sample_id != a.sample_id)
                .map(|o| (ctx.sim_total(a, o).unwrap(), o.sample_id.as_str()))
                .collect();
            others.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
            let ids: Vec<String> = others.iter().map(|o| o.1.to_string()).collect();
            Triplet {
                anchor: a.sample_id.clone(),
                positives: ids[..n_pos].to_vec(),
                negatives: ids[n_pos..].to_vec(),
            }
        })
        .collect()
}

/// Seeded shuffle of the id-sorted pool, dealt into `ceil(n / b)` groups
/// whose sizes differ by at most one (larger groups first).
pub fn oracle_groups(pool: &[Sample], b: usize, seed: u64) -> Vec<Vec<&Sample>> {
    let mut sorted: Vec<&Sample> = pool.iter().collect();
    sorted.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let g = pool.len().div_ceil(b);
    let mut sizes = vec![0; g];
    for i in 0..pool.len() {
        sizes[i % g] += 1;
    }
    let mut rest = sorted.as_slice();
    sizes
        .into_iter()
        .map(|s| {
            let (head, tail) = rest.split_at(s);
            rest = tail;
            head.to_vec()
        })
        .collect()
}

pub fn batch_oracle(
    pool: &[Sample],
    ctx: &SimilarityContext<'_>,
    batch: usize,
    n_pos: usize,
    seed: u64,
) -> Vec<Triplet> {
    oracle_groups(pool, batch, seed)
        .iter()
        .flat_map(|g| sort_and_split(g, ctx, n_pos))
        .collect()
}

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so parameters whose gradient is
/// numerically zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Smallest |W1 x + b1| over every sample; finite differences are only valid
/// when it is well clear of the rectifier's kink.
pub fn kink_margin(head: &ProjectionHead, raws: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for x in raws {
        for k in 0..head.d_hid {
            let z: f64 = head.b1[k]
                + (0..head.d_in)
                    .map(|j| head.w1[k * head.d_in + j] * x[j])
                    .sum::<f64>();
            m = m.min(z.abs());
        }
    }
    m
}

/// Smallest standard deviation of W2 h over every sample, i.e. of the
/// layer-norm input. Near zero the normalization is too curved for a fixed
/// finite-difference step.
pub fn min_norm_input_std(head: &ProjectionHead, raws: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for x in raws {
        let h: Vec<f64> = (0..head.d_hid)
            .map(|k| {
                let z: f64 = head.b1[k]
                    + (0..head.d_in)
                        .map(|j| head.w1[k * head.d_in + j] * x[j])
                        .sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let z: Vec<f64> = (0..head.d_out)
            .map(|r| {
                (0..head.d_hid)
                    .map(|k| head.w2[r * head.d_hid + k] * h[k])
                    .sum()
            })
            .collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        m = m.min(var.sqrt());
    }
    m
}

/// Finite differences at step [`FD_STEP`] are meaningful for this fixture.
pub fn well_conditioned(head: &ProjectionHead, raws: &[Vec<f64>]) -> bool {
    kink_margin(head, raws) > 100.0 * FD_STEP && min_norm_input_std(head, raws) > 0.05
}

/// Largest relative error between the analytic gradient and central
/// differences over every head parameter.
pub fn max_grad_rel_error(
    head: &ProjectionHead,
    raws: &[Vec<f64>],
    triplets: &[IndexedTriplet],
    tau: f64,
    mode: Mode,
) -> f64 {
    let (_, grad) = batch_loss_and_grad(head, raws, triplets, tau, mode, Exec::Sequential).unwrap();
    let analytic = grad.flat();
    let mut worst: f64 = 0.0;
    let mut h = head.clone();
    for (idx, a) in analytic.iter().enumerate() {
        let orig = *h.param_mut(idx);
        *h.param_mut(idx) = orig + FD_STEP;
        let up = batch_loss(&h, raws, triplets, tau, mode, Exec::Sequential).unwrap();
        *h.param_mut(idx) = orig - FD_STEP;
        let down = batch_loss(&h, raws, triplets, tau, mode, Exec::Sequential).unwrap();
        *h.param_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

/// Hit rate by counting: users with any truth item in the first k.
pub fn brute_hr(
    ranked: &[String],
    truth: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Option<f64> {
    let users: Vec<_> = truth.values().filter(|t| !t.is_empty()).collect();
    if users.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    for t in &users {
        let mut hit = false;
        for (pos, item) in ranked.iter().enumerate() {
            if pos < k && t.contains(item) {
                hit = true;
            }
        }
        hits += hit as usize;
    }
    Some(hits as f64 / users.len() as f64)
}

fn dcg(rel: &[f64], k: usize) -> f64 {
    rel.iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| r / ((i as f64) + 2.0).log2())
        .sum()
}

/// NDCG with the ideal list built explicitly as all truth items first.
pub fn brute_ndcg(
    ranked: &[String],
    truth: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Option<f64> {
    let users: Vec<_> = truth.values().filter(|t| !t.is_empty()).collect();
    if users.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for t in &users {
        let rel: Vec<f64> = ranked
            .iter()
            .map(|i| if t.contains(i) { 1.0 } else { 0.0 })
            .collect();
        let ideal = vec![1.0; t.len()];
        total += dcg(&rel, k) / dcg(&ideal, k);
    }
    Some(total / users.len() as f64)
}

/// Jaccard of top-k sets; an item is in the true top-k when fewer than k
/// items beat it (higher count, or equal count and smaller id).
pub fn brute_jaccard(ranked: &[String], counts: &BTreeMap<String, u64>, k: usize) -> Option<f64> {
    if counts.len() < k {
        return None;
    }
    let predicted: BTreeSet<&String> = ranked.iter().take(k).collect();
    let truth: BTreeSet<&String> = counts
        .iter()
        .filter(|(i, c)| {
            counts
                .iter()
                .filter(|(j, d)| d > c || (d == c && j < i))
                .count()
                < k
        })
        .map(|(i, _)| i)
        .collect();
    let inter = predicted.iter().filter(|i| truth.contains(*i)).count();
    let union = predicted.len() + truth.len() - inter;
    Some(inter as f64 / union as f64)
}

/// Random head, raw embeddings and triplets for a gradient check.
pub fn gradient_fixture(seed: u64) -> (ProjectionHead, Vec<Vec<f64>>, Vec<IndexedTriplet>, f64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = rng.gen_range(3..8);
    let d_hid = rng.gen_range(3..8);
    let d_out = rng.gen_range(2..6);
    let mut head = ProjectionHead::new(d_in, d_hid, d_out, 0.2, seed).unwrap();
    head.b1
        .iter_mut()
        .for_each(|b| *b = rng.gen_range(-0.3..0.3));
    let n = rng.gen_range(3..7);
    let raws: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d_in).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let triplets = (0..rng.gen_range(1..4))
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_pos = rng.gen_range(1..3).min(n - 1);
            let n_neg = rng.gen_range(0..=(n - 1 - n_pos).min(3));
            IndexedTriplet {
                anchor: idx[0],
                positives: idx[1..1 + n_pos].to_vec(),
                negatives: idx[1 + n_pos..1 + n_pos + n_neg].to_vec(),
            }
        })
        .collect();
    let tau = [0.1, 0.5, 1.0][rng.gen_range(0..3)];
    (head, raws, triplets, tau)
}

/// Two well separated clusters of four points; every triplet draws its
/// positive from the anchor's cluster and its negatives from the other.
pub fn separable_fixture() -> (ProjectionHead, Vec<Triplet>, BTreeMap<String, Vec<f64>>) {
    let d = 8;
    let mut emb = BTreeMap::new();
    for c in 0..2 {
        for k in 0..4 {
            let mut v = vec![0.0; d];
            v[c * 4] = 1.0;
            v[c * 4 + 1 + (k % 3)] = 0.3 * (k as f64 + 1.0);
            emb.insert(format!("{}{k}", ["a", "b"][c]), v);
        }
    }
    let t = |a: &str, p: &str, n: [&str; 2]| Triplet {
        anchor: a.into(),
        positives: vec![p.into()],
        negatives: n.iter().map(|s| s.to_string()).collect(),
    };
    let triplets = vec![
        t("a0", "a1", ["b0", "b1"]),
        t("a2", "a3", ["b2", "b3"]),
        t("b0", "b1", ["a0", "a2"]),
        t("b2", "b3", ["a1", "a3"]),
    ];
    let head = ProjectionHead::new(d, 16, 8, 0.1, 11).unwrap();
    (head, triplets, emb)
}
