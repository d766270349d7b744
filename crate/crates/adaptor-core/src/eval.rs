//! Frozen-adaptor evaluation: cross-modal retrieval, a two-layer
//! classification probe, and a leave-one-out separability score.
//!
//! Nothing here updates adaptor parameters: features are produced by
//! frozen forwards, and only the probe's own head is trained.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptor::{embed_image, embed_pair, AdaptorConfig, AdaptorParams};
use crate::data::EmbeddingCache;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::math;
use crate::tensor::{matmul, Tensor};

pub const PROBE_LR_DEFAULT: f64 = 1e-2;
pub const PROBE_EPOCHS_DEFAULT: usize = 200;

/// Classification-probe recipe. `data_fraction` mirrors label-efficiency
/// evaluation: the probe trains on a stratified fraction of the labelled
/// training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub data_fraction: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(hidden_dim: usize) -> Self {
        ProbeConfig {
            hidden_dim,
            lr: PROBE_LR_DEFAULT,
            epochs: PROBE_EPOCHS_DEFAULT,
            data_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("probe hidden_dim must be nonzero"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!(
                "probe lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("probe epochs must be at least 1"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::config(format!(
                "data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            )));
        }
        Ok(())
    }
}

/// Scores from one evaluation run. All scores lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall_at_k: Vec<(usize, f64)>,
    /// Probe accuracy on adaptor features.
    pub probe_accuracy: f64,
    /// Rank-statistic AUROC, present for binary tasks only.
    pub probe_auroc: Option<f64>,
    /// Separability of raw pooled image embeddings.
    pub separability_before: f64,
    /// Separability of frozen-adaptor image features.
    pub separability_after: f64,
    pub probe: ProbeConfig,
}

/// Fraction of images whose matching text ranks in the top `k` by inner
/// product. A competitor outranks the match only with a strictly higher
/// score or an equal score at a lower index.
pub fn recall_at_k(x_hat: &Tensor, t_hat: &Tensor, k: usize) -> Result<f64> {
    if x_hat.shape() != t_hat.shape() {
        return Err(Error::dimension(format!(
            "embedding batches differ: {}x{} vs {}x{}",
            x_hat.rows(),
            x_hat.cols(),
            t_hat.rows(),
            t_hat.cols()
        )));
    }
    let n = x_hat.rows();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "k must lie in [1, {n}], got {k}"
        )));
    }
    let s = matmul(x_hat, &t_hat.transposed())?;
    let mut hits = 0;
    for i in 0..n {
        let row = s.row(i);
        let own = row[i];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|(j, v)| **v > own || (**v == own && *j < i))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Area under the ROC curve by the Mann-Whitney rank statistic with
/// average ranks on ties. Labels must be 0/1 with both present.
pub fn auroc(scores: &[f64], labels: &[u32]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::config("auroc needs binary 0/1 labels"));
    }
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::config("auroc needs both classes present"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("auroc scores must be finite"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| **l == 1)
        .map(|(_, r)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Deterministic stratified subset: per class, a seeded shuffle keeps
/// `max(1, floor(fraction·class_count))` samples. Returns sorted indices.
pub fn stratified_subset(labels: &[u32], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::dimension("cannot subset an empty label set"));
    }
    let max_label = *labels.iter().max().unwrap() as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for (i, l) in labels.iter().enumerate() {
        by_class[*l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_class.iter_mut().filter(|m| !m.is_empty()) {
        for i in (1..members.len()).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            members.swap(i, j);
        }
        let take = ((fraction * members.len() as f64) as usize).max(1);
        keep.extend_from_slice(&members[..take.min(members.len())]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Leave-one-out nearest-centroid accuracy over labelled features. Each
/// sample is scored against its own class centroid recomputed without it;
/// a sample alone in its class is scored against the other centroids only.
/// Distance ties resolve to the lowest class index.
pub fn separability_score(features: &Tensor, labels: &[u32]) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::dimension(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    let max_label = *labels.iter().max().unwrap() as usize;
    let classes = max_label + 1;
    let mut counts = vec![0usize; classes];
    for l in labels {
        counts[*l as usize] += 1;
    }
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::config("separability needs at least 2 classes"));
    }

    let d = features.cols();
    let mut sums = vec![vec![0.0; d]; classes];
    for i in 0..n {
        for (acc, v) in sums[labels[i] as usize].iter_mut().zip(features.row(i)) {
            *acc += v;
        }
    }

    let mut correct = 0;
    for (i, l) in labels.iter().enumerate().take(n) {
        let x = features.row(i);
        let own = *l as usize;
        let mut best: Option<(usize, f64)> = None;
        for c in 0..classes {
            let mut count = counts[c];
            if count == 0 {
                continue;
            }
            let exclude_self = c == own;
            if exclude_self {
                count -= 1;
                if count == 0 {
                    continue;
                }
            }
            let inv = 1.0 / count as f64;
            let mut dist = 0.0;
            for j in 0..d {
                let centroid = if exclude_self {
                    (sums[c][j] - x[j]) * inv
                } else {
                    sums[c][j] * inv
                };
                let diff = x[j] - centroid;
                dist += diff * diff;
            }
            let better = match best {
                None => true,
                Some((_, b)) => dist < b,
            };
            if better {
                best = Some((c, dist));
            }
        }
        if best.map(|(c, _)| c) == Some(own) {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

struct ProbeParams {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl ProbeParams {
    fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let limit = math::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols)
            .map(|_| rand::Rng::random_range(rng, -limit..limit))
            .collect();
        Tensor::from_vec(rows, cols, data).expect("positive extents")
    }

    fn init(d: usize, hidden: usize, classes: usize, seed: u64) -> ProbeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProbeParams {
            w1: Self::glorot(&mut rng, d, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Self::glorot(&mut rng, hidden, classes),
            b2: Tensor::zeros(1, classes),
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn logits(&self, x: &Tensor) -> Tensor {
        let mut h = matmul(x, &self.w1).expect("widths checked at init");
        for r in 0..h.rows() {
            for c in 0..h.cols() {
                let v = (h.get(r, c) + self.b1.get(0, c)).max(0.0);
                h.set(r, c, v);
            }
        }
        let mut z = matmul(&h, &self.w2).expect("widths checked at init");
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z.set(r, c, z.get(r, c) + self.b2.get(0, c));
            }
        }
        z
    }
}

fn train_probe(
    x: &Tensor,
    y: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeParams> {
    let mut params = ProbeParams::init(x.cols(), config.hidden_dim, classes, config.seed);
    let mut m: Vec<Tensor> = params
        .tensors_mut()
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    let mut v = m.clone();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    for step in 1..=config.epochs {
        let mut g = Graph::new();
        let xin = g.input(x.clone());
        let w1 = g.param(params.w1.clone());
        let b1 = g.param(params.b1.clone());
        let w2 = g.param(params.w2.clone());
        let b2 = g.param(params.b2.clone());
        let h_lin = g.matmul(xin, w1)?;
        let h_bias = g.add(h_lin, b1)?;
        let h = g.relu(h_bias)?;
        let z_lin = g.matmul(h, w2)?;
        let logits = g.add(z_lin, b2)?;
        let lse = g.logsumexp_rows(logits)?;
        let own = g.gather_cols(logits, y)?;
        let per_row = g.sub(lse, own)?;
        let loss = g.mean_all(per_row)?;
        g.backward(loss)?;

        let ids = [w1, b1, w2, b2];
        let bc1 = 1.0 - math::pow_u(beta1, step as u64);
        let bc2 = 1.0 - math::pow_u(beta2, step as u64);
        for (slot, id) in ids.iter().enumerate() {
            let grad = g.grad(*id).expect("probe params are trainable").clone();
            let tensors = params.tensors_mut();
            let p = tensors[slot].data_mut();
            let gm = m[slot].data_mut();
            let gv = v[slot].data_mut();
            for (i, gi) in grad.data().iter().enumerate() {
                gm[i] = beta1 * gm[i] + (1.0 - beta1) * gi;
                gv[i] = beta2 * gv[i] + (1.0 - beta2) * gi * gi;
                p[i] -= config.lr * (gm[i] / bc1) / (math::sqrt(gv[i] / bc2) + eps);
            }
        }
    }
    Ok(params)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains the two-layer head (linear, ReLU, linear, cross-entropy) on a
/// stratified `data_fraction` of the training features and reports test
/// accuracy, plus rank-statistic AUROC when the task is binary. The
/// features come from frozen forwards; no adaptor gradient exists here.
pub fn linear_probe(
    train_x: &Tensor,
    train_y: &[u32],
    test_x: &Tensor,
    test_y: &[u32],
    config: &ProbeConfig,
) -> Result<(f64, Option<f64>)> {
    config.validate()?;
    if train_x.cols() != test_x.cols() {
        return Err(Error::dimension(format!(
            "train features have {} dims, test features {}",
            train_x.cols(),
            test_x.cols()
        )));
    }
    if train_y.len() != train_x.rows() || test_y.len() != test_x.rows() {
        return Err(Error::dimension("feature row and label counts differ"));
    }

    let keep = stratified_subset(train_y, config.data_fraction, config.seed)?;
    let mut sub_rows = Vec::with_capacity(keep.len() * train_x.cols());
    let mut sub_y = Vec::with_capacity(keep.len());
    for &i in &keep {
        sub_rows.extend_from_slice(train_x.row(i));
        sub_y.push(train_y[i] as usize);
    }
    let sub_x = Tensor::from_vec(keep.len(), train_x.cols(), sub_rows)?;

    let mut distinct: Vec<usize> = sub_y.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::config(
            "probe training subset holds a single class; nothing to separate",
        ));
    }
    let classes = 1 + (*train_y.iter().chain(test_y).max().unwrap() as usize);

    let params = train_probe(&sub_x, &sub_y, classes, config)?;

    let logits = params.logits(test_x);
    let mut correct = 0;
    for (i, label) in test_y.iter().enumerate() {
        if argmax_lowest(logits.row(i)) == *label as usize {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / test_y.len() as f64;

    let auroc_score = if classes == 2 {
        let scores: Vec<f64> = (0..logits.rows())
            .map(|i| logits.get(i, 1) - logits.get(i, 0))
            .collect();
        Some(auroc(&scores, test_y)?)
    } else {
        None
    };
    Ok((accuracy, auroc_score))
}

/// Frozen image-only adaptor features for every sample, one row each.
pub fn adaptor_image_features(
    params: &AdaptorParams,
    adaptor: &AdaptorConfig,
    cache: &EmbeddingCache,
) -> Result<Tensor> {
    let n = cache.n_samples();
    let mut rows = Vec::with_capacity(n * adaptor.d_shared);
    for i in 0..n {
        let f = embed_image(params, adaptor, &cache.image_embedding(i)?)?;
        rows.extend_from_slice(f.data());
    }
    Tensor::from_vec(n, adaptor.d_shared, rows)
}

/// Token-mean image embeddings straight from the cache, one row each.
pub fn raw_pooled_image_features(cache: &EmbeddingCache) -> Result<Tensor> {
    let n = cache.n_samples();
    let mut rows = Vec::with_capacity(n * cache.d_img());
    for i in 0..n {
        rows.extend_from_slice(cache.pooled_image(i)?.data());
    }
    Tensor::from_vec(n, cache.d_img(), rows)
}

/// Frozen paired forwards over a cache: stacked `(X̂, T̂)` embeddings.
pub fn paired_embeddings(
    params: &AdaptorParams,
    adaptor: &AdaptorConfig,
    cache: &EmbeddingCache,
) -> Result<(Tensor, Tensor)> {
    let n = cache.n_samples();
    let d = adaptor.d_shared;
    let mut xs = Vec::with_capacity(n * d);
    let mut ts = Vec::with_capacity(n * d);
    for i in 0..n {
        let (x_hat, t_hat) = embed_pair(
            params,
            adaptor,
            &cache.image_embedding(i)?,
            &cache.text_embedding(i)?,
        )?;
        xs.extend_from_slice(x_hat.data());
        ts.extend_from_slice(t_hat.data());
    }
    Ok((Tensor::from_vec(n, d, xs)?, Tensor::from_vec(n, d, ts)?))
}

fn require_labels<'a>(cache: &'a EmbeddingCache, role: &str) -> Result<&'a [u32]> {
    cache
        .labels()
        .ok_or_else(|| Error::config(format!("{role} cache carries no labels")))
}

/// Full evaluation of a frozen adaptor: retrieval on the test split's
/// paired embeddings, the probe trained on train-split adaptor features
/// and scored on the test split, and separability of the test split's raw
/// versus adaptor features.
pub fn evaluate(
    params: &AdaptorParams,
    adaptor: &AdaptorConfig,
    train: &EmbeddingCache,
    test: &EmbeddingCache,
    ks: &[usize],
    probe: &ProbeConfig,
) -> Result<EvalReport> {
    probe.validate()?;
    let train_y = require_labels(train, "train")?;
    let test_y = require_labels(test, "test")?;

    let (x_hat, t_hat) = paired_embeddings(params, adaptor, test)?;
    let mut recall = Vec::with_capacity(ks.len());
    for &k in ks {
        recall.push((k, recall_at_k(&x_hat, &t_hat, k)?));
    }

    let train_features = adaptor_image_features(params, adaptor, train)?;
    let test_features = adaptor_image_features(params, adaptor, test)?;
    let (probe_accuracy, probe_auroc) =
        linear_probe(&train_features, train_y, &test_features, test_y, probe)?;

    let raw_test = raw_pooled_image_features(test)?;
    let separability_before = separability_score(&raw_test, test_y)?;
    let separability_after = separability_score(&test_features, test_y)?;

    Ok(EvalReport {
        recall_at_k: recall,
        probe_accuracy,
        probe_auroc,
        separability_before,
        separability_after,
        probe: *probe,
    })
}
