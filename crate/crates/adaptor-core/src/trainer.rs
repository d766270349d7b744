//! Adam pre-training loop over cached embedding batches.
//!
//! Each step builds a fresh graph: every pair in the batch runs the
//! two-branch forward, the pooled embeddings are stacked into a similarity
//! matrix, and the weighted two-direction loss is backpropagated into all
//! parameters including `log_tau`. Batch order is a pure function of
//! `(seed, epoch)`, so a resumed run replays the exact batch sequence and
//! the whole trajectory is reproducible from config plus state counters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adaptor::{
    adaptor_forward_nodes, embed_pair, init_params, AdaptorConfig, AdaptorParams, Modality,
};
use crate::data::{sample_batches, EmbeddingCache, PairedBatch, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::math;
use crate::objective::{
    similarity_matrix, similarity_nodes, total_loss, total_loss_nodes, LossBreakdown,
    ALPHA_DEFAULT,
};
use crate::tensor::Tensor;

pub const LR_DEFAULT: f64 = 2e-5;
pub const BATCH_SIZE_DEFAULT: usize = 64;
pub const EPOCHS_DEFAULT: u64 = 20;
pub const BETA1_DEFAULT: f64 = 0.9;
pub const BETA2_DEFAULT: f64 = 0.999;
pub const ADAM_EPS_DEFAULT: f64 = 1e-8;

/// Full training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adaptor: AdaptorConfig,
    /// Weight on the image-to-text loss direction.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clipping threshold; off by default.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(adaptor: AdaptorConfig) -> Self {
        TrainConfig {
            adaptor,
            alpha: ALPHA_DEFAULT,
            lr: LR_DEFAULT,
            batch_size: BATCH_SIZE_DEFAULT,
            epochs: EPOCHS_DEFAULT,
            seed: 0,
            beta1: BETA1_DEFAULT,
            beta2: BETA2_DEFAULT,
            adam_eps: ADAM_EPS_DEFAULT,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adaptor.validate()?;
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && b > 0.0 && b < 1.0) {
                return Err(Error::config(format!(
                    "{name} must lie strictly between 0 and 1, got {b}"
                )));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::config(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!(
                    "grad_clip must be positive when set, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Optimizer state. There is no separate generator state to carry: batch
/// sampling is keyed by `(config.seed, epoch)`, so the counters below pin
/// the whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: AdaptorParams,
    /// Adam first moments, in canonical parameter order.
    pub m: Vec<Tensor>,
    /// Adam second moments, in canonical parameter order.
    pub v: Vec<Tensor>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

/// Fresh state: seeded parameter init, zero moments, zero counters.
pub fn init_state(config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let params = init_params(&config.adaptor, config.seed)?;
    let (m, v) = zero_moments(&params);
    Ok(TrainState {
        params,
        m,
        v,
        step: 0,
        epoch: 0,
    })
}

fn zero_moments(params: &AdaptorParams) -> (Vec<Tensor>, Vec<Tensor>) {
    let zeros: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    (zeros.clone(), zeros)
}

/// Scales all gradients by `max_norm / norm` when their global L2 norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum();
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One Adam update with bias correction over all parameters, `log_tau`
/// clamped into its bounds afterwards. Validates every gradient before
/// touching any parameter, so a bad gradient aborts with the state intact.
pub fn adam_step(state: &mut TrainState, grads: &[Tensor], config: &TrainConfig) -> Result<()> {
    let names: Vec<String> = state.params.tensors().iter().map(|(n, _)| n.clone()).collect();
    if grads.len() != names.len() {
        return Err(Error::dimension(format!(
            "{} gradients for {} parameters",
            grads.len(),
            names.len()
        )));
    }
    for ((name, p), g) in state.params.tensors().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dimension(format!(
                "gradient for {name} has shape {}x{}, parameter is {}x{}",
                g.rows(),
                g.cols(),
                p.rows(),
                p.cols()
            )));
        }
        if !g.is_finite() {
            return Err(Error::numeric(format!(
                "gradient for {name} is not finite; training aborted"
            )));
        }
    }

    let t = state.step + 1;
    let bc1 = 1.0 - math::pow_u(config.beta1, t);
    let bc2 = 1.0 - math::pow_u(config.beta2, t);
    for (slot, (_, p)) in state.params.tensors_mut().into_iter().enumerate() {
        let g = grads[slot].data();
        let m = state.m[slot].data_mut();
        let v = state.v[slot].data_mut();
        let p = p.data_mut();
        for i in 0..g.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.lr * m_hat / (math::sqrt(v_hat) + config.adam_eps);
        }
    }
    state.params.clamp_log_tau();
    state.step = t;
    Ok(())
}

/// Per-epoch record: batch means of the loss terms and of the temperature
/// in effect, plus the optional whole-split validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based index of the completed epoch.
    pub epoch: u64,
    /// Optimizer steps completed by the end of the epoch.
    pub step: u64,
    pub loss: f64,
    pub l_i2t: f64,
    pub l_t2i: f64,
    pub tau: f64,
    pub val_loss: Option<f64>,
}

struct BatchLoss {
    total: f64,
    l_i2t: f64,
    l_t2i: f64,
    tau: f64,
}

fn train_step(config: &TrainConfig, state: &mut TrainState, batch: &PairedBatch) -> Result<BatchLoss> {
    let mut g = Graph::new();
    let nodes = state.params.insert(&mut g, true);
    let mut xs = Vec::with_capacity(batch.len());
    let mut ts = Vec::with_capacity(batch.len());
    for (img, txt) in batch.img.iter().zip(&batch.txt) {
        let i = g.input(img.tokens.clone());
        let t = g.input(txt.tokens.clone());
        let (x_hat, t_hat) = adaptor_forward_nodes(
            &mut g,
            i,
            Modality::Image,
            t,
            Modality::Text,
            &nodes,
            &config.adaptor,
        )?;
        xs.push(x_hat);
        ts.push(t_hat);
    }
    let x_stack = g.concat_rows(&xs)?;
    let t_stack = g.concat_rows(&ts)?;
    let sim = similarity_nodes(&mut g, x_stack, t_stack)?;
    let loss = total_loss_nodes(&mut g, sim, nodes.log_tau, config.alpha)?;
    let out = BatchLoss {
        total: g.value(loss.total).get(0, 0),
        l_i2t: g.value(loss.l_i2t).get(0, 0),
        l_t2i: g.value(loss.l_t2i).get(0, 0),
        tau: g.value(loss.tau).get(0, 0),
    };
    g.backward(loss.total)?;

    let mut grads = Vec::new();
    for (id, (name, _)) in nodes.ids().into_iter().zip(state.params.tensors()) {
        let grad = g
            .grad(id)
            .ok_or_else(|| Error::state(format!("parameter {name} received no gradient")))?;
        grads.push(grad.clone());
    }
    drop(g);
    if let Some(max_norm) = config.grad_clip {
        clip_gradients(&mut grads, max_norm);
    }
    adam_step(state, &grads, config)?;
    Ok(out)
}

/// Loss of a whole cache under frozen parameters, every sample as one batch
/// row, in index order. Used for validation reporting and init-loss checks.
pub fn evaluate_loss(
    params: &AdaptorParams,
    adaptor: &AdaptorConfig,
    cache: &EmbeddingCache,
    alpha: f64,
) -> Result<LossBreakdown> {
    let n = cache.n_samples();
    let d = adaptor.d_shared;
    let mut x = Vec::with_capacity(n * d);
    let mut t = Vec::with_capacity(n * d);
    for i in 0..n {
        let (x_hat, t_hat) = embed_pair(
            params,
            adaptor,
            &cache.image_embedding(i)?,
            &cache.text_embedding(i)?,
        )?;
        x.extend_from_slice(x_hat.data());
        t.extend_from_slice(t_hat.data());
    }
    let s = similarity_matrix(
        &Tensor::from_vec(n, d, x)?,
        &Tensor::from_vec(n, d, t)?,
    )?;
    total_loss(&s, params.tau(), alpha)
}

fn check_cache(config: &TrainConfig, cache: &EmbeddingCache) -> Result<()> {
    if cache.split() != Split::Train {
        return Err(Error::config(format!(
            "training expects the train split, got {}",
            cache.split().name()
        )));
    }
    if cache.d_img() != config.adaptor.d_img || cache.d_txt() != config.adaptor.d_txt {
        return Err(Error::config(format!(
            "cache dims {}x{} do not match adaptor input dims {}x{}",
            cache.d_img(),
            cache.d_txt(),
            config.adaptor.d_img,
            config.adaptor.d_txt
        )));
    }
    Ok(())
}

/// Advances `state` to the end of `target_epoch`, emitting one metrics
/// record per epoch. A state already at or past the target runs nothing.
pub fn train_until(
    config: &TrainConfig,
    cache: &EmbeddingCache,
    val: Option<&EmbeddingCache>,
    state: &mut TrainState,
    target_epoch: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    check_cache(config, cache)?;
    let mut log = Vec::new();
    while state.epoch < target_epoch {
        let batches = sample_batches(cache, config.batch_size, config.seed, state.epoch)?;
        let mut sums = BatchLoss {
            total: 0.0,
            l_i2t: 0.0,
            l_t2i: 0.0,
            tau: 0.0,
        };
        for batch in &batches {
            let b = train_step(config, state, batch)?;
            sums.total += b.total;
            sums.l_i2t += b.l_i2t;
            sums.l_t2i += b.l_t2i;
            sums.tau += b.tau;
        }
        let n = batches.len() as f64;
        state.epoch += 1;
        let val_loss = match val {
            Some(v) => Some(evaluate_loss(&state.params, &config.adaptor, v, config.alpha)?.total),
            None => None,
        };
        let record = EpochMetrics {
            epoch: state.epoch,
            step: state.step,
            loss: sums.total / n,
            l_i2t: sums.l_i2t / n,
            l_t2i: sums.l_t2i / n,
            tau: sums.tau / n,
            val_loss,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}

/// Full run from a fresh seeded state through `config.epochs` epochs.
pub fn pretrain(
    config: &TrainConfig,
    cache: &EmbeddingCache,
    val: Option<&EmbeddingCache>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(TrainState, Vec<EpochMetrics>)> {
    let mut state = init_state(config)?;
    let log = train_until(config, cache, val, &mut state, config.epochs, on_epoch)?;
    Ok((state, log))
}
