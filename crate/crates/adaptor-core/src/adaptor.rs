//! The trainable adaptor: per-modality linear projections into a shared
//! width, a stack of pre-norm cross-attention transformer blocks whose
//! weights serve both modality branches, mean pooling over tokens, and a
//! learnable softmax temperature.
//!
//! Parameters live outside any graph as plain [`Tensor`]s; a forward pass
//! inserts them into a [`Graph`] (trainable or frozen) and wires the ops.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Axis, Graph, NodeId};
use crate::math;
use crate::tensor::Tensor;

/// Initial softmax temperature.
pub const TAU_INIT: f64 = 0.07;
/// Lower clamp bound for the temperature.
pub const TAU_MIN: f64 = 0.01;
/// Upper clamp bound for the temperature.
pub const TAU_MAX: f64 = 100.0;
/// Epsilon inside every layer-norm variance.
pub const LN_EPS: f64 = 1e-5;

/// Which frozen encoder an embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

/// Token matrix from one frozen encoder, tagged with its modality.
/// Global-vector embeddings are the single-token case.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalEmbedding {
    pub tokens: Tensor,
    pub modality: Modality,
}

impl ModalEmbedding {
    pub fn image(tokens: Tensor) -> Self {
        ModalEmbedding {
            tokens,
            modality: Modality::Image,
        }
    }

    pub fn text(tokens: Tensor) -> Self {
        ModalEmbedding {
            tokens,
            modality: Modality::Text,
        }
    }
}

/// Token pooling strategy for the final global embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorConfig {
    /// Input image-embedding width.
    pub d_img: usize,
    /// Input text-embedding width.
    pub d_txt: usize,
    /// Shared width both modalities are projected to.
    pub d_shared: usize,
    /// Number of transformer blocks per branch.
    pub n_layers: usize,
    /// Attention heads; must divide `d_shared`.
    pub n_heads: usize,
    /// Feedforward hidden width.
    pub d_ffn: usize,
    pub pooling: Pooling,
    /// L2-normalize the pooled outputs (on by default; off preserves raw
    /// inner products).
    pub normalize_outputs: bool,
    /// One weight set serves both branches (on by default; off gives each
    /// branch its own blocks, for ablation).
    pub share_branch_weights: bool,
}

impl AdaptorConfig {
    /// Dimensions plus defaults: two shared blocks, normalized outputs.
    pub fn with_dims(
        d_img: usize,
        d_txt: usize,
        d_shared: usize,
        n_heads: usize,
        d_ffn: usize,
    ) -> Self {
        AdaptorConfig {
            d_img,
            d_txt,
            d_shared,
            n_layers: 2,
            n_heads,
            d_ffn,
            pooling: Pooling::Mean,
            normalize_outputs: true,
            share_branch_weights: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_img", self.d_img),
            ("d_txt", self.d_txt),
            ("d_shared", self.d_shared),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_shared.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_shared {} is not divisible by n_heads {}",
                self.d_shared, self.n_heads
            )));
        }
        Ok(())
    }

    /// Per-head width.
    pub fn head_dim(&self) -> usize {
        self.d_shared / self.n_heads
    }

    /// Input width expected for a modality.
    pub fn input_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Image => self.d_img,
            Modality::Text => self.d_txt,
        }
    }

    /// Exact number of trainable scalars, in closed form:
    ///
    /// ```text
    ///   (d_img + 1)·d + (d_txt + 1)·d              projections with bias
    /// + L·B·(4·d² + 2·d·f + f + 9·d)               transformer blocks
    /// + 1                                          log-temperature
    /// ```
    ///
    /// with `d = d_shared`, `f = d_ffn`, `L = n_layers`, and `B = 1` when
    /// the branches share weights, else 2. Each block holds four `d×d`
    /// attention projections with biases (4d² + 4d), the feedforward pair
    /// (d·f + f + f·d + d), and two layer norms (4d).
    pub fn param_count(&self) -> u64 {
        let d = self.d_shared as u64;
        let f = self.d_ffn as u64;
        let projections = (self.d_img as u64 + 1) * d + (self.d_txt as u64 + 1) * d;
        let per_block = 4 * d * d + 2 * d * f + f + 9 * d;
        let branches = if self.share_branch_weights { 1 } else { 2 };
        projections + self.n_layers as u64 * branches * per_block + 1
    }
}

/// Weights of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorParams {
    pub w_img: Tensor,
    pub b_img: Tensor,
    pub w_txt: Tensor,
    pub b_txt: Tensor,
    /// Blocks used by both branches, or by the image branch alone when
    /// `txt_layers` is present.
    pub layers: Vec<LayerParams>,
    /// Text-branch blocks when branch weights are unshared.
    pub txt_layers: Option<Vec<LayerParams>>,
    /// `1x1` log of the softmax temperature.
    pub log_tau: Tensor,
}

macro_rules! layer_fields {
    () => {
        [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w1", "b1", "w2", "b2", "ln1_gain",
            "ln1_bias", "ln2_gain", "ln2_bias",
        ]
    };
}

impl LayerParams {
    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

impl AdaptorParams {
    /// All parameter tensors with canonical names, in the fixed order that
    /// initialization, optimizer moments, flattening, and checkpoints share:
    /// projections, then blocks in index order (field order as in
    /// [`LayerParams`]), then unshared text blocks if any, then `log_tau`.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (String::from("w_img"), &self.w_img),
            (String::from("b_img"), &self.b_img),
            (String::from("w_txt"), &self.w_txt),
            (String::from("b_txt"), &self.b_txt),
        ];
        for (prefix, layers) in [("layer", Some(&self.layers)), ("txt_layer", self.txt_layers.as_ref())]
        {
            let Some(layers) = layers else { continue };
            for (i, layer) in layers.iter().enumerate() {
                for (name, t) in layer_fields!().iter().zip(layer.tensors()) {
                    out.push((format!("{prefix}{i}.{name}"), t));
                }
            }
        }
        out.push((String::from("log_tau"), &self.log_tau));
        out
    }

    /// Mutable variant of [`AdaptorParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            (String::from("w_img"), &mut self.w_img),
            (String::from("b_img"), &mut self.b_img),
            (String::from("w_txt"), &mut self.w_txt),
            (String::from("b_txt"), &mut self.b_txt),
        ];
        let txt = self.txt_layers.as_mut();
        for (prefix, layers) in [("layer", Some(&mut self.layers)), ("txt_layer", txt)] {
            let Some(layers) = layers else { continue };
            for (i, layer) in layers.iter_mut().enumerate() {
                for (name, t) in layer_fields!().iter().zip(layer.tensors_mut()) {
                    out.push((format!("{prefix}{i}.{name}"), t));
                }
            }
        }
        out.push((String::from("log_tau"), &mut self.log_tau));
        out
    }

    /// Total trainable scalars, by enumeration.
    pub fn scalar_count(&self) -> u64 {
        self.tensors().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    /// All parameter values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every parameter from a flat buffer produced by
    /// [`AdaptorParams::flatten`] on an identically shaped parameter set.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.scalar_count() as usize;
        if flat.len() != expected {
            return Err(Error::dimension(format!(
                "flat buffer holds {} values but the parameters hold {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Current temperature `exp(log_tau)`.
    pub fn tau(&self) -> f64 {
        math::exp(self.log_tau.get(0, 0))
    }

    /// Clamps `log_tau` so the temperature stays within
    /// `[`[`TAU_MIN`]`, `[`TAU_MAX`]`]`.
    pub fn clamp_log_tau(&mut self) {
        let bounded = self
            .log_tau
            .get(0, 0)
            .clamp(math::ln(TAU_MIN), math::ln(TAU_MAX));
        self.log_tau.set(0, 0, bounded);
    }

    /// Inserts every parameter into a graph, as trainable leaves when
    /// `trainable`, else as plain inputs (frozen evaluation).
    pub fn insert(&self, g: &mut Graph, trainable: bool) -> AdaptorNodes {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            }
        };
        let insert_layer = |g: &mut Graph, l: &LayerParams, trainable: bool| {
            let mut leaf = |t: &Tensor| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            };
            LayerNodes {
                wq: leaf(&l.wq),
                bq: leaf(&l.bq),
                wk: leaf(&l.wk),
                bk: leaf(&l.bk),
                wv: leaf(&l.wv),
                bv: leaf(&l.bv),
                wo: leaf(&l.wo),
                bo: leaf(&l.bo),
                w1: leaf(&l.w1),
                b1: leaf(&l.b1),
                w2: leaf(&l.w2),
                b2: leaf(&l.b2),
                ln1_gain: leaf(&l.ln1_gain),
                ln1_bias: leaf(&l.ln1_bias),
                ln2_gain: leaf(&l.ln2_gain),
                ln2_bias: leaf(&l.ln2_bias),
            }
        };
        let w_img = leaf(&self.w_img);
        let b_img = leaf(&self.b_img);
        let w_txt = leaf(&self.w_txt);
        let b_txt = leaf(&self.b_txt);
        let layers: Vec<LayerNodes> = self
            .layers
            .iter()
            .map(|l| insert_layer(g, l, trainable))
            .collect();
        let txt_layers = self
            .txt_layers
            .as_ref()
            .map(|ls| ls.iter().map(|l| insert_layer(g, l, trainable)).collect());
        let log_tau = if trainable {
            g.param(self.log_tau.clone())
        } else {
            g.input(self.log_tau.clone())
        };
        AdaptorNodes {
            w_img,
            b_img,
            w_txt,
            b_txt,
            layers,
            txt_layers,
            log_tau,
        }
    }
}

/// Graph handles for one block's weights.
#[derive(Debug, Clone)]
pub struct LayerNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
}

impl LayerNodes {
    fn ids(&self) -> [NodeId; 16] {
        [
            self.wq,
            self.bq,
            self.wk,
            self.bk,
            self.wv,
            self.bv,
            self.wo,
            self.bo,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.ln1_gain,
            self.ln1_bias,
            self.ln2_gain,
            self.ln2_bias,
        ]
    }
}

/// Graph handles for all parameters, in the same canonical order as
/// [`AdaptorParams::tensors`].
#[derive(Debug, Clone)]
pub struct AdaptorNodes {
    pub w_img: NodeId,
    pub b_img: NodeId,
    pub w_txt: NodeId,
    pub b_txt: NodeId,
    pub layers: Vec<LayerNodes>,
    pub txt_layers: Option<Vec<LayerNodes>>,
    pub log_tau: NodeId,
}

impl AdaptorNodes {
    /// Node ids in canonical parameter order.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        out.extend([self.w_img, self.b_img, self.w_txt, self.b_txt]);
        for layers in [Some(&self.layers), self.txt_layers.as_ref()] {
            let Some(layers) = layers else { continue };
            for l in layers {
                out.extend(l.ids());
            }
        }
        out.push(self.log_tau);
        out
    }

    fn projection(&self, modality: Modality) -> (NodeId, NodeId) {
        match modality {
            Modality::Image => (self.w_img, self.b_img),
            Modality::Text => (self.w_txt, self.b_txt),
        }
    }

    /// Blocks for the branch whose query is `modality`.
    fn branch_layers(&self, modality: Modality) -> &[LayerNodes] {
        match (modality, self.txt_layers.as_ref()) {
            (Modality::Text, Some(txt)) => txt,
            _ => &self.layers,
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = math::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("positive extents")
}

fn init_layer(rng: &mut ChaCha8Rng, d: usize, f: usize) -> LayerParams {
    // The two residual-branch output matrices (attention out-projection and
    // second FFN matrix) start at zero, so every block is the identity at
    // initialization and the whole module reduces to projection + pooling.
    // Adapter-style near-identity init: the blocks only contribute once the
    // objective grows them, which keeps early training in the well-behaved
    // dual-projection regime.
    LayerParams {
        wq: glorot(rng, d, d),
        bq: Tensor::zeros(1, d),
        wk: glorot(rng, d, d),
        bk: Tensor::zeros(1, d),
        wv: glorot(rng, d, d),
        bv: Tensor::zeros(1, d),
        wo: Tensor::zeros(d, d),
        bo: Tensor::zeros(1, d),
        w1: glorot(rng, d, f),
        b1: Tensor::zeros(1, f),
        w2: Tensor::zeros(f, d),
        b2: Tensor::zeros(1, d),
        ln1_gain: Tensor::filled(1, d, 1.0),
        ln1_bias: Tensor::zeros(1, d),
        ln2_gain: Tensor::filled(1, d, 1.0),
        ln2_bias: Tensor::zeros(1, d),
    }
}

/// Fresh parameters: Glorot-uniform projections and in-block input matrices,
/// zero residual-branch output matrices (each block starts as the identity),
/// zero biases, unit layer-norm gains, `log_tau = ln(0.07)`. Deterministic
/// in `seed`.
pub fn init_params(config: &AdaptorConfig, seed: u64) -> Result<AdaptorParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (config.d_shared, config.d_ffn);
    let w_img = glorot(&mut rng, config.d_img, d);
    let b_img = Tensor::zeros(1, d);
    let w_txt = glorot(&mut rng, config.d_txt, d);
    let b_txt = Tensor::zeros(1, d);
    let layers = (0..config.n_layers)
        .map(|_| init_layer(&mut rng, d, f))
        .collect();
    let txt_layers = if config.share_branch_weights {
        None
    } else {
        Some(
            (0..config.n_layers)
                .map(|_| init_layer(&mut rng, d, f))
                .collect(),
        )
    };
    Ok(AdaptorParams {
        w_img,
        b_img,
        w_txt,
        b_txt,
        layers,
        txt_layers,
        log_tau: Tensor::scalar(math::ln(TAU_INIT)),
    })
}

/// Multi-head scaled dot-product attention over already-normalized token
/// matrices. Returns the mixed context plus the per-head attention maps
/// (softmax rows, one node per head).
fn multi_head_attention(
    g: &mut Graph,
    q_tokens: NodeId,
    kv_tokens: NodeId,
    layer: &LayerNodes,
    config: &AdaptorConfig,
) -> Result<(NodeId, Vec<NodeId>)> {
    let dh = config.head_dim();
    let scale = 1.0 / math::sqrt(dh as f64);
    let q_all = g.matmul(q_tokens, layer.wq)?;
    let q_all = g.add(q_all, layer.bq)?;
    let k_all = g.matmul(kv_tokens, layer.wk)?;
    let k_all = g.add(k_all, layer.bk)?;
    let v_all = g.matmul(kv_tokens, layer.wv)?;
    let v_all = g.add(v_all, layer.bv)?;
    let mut contexts = Vec::with_capacity(config.n_heads);
    let mut maps = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let q = g.slice_cols(q_all, h * dh, dh)?;
        let k = g.slice_cols(k_all, h * dh, dh)?;
        let v = g.slice_cols(v_all, h * dh, dh)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores, Axis::Rows)?;
        maps.push(attn);
        contexts.push(g.matmul(attn, v)?);
    }
    let ctx = g.concat_cols(&contexts)?;
    let out = g.matmul(ctx, layer.wo)?;
    let out = g.add(out, layer.bo)?;
    Ok((out, maps))
}

/// One pre-norm transformer block:
/// `y = q + Attn(LN1(q), LN1(kv))`, `out = y + FFN(LN2(y))`.
pub fn cross_attention_block(
    g: &mut Graph,
    q_tokens: NodeId,
    kv_tokens: NodeId,
    layer: &LayerNodes,
    config: &AdaptorConfig,
) -> Result<NodeId> {
    config.validate()?;
    for (name, id) in [("query", q_tokens), ("key/value", kv_tokens)] {
        let width = g.value(id).cols();
        if width != config.d_shared {
            return Err(Error::dimension(format!(
                "{name} tokens are {width} wide, expected d_shared {}",
                config.d_shared
            )));
        }
    }
    let qn = g.layer_norm(q_tokens, layer.ln1_gain, layer.ln1_bias, LN_EPS)?;
    let kvn = g.layer_norm(kv_tokens, layer.ln1_gain, layer.ln1_bias, LN_EPS)?;
    let (attn_out, _) = multi_head_attention(g, qn, kvn, layer, config)?;
    let y = g.add(q_tokens, attn_out)?;
    let yn = g.layer_norm(y, layer.ln2_gain, layer.ln2_bias, LN_EPS)?;
    let h = g.matmul(yn, layer.w1)?;
    let h = g.add(h, layer.b1)?;
    let h = g.gelu(h)?;
    let ffn = g.matmul(h, layer.w2)?;
    let ffn = g.add(ffn, layer.b2)?;
    g.add(y, ffn)
}

fn project(
    g: &mut Graph,
    tokens: NodeId,
    modality: Modality,
    nodes: &AdaptorNodes,
    config: &AdaptorConfig,
) -> Result<NodeId> {
    let width = g.value(tokens).cols();
    let expected = config.input_dim(modality);
    if width != expected {
        return Err(Error::dimension(format!(
            "{} tokens are {width} wide, config expects {expected}",
            modality.name()
        )));
    }
    let (w, b) = nodes.projection(modality);
    let projected = g.matmul(tokens, w)?;
    g.add(projected, b)
}

fn pool_and_normalize(g: &mut Graph, tokens: NodeId, config: &AdaptorConfig) -> Result<NodeId> {
    let pooled = match config.pooling {
        Pooling::Mean => g.mean_rows(tokens)?,
    };
    if config.normalize_outputs {
        g.l2_normalize_rows(pooled)
    } else {
        Ok(pooled)
    }
}

/// Runs both branches over a pair of token matrices already inserted into
/// the graph, one per modality in either order. Each argument is projected
/// by its own modality's matrix; in every layer the two branches read the
/// same pair of previous-layer token matrices, so with shared weights the
/// wiring is symmetric: swapping the arguments swaps the outputs exactly.
/// Outputs follow argument order as `1 x d_shared` pooled embeddings.
pub fn adaptor_forward_nodes(
    g: &mut Graph,
    a_tokens: NodeId,
    a_modality: Modality,
    b_tokens: NodeId,
    b_modality: Modality,
    nodes: &AdaptorNodes,
    config: &AdaptorConfig,
) -> Result<(NodeId, NodeId)> {
    config.validate()?;
    if a_modality == b_modality {
        return Err(Error::config(format!(
            "adaptor_forward needs one embedding per modality, got {} twice",
            a_modality.name()
        )));
    }
    let mut a = project(g, a_tokens, a_modality, nodes, config)?;
    let mut b = project(g, b_tokens, b_modality, nodes, config)?;
    for i in 0..config.n_layers {
        let a_layer = &nodes.branch_layers(a_modality)[i];
        let b_layer = &nodes.branch_layers(b_modality)[i];
        let next_a = cross_attention_block(g, a, b, a_layer, config)?;
        let next_b = cross_attention_block(g, b, a, b_layer, config)?;
        a = next_a;
        b = next_b;
    }
    Ok((
        pool_and_normalize(g, a, config)?,
        pool_and_normalize(g, b, config)?,
    ))
}

/// Text-free inference: the image tokens serve as query, key, and value in
/// every block (the cross-attention degenerates to self-attention), using
/// the image branch's blocks. Used for all downstream evaluation.
pub fn adaptor_forward_image_only_nodes(
    g: &mut Graph,
    img_tokens: NodeId,
    nodes: &AdaptorNodes,
    config: &AdaptorConfig,
) -> Result<NodeId> {
    config.validate()?;
    let mut x = project(g, img_tokens, Modality::Image, nodes, config)?;
    for layer in nodes.branch_layers(Modality::Image).iter().take(config.n_layers) {
        x = cross_attention_block(g, x, x, layer, config)?;
    }
    pool_and_normalize(g, x, config)
}

fn check_modality(e: &ModalEmbedding, expected: Modality) -> Result<()> {
    if e.modality != expected {
        return Err(Error::config(format!(
            "expected a {} embedding, got {}",
            expected.name(),
            e.modality.name()
        )));
    }
    Ok(())
}

/// Frozen-parameter forward over one image/text pair, producing pooled
/// `1 x d_shared` embeddings `(x̂, t̂)`.
pub fn embed_pair(
    params: &AdaptorParams,
    config: &AdaptorConfig,
    img: &ModalEmbedding,
    txt: &ModalEmbedding,
) -> Result<(Tensor, Tensor)> {
    check_modality(img, Modality::Image)?;
    check_modality(txt, Modality::Text)?;
    let mut g = Graph::new();
    let nodes = params.insert(&mut g, false);
    let i = g.input(img.tokens.clone());
    let t = g.input(txt.tokens.clone());
    let (x_hat, t_hat) = adaptor_forward_nodes(
        &mut g,
        i,
        Modality::Image,
        t,
        Modality::Text,
        &nodes,
        config,
    )?;
    Ok((g.value(x_hat).clone(), g.value(t_hat).clone()))
}

/// Frozen-parameter text-free forward for one image embedding.
pub fn embed_image(
    params: &AdaptorParams,
    config: &AdaptorConfig,
    img: &ModalEmbedding,
) -> Result<Tensor> {
    check_modality(img, Modality::Image)?;
    let mut g = Graph::new();
    let nodes = params.insert(&mut g, false);
    let i = g.input(img.tokens.clone());
    let out = adaptor_forward_image_only_nodes(&mut g, i, &nodes, config)?;
    Ok(g.value(out).clone())
}
