//! Embedding cache, synthetic paired-embedding generator, and batch sampling.
//!
//! The cache plays the role of pre-computed frozen-encoder outputs: training
//! and evaluation never run an encoder, they replay embeddings from here.
//! The synthetic generator stands in for a pair of frozen backbones by
//! drawing a shared low-dimensional latent per sample and pushing it through
//! two fixed random linear maps, one per modality.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adaptor::ModalEmbedding;
use crate::math;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of the class centers in latent space. Kept below one
/// so that classes are moderately separated rather than trivially far
/// apart: class structure should be learnable, not linearly obvious from
/// any single noisy view.
const CENTER_SCALE: f64 = 0.65;

/// Latent jitter per unit of `noise_sigma`: within-class spread that makes
/// individual pairs distinguishable, so retrieval has a signal to fit.
const LATENT_JITTER_PER_SIGMA: f64 = 4.0;

/// Log standard deviation of the per-sample image norm profile per unit of
/// `noise_sigma`. Real frozen encoders emit embeddings whose norms swing
/// widely across inputs while the direction carries the semantics; the
/// stand-in reproduces that by scaling each image embedding with a
/// log-normal factor. Euclidean geometry on raw image features degrades
/// accordingly, while any direction-based consumer is unaffected.
const IMG_LOG_SCALE_PER_SIGMA: f64 = 15.0;

/// Additive-noise amplification for the image modality. The image encoder
/// stand-in is deliberately the noisier of the two: its per-dimension
/// noise is this multiple of `noise_sigma`, while text noise stays at
/// `noise_sigma` itself. Cross-modal pre-training can suppress the excess
/// because the text side anchors the shared latent; consumers of the raw
/// image features cannot.
const IMG_NOISE_PER_SIGMA: f64 = 5.0;

/// Which partition a cache belongs to. The `u8` codes are part of the cache
/// file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_u8(code: u8) -> Result<Split> {
        match code {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Paired frozen-encoder embeddings held in memory.
///
/// Every stored float is exactly representable in `f32`: constructors
/// quantize, so writing the cache at `f32` precision and widening on read
/// reproduces the in-memory values bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    n_samples: usize,
    d_img: usize,
    d_txt: usize,
    tokens_img: usize,
    tokens_txt: usize,
    img: Vec<f64>,
    txt: Vec<f64>,
    labels: Option<Vec<u32>>,
    split: Split,
}

fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

impl EmbeddingCache {
    /// Validates lengths and finiteness, quantizes floats to `f32`
    /// precision, and wraps the arrays.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_samples: usize,
        d_img: usize,
        d_txt: usize,
        tokens_img: usize,
        tokens_txt: usize,
        mut img: Vec<f64>,
        mut txt: Vec<f64>,
        labels: Option<Vec<u32>>,
        split: Split,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::dimension("cache must hold at least one sample"));
        }
        if d_img == 0 || d_txt == 0 || tokens_img == 0 || tokens_txt == 0 {
            return Err(Error::dimension("embedding dims and token counts must be nonzero"));
        }
        let want_img = n_samples * tokens_img * d_img;
        let want_txt = n_samples * tokens_txt * d_txt;
        if img.len() != want_img {
            return Err(Error::dimension(format!(
                "image array holds {} floats, expected {want_img}",
                img.len()
            )));
        }
        if txt.len() != want_txt {
            return Err(Error::dimension(format!(
                "text array holds {} floats, expected {want_txt}",
                txt.len()
            )));
        }
        if img.iter().chain(txt.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("cache embeddings must be finite"));
        }
        if let Some(l) = &labels {
            if l.len() != n_samples {
                return Err(Error::dimension(format!(
                    "{} labels for {n_samples} samples",
                    l.len()
                )));
            }
        }
        quantize(&mut img);
        quantize(&mut txt);
        Ok(EmbeddingCache {
            n_samples,
            d_img,
            d_txt,
            tokens_img,
            tokens_txt,
            img,
            txt,
            labels,
            split,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn d_img(&self) -> usize {
        self.d_img
    }

    pub fn d_txt(&self) -> usize {
        self.d_txt
    }

    pub fn tokens_img(&self) -> usize {
        self.tokens_img
    }

    pub fn tokens_txt(&self) -> usize {
        self.tokens_txt
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_data(&self) -> &[f64] {
        &self.img
    }

    pub fn text_data(&self) -> &[f64] {
        &self.txt
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n_samples {
            return Err(Error::dimension(format!(
                "sample {i} out of range for {} samples",
                self.n_samples
            )));
        }
        Ok(())
    }

    pub fn image_rows(&self, i: usize) -> Result<&[f64]> {
        self.check_index(i)?;
        let stride = self.tokens_img * self.d_img;
        Ok(&self.img[i * stride..(i + 1) * stride])
    }

    pub fn text_rows(&self, i: usize) -> Result<&[f64]> {
        self.check_index(i)?;
        let stride = self.tokens_txt * self.d_txt;
        Ok(&self.txt[i * stride..(i + 1) * stride])
    }

    /// Sample `i`'s image tokens as a tagged `tokens_img x d_img` map.
    pub fn image_embedding(&self, i: usize) -> Result<ModalEmbedding> {
        let t = Tensor::from_vec(self.tokens_img, self.d_img, self.image_rows(i)?.to_vec())?;
        Ok(ModalEmbedding::image(t))
    }

    /// Sample `i`'s text tokens as a tagged `tokens_txt x d_txt` map.
    pub fn text_embedding(&self, i: usize) -> Result<ModalEmbedding> {
        let t = Tensor::from_vec(self.tokens_txt, self.d_txt, self.text_rows(i)?.to_vec())?;
        Ok(ModalEmbedding::text(t))
    }

    /// Token-mean image vector, `1 x d_img`: the raw pooled feature used by
    /// probe baselines. With one token per sample this is the stored vector.
    pub fn pooled_image(&self, i: usize) -> Result<Tensor> {
        let rows = self.image_rows(i)?;
        Ok(pool_rows(rows, self.tokens_img, self.d_img))
    }

    /// Token-mean text vector, `1 x d_txt`.
    pub fn pooled_text(&self, i: usize) -> Result<Tensor> {
        let rows = self.text_rows(i)?;
        Ok(pool_rows(rows, self.tokens_txt, self.d_txt))
    }

    /// Copies samples `[start, start+count)` into a new cache tagged `split`.
    pub fn slice(&self, start: usize, count: usize, split: Split) -> Result<EmbeddingCache> {
        if count == 0 || start + count > self.n_samples {
            return Err(Error::dimension(format!(
                "slice [{start}, {}) out of range for {} samples",
                start + count,
                self.n_samples
            )));
        }
        let is = self.tokens_img * self.d_img;
        let ts = self.tokens_txt * self.d_txt;
        EmbeddingCache::new(
            count,
            self.d_img,
            self.d_txt,
            self.tokens_img,
            self.tokens_txt,
            self.img[start * is..(start + count) * is].to_vec(),
            self.txt[start * ts..(start + count) * ts].to_vec(),
            self.labels.as_ref().map(|l| l[start..start + count].to_vec()),
            split,
        )
    }

    /// Splits into train/val/test parts of `floor(n·f_train)`,
    /// `floor(n·f_val)`, and the remainder, in sample order.
    pub fn partition(
        &self,
        f_train: f64,
        f_val: f64,
    ) -> Result<(EmbeddingCache, EmbeddingCache, EmbeddingCache)> {
        if !(f_train > 0.0 && f_val > 0.0 && f_train + f_val < 1.0) {
            return Err(Error::config(format!(
                "partition fractions must be positive and sum below 1, got {f_train} and {f_val}"
            )));
        }
        let n_train = (self.n_samples as f64 * f_train) as usize;
        let n_val = (self.n_samples as f64 * f_val) as usize;
        let n_test = self.n_samples - n_train - n_val;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::config(format!(
                "partition of {} samples leaves an empty part ({n_train}/{n_val}/{n_test})",
                self.n_samples
            )));
        }
        Ok((
            self.slice(0, n_train, Split::Train)?,
            self.slice(n_train, n_val, Split::Val)?,
            self.slice(n_train + n_val, n_test, Split::Test)?,
        ))
    }

    /// Reassigns text embeddings to images by a seeded permutation, breaking
    /// the true pairing. Image embeddings and labels stay in place. This is
    /// the null-control input: no shared latent links a pair anymore.
    pub fn shuffle_pairing(&self, seed: u64) -> EmbeddingCache {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = permutation(&mut rng, self.n_samples);
        let ts = self.tokens_txt * self.d_txt;
        let mut txt = Vec::with_capacity(self.txt.len());
        for &src in &perm {
            txt.extend_from_slice(&self.txt[src * ts..(src + 1) * ts]);
        }
        EmbeddingCache {
            txt,
            img: self.img.clone(),
            labels: self.labels.clone(),
            ..*self
        }
    }
}

fn pool_rows(rows: &[f64], tokens: usize, d: usize) -> Tensor {
    let mut out = vec![0.0; d];
    for t in 0..tokens {
        for c in 0..d {
            out[c] += rows[t * d + c];
        }
    }
    for v in &mut out {
        *v /= tokens as f64;
    }
    Tensor::row_vector(out).expect("d > 0 by cache invariant")
}

/// Per-channel mean over spatial positions: `channels x (h·w)` to
/// `1 x channels`. Ingestion hook for convolutional-backbone feature maps.
/// A map is non-empty by construction, since [`Tensor`] extents are
/// positive.
pub fn pool_feature_map(feature_map: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(feature_map.rows());
    for r in 0..feature_map.rows() {
        let row = feature_map.row(r);
        out.push(row.iter().sum::<f64>() / row.len() as f64);
    }
    Tensor::row_vector(out).expect("tensor has at least one row")
}

/// Recipe for a synthetic paired-embedding cache.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub d_latent: usize,
    pub d_img: usize,
    pub d_txt: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if self.d_latent == 0 || self.d_img == 0 || self.d_txt == 0 {
            return Err(Error::config("latent and embedding dims must be nonzero"));
        }
        if self.d_latent > self.d_img || self.d_latent > self.d_txt {
            return Err(Error::config(format!(
                "d_latent {} exceeds an output dim ({} image, {} text)",
                self.d_latent, self.d_img, self.d_txt
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::config("n_classes must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * normal(rng)).collect()
}

/// Generates a paired cache from a shared latent per sample.
///
/// Per class a latent center is drawn from a unit Gaussian; per sample the
/// latent is its class center plus jitter of scale
/// `4·noise_sigma` per latent dim. Modality embeddings are fixed random
/// linear maps of the latent (entries scaled by `1/sqrt(d_latent)`, full
/// rank almost surely) plus isotropic noise of scale `noise_sigma`. The
/// image embedding is then multiplied by a per-sample log-normal norm
/// factor `exp(30·noise_sigma·g)`, `g ~ N(0,1)`, mimicking the wide norm
/// spread of real frozen-encoder outputs. All nuisance scales are
/// proportional to `noise_sigma`, so zero noise collapses each class to a
/// single repeated pair.
///
/// The draw order below is fixed; together with float quantization it makes
/// the output a pure function of the spec.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<EmbeddingCache> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dl, di, dt) = (spec.d_latent, spec.d_img, spec.d_txt);

    // Draw order: image map, text map, class centers, then per sample
    // class, jitter, norm factor, image noise, text noise.
    let map_img = normal_vec(&mut rng, di * dl, 1.0 / math::sqrt(dl as f64));
    let map_txt = normal_vec(&mut rng, dt * dl, 1.0 / math::sqrt(dl as f64));
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| normal_vec(&mut rng, dl, CENTER_SCALE))
        .collect();

    let sigma = spec.noise_sigma;
    let jitter_scale = LATENT_JITTER_PER_SIGMA * sigma;
    let log_scale_sd = IMG_LOG_SCALE_PER_SIGMA * sigma;
    let img_sigma = IMG_NOISE_PER_SIGMA * sigma;

    let mut img = Vec::with_capacity(spec.n_samples * di);
    let mut txt = Vec::with_capacity(spec.n_samples * dt);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let class = rng.random_range(0..spec.n_classes);
        labels.push(class as u32);
        let jitter = normal_vec(&mut rng, dl, jitter_scale);
        let latent: Vec<f64> = centers[class]
            .iter()
            .zip(&jitter)
            .map(|(c, j)| c + j)
            .collect();
        let norm_factor = math::exp(log_scale_sd * normal(&mut rng));
        let img_noise = normal_vec(&mut rng, di, img_sigma);
        let txt_noise = normal_vec(&mut rng, dt, sigma);

        for j in 0..di {
            let signal: f64 = (0..dl).map(|l| map_img[j * dl + l] * latent[l]).sum();
            img.push(norm_factor * (signal + img_noise[j]));
        }
        for j in 0..dt {
            let signal: f64 = (0..dl).map(|l| map_txt[j * dl + l] * latent[l]).sum();
            txt.push(signal + txt_noise[j]);
        }
    }

    EmbeddingCache::new(
        spec.n_samples,
        di,
        dt,
        1,
        1,
        img,
        txt,
        Some(labels),
        Split::Train,
    )
}

/// One minibatch of aligned pairs. Built by [`sample_batches`], which
/// guarantees equal lengths and unique indices.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub img: Vec<ModalEmbedding>,
    pub txt: Vec<ModalEmbedding>,
    /// Source sample ids within the cache.
    pub indices: Vec<usize>,
    pub labels: Option<Vec<u32>>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Shuffles the cache with a generator keyed by `(seed, epoch)` and cuts the
/// permutation into batches of `batch_size`, dropping the partial tail.
/// Every sample appears at most once per epoch; the sequence is a pure
/// function of its arguments.
pub fn sample_batches(
    cache: &EmbeddingCache,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PairedBatch>> {
    if batch_size < 2 {
        return Err(Error::config(format!(
            "contrastive batches need at least 2 pairs, got batch_size {batch_size}"
        )));
    }
    if batch_size > cache.n_samples() {
        return Err(Error::config(format!(
            "batch_size {batch_size} exceeds cache size {}",
            cache.n_samples()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let order = permutation(&mut rng, cache.n_samples());

    let n_batches = cache.n_samples() / batch_size;
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let ids = &order[b * batch_size..(b + 1) * batch_size];
        let mut img = Vec::with_capacity(batch_size);
        let mut txt = Vec::with_capacity(batch_size);
        let mut labels = cache.labels().map(|_| Vec::with_capacity(batch_size));
        for &i in ids {
            img.push(cache.image_embedding(i)?);
            txt.push(cache.text_embedding(i)?);
            if let (Some(out), Some(all)) = (&mut labels, cache.labels()) {
                out.push(all[i]);
            }
        }
        batches.push(PairedBatch {
            img,
            txt,
            indices: ids.to_vec(),
            labels,
        });
    }
    Ok(batches)
}
