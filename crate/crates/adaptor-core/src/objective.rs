//! Symmetric temperature-scaled contrastive objective.
//!
//! For a batch of n pairs with similarity matrix `S[k][j] = ⟨x̂_k, t̂_j⟩`,
//! the image-to-text loss is
//!
//! ```text
//! l_i2t = −(1/n) Σ_k log( exp(S[k][k]/τ) / Σ_j exp(S[k][j]/τ) )
//! ```
//!
//! with the denominator running over the row (all texts in the batch); the
//! text-to-image loss sums the denominator over the column and equals
//! `l_i2t` applied to `Sᵀ`, bit for bit. The training objective is the
//! weighted sum `α·l_i2t + (1−α)·l_t2i`.
//!
//! Pure `f64` evaluators live beside a graph builder that wires the same
//! computation differentiably, with `τ = exp(log_tau)` as a trainable leaf.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::tensor::Tensor;

/// Default loss weight on the image-to-text direction.
pub const ALPHA_DEFAULT: f64 = 0.75;

/// Pairwise inner products of a batch, `S[k][j] = ⟨x̂_k, t̂_j⟩`.
///
/// A batch holds at least one pair by construction, since [`Tensor`]
/// extents are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    s: Tensor,
}

impl SimilarityMatrix {
    /// Wraps a square matrix of finite similarity scores.
    pub fn new(s: Tensor) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::dimension(format!(
                "similarity matrix must be square, got {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        if !s.is_finite() {
            return Err(Error::numeric("similarity matrix has non-finite entries"));
        }
        Ok(SimilarityMatrix { s })
    }

    /// Batch size n.
    pub fn n(&self) -> usize {
        self.s.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.s
    }

    pub fn transposed(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            s: self.s.transposed(),
        }
    }
}

/// Both loss directions and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_i2t: f64,
    pub l_t2i: f64,
    /// `alpha·l_i2t + (1−alpha)·l_t2i`.
    pub total: f64,
    pub alpha: f64,
    /// Temperature the scores were divided by.
    pub tau: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::config(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    Ok(())
}

/// `S = X̂ · T̂ᵀ` for row-per-sample embedding matrices of equal shape.
pub fn similarity_matrix(x_hat: &Tensor, t_hat: &Tensor) -> Result<SimilarityMatrix> {
    if x_hat.shape() != t_hat.shape() {
        return Err(Error::dimension(format!(
            "embedding batches differ: {}x{} vs {}x{}",
            x_hat.rows(),
            x_hat.cols(),
            t_hat.rows(),
            t_hat.cols()
        )));
    }
    SimilarityMatrix::new(crate::tensor::matmul(x_hat, &t_hat.transposed())?)
}

/// Per-row loss terms of the image-to-text direction:
/// `lse_j(S[k][j]/τ) − S[k][k]/τ` for each row k. The mean of these terms
/// is [`info_nce_i2t`].
pub fn info_nce_i2t_terms(s: &SimilarityMatrix, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let m = &s.s;
    let n = m.rows();
    let mut terms = Vec::with_capacity(n);
    let mut scaled = Vec::with_capacity(n);
    for k in 0..n {
        scaled.clear();
        scaled.extend(m.row(k).iter().map(|v| v / tau));
        let max = scaled.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let sum: f64 = scaled.iter().map(|v| math::exp(v - max)).sum();
        let lse = max + math::ln(sum);
        terms.push(lse - scaled[k]);
    }
    Ok(terms)
}

/// Image-to-text InfoNCE: softmax denominators run over each row of `S/τ`.
pub fn info_nce_i2t(s: &SimilarityMatrix, tau: f64) -> Result<f64> {
    let terms = info_nce_i2t_terms(s, tau)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Text-to-image InfoNCE: denominators run over columns, computed as the
/// row-wise loss of `Sᵀ` so the two directions agree bit for bit.
pub fn info_nce_t2i(s: &SimilarityMatrix, tau: f64) -> Result<f64> {
    info_nce_i2t(&s.transposed(), tau)
}

fn weighted_total(alpha: f64, l_i2t: f64, l_t2i: f64) -> f64 {
    alpha * l_i2t + (1.0 - alpha) * l_t2i
}

/// Both directions plus their `α`-weighted sum.
pub fn total_loss(s: &SimilarityMatrix, tau: f64, alpha: f64) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    let l_i2t = info_nce_i2t(s, tau)?;
    let l_t2i = info_nce_t2i(s, tau)?;
    Ok(LossBreakdown {
        l_i2t,
        l_t2i,
        total: weighted_total(alpha, l_i2t, l_t2i),
        alpha,
        tau,
    })
}

/// Graph handles for the differentiable loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub l_i2t: NodeId,
    pub l_t2i: NodeId,
    /// `exp(log_tau)`, the temperature actually used.
    pub tau: NodeId,
}

/// `S = X̂ · T̂ᵀ` inside a graph.
pub fn similarity_nodes(g: &mut Graph, x_stack: NodeId, t_stack: NodeId) -> Result<NodeId> {
    let (xs, ts) = (g.value(x_stack).shape(), g.value(t_stack).shape());
    if xs != ts {
        return Err(Error::dimension(format!(
            "embedding batches differ: {}x{} vs {}x{}",
            xs.0, xs.1, ts.0, ts.1
        )));
    }
    let tt = g.transpose(t_stack)?;
    g.matmul(x_stack, tt)
}

fn direction_nodes(g: &mut Graph, scaled: NodeId) -> Result<NodeId> {
    let lse = g.logsumexp_rows(scaled)?;
    let diag = g.diag(scaled)?;
    let per_row = g.sub(lse, diag)?;
    g.mean_all(per_row)
}

/// Wires the full objective over a square similarity node and a `1x1`
/// `log_tau` leaf: scores divided by `exp(log_tau)`, both directions, and
/// the weighted total. Gradients flow into the similarity producers and
/// `log_tau` alike.
pub fn total_loss_nodes(
    g: &mut Graph,
    sim: NodeId,
    log_tau: NodeId,
    alpha: f64,
) -> Result<LossNodes> {
    check_alpha(alpha)?;
    let shape = g.value(sim).shape();
    if shape.0 != shape.1 {
        return Err(Error::dimension(format!(
            "similarity matrix must be square, got {}x{}",
            shape.0, shape.1
        )));
    }
    if !g.value(log_tau).is_scalar() {
        return Err(Error::dimension("log_tau must be 1x1"));
    }
    let tau = g.exp(log_tau)?;
    let scaled = g.div(sim, tau)?;
    let l_i2t = direction_nodes(g, scaled)?;
    let scaled_t = g.transpose(scaled)?;
    let l_t2i = direction_nodes(g, scaled_t)?;
    let weighted_i2t = g.scale(l_i2t, alpha)?;
    let weighted_t2i = g.scale(l_t2i, 1.0 - alpha)?;
    let total = g.add(weighted_i2t, weighted_t2i)?;
    Ok(LossNodes {
        total,
        l_i2t,
        l_t2i,
        tau,
    })
}
