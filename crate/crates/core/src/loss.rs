//! Task losses. Every loss is the mean over the batch rows.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::head::{decoder_forward, DecoderVars};

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const LN_FLOOR: f64 = 1e-12;

/// Binary focal loss on raw logits (`B × 1`) against `{0, 1}` labels:
/// `-α y (1-p)^γ ln p - (1-α)(1-y) p^γ ln(1-p)`, `p = σ(logit)`.
pub fn focal_loss(
    g: &mut Graph,
    logits: Var,
    labels: &Tensor,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!(
            "focal alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::contract(format!(
            "focal gamma must be >= 0, got {gamma}"
        )));
    }
    let (b, w) = g.shape(logits);
    if w != 1 || labels.rows() != b || labels.cols() != 1 {
        return Err(Error::Dimension {
            op: "focal_loss",
            lhs: g.value(logits).shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    if labels.data().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract("focal loss labels must be 0 or 1"));
    }
    let y = g.constant(labels.clone());
    let not_y = g.constant(labels.map(|v| 1.0 - v)?);

    let p = g.sigmoid(logits)?;
    let q = g.affine(p, -1.0, 1.0)?;
    let ln_p = g.ln_clamped(p, LN_FLOOR)?;
    let ln_q = g.ln_clamped(q, LN_FLOOR)?;

    let wq = g.powf(q, gamma)?;
    let pos = g.mul(wq, ln_p)?;
    let pos = g.mul(pos, y)?;
    let pos = g.scale(pos, -alpha)?;

    let wp = g.powf(p, gamma)?;
    let neg = g.mul(wp, ln_q)?;
    let neg = g.mul(neg, not_y)?;
    let neg = g.scale(neg, -(1.0 - alpha))?;

    let per_sample = g.add(pos, neg)?;
    g.mean(per_sample)
}

/// Mean of squared differences over all entries.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::Dimension {
            op: "mse_loss",
            lhs: g.value(pred).shape().to_vec(),
            rhs: g.value(target).shape().to_vec(),
        });
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Decoder reconstruction of the concatenated final modality states.
/// Gradient flows into both the fused embedding and the encoder states.
pub fn recon_loss(g: &mut Graph, dec: &DecoderVars, fused: Var, finals: Var) -> Result<Var> {
    let recon = decoder_forward(g, dec, fused)?;
    mse_loss(g, recon, finals)
}

/// `task + lambda · recon`; without a reconstruction term the task loss is
/// returned as is.
pub fn total_loss(g: &mut Graph, task: Var, recon: Option<Var>, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::contract(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    match recon {
        None => Ok(task),
        Some(r) => {
            let r = g.scale(r, lambda)?;
            g.add(task, r)
        }
    }
}
