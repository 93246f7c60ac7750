//! Contrastive and classification objectives.
//!
//! All embeddings are expected to be unit rows; similarities are plain dot
//! products, optionally multiplied by a fixed `logit_scale` (1.0 reproduces
//! the unscaled objectives).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Similarity multiplier used unless configured otherwise (plain dot
/// products).
pub const DEFAULT_LOGIT_SCALE: f64 = 1.0;

/// Mean softmax cross-entropy of `N × K` logits against labels.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = g.log_softmax(logits, 1)?;
    let picked = g.pick(ls, labels)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

fn check_rows<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
    match (g.shape(a), g.shape(b)) {
        ([n, c], [_, c2]) if c == c2 => Ok((*n, *c)),
        (sa, sb) => Err(Error::Dimension(format!("{what}: embeddings {sa:?} and {sb:?}"))),
    }
}

/// `(1/N) Σ_i −log softmax_j(f_j^T · f_i^P)[y_i]` over the `K` class texts.
pub fn loss_pc_text<T: Scalar>(
    g: &mut Graph<T>,
    pc: Var,
    labels: &[usize],
    text: Var,
    logit_scale: f64,
) -> Result<Var> {
    let (n, _) = check_rows(g, pc, text, "pc-text loss")?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} embeddings", labels.len())));
    }
    let k = g.shape(text)[0];
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Argument(format!("label {bad} >= {k} classes")));
    }
    let tt = g.transpose(text)?;
    let sims = g.matmul(pc, tt)?;
    let logits = g.scale(sims, logit_scale);
    cross_entropy(g, logits, labels)
}

/// `(1/N) Σ_i −log softmax_j(f_j^V · f_i^P)[i]` over the batch's videos.
pub fn loss_pc_video<T: Scalar>(g: &mut Graph<T>, pc: Var, video: Var, logit_scale: f64) -> Result<Var> {
    let (n, _) = check_rows(g, pc, video, "pc-video loss")?;
    if g.shape(video)[0] != n {
        return Err(Error::Dimension(format!(
            "{n} point cloud embeddings but {} video embeddings",
            g.shape(video)[0]
        )));
    }
    let vt = g.transpose(video)?;
    let sims = g.matmul(pc, vt)?;
    let logits = g.scale(sims, logit_scale);
    let diag: Vec<usize> = (0..n).collect();
    cross_entropy(g, logits, &diag)
}

/// Coefficients of the contrastive (`alpha`, `beta`) and final (`theta`,
/// `gamma`) objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            theta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.theta, self.gamma];
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Argument(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Argument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

fn non_negative(ws: &[f64]) -> Result<()> {
    if ws.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Argument(format!("negative loss weight in {ws:?}")));
    }
    Ok(())
}

/// `alpha·L_pc_video + beta·L_pc_text`.
pub fn loss_cl(w: &LossWeights, l_pc_video: f64, l_pc_text: f64) -> Result<f64> {
    non_negative(&[w.alpha, w.beta])?;
    Ok(w.alpha * l_pc_video + w.beta * l_pc_text)
}

/// `L_cl + theta·L_pc + gamma·L_rgb`.
pub fn loss_final(w: &LossWeights, l_cl: f64, l_pc_ce: f64, l_rgb_ce: f64) -> Result<f64> {
    non_negative(&[w.theta, w.gamma])?;
    Ok(l_cl + w.theta * l_pc_ce + w.gamma * l_rgb_ce)
}

/// Graph form of [`loss_cl`] followed by [`loss_final`], summed in the same
/// order.
pub fn loss_final_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &LossWeights,
    l_pc_video: Var,
    l_pc_text: Var,
    l_pc_ce: Var,
    l_rgb_ce: Var,
) -> Result<Var> {
    w.validate()?;
    let a = g.scale(l_pc_video, w.alpha);
    let b = g.scale(l_pc_text, w.beta);
    let cl = g.add(a, b)?;
    let t = g.scale(l_pc_ce, w.theta);
    let s = g.add(cl, t)?;
    let r = g.scale(l_rgb_ce, w.gamma);
    g.add(s, r)
}

/// Smallest possible per-sample pc-text loss for unit vectors and `K`
/// classes: `ln(1 + (K − 1)·e^{−2})`.
pub fn pc_text_lower_bound(k: usize) -> f64 {
    (1.0 + (k as f64 - 1.0) * (-2.0f64).exp()).ln()
}
