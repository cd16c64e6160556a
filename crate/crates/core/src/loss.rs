//! The training objective: directional shadow-consistency and non-shadow
//! margin terms, their bidirectional sum, the BCE segmentation loss, the
//! weighted total, and analytical gradients of each.
//!
//! Gradients through the argmax selections treat the selected indices as
//! fixed, so the result is a subgradient that matches central differences
//! away from ties.

use crate::correspondence::{dot, find_correspondences, floored_norm, CorrespondenceResult, NORM_EPS};
use crate::error::{invalid, shape, Result};
use crate::tensor::{check_same_grid, BinaryMask, FeatureMap, ProbMask};

/// Weight of the correspondence term in the total objective.
pub const DEFAULT_LAMBDA: f64 = 10.0;
/// Margin of the non-shadow hinge.
pub const DEFAULT_BETA: f64 = 0.5;
/// Predictions are clamped into `[PRED_EPS, 1 - PRED_EPS]` before the log.
pub const PRED_EPS: f64 = 1e-7;

/// Per-term values of one objective evaluation. `fwd` is the `t -> t+δ`
/// direction, `bwd` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub shadow_fwd: f64,
    pub nshadow_fwd: f64,
    pub shadow_bwd: f64,
    pub nshadow_bwd: f64,
    pub l_sc: f64,
    pub l_seg: f64,
    pub total: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl LossBreakdown {
    /// Fills in the segmentation term and the weighted total.
    pub fn with_segmentation(mut self, l_seg: f64, lambda: f64) -> Self {
        self.l_seg = l_seg;
        self.lambda = lambda;
        self.total = total_loss(l_seg, self.l_sc, lambda);
        self
    }

    /// Breakdown of a run that does not evaluate the correspondence terms.
    pub fn segmentation_only(l_seg: f64) -> Self {
        Self {
            l_seg,
            total: l_seg,
            ..Self::default()
        }
    }
}

/// Gradients of `l_sc` with respect to both feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub grad_src: FeatureMap,
    pub grad_tgt: FeatureMap,
}

/// Mean squared gap between the full-grid match and the best shadow match.
pub fn shadow_consistency_loss(corr: &CorrespondenceResult) -> f64 {
    if corr.is_empty() || corr.target_shadow().is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .matches()
        .iter()
        .map(|m| {
            let q = m.q.expect("target shadow set is nonempty");
            (m.p.value - q.value).powi(2)
        })
        .sum();
    sum / corr.matches().len() as f64
}

/// Mean hinge `max(0, beta - |S(p) - S(qhat)|)` over anchors.
pub fn nonshadow_margin_loss(corr: &CorrespondenceResult, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(invalid(format!("beta must be non-negative, got {beta}")));
    }
    if corr.is_empty() || corr.target_nonshadow().is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = corr
        .matches()
        .iter()
        .map(|m| {
            let qhat = m.qhat.expect("target non-shadow set is nonempty");
            (beta - (m.p.value - qhat.value).abs()).max(0.0)
        })
        .sum();
    Ok(sum / corr.matches().len() as f64)
}

/// Per anchor, whether its hinge is on its sloped branch. Along with the
/// selection signature this pins down which smooth piece `l_sc` is on.
pub fn margin_activity(corr: &CorrespondenceResult, beta: f64) -> Vec<usize> {
    corr.matches()
        .iter()
        .filter_map(|m| m.qhat.map(|q| usize::from(beta - (m.p.value - q.value).abs() > 0.0)))
        .collect()
}

fn check_pair(f_t: &FeatureMap, f_td: &FeatureMap, y_t: &BinaryMask, y_td: &BinaryMask) -> Result<()> {
    if !f_t.same_grid(f_td) {
        return Err(shape(format!(
            "feature maps differ: {}x{}x{} vs {}x{}x{}",
            f_t.height(),
            f_t.width(),
            f_t.dim(),
            f_td.height(),
            f_td.width(),
            f_td.dim()
        )));
    }
    check_same_grid(f_t, y_t, "mask t vs features")?;
    check_same_grid(f_td, y_td, "mask t+δ vs features")
}

/// Correspondences in both directions, `(t -> t+δ, t+δ -> t)`.
pub fn bidirectional_correspondences(
    f_t: &FeatureMap,
    f_td: &FeatureMap,
    y_t: &BinaryMask,
    y_td: &BinaryMask,
) -> Result<(CorrespondenceResult, CorrespondenceResult)> {
    check_pair(f_t, f_td, y_t, y_td)?;
    Ok((
        find_correspondences(f_t, f_td, y_t, y_td)?,
        find_correspondences(f_td, f_t, y_td, y_t)?,
    ))
}

fn breakdown_from(fwd: &CorrespondenceResult, bwd: &CorrespondenceResult, beta: f64) -> Result<LossBreakdown> {
    let shadow_fwd = shadow_consistency_loss(fwd);
    let nshadow_fwd = nonshadow_margin_loss(fwd, beta)?;
    let shadow_bwd = shadow_consistency_loss(bwd);
    let nshadow_bwd = nonshadow_margin_loss(bwd, beta)?;
    Ok(LossBreakdown {
        shadow_fwd,
        nshadow_fwd,
        shadow_bwd,
        nshadow_bwd,
        l_sc: shadow_fwd + nshadow_fwd + shadow_bwd + nshadow_bwd,
        beta,
        ..LossBreakdown::default()
    })
}

/// Bidirectional correspondence loss. `l_seg`, `lambda` and `total` are left
/// at zero; see [`LossBreakdown::with_segmentation`].
pub fn sc_cor_loss(
    f_t: &FeatureMap,
    f_td: &FeatureMap,
    y_t: &BinaryMask,
    y_td: &BinaryMask,
    beta: f64,
) -> Result<LossBreakdown> {
    let (fwd, bwd) = bidirectional_correspondences(f_t, f_td, y_t, y_td)?;
    breakdown_from(&fwd, &bwd, beta)
}

/// `l_seg + lambda * l_sc`.
pub fn total_loss(l_seg: f64, l_sc: f64, lambda: f64) -> f64 {
    l_seg + lambda * l_sc
}

/// Adds `coef * dS(a, b)` to the gradients of the anchor vector `a` and the
/// target vector `b`, where `S` is the floored-norm cosine similarity.
fn add_cosine_grad(a: &[f64], b: &[f64], coef: f64, ga: &mut [f64], gb: &mut [f64]) {
    let na = floored_norm(a);
    let nb = floored_norm(b);
    let s = dot(a, b) / (na * nb);
    // Below the floor the norm is a constant and contributes no gradient.
    let ka = if na > NORM_EPS { s / (na * na) } else { 0.0 };
    let kb = if nb > NORM_EPS { s / (nb * nb) } else { 0.0 };
    let inv = 1.0 / (na * nb);
    for i in 0..a.len() {
        ga[i] += coef * (b[i] * inv - ka * a[i]);
        gb[i] += coef * (a[i] * inv - kb * b[i]);
    }
}

fn accumulate_direction(
    corr: &CorrespondenceResult,
    f_src: &FeatureMap,
    f_tgt: &FeatureMap,
    beta: f64,
    g_src: &mut [f64],
    g_tgt: &mut [f64],
) {
    if corr.is_empty() {
        return;
    }
    let d = f_src.dim();
    let n = corr.matches().len() as f64;
    let mut cell_pair = |a: usize, b: usize, coef: f64| {
        if coef == 0.0 {
            return;
        }
        add_cosine_grad(
            f_src.cell(a),
            f_tgt.cell(b),
            coef,
            &mut g_src[a * d..(a + 1) * d],
            &mut g_tgt[b * d..(b + 1) * d],
        );
    };
    for m in corr.matches() {
        if let Some(q) = m.q {
            let c = 2.0 * (m.p.value - q.value) / n;
            cell_pair(m.anchor, m.p.index, c);
            cell_pair(m.anchor, q.index, -c);
        }
        if let Some(qhat) = m.qhat {
            let gap = m.p.value - qhat.value;
            if beta - gap.abs() > 0.0 && gap != 0.0 {
                let c = -gap.signum() / n;
                cell_pair(m.anchor, m.p.index, c);
                cell_pair(m.anchor, qhat.index, -c);
            }
        }
    }
}

/// [`sc_cor_loss`] together with the gradient of `l_sc` with respect to
/// `f_t` (`grad_src`) and `f_td` (`grad_tgt`).
pub fn sc_cor_loss_grad(
    f_t: &FeatureMap,
    f_td: &FeatureMap,
    y_t: &BinaryMask,
    y_td: &BinaryMask,
    beta: f64,
) -> Result<(LossBreakdown, GradBuffer)> {
    let (fwd, bwd) = bidirectional_correspondences(f_t, f_td, y_t, y_td)?;
    let breakdown = breakdown_from(&fwd, &bwd, beta)?;
    let mut g_t = vec![0.0; f_t.data().len()];
    let mut g_td = vec![0.0; f_td.data().len()];
    accumulate_direction(&fwd, f_t, f_td, beta, &mut g_t, &mut g_td);
    accumulate_direction(&bwd, f_td, f_t, beta, &mut g_td, &mut g_t);
    let grads = GradBuffer {
        grad_src: FeatureMap::new(f_t.height(), f_t.width(), f_t.dim(), g_t)?,
        grad_tgt: FeatureMap::new(f_td.height(), f_td.width(), f_td.dim(), g_td)?,
    };
    Ok((breakdown, grads))
}

fn check_seg_inputs(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<()> {
    if preds.is_empty() {
        return Err(invalid("segmentation loss needs at least one frame"));
    }
    if preds.len() != gts.len() {
        return Err(shape(format!("{} predictions vs {} masks", preds.len(), gts.len())));
    }
    for (p, g) in preds.iter().zip(gts) {
        check_same_grid(p, g, "prediction vs mask")?;
    }
    Ok(())
}

fn clamp_pred(p: f64) -> f64 {
    p.clamp(PRED_EPS, 1.0 - PRED_EPS)
}

/// Binary cross entropy averaged over pixels and then over frames.
pub fn bce_segmentation_loss(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<f64> {
    check_seg_inputs(preds, gts)?;
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let frame: f64 = p
            .data()
            .iter()
            .zip(g.data())
            .map(|(&p, &y)| {
                let p = clamp_pred(p);
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        total += frame / p.data().len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Derivative of [`bce_segmentation_loss`] with respect to each prediction,
/// evaluated at the clamped prediction.
pub fn bce_grad(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<Vec<Vec<f64>>> {
    check_seg_inputs(preds, gts)?;
    let t = preds.len() as f64;
    Ok(preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let scale = t * p.data().len() as f64;
            p.data()
                .iter()
                .zip(g.data())
                .map(|(&p, &y)| {
                    let p = clamp_pred(p);
                    let y = f64::from(y);
                    (-y / p + (1.0 - y) / (1.0 - p)) / scale
                })
                .collect()
        })
        .collect())
}
