//! Training objectives: focal classification, smooth-L1 box regression and
//! orientation cross-entropy for the proposal stage, IoU-interpolated soft
//! labels with binary cross-entropy for refinement, and target assignment.

mod targets;

pub use targets::{
    assign_anchor_targets, assign_roi_targets, fold_yaw, AnchorLabel, AnchorTargets, RoITargets,
};

use crate::tensor::{Result, Tensor, TensorError, Var};

/// Bound applied to every probability before it enters a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub sigma_fg: f64,
    pub sigma_bg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            beta: 2.0,
            sigma_fg: 0.75,
            sigma_bg: 0.25,
        }
    }
}

fn zero<'g>(like: &Var<'g>) -> Var<'g> {
    like.graph().constant(Tensor::scalar(0.0))
}

fn column(values: Vec<f64>) -> Tensor {
    Tensor::matrix(values.len(), 1, values)
}

fn check_rows(op: &'static str, pred: &Var<'_>, rows: usize, cols: usize) -> Result<()> {
    if pred.shape() != [rows, cols] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: pred.shape(),
            rhs: vec![rows, cols],
        });
    }
    Ok(())
}

/// Mean over non-ignored anchors of `-α (1 - p_t)^γ ln p_t`, with `p_t = μ`
/// for positives and `1 - μ` for negatives. `prob` is `A × 1`.
pub fn focal_loss<'g>(
    prob: &Var<'g>,
    labels: &[AnchorLabel],
    alpha: f64,
    gamma: f64,
) -> Result<Var<'g>> {
    check_rows("focal_loss", prob, labels.len(), 1)?;
    let (mut idx, mut offset, mut sign) = (Vec::new(), Vec::new(), Vec::new());
    for (i, l) in labels.iter().enumerate() {
        match l {
            AnchorLabel::Positive => {
                idx.push(i);
                offset.push(0.0);
                sign.push(1.0);
            }
            AnchorLabel::Negative => {
                idx.push(i);
                offset.push(1.0);
                sign.push(-1.0);
            }
            AnchorLabel::Ignored => {}
        }
    }
    if idx.is_empty() {
        return Ok(zero(prob));
    }
    let g = prob.graph();
    let mu = prob.gather_rows(std::sync::Arc::new(idx))?;
    let p_t = mu
        .mul(&g.constant(column(sign)))?
        .add(&g.constant(column(offset)))?
        .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut loss = p_t.ln()?;
    if gamma != 0.0 {
        let modulating = p_t.neg().add_scalar(1.0).powf(gamma)?;
        loss = loss.mul(&modulating)?;
    }
    Ok(loss.mean().scale(-alpha))
}

/// Mean over rows (positives) of the summed smooth-L1 of `pred - target`.
pub fn smooth_l1_reg<'g>(pred: &Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    let rows = target.rows();
    check_rows("smooth_l1_reg", pred, rows, target.cols())?;
    if rows == 0 {
        return Ok(zero(pred));
    }
    let d = pred.sub(&pred.graph().constant(target.clone()))?;
    Ok(d.smooth_l1().sum().scale(1.0 / rows as f64))
}

/// Mean categorical cross-entropy of `P × bins` logits against bin indices.
pub fn orientation_loss<'g>(logits: &Var<'g>, targets: &[usize]) -> Result<Var<'g>> {
    let bins = logits.cols();
    check_rows("orientation_loss", logits, targets.len(), bins)?;
    if targets.is_empty() {
        return Ok(zero(logits));
    }
    let mut onehot = Tensor::zeros(&[targets.len(), bins]);
    for (i, &t) in targets.iter().enumerate() {
        if t >= bins {
            return Err(TensorError::Invalid {
                op: "orientation_loss",
                msg: format!("target bin {t} out of range for {bins} bins"),
            });
        }
        onehot.data_mut()[i * bins + t] = 1.0;
    }
    let picked = logits
        .log_softmax_rows()?
        .mul(&logits.graph().constant(onehot))?;
    Ok(picked.sum().scale(-1.0 / targets.len() as f64))
}

/// `cls + β (reg + ori)`.
pub fn rpn_loss<'g>(cls: &Var<'g>, reg: &Var<'g>, ori: &Var<'g>, beta: f64) -> Result<Var<'g>> {
    cls.add(&reg.add(ori)?.scale(beta))
}

/// `clamp((σ_iou - σ_bg) / (σ_fg - σ_bg), 0, 1)`.
pub fn soft_label(iou: f64, sigma_bg: f64, sigma_fg: f64) -> Result<f64> {
    if !(sigma_fg > sigma_bg) {
        return Err(TensorError::Invalid {
            op: "soft_label",
            msg: format!(
                "foreground threshold {sigma_fg} must exceed background threshold {sigma_bg}"
            ),
        });
    }
    Ok(((iou - sigma_bg) / (sigma_fg - sigma_bg)).clamp(0.0, 1.0))
}

/// Binary cross-entropy of `R × 1` confidences against soft targets,
/// averaged over RoIs.
pub fn refinement_cls_loss<'g>(pred: &Var<'g>, target: &[f64]) -> Result<Var<'g>> {
    check_rows("refinement_cls_loss", pred, target.len(), 1)?;
    if target.is_empty() {
        return Ok(zero(pred));
    }
    let g = pred.graph();
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = g.constant(column(target.to_vec()));
    let not_y = g.constant(column(target.iter().map(|t| 1.0 - t).collect()));
    let pos = p.ln()?.mul(&y)?;
    let neg = p.neg().add_scalar(1.0).ln()?.mul(&not_y)?;
    Ok(pos.add(&neg)?.mean().scale(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn col<'g>(g: &'g Graph, v: &[f64]) -> Var<'g> {
        g.constant(column(v.to_vec()))
    }

    #[test]
    fn focal_examples() {
        let g = Graph::new();
        let l = focal_loss(&col(&g, &[1.0]), &[AnchorLabel::Positive], 0.25, 2.0).unwrap();
        assert!(l.value().item().abs() < 1e-12);
        let l = focal_loss(&col(&g, &[0.9]), &[AnchorLabel::Positive], 0.25, 2.0).unwrap();
        assert!((l.value().item() - 2.634e-4).abs() < 1e-7);
        let probs = [0.3, 0.8, 0.6];
        let labels = [
            AnchorLabel::Positive,
            AnchorLabel::Negative,
            AnchorLabel::Ignored,
        ];
        let l = focal_loss(&col(&g, &probs), &labels, 1.0, 0.0)
            .unwrap()
            .value()
            .item();
        let bce = -(0.3f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((l - bce).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_examples() {
        let g = Graph::new();
        let target = Tensor::zeros(&[1, 7]);
        let mut e = [0.0; 7];
        assert_eq!(
            smooth_l1_reg(&g.constant(target.clone()), &target)
                .unwrap()
                .value()
                .item(),
            0.0
        );
        e[2] = 0.5;
        let l = smooth_l1_reg(&g.constant(Tensor::row(&e)), &target)
            .unwrap()
            .value()
            .item();
        assert!((l - 0.125).abs() < 1e-15);
        e[2] = 2.0;
        let l = smooth_l1_reg(&g.constant(Tensor::row(&e)), &target)
            .unwrap()
            .value()
            .item();
        assert!((l - 1.5).abs() < 1e-15);
        let empty = Tensor::zeros(&[0, 7]);
        assert_eq!(
            smooth_l1_reg(&g.constant(empty.clone()), &empty)
                .unwrap()
                .value()
                .item(),
            0.0
        );
    }

    #[test]
    fn orientation_examples() {
        let g = Graph::new();
        let l = orientation_loss(&g.constant(Tensor::row(&[0.0, 0.0])), &[1])
            .unwrap()
            .value()
            .item();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = orientation_loss(&g.constant(Tensor::row(&[1.0, 0.0])), &[0])
            .unwrap()
            .value()
            .item();
        assert!((l - 0.3133).abs() < 1e-4);
        let l = orientation_loss(&g.constant(Tensor::row(&[40.0, 0.0])), &[0])
            .unwrap()
            .value()
            .item();
        assert!(l < 1e-15);
    }

    #[test]
    fn rpn_combination() {
        let g = Graph::new();
        let s = |v| g.constant(Tensor::scalar(v));
        let l = rpn_loss(&s(0.1), &s(0.15), &s(0.05), 2.0)
            .unwrap()
            .value()
            .item();
        assert!((l - 0.5).abs() < 1e-15);
        let l = rpn_loss(&s(0.1), &s(0.15), &s(0.05), 0.0)
            .unwrap()
            .value()
            .item();
        assert_eq!(l, 0.1);
    }

    #[test]
    fn soft_label_endpoints() {
        assert_eq!(soft_label(0.75, 0.25, 0.75).unwrap(), 1.0);
        assert_eq!(soft_label(0.25, 0.25, 0.75).unwrap(), 0.0);
        assert!((soft_label(0.5, 0.25, 0.75).unwrap() - 0.5).abs() < 1e-12);
        assert!(soft_label(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn refinement_bce_examples() {
        let g = Graph::new();
        let l = refinement_cls_loss(&col(&g, &[0.0, 1.0]), &[0.0, 1.0])
            .unwrap()
            .value()
            .item();
        assert!(l < 1e-6);
        let l = refinement_cls_loss(&col(&g, &[0.5]), &[0.5])
            .unwrap()
            .value()
            .item();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let best = (1..100)
            .map(|i| i as f64 / 100.0)
            .min_by(|a, b| {
                let la = refinement_cls_loss(&col(&g, &[*a]), &[0.5])
                    .unwrap()
                    .value()
                    .item();
                let lb = refinement_cls_loss(&col(&g, &[*b]), &[0.5])
                    .unwrap()
                    .value()
                    .item();
                la.total_cmp(&lb)
            })
            .unwrap();
        assert!((best - 0.5).abs() < 1e-12);
    }
}
