use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::{encode_residual, iou_3d, iou_bev, normalize_angle, Box3D, BoxResidual};

use super::soft_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignored,
}

/// Splits a yaw offset into a direction bin and a remainder in `[-π/2, π/2)`:
/// bin 1 means the box faces the opposite way.
pub fn fold_yaw(delta: f64) -> (usize, f64) {
    let d = normalize_angle(delta);
    if (-FRAC_PI_2..FRAC_PI_2).contains(&d) {
        (0, d)
    } else {
        (1, normalize_angle(d + PI))
    }
}

/// Residual whose yaw term is the folded offset, so regression never has
/// to cross the ±π seam.
fn folded_residual(gt: &Box3D, anchor: &Box3D) -> (BoxResidual, usize) {
    let mut r = encode_residual(gt, anchor);
    let (bin, d) = fold_yaw(gt.theta - anchor.theta);
    r.0[6] = d;
    (r, bin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<AnchorLabel>,
    pub matched: Vec<Option<usize>>,
    pub max_iou: Vec<f64>,
    /// Present for positives.
    pub residuals: Vec<Option<BoxResidual>>,
    /// Direction bin for positives.
    pub orientation: Vec<Option<usize>>,
}

impl AnchorTargets {
    pub fn positives(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == AnchorLabel::Positive)
            .collect()
    }
}

/// Max-BEV-IoU matching: positive at `≥ pos_iou`, negative at `≤ neg_iou`,
/// ignored in between. Each ground truth also claims its best anchor (lowest
/// index on ties) when that IoU is positive.
pub fn assign_anchor_targets(
    anchors: &[Box3D],
    gt: &[Box3D],
    pos_iou: f64,
    neg_iou: f64,
) -> AnchorTargets {
    let n = anchors.len();
    let mut max_iou = vec![0.0; n];
    let mut matched = vec![None; n];
    let mut best_for_gt = vec![(0.0, None); gt.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = iou_bev(a, g).unwrap_or(0.0);
            if iou > max_iou[i] {
                max_iou[i] = iou;
                matched[i] = Some(j);
            }
            if iou > best_for_gt[j].0 {
                best_for_gt[j] = (iou, Some(i));
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = max_iou
        .iter()
        .map(|&m| {
            if m >= pos_iou {
                AnchorLabel::Positive
            } else if m <= neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            }
        })
        .collect();
    for (j, (_, best)) in best_for_gt.iter().enumerate() {
        if let Some(i) = *best {
            labels[i] = AnchorLabel::Positive;
            matched[i] = Some(j);
        }
    }
    let mut residuals = vec![None; n];
    let mut orientation = vec![None; n];
    for i in 0..n {
        if labels[i] == AnchorLabel::Positive {
            let j = matched[i].expect("positive anchors are matched");
            let (r, bin) = folded_residual(&gt[j], &anchors[i]);
            residuals[i] = Some(r);
            orientation[i] = Some(bin);
        } else {
            matched[i] = matched[i].filter(|_| labels[i] != AnchorLabel::Negative);
        }
    }
    AnchorTargets {
        labels,
        matched,
        max_iou,
        residuals,
        orientation,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoITargets {
    pub iou: Vec<f64>,
    pub soft: Vec<f64>,
    pub matched: Vec<Option<usize>>,
    /// Residual to the best-matching ground truth, yaw folded.
    pub residuals: Vec<Option<BoxResidual>>,
}

/// Max-3D-IoU matching of RoIs with soft labels between the thresholds.
pub fn assign_roi_targets(
    rois: &[Box3D],
    gt: &[Box3D],
    sigma_bg: f64,
    sigma_fg: f64,
) -> crate::tensor::Result<RoITargets> {
    let mut out = RoITargets {
        iou: Vec::with_capacity(rois.len()),
        soft: Vec::with_capacity(rois.len()),
        matched: Vec::with_capacity(rois.len()),
        residuals: Vec::with_capacity(rois.len()),
    };
    for r in rois {
        let mut best = (0.0, None);
        for (j, g) in gt.iter().enumerate() {
            let iou = iou_3d(r, g).unwrap_or(0.0);
            if iou > best.0 || (best.1.is_none() && j == 0) {
                best = (iou, Some(j));
            }
        }
        out.iou.push(best.0);
        out.soft.push(soft_label(best.0, sigma_bg, sigma_fg)?);
        out.matched.push(best.1);
        out.residuals
            .push(best.1.map(|j| folded_residual(&gt[j], r).0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, y: f64, theta: f64) -> Box3D {
        Box3D::new(x, y, -0.9, 1.56, 1.6, 3.9, theta).unwrap()
    }

    #[test]
    fn identical_anchor_is_positive_with_zero_residual() {
        let t = assign_anchor_targets(
            &[car(0.0, 0.0, 0.0), car(30.0, 0.0, 0.0)],
            &[car(0.0, 0.0, 0.0)],
            0.7,
            0.25,
        );
        assert_eq!(t.labels, vec![AnchorLabel::Positive, AnchorLabel::Negative]);
        assert_eq!(t.residuals[0].unwrap().0, [0.0; 7]);
        assert_eq!(t.orientation[0], Some(0));
    }

    #[test]
    fn middling_overlap_is_ignored() {
        // A shift of l/3 along the heading gives IoU exactly 0.5.
        let gt = car(0.0, 0.0, 0.0);
        let best = car(0.0, 0.0, 0.0);
        let mid = car(3.9 / 3.0, 0.0, 0.0);
        let t = assign_anchor_targets(&[best, mid], &[gt], 0.7, 0.25);
        assert!((t.max_iou[1] - 0.5).abs() < 1e-9);
        assert_eq!(t.labels[1], AnchorLabel::Ignored);
    }

    #[test]
    fn best_anchor_is_forced_positive() {
        let gt = car(0.0, 0.0, 0.0);
        let t = assign_anchor_targets(&[car(2.0, 0.0, 0.0), car(1.0, 0.0, 0.0)], &[gt], 0.7, 0.25);
        assert!(t.max_iou[1] < 0.7);
        assert_eq!(t.labels[1], AnchorLabel::Positive);
    }

    #[test]
    fn opposite_heading_uses_second_bin() {
        let t = assign_anchor_targets(&[car(0.0, 0.0, 0.0)], &[car(0.0, 0.0, PI - 0.1)], 0.7, 0.25);
        assert_eq!(t.orientation[0], Some(1));
        assert!((t.residuals[0].unwrap().0[6] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn roi_targets_endpoints() {
        let gt = car(5.0, 5.0, 0.3);
        let t = assign_roi_targets(&[gt, car(40.0, 0.0, 0.0)], &[gt], 0.25, 0.75).unwrap();
        assert_eq!(t.soft, vec![1.0, 0.0]);
        assert_eq!(t.residuals[0].unwrap().0, [0.0; 7]);
    }
}
