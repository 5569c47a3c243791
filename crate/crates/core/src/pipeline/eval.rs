use std::fmt::Write as _;

use crate::geometry::iou_3d;

use super::{Detection, GtObject, ObjectClass};

/// Number of recall positions `1/40, 2/40, …, 1`.
pub const RECALL_POSITIONS: usize = 40;

/// Predictions and ground truth of one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneDetections {
    pub detections: Vec<Detection>,
    pub gt: Vec<GtObject>,
}

/// AP of one class at one matching threshold; `None` when the split has no
/// ground truth of that class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApRow {
    pub class: ObjectClass,
    pub iou: f64,
    pub ap: Option<f64>,
}

/// AP over 40 recall positions. Detections of `class` are visited in
/// descending score order (scene, then list order on ties); each claims the
/// unmatched same-class ground truth of highest 3D IoU at or above
/// `iou_threshold`, otherwise counts as a false positive. Precision at a
/// recall position is the best precision reached at that recall or beyond.
pub fn ap_r40(scenes: &[SceneDetections], class: ObjectClass, iou_threshold: f64) -> Option<f64> {
    let n_gt: usize = scenes
        .iter()
        .map(|s| s.gt.iter().filter(|g| g.class == class).count())
        .sum();
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (di, d) in s.detections.iter().enumerate() {
            if d.class == class {
                order.push((d.score, si, di));
            }
        }
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut claimed: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gt.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    for &(_, si, di) in &order {
        let d = &scenes[si].detections[di];
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in scenes[si].gt.iter().enumerate() {
            if g.class != class || claimed[si][gi] {
                continue;
            }
            let iou = iou_3d(&d.bbox, &g.bbox).unwrap_or(0.0);
            if iou >= iou_threshold && best.is_none_or(|b| iou > b.0) {
                best = Some((iou, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                claimed[si][gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // Running maximum of precision from the tail.
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }
    let mut sum = 0.0;
    for k in 1..=RECALL_POSITIONS {
        let r = k as f64 / RECALL_POSITIONS as f64;
        if let Some(i) = curve.iter().position(|c| c.0 >= r - 1e-12) {
            sum += envelope[i];
        }
    }
    Some(sum / RECALL_POSITIONS as f64)
}

/// AP rows for every class at its configured threshold, plus car at 0.5.
pub fn evaluate(scenes: &[SceneDetections], eval_iou: &[f64; 3]) -> Vec<ApRow> {
    let mut rows: Vec<ApRow> = ObjectClass::ALL
        .iter()
        .map(|&class| ApRow {
            class,
            iou: eval_iou[class.index()],
            ap: ap_r40(scenes, class, eval_iou[class.index()]),
        })
        .collect();
    if eval_iou[ObjectClass::Car.index()] != 0.5 {
        rows.insert(
            1,
            ApRow {
                class: ObjectClass::Car,
                iou: 0.5,
                ap: ap_r40(scenes, ObjectClass::Car, 0.5),
            },
        );
    }
    rows
}

/// `class,iou,ap` rows; classes without ground truth report `NA`.
pub fn format_report(rows: &[ApRow]) -> String {
    let mut out = String::from("class,iou,ap\n");
    for r in rows {
        let ap = r.ap.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{},{:.2},{}", r.class, r.iou, ap);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;

    fn car(x: f64) -> Box3D {
        Box3D::new(x, 0.0, -0.9, 1.56, 1.6, 3.9, 0.0).unwrap()
    }

    fn det(x: f64, score: f64) -> Detection {
        Detection {
            bbox: car(x),
            score,
            class: ObjectClass::Car,
        }
    }

    fn gt(x: f64) -> GtObject {
        GtObject {
            class: ObjectClass::Car,
            bbox: car(x),
        }
    }

    #[test]
    fn perfect_none_and_absent() {
        let perfect = [SceneDetections {
            detections: vec![det(0.0, 0.9), det(10.0, 0.8)],
            gt: vec![gt(0.0), gt(10.0)],
        }];
        assert_eq!(ap_r40(&perfect, ObjectClass::Car, 0.7), Some(1.0));
        let none = [SceneDetections {
            detections: vec![],
            gt: vec![gt(0.0)],
        }];
        assert_eq!(ap_r40(&none, ObjectClass::Car, 0.7), Some(0.0));
        assert_eq!(ap_r40(&perfect, ObjectClass::Cyclist, 0.5), None);
    }

    #[test]
    fn trailing_false_positive_keeps_full_ap() {
        let s = [SceneDetections {
            detections: vec![det(0.0, 0.9), det(20.0, 0.8)],
            gt: vec![gt(0.0)],
        }];
        assert_eq!(ap_r40(&s, ObjectClass::Car, 0.7), Some(1.0));
    }

    #[test]
    fn leading_false_positive_halves_precision() {
        // FP at 0.9 then TP at 0.8: precision 1/2 at recall 1.
        let s = [SceneDetections {
            detections: vec![det(20.0, 0.9), det(0.0, 0.8)],
            gt: vec![gt(0.0)],
        }];
        assert!((ap_r40(&s, ObjectClass::Car, 0.7).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let s = [SceneDetections {
            detections: vec![det(0.0, 0.9), det(0.05, 0.85)],
            gt: vec![gt(0.0), gt(30.0)],
        }];
        // Recall reaches 1/2 with precision 1; recall 1 is never reached.
        assert!((ap_r40(&s, ObjectClass::Car, 0.7).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_marks_absent_classes() {
        let rows = evaluate(
            &[SceneDetections {
                detections: vec![det(0.0, 0.9)],
                gt: vec![gt(0.0)],
            }],
            &[0.7, 0.5, 0.5],
        );
        let text = format_report(&rows);
        assert_eq!(
            text,
            "class,iou,ap\nCar,0.70,1.0000\nCar,0.50,1.0000\nPedestrian,0.50,NA\nCyclist,0.50,NA\n"
        );
    }
}
