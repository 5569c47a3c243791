//! The two-stage detector: encoder, fusion, an anchor RPN on the BEV map,
//! multi-pooling over proposals and a per-RoI refinement head.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{FusionModule, Neighborhood};
use crate::geometry::{decode_residual, nms_bev, Box3D, BoxResidual};
use crate::losses::{
    assign_anchor_targets, assign_roi_targets, focal_loss, orientation_loss, refinement_cls_loss,
    smooth_l1_reg, AnchorLabel,
};
use crate::pooling::RoIPooler;
use crate::scene::{PointCloud, SceneEncoder, SceneLayout};
use crate::tensor::{Graph, Index, Linear, ParamStore, Scope, Tensor, Var};

use super::{mix_seed, AnchorGrid, Detection, DetectorConfig, GtObject, ObjectClass, Result};

/// RPN output columns per anchor: class logit, 7 residuals, 2 direction logits.
pub const RPN_COLS: usize = 10;
/// Refinement output columns per RoI: confidence logit and 7 residuals.
pub const REFINE_COLS: usize = 8;
/// Bound on decoded log size ratios, keeping boxes finite and positive.
const MAX_LOG_SCALE: f64 = 3.0;

/// A scored, class-labeled Stage-I box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box3D,
    pub score: f64,
    pub class: ObjectClass,
}

/// One training scene with its parameter-independent preprocessing.
#[derive(Debug, Clone)]
pub struct Sample {
    pub layout: SceneLayout,
    pub gt: Vec<GtObject>,
    pub anchor_labels: Vec<AnchorLabel>,
    pub positives: Index,
    /// `P × 7` folded residuals of the positive anchors.
    pub pos_residuals: Tensor,
    pub pos_bins: Vec<usize>,
}

/// Per-component loss values of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub rpn_ori: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,rpn_cls,rpn_reg,rpn_ori,rcnn_cls,rcnn_reg,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.rpn_cls, self.rpn_reg, self.rpn_ori, self.rcnn_cls, self.rcnn_reg, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.rpn_cls,
            self.rpn_reg,
            self.rpn_ori,
            self.rcnn_cls,
            self.rcnn_reg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rpn_cls={:.6} rpn_reg={:.6} rpn_ori={:.6} rcnn_cls={:.6} rcnn_reg={:.6} total={:.6}",
            self.rpn_cls, self.rpn_reg, self.rpn_ori, self.rcnn_cls, self.rcnn_reg, self.total
        )
    }
}

/// Graph values of one forward pass through Stage I.
struct StageOne<'g> {
    z_pv: Var<'g>,
    rpn: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    pub params: ParamStore,
    anchors: AnchorGrid,
    /// 3×3 BEV neighborhood of every cell; `cells` addresses a zero row.
    rpn_window: Index,
    encoder: SceneEncoder,
    fusion: FusionModule,
    pooler: RoIPooler,
    rpn_hidden: Linear,
    rpn_out: Linear,
    /// Confidence and box-residual branches, each hidden layer plus output.
    refine_cls: [Linear; 2],
    refine_reg: [Linear; 2],
}

impl Detector {
    /// Fresh parameters drawn from `cfg.seed`.
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5eed));
        let mut params = ParamStore::new();
        let encoder = SceneEncoder::init(cfg.encoder.clone(), &mut params, &mut rng);
        let fusion = FusionModule::init(cfg.fusion.clone(), &mut params, &mut rng);
        let pooler = RoIPooler::init(cfg.pool.clone(), &mut params, &mut rng);
        let bev_in = 9 * cfg.encoder.bev_dim;
        let rpn_hidden = Linear::init("rpn.hidden", &mut params, bev_in, cfg.rpn_hidden, &mut rng);
        let rpn_out = Linear::init(
            "rpn.out",
            &mut params,
            cfg.rpn_hidden,
            AnchorGrid::PER_CELL * RPN_COLS,
            &mut rng,
        );
        let mut branch = |name: &str, out: usize| {
            [
                Linear::init(
                    format!("refine.{name}.hidden"),
                    &mut params,
                    cfg.pool.fused_dim,
                    cfg.refine_hidden,
                    &mut rng,
                ),
                Linear::init(
                    format!("refine.{name}.out"),
                    &mut params,
                    cfg.refine_hidden,
                    out,
                    &mut rng,
                ),
            ]
        };
        let refine_cls = branch("cls", 1);
        let refine_reg = branch("reg", REFINE_COLS - 1);

        let anchors = AnchorGrid::new(&cfg.encoder, &cfg.anchor_sizes, cfg.synth.ground_z);
        let [h, w, _] = cfg.encoder.bev_dims();
        let mut window = Vec::with_capacity(h * w * 9);
        for i in 0..h as isize {
            for j in 0..w as isize {
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let (a, b) = (i + di, j + dj);
                        let inside = a >= 0 && b >= 0 && a < h as isize && b < w as isize;
                        window.push(if inside {
                            a as usize * w + b as usize
                        } else {
                            h * w
                        });
                    }
                }
            }
        }
        Ok(Self {
            cfg,
            params,
            anchors,
            rpn_window: Arc::new(window),
            encoder,
            fusion,
            pooler,
            rpn_hidden,
            rpn_out,
            refine_cls,
            refine_reg,
        })
    }

    /// Replaces the parameters with a checkpoint of identical names and shapes.
    pub fn with_params(mut self, params: ParamStore) -> Result<Self> {
        let same = params.len() == self.params.len()
            && self
                .params
                .iter()
                .all(|(name, t)| params.get(name).is_ok_and(|p| p.shape() == t.shape()));
        if !same {
            return Err(super::PipelineError::Invalid(
                "checkpoint parameters do not match the configured model".into(),
            ));
        }
        self.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn layout(&self, pc: &PointCloud) -> SceneLayout {
        SceneLayout::build(pc, &self.cfg.encoder)
    }

    /// Preprocesses a scene and assigns anchor targets per class.
    pub fn sample(&self, pc: &PointCloud, gt: &[GtObject]) -> Sample {
        let n = self.anchors.len();
        let mut labels = vec![AnchorLabel::Negative; n];
        let mut pos = Vec::new();
        for class in ObjectClass::ALL {
            let idx = self.anchors.of_class(class);
            let boxes: Vec<Box3D> = idx.iter().map(|&i| self.anchors.boxes[i]).collect();
            let gt_c: Vec<Box3D> = gt
                .iter()
                .filter(|o| o.class == class)
                .map(|o| o.bbox)
                .collect();
            let t = assign_anchor_targets(
                &boxes,
                &gt_c,
                self.cfg.anchor_pos_iou,
                self.cfg.anchor_neg_iou,
            );
            for (k, &i) in idx.iter().enumerate() {
                labels[i] = t.labels[k];
                if let (Some(r), Some(bin)) = (t.residuals[k], t.orientation[k]) {
                    pos.push((i, r, bin));
                }
            }
        }
        pos.sort_by_key(|p| p.0);
        let mut res = Vec::with_capacity(pos.len() * 7);
        for (_, r, _) in &pos {
            res.extend(r.0);
        }
        Sample {
            layout: self.layout(pc),
            gt: gt.to_vec(),
            anchor_labels: labels,
            positives: Arc::new(pos.iter().map(|p| p.0).collect()),
            pos_residuals: Tensor::matrix(pos.len(), 7, res),
            pos_bins: pos.iter().map(|p| p.2).collect(),
        }
    }

    fn stage_one<'g>(&self, scope: Scope<'g>, layout: &SceneLayout) -> Result<StageOne<'g>> {
        let enc = self.encoder.forward(scope, layout)?;
        let fused = self.fusion.forward(
            scope,
            &enc.f_p,
            &enc.f_vb,
            &self.fusion_neighborhood(layout),
        )?;
        let feats = enc.bev.features;
        let cells = self.anchors.cells;
        let padded = scope
            .graph
            .concat_rows(&[feats, scope.constant(Tensor::zeros(&[1, feats.cols()]))])?;
        let window = padded
            .gather_rows(self.rpn_window.clone())?
            .reshape(cells, 9 * feats.cols())?;
        let hidden = self.rpn_hidden.forward(scope, &window)?.relu();
        let rpn = self
            .rpn_out
            .forward(scope, &hidden)?
            .reshape(self.anchors.len(), RPN_COLS)?;
        Ok(StageOne {
            z_pv: fused.z_pv,
            rpn,
        })
    }

    fn fusion_neighborhood(&self, layout: &SceneLayout) -> Neighborhood {
        let kp = &layout.keypoints.coords;
        Neighborhood::within_radius(kp, kp, self.cfg.fusion.radius)
    }

    /// Box encoded by one RPN row `[logit, residual(7), dir0, dir1]` on `anchor`.
    pub fn decode_anchor(anchor: &Box3D, row: &[f64]) -> Box3D {
        let mut r = [0.0; 7];
        r.copy_from_slice(&row[1..8]);
        let mut b = decode_clamped(&r, anchor);
        if row[9] > row[8] {
            b.theta = crate::geometry::normalize_angle(b.theta + std::f64::consts::PI);
        }
        b
    }

    /// Per-class top-`pre_nms_top` by score, BEV NMS, then the best `keep`
    /// overall in descending score order.
    pub fn propose(&self, rpn: &Tensor, keep: usize) -> Vec<Proposal> {
        let mut out = Vec::new();
        for class in ObjectClass::ALL {
            let mut idx = self.anchors.of_class(class);
            let score = |i: usize| sigmoid(rpn.at(i, 0));
            idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
            idx.truncate(self.cfg.pre_nms_top);
            let boxes: Vec<Box3D> = idx
                .iter()
                .map(|&i| Self::decode_anchor(&self.anchors.boxes[i], rpn.row_slice(i)))
                .collect();
            let scores: Vec<f64> = idx.iter().map(|&i| score(i)).collect();
            for k in nms_bev(&boxes, &scores, self.cfg.nms_iou) {
                out.push(Proposal {
                    bbox: boxes[k],
                    score: scores[k],
                    class,
                });
            }
        }
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)));
        out.truncate(keep);
        out
    }

    fn refine<'g>(
        &self,
        scope: Scope<'g>,
        rois: &[Box3D],
        layout: &SceneLayout,
        z_pv: &Var<'g>,
    ) -> Result<Var<'g>> {
        let pooled = self
            .pooler
            .forward(scope, rois, &layout.keypoints.coords, z_pv)?;
        let branch = |[hidden, out]: &[Linear; 2]| -> Result<Var<'g>> {
            Ok(out.forward(scope, &hidden.forward(scope, &pooled.fused)?.relu())?)
        };
        Ok(scope
            .graph
            .concat_cols(&[branch(&self.refine_cls)?, branch(&self.refine_reg)?])?)
    }

    /// Training RoIs: the proposals plus jittered copies of every ground truth.
    fn training_rois<R: Rng>(
        &self,
        proposals: &[Proposal],
        gt: &[GtObject],
        rng: &mut R,
    ) -> (Vec<Box3D>, Vec<ObjectClass>) {
        let mut rois: Vec<Box3D> = proposals.iter().map(|p| p.bbox).collect();
        let mut classes: Vec<ObjectClass> = proposals.iter().map(|p| p.class).collect();
        for o in gt {
            for _ in 0..self.cfg.gt_roi_copies {
                let b = &o.bbox;
                let mut j = |s: f64| rng.random_range(-s..=s);
                let (dx, dy, dz) = (j(0.15 * b.l.max(b.w)), j(0.15 * b.l.max(b.w)), j(0.1 * b.h));
                let (sl, sw, sh, dt) = (j(0.15), j(0.15), j(0.1), j(0.25));
                rois.push(
                    Box3D::new(
                        b.x + dx,
                        b.y + dy,
                        b.z + dz,
                        b.h * (1.0 + sh),
                        b.w * (1.0 + sw),
                        b.l * (1.0 + sl),
                        b.theta + dt,
                    )
                    .expect("jittered box stays valid"),
                );
                classes.push(o.class);
            }
        }
        (rois, classes)
    }

    /// Builds the full training loss for one sample; `jitter_seed` drives the
    /// ground-truth RoI jitter.
    pub fn loss<'g>(
        &'g self,
        g: &'g Graph,
        sample: &Sample,
        jitter_seed: u64,
    ) -> Result<(Var<'g>, LossBreakdown)> {
        let scope = Scope::new(g, &self.params);
        let lc = self.cfg.loss;
        let s1 = self.stage_one(scope, &sample.layout)?;
        let rpn = s1.rpn;
        let prob = rpn.slice_cols(0, 1)?.sigmoid();
        // The focal term is a mean over non-ignored anchors; rescaling by
        // their count over the positive count normalizes it per positive.
        let counted = sample
            .anchor_labels
            .iter()
            .filter(|l| **l != AnchorLabel::Ignored)
            .count();
        let cls = focal_loss(&prob, &sample.anchor_labels, lc.alpha, lc.gamma)?
            .scale(counted as f64 / sample.positives.len().max(1) as f64);
        let pos = rpn.gather_rows(sample.positives.clone())?;
        let reg = smooth_l1_reg(&pos.slice_cols(1, 7)?, &sample.pos_residuals)?;
        let ori = orientation_loss(&pos.slice_cols(8, 2)?, &sample.pos_bins)?;

        let proposals = self.propose(&rpn.value(), self.cfg.proposals_train);
        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
        let (rois, classes) = self.training_rois(&proposals, &sample.gt, &mut rng);
        let (rcnn_cls, rcnn_reg) = if rois.is_empty() {
            (zero(g), zero(g))
        } else {
            let out = self.refine(scope, &rois, &sample.layout, &s1.z_pv)?;
            let (soft, reg_idx, reg_target) = self.roi_targets(&rois, &classes, &sample.gt)?;
            let conf = out.slice_cols(0, 1)?.sigmoid();
            let rcnn_cls = refinement_cls_loss(&conf, &soft)?;
            let rcnn_reg = if reg_idx.is_empty() {
                zero(g)
            } else {
                smooth_l1_reg(
                    &out.gather_rows(Arc::new(reg_idx))?.slice_cols(1, 7)?,
                    &reg_target,
                )?
            };
            (rcnn_cls, rcnn_reg)
        };

        let rpn_total = crate::losses::rpn_loss(&cls, &reg, &ori, lc.beta)?;
        let total = rpn_total.add(&rcnn_cls)?.add(&rcnn_reg)?;
        let item = |v: &Var<'_>| v.value().item();
        let breakdown = LossBreakdown {
            rpn_cls: item(&cls),
            rpn_reg: item(&reg),
            rpn_ori: item(&ori),
            rcnn_cls: item(&rcnn_cls),
            rcnn_reg: item(&rcnn_reg),
            total: item(&total),
        };
        Ok((total, breakdown))
    }

    /// Soft labels for every RoI and regression targets for those at or above
    /// `refine_reg_iou`, matching only ground truth of the RoI's class.
    fn roi_targets(
        &self,
        rois: &[Box3D],
        classes: &[ObjectClass],
        gt: &[GtObject],
    ) -> Result<(Vec<f64>, Vec<usize>, Tensor)> {
        let lc = self.cfg.loss;
        let mut soft = vec![0.0; rois.len()];
        let mut reg: Vec<(usize, BoxResidual)> = Vec::new();
        for class in ObjectClass::ALL {
            let idx: Vec<usize> = (0..rois.len()).filter(|&i| classes[i] == class).collect();
            let gt_c: Vec<Box3D> = gt
                .iter()
                .filter(|o| o.class == class)
                .map(|o| o.bbox)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let boxes: Vec<Box3D> = idx.iter().map(|&i| rois[i]).collect();
            let t = assign_roi_targets(&boxes, &gt_c, lc.sigma_bg, lc.sigma_fg)?;
            for (k, &i) in idx.iter().enumerate() {
                soft[i] = t.soft[k];
                if t.iou[k] >= self.cfg.refine_reg_iou {
                    if let Some(r) = t.residuals[k] {
                        reg.push((i, r));
                    }
                }
            }
        }
        reg.sort_by_key(|r| r.0);
        let mut data = Vec::with_capacity(reg.len() * 7);
        for (_, r) in &reg {
            data.extend(r.0);
        }
        Ok((
            soft,
            reg.iter().map(|r| r.0).collect(),
            Tensor::matrix(reg.len(), 7, data),
        ))
    }

    /// Stage-I proposals for a point cloud, without refinement.
    pub fn proposals(&self, layout: &SceneLayout) -> Result<Vec<Proposal>> {
        if layout.keypoints.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let s1 = self.stage_one(Scope::new(&g, &self.params), layout)?;
        let rpn = s1.rpn.value();
        Ok(self.propose(&rpn, self.cfg.proposals_test))
    }

    /// Full two-stage inference, sorted by descending score.
    pub fn detect(&self, pc: &PointCloud) -> Result<Vec<Detection>> {
        self.detect_layout(&self.layout(pc))
    }

    pub fn detect_layout(&self, layout: &SceneLayout) -> Result<Vec<Detection>> {
        if layout.keypoints.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let scope = Scope::new(&g, &self.params);
        let s1 = self.stage_one(scope, layout)?;
        let proposals = self.propose(&s1.rpn.value(), self.cfg.proposals_test);
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let rois: Vec<Box3D> = proposals.iter().map(|p| p.bbox).collect();
        let out = self.refine(scope, &rois, layout, &s1.z_pv)?.value();
        let mut dets = Vec::new();
        for class in ObjectClass::ALL {
            let mut boxes = Vec::new();
            let mut scores = Vec::new();
            for (i, p) in proposals.iter().enumerate() {
                let score = sigmoid(out.at(i, 0));
                if p.class != class || !(score >= self.cfg.score_threshold) {
                    continue;
                }
                let mut r = [0.0; 7];
                r.copy_from_slice(&out.row_slice(i)[1..8]);
                boxes.push(decode_clamped(&r, &p.bbox));
                scores.push(score);
            }
            for k in nms_bev(&boxes, &scores, self.cfg.final_nms_iou) {
                dets.push(Detection {
                    bbox: boxes[k],
                    score: scores[k],
                    class,
                });
            }
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)));
        Ok(dets)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn zero(g: &Graph) -> Var<'_> {
    g.constant(Tensor::scalar(0.0))
}

/// Decodes with the size terms clamped and non-finite entries zeroed.
fn decode_clamped(r: &[f64; 7], anchor: &Box3D) -> Box3D {
    let mut r = r.map(|v| if v.is_finite() { v } else { 0.0 });
    for v in &mut r[3..6] {
        *v = v.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    }
    decode_residual(&BoxResidual(r), anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::encode_residual;
    use crate::losses::fold_yaw;
    use crate::pipeline::synthetic_scene;

    fn tiny_cfg() -> DetectorConfig {
        let mut cfg = DetectorConfig::toy();
        cfg.encoder.range_min = [0.0, -6.4, -3.0];
        cfg.encoder.range_max = [12.8, 6.4, 1.0];
        cfg.encoder.num_keypoints = 256;
        cfg.synth.ground_points = 300;
        cfg.synth.clutter_points = 30;
        cfg.synth.objects_max = 2;
        cfg
    }

    #[test]
    fn empty_scene_gives_no_detections() {
        let det = Detector::new(tiny_cfg()).unwrap();
        assert!(det.detect(&PointCloud::default()).unwrap().is_empty());
    }

    #[test]
    fn untrained_proposals_are_bounded_and_near_uniform() {
        let cfg = tiny_cfg();
        let det = Detector::new(cfg.clone()).unwrap();
        let scene = synthetic_scene(3, &cfg);
        let props = det.proposals(&det.layout(&scene.cloud)).unwrap();
        assert!(!props.is_empty() && props.len() <= cfg.proposals_test);
        let (lo, hi) = props.iter().fold((1.0f64, 0.0f64), |(lo, hi), p| {
            (lo.min(p.score), hi.max(p.score))
        });
        assert!(hi - lo < 0.5, "scores spread {lo}..{hi}");
    }

    #[test]
    fn exact_residual_decodes_to_gt() {
        let anchor =
            Box3D::new(4.0, 1.0, -0.95, 1.56, 1.6, 3.9, std::f64::consts::FRAC_PI_2).unwrap();
        for theta in [-3.0, -1.0, 0.3, 1.2, 2.9] {
            let gt = Box3D::new(4.3, 0.8, -0.9, 1.5, 1.7, 4.1, theta).unwrap();
            let mut r = encode_residual(&gt, &anchor);
            let (bin, rem) = fold_yaw(gt.theta - anchor.theta);
            r.0[6] = rem;
            let mut row = vec![0.0; RPN_COLS];
            row[1..8].copy_from_slice(&r.0);
            row[8 + bin] = 1.0;
            let b = Detector::decode_anchor(&anchor, &row);
            for (a, e) in [
                (b.x, gt.x),
                (b.y, gt.y),
                (b.z, gt.z),
                (b.h, gt.h),
                (b.w, gt.w),
                (b.l, gt.l),
                (b.theta, gt.theta),
            ] {
                assert!((a - e).abs() < 1e-9, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn training_loss_is_finite_and_backpropagates() {
        let cfg = tiny_cfg();
        let det = Detector::new(cfg.clone()).unwrap();
        let scene = synthetic_scene(5, &cfg);
        let sample = det.sample(&scene.cloud, &scene.objects);
        assert!(!sample.positives.is_empty());
        let g = Graph::new();
        let (loss, parts) = det.loss(&g, &sample, 1).unwrap();
        assert!(parts.is_finite() && parts.total > 0.0, "{parts}");
        let grads = g.backward(loss).unwrap();
        for prefix in ["enc.", "fusion.", "pool.cph", "pool.pph", "rpn.", "refine."] {
            let moved = grads
                .param_grads()
                .any(|(n, t)| n.starts_with(prefix) && t.data().iter().any(|v| *v != 0.0));
            assert!(moved, "no gradient reaches {prefix}");
        }
    }

    #[test]
    fn detections_are_sorted_and_valid() {
        let mut cfg = tiny_cfg();
        cfg.score_threshold = 0.0;
        let det = Detector::new(cfg.clone()).unwrap();
        let scene = synthetic_scene(9, &cfg);
        let dets = det.detect(&scene.cloud).unwrap();
        assert!(!dets.is_empty());
        for w in dets.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for d in &dets {
            assert!(d.score.is_finite() && d.bbox.validate().is_ok());
        }
    }
}
