use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::attention::FusionConfig;
use crate::losses::LossConfig;
use crate::pooling::{PoolConfig, PoolingMode, PyramidLevel};
use crate::scene::EncoderConfig;

use super::ObjectClass;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`: {msg}")]
    Value {
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

/// Knobs of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Class mix as relative weights for car, pedestrian, cyclist.
    pub class_weights: [f64; 3],
    pub ground_z: f64,
    pub ground_points: usize,
    pub clutter_points: usize,
    /// Surface samples per square meter of visible box faces.
    pub surface_density: f64,
    pub min_surface_points: usize,
    pub yaw_jitter: f64,
    pub size_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_scenes: 200,
            eval_scenes: 50,
            objects_min: 1,
            objects_max: 4,
            class_weights: [0.6, 0.2, 0.2],
            ground_z: -1.73,
            ground_points: 1500,
            clutter_points: 150,
            surface_density: 20.0,
            min_surface_points: 40,
            yaw_jitter: 0.2,
            size_jitter: 0.1,
        }
    }
}

/// Every tunable of the detector, its training and the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub pool: PoolConfig,
    pub loss: LossConfig,
    pub synth: SynthConfig,
    pub rpn_hidden: usize,
    pub refine_hidden: usize,
    /// `(h, w, l)` per class in car, pedestrian, cyclist order.
    pub anchor_sizes: [[f64; 3]; 3],
    pub anchor_pos_iou: f64,
    pub anchor_neg_iou: f64,
    /// RoIs at or above this 3D IoU get a refinement regression target.
    pub refine_reg_iou: f64,
    pub nms_iou: f64,
    pub pre_nms_top: usize,
    pub proposals_train: usize,
    pub proposals_test: usize,
    /// Jittered copies of every ground-truth box added to the training RoIs.
    pub gt_roi_copies: usize,
    pub score_threshold: f64,
    pub final_nms_iou: f64,
    pub eval_iou: [f64; 3],
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Total optimizer steps; 0 means `epochs × train_scenes`.
    pub steps: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let fusion = FusionConfig {
            point_dim: encoder.point_dim,
            vb_dim: encoder.vb_dim(),
            ..FusionConfig::default()
        };
        let pool = PoolConfig {
            feat_dim: fusion.attn_dim,
            ..PoolConfig::default()
        };
        Self {
            encoder,
            fusion,
            pool,
            loss: LossConfig::default(),
            synth: SynthConfig::default(),
            rpn_hidden: 128,
            refine_hidden: 128,
            anchor_sizes: [[1.56, 1.6, 3.9], [1.73, 0.6, 0.8], [1.73, 0.6, 1.76]],
            anchor_pos_iou: 0.7,
            anchor_neg_iou: 0.25,
            refine_reg_iou: 0.55,
            nms_iou: 0.7,
            pre_nms_top: 512,
            proposals_train: 128,
            proposals_test: 64,
            gt_roi_copies: 2,
            score_threshold: 0.1,
            final_nms_iou: 0.1,
            eval_iou: [0.7, 0.5, 0.5],
            lr: 0.01,
            weight_decay: 0.01,
            epochs: 10,
            steps: 0,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    /// Desk-scale preset used for the synthetic corpus: a 19.2 m square
    /// range, coarser voxels and narrow layers.
    pub fn toy() -> Self {
        let encoder = EncoderConfig {
            voxel_size: [0.1, 0.1, 0.2],
            range_min: [0.0, -9.6, -3.0],
            range_max: [19.2, 9.6, 1.0],
            num_keypoints: 256,
            point_dim: 16,
            voxel_dims: [8, 16, 16, 16],
            bev_dim: 32,
            keypoint_radius: 0.8,
            keypoint_max_neighbors: 16,
            voxel_radii: [0.4, 0.8, 1.6, 3.2],
            voxel_max_neighbors: 16,
        };
        let fusion = FusionConfig {
            point_dim: encoder.point_dim,
            vb_dim: encoder.vb_dim(),
            attn_dim: 32,
            blocks: 1,
            radius: f64::INFINITY,
            scale_qk: true,
        };
        let pool = PoolConfig {
            mode: PoolingMode::ClusterPyramid,
            feat_dim: fusion.attn_dim,
            phi: 0.4,
            eps: 1.0,
            min_pts: 2,
            cluster_width: 32,
            levels: vec![
                PyramidLevel {
                    rho: [1.0; 3],
                    n: [4, 3, 2],
                    radius: 0.8,
                },
                PyramidLevel {
                    rho: [1.2; 3],
                    n: [3, 2, 2],
                    radius: 1.2,
                },
                PyramidLevel {
                    rho: [1.6; 3],
                    n: [2, 2, 1],
                    radius: 2.0,
                },
            ],
            attn_dim: 16,
            pyramid_width: 32,
            fused_dim: 32,
            scale_qk: true,
            grid: PyramidLevel {
                rho: [1.0; 3],
                n: [4, 3, 2],
                radius: 0.8,
            },
        };
        Self {
            encoder,
            fusion,
            pool,
            rpn_hidden: 32,
            refine_hidden: 32,
            pre_nms_top: 256,
            proposals_train: 24,
            proposals_test: 16,
            lr: 0.003,
            weight_decay: 0.01,
            steps: 2000,
            anchor_pos_iou: 0.6,
            anchor_neg_iou: 0.45,
            ..Self::default()
        }
    }

    pub fn total_steps(&self) -> usize {
        if self.steps > 0 {
            self.steps
        } else {
            self.epochs * self.synth.train_scenes
        }
    }

    pub fn anchor_size(&self, class: ObjectClass) -> [f64; 3] {
        self.anchor_sizes[class.index()]
    }

    /// Keeps derived widths consistent after edits to the encoder or fusion
    /// dimensions.
    pub fn sync_dims(&mut self) {
        self.fusion.point_dim = self.encoder.point_dim;
        self.fusion.vb_dim = self.encoder.vb_dim();
        self.pool.feat_dim = self.fusion.attn_dim;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let e = &self.encoder;
        if e.voxel_size.iter().any(|s| !(*s > 0.0)) {
            return bad("voxel_size components must be positive");
        }
        if (0..3).any(|a| !(e.range_min[a] < e.range_max[a])) {
            return bad("range_min must be below range_max on every axis");
        }
        if e.num_keypoints == 0 {
            return bad("num_keypoints must be at least 1");
        }
        if e.point_dim == 0 || e.bev_dim == 0 || e.voxel_dims.contains(&0) {
            return bad("feature widths must be positive");
        }
        if !(e.keypoint_radius > 0.0) || e.voxel_radii.iter().any(|r| !(*r > 0.0)) {
            return bad("neighborhood radii must be positive");
        }
        if self.fusion.attn_dim == 0 || self.fusion.blocks == 0 {
            return bad("attn_dim and fusion_blocks must be positive");
        }
        if !(self.fusion.radius > 0.0) {
            return bad("fusion_radius must be positive (or inf)");
        }
        let p = &self.pool;
        if !(p.phi >= 0.0) {
            return bad("phi must be non-negative");
        }
        if !(p.eps > 0.0) || p.min_pts == 0 {
            return bad("cluster_eps must be positive and min_pts at least 1");
        }
        if p.levels.is_empty() {
            return bad("at least one pyramid level is required");
        }
        for w in p.levels.windows(2) {
            if (0..3).any(|a| w[1].rho[a] < w[0].rho[a]) {
                return bad("pyramid rho must be non-decreasing across levels");
            }
        }
        for l in p.levels.iter().chain(std::iter::once(&p.grid)) {
            if l.n.contains(&0) || l.rho.iter().any(|r| !(*r > 0.0)) || !(l.radius > 0.0) {
                return bad("pyramid levels need n ≥ 1, rho > 0 and radius > 0");
            }
        }
        if p.cluster_width == 0 || p.attn_dim == 0 || p.pyramid_width == 0 || p.fused_dim == 0 {
            return bad("pooling widths must be positive");
        }
        let l = &self.loss;
        if !(l.alpha > 0.0 && l.alpha < 1.0) || !(l.gamma >= 0.0) || !(l.beta >= 0.0) {
            return bad("focal alpha must be in (0,1), gamma and beta non-negative");
        }
        if !(l.sigma_fg > l.sigma_bg) {
            return bad("sigma_fg must exceed sigma_bg");
        }
        if !(self.anchor_neg_iou < self.anchor_pos_iou) {
            return bad("anchor_neg_iou must be below anchor_pos_iou");
        }
        if self.anchor_sizes.iter().flatten().any(|v| !(*v > 0.0)) {
            return bad("anchor sizes must be positive");
        }
        for t in [self.nms_iou, self.final_nms_iou] {
            if !(t > 0.0 && t <= 1.0) {
                return bad("NMS thresholds must be in (0, 1]");
            }
        }
        if self.eval_iou.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("eval IoU thresholds must be in (0, 1]");
        }
        if self.proposals_train == 0 || self.proposals_test == 0 || self.pre_nms_top == 0 {
            return bad("proposal counts must be positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        if self.total_steps() == 0 {
            return bad("training needs at least one step");
        }
        let s = &self.synth;
        if s.objects_min > s.objects_max {
            return bad("objects_min must not exceed objects_max");
        }
        if s.class_weights.iter().any(|w| !(*w >= 0.0))
            || s.class_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("class weights must be non-negative with a positive sum");
        }
        if s.train_scenes == 0 {
            return bad("train_scenes must be positive");
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `key = value` lines over the toy preset. `#` starts a comment.
    /// The `preset` key, when present, must come first.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::toy();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        cfg.sync_dims();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if key == "preset" {
            *self = match value {
                "toy" => Self::toy(),
                "full" => Self::default(),
                _ => return Err(value_err(key, value, "expected toy or full")),
            };
            return Ok(());
        }
        let e = &mut self.encoder;
        let p = &mut self.pool;
        let s = &mut self.synth;
        match key {
            "voxel_size" => e.voxel_size = arr(key, value)?,
            "range_min" => e.range_min = arr(key, value)?,
            "range_max" => e.range_max = arr(key, value)?,
            "num_keypoints" => e.num_keypoints = num(key, value)?,
            "point_dim" => e.point_dim = num(key, value)?,
            "voxel_dims" => e.voxel_dims = arr(key, value)?,
            "bev_dim" => e.bev_dim = num(key, value)?,
            "keypoint_radius" => e.keypoint_radius = num(key, value)?,
            "keypoint_max_neighbors" => e.keypoint_max_neighbors = num(key, value)?,
            "voxel_radii" => e.voxel_radii = arr(key, value)?,
            "voxel_max_neighbors" => e.voxel_max_neighbors = num(key, value)?,
            "attn_dim" => self.fusion.attn_dim = num(key, value)?,
            "fusion_blocks" => self.fusion.blocks = num(key, value)?,
            "fusion_radius" => self.fusion.radius = num(key, value)?,
            "scale_qk" => {
                let b = parse_bool(key, value)?;
                self.fusion.scale_qk = b;
                p.scale_qk = b;
            }
            "pool_mode" => {
                p.mode = value
                    .parse()
                    .map_err(|m: String| value_err(key, value, &m))?
            }
            "phi" => p.phi = num(key, value)?,
            "cluster_eps" => p.eps = num(key, value)?,
            "min_pts" => p.min_pts = num(key, value)?,
            "cluster_width" => p.cluster_width = num(key, value)?,
            "pyramid_rho" => {
                let v: Vec<[f64; 3]> = list(key, value)?;
                resize_levels(&mut p.levels, v.len());
                p.levels.iter_mut().zip(v).for_each(|(l, r)| l.rho = r);
            }
            "pyramid_n" => {
                let v: Vec<[usize; 3]> = list(key, value)?;
                resize_levels(&mut p.levels, v.len());
                p.levels.iter_mut().zip(v).for_each(|(l, n)| l.n = n);
            }
            "pyramid_radius" => {
                let v: Vec<f64> = value
                    .split(';')
                    .map(|x| num(key, x.trim()))
                    .collect::<Result<_, _>>()?;
                resize_levels(&mut p.levels, v.len());
                p.levels.iter_mut().zip(v).for_each(|(l, r)| l.radius = r);
            }
            "pool_attn_dim" => p.attn_dim = num(key, value)?,
            "pyramid_width" => p.pyramid_width = num(key, value)?,
            "fused_dim" => p.fused_dim = num(key, value)?,
            "grid_n" => p.grid.n = arr(key, value)?,
            "grid_radius" => p.grid.radius = num(key, value)?,
            "rpn_hidden" => self.rpn_hidden = num(key, value)?,
            "refine_hidden" => self.refine_hidden = num(key, value)?,
            "alpha" => self.loss.alpha = num(key, value)?,
            "gamma" => self.loss.gamma = num(key, value)?,
            "beta" => self.loss.beta = num(key, value)?,
            "sigma_fg" => self.loss.sigma_fg = num(key, value)?,
            "sigma_bg" => self.loss.sigma_bg = num(key, value)?,
            "anchor_car" => self.anchor_sizes[0] = arr(key, value)?,
            "anchor_pedestrian" => self.anchor_sizes[1] = arr(key, value)?,
            "anchor_cyclist" => self.anchor_sizes[2] = arr(key, value)?,
            "anchor_pos_iou" => self.anchor_pos_iou = num(key, value)?,
            "anchor_neg_iou" => self.anchor_neg_iou = num(key, value)?,
            "refine_reg_iou" => self.refine_reg_iou = num(key, value)?,
            "nms_iou" => self.nms_iou = num(key, value)?,
            "pre_nms_top" => self.pre_nms_top = num(key, value)?,
            "proposals_train" => self.proposals_train = num(key, value)?,
            "proposals_test" => self.proposals_test = num(key, value)?,
            "gt_roi_copies" => self.gt_roi_copies = num(key, value)?,
            "score_threshold" => self.score_threshold = num(key, value)?,
            "final_nms_iou" => self.final_nms_iou = num(key, value)?,
            "eval_iou" => self.eval_iou = arr(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "train_scenes" => s.train_scenes = num(key, value)?,
            "eval_scenes" => s.eval_scenes = num(key, value)?,
            "objects_min" => s.objects_min = num(key, value)?,
            "objects_max" => s.objects_max = num(key, value)?,
            "class_weights" => s.class_weights = arr(key, value)?,
            "ground_z" => s.ground_z = num(key, value)?,
            "ground_points" => s.ground_points = num(key, value)?,
            "clutter_points" => s.clutter_points = num(key, value)?,
            "surface_density" => s.surface_density = num(key, value)?,
            "min_surface_points" => s.min_surface_points = num(key, value)?,
            "yaw_jitter" => s.yaw_jitter = num(key, value)?,
            "size_jitter" => s.size_jitter = num(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Serializes every key in a form [`DetectorConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let p = &self.pool;
        let s = &self.synth;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("voxel_size", join(&e.voxel_size));
        put("range_min", join(&e.range_min));
        put("range_max", join(&e.range_max));
        put("num_keypoints", e.num_keypoints.to_string());
        put("point_dim", e.point_dim.to_string());
        put("voxel_dims", join(&e.voxel_dims));
        put("bev_dim", e.bev_dim.to_string());
        put("keypoint_radius", format!("{:?}", e.keypoint_radius));
        put(
            "keypoint_max_neighbors",
            e.keypoint_max_neighbors.to_string(),
        );
        put("voxel_radii", join(&e.voxel_radii));
        put("voxel_max_neighbors", e.voxel_max_neighbors.to_string());
        put("attn_dim", self.fusion.attn_dim.to_string());
        put("fusion_blocks", self.fusion.blocks.to_string());
        put("fusion_radius", format!("{:?}", self.fusion.radius));
        put("scale_qk", self.fusion.scale_qk.to_string());
        put("pool_mode", p.mode.to_string());
        put("phi", format!("{:?}", p.phi));
        put("cluster_eps", format!("{:?}", p.eps));
        put("min_pts", p.min_pts.to_string());
        put("cluster_width", p.cluster_width.to_string());
        put(
            "pyramid_rho",
            p.levels
                .iter()
                .map(|l| join(&l.rho))
                .collect::<Vec<_>>()
                .join(";"),
        );
        put(
            "pyramid_n",
            p.levels
                .iter()
                .map(|l| join(&l.n))
                .collect::<Vec<_>>()
                .join(";"),
        );
        put(
            "pyramid_radius",
            p.levels
                .iter()
                .map(|l| format!("{:?}", l.radius))
                .collect::<Vec<_>>()
                .join(";"),
        );
        put("pool_attn_dim", p.attn_dim.to_string());
        put("pyramid_width", p.pyramid_width.to_string());
        put("fused_dim", p.fused_dim.to_string());
        put("grid_n", join(&p.grid.n));
        put("grid_radius", format!("{:?}", p.grid.radius));
        put("rpn_hidden", self.rpn_hidden.to_string());
        put("refine_hidden", self.refine_hidden.to_string());
        put("alpha", format!("{:?}", self.loss.alpha));
        put("gamma", format!("{:?}", self.loss.gamma));
        put("beta", format!("{:?}", self.loss.beta));
        put("sigma_fg", format!("{:?}", self.loss.sigma_fg));
        put("sigma_bg", format!("{:?}", self.loss.sigma_bg));
        put("anchor_car", join(&self.anchor_sizes[0]));
        put("anchor_pedestrian", join(&self.anchor_sizes[1]));
        put("anchor_cyclist", join(&self.anchor_sizes[2]));
        put("anchor_pos_iou", format!("{:?}", self.anchor_pos_iou));
        put("anchor_neg_iou", format!("{:?}", self.anchor_neg_iou));
        put("refine_reg_iou", format!("{:?}", self.refine_reg_iou));
        put("nms_iou", format!("{:?}", self.nms_iou));
        put("pre_nms_top", self.pre_nms_top.to_string());
        put("proposals_train", self.proposals_train.to_string());
        put("proposals_test", self.proposals_test.to_string());
        put("gt_roi_copies", self.gt_roi_copies.to_string());
        put("score_threshold", format!("{:?}", self.score_threshold));
        put("final_nms_iou", format!("{:?}", self.final_nms_iou));
        put("eval_iou", join(&self.eval_iou));
        put("lr", format!("{:?}", self.lr));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("epochs", self.epochs.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("train_scenes", s.train_scenes.to_string());
        put("eval_scenes", s.eval_scenes.to_string());
        put("objects_min", s.objects_min.to_string());
        put("objects_max", s.objects_max.to_string());
        put("class_weights", join(&s.class_weights));
        put("ground_z", format!("{:?}", s.ground_z));
        put("ground_points", s.ground_points.to_string());
        put("clutter_points", s.clutter_points.to_string());
        put("surface_density", format!("{:?}", s.surface_density));
        put("min_surface_points", s.min_surface_points.to_string());
        put("yaw_jitter", format!("{:?}", s.yaw_jitter));
        put("size_jitter", format!("{:?}", s.size_jitter));
        out
    }
}

fn resize_levels(levels: &mut Vec<PyramidLevel>, n: usize) {
    let last = *levels.last().expect("config keeps at least one level");
    levels.resize(n, last);
}

fn value_err(key: &str, value: &str, msg: &str) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        msg: msg.to_string(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| value_err(key, value, &e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(value_err(key, value, "expected true or false")),
    }
}

fn arr<T: std::str::FromStr + Copy + Default, const N: usize>(
    key: &str,
    value: &str,
) -> Result<[T; N], ConfigError>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(value_err(
            key,
            value,
            &format!("expected {N} comma-separated values"),
        ));
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num(key, p)?;
    }
    Ok(out)
}

fn list<T: std::str::FromStr + Copy + Default>(
    key: &str,
    value: &str,
) -> Result<Vec<[T; 3]>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(';').map(|part| arr(key, part.trim())).collect()
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_defaults() {
        let c = DetectorConfig::default();
        assert_eq!(c.encoder.voxel_size, [0.05, 0.05, 0.1]);
        assert_eq!(c.fusion.vb_dim, 608);
        assert_eq!(c.pool.phi, 0.4);
        assert_eq!((c.pool.eps, c.pool.min_pts), (0.2, 2));
        assert_eq!((c.loss.sigma_fg, c.loss.sigma_bg), (0.75, 0.25));
        c.validate().unwrap();
        DetectorConfig::toy().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = DetectorConfig::toy();
        c.seed = 17;
        c.pool.mode = PoolingMode::Grid;
        let back = DetectorConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = DetectorConfig::parse("lr = 0.1\nlearning_rate = 0.2\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn constraints_enforced_at_load() {
        assert!(DetectorConfig::parse("sigma_fg = 0.2").is_err());
        assert!(DetectorConfig::parse("voxel_size = 0.1,0,0.1").is_err());
        assert!(DetectorConfig::parse("pyramid_rho = 1.6,1.6,1.6;1,1,1").is_err());
        assert!(DetectorConfig::parse("lr = fast").is_err());
        let c = DetectorConfig::parse("preset = full\nsteps = 5").unwrap();
        assert_eq!(c.encoder.num_keypoints, 2048);
    }
}
