use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::tensor::{cosine_lr, Adam, AdamConfig, Graph, Tensor};

use super::{
    mix_seed, Detector, GtObject, LossBreakdown, PipelineError, Result, Sample, SyntheticScene,
};

const SHUFFLE_SALT: u64 = 0x5f0f;
const JITTER_SALT: u64 = 0x717e;
const PROBE_SALT: u64 = 0x9b0e;

/// Per-step losses and learning rates of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<LossBreakdown>,
    pub lr: Vec<f64>,
}

impl TrainReport {
    /// One CSV row per step, with a header.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from(LossBreakdown::CSV_HEADER);
        out.push('\n');
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&l.csv_row(i));
            out.push('\n');
        }
        out
    }
}

/// Preprocesses scenes in parallel; the output order matches the input.
pub fn prepare_samples(det: &Detector, scenes: &[SyntheticScene]) -> Vec<Sample> {
    scenes
        .par_iter()
        .map(|s| det.sample(&s.cloud, &s.objects))
        .collect()
}

pub fn prepare_labeled(
    det: &Detector,
    scenes: &[(crate::scene::PointCloud, Vec<GtObject>)],
) -> Vec<Sample> {
    scenes
        .par_iter()
        .map(|(pc, gt)| det.sample(pc, gt))
        .collect()
}

/// Adam over the summed two-stage loss, one scene per step, reshuffled
/// every epoch, with a cosine learning-rate schedule over the total steps.
pub fn train(
    det: &mut Detector,
    samples: &[Sample],
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(PipelineError::Invalid("no training samples".into()));
    }
    let cfg = det.config().clone();
    let total = cfg.total_steps();
    let mut adam = Adam::new(AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = Vec::new();
    for step in 0..total {
        let pos = step % samples.len();
        if pos == 0 {
            let epoch = (step / samples.len()) as u64;
            order = (0..samples.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
                cfg.seed ^ SHUFFLE_SALT,
                epoch,
            )));
        }
        let lr = cosine_lr(step, total, cfg.lr)?;
        let grads = {
            let g = Graph::new();
            let (loss, parts) = det.loss(
                &g,
                &samples[order[pos]],
                mix_seed(cfg.seed ^ JITTER_SALT, step as u64),
            )?;
            if !parts.is_finite() {
                return Err(PipelineError::NonFinite {
                    step,
                    breakdown: parts.to_string(),
                });
            }
            let grads = g.backward(loss)?;
            report.losses.push(parts);
            on_step(step, &parts);
            let mut map: BTreeMap<String, Tensor> = grads
                .param_grads()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect();
            for (name, p) in det.params.iter() {
                map.entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(p.shape()));
            }
            map
        };
        adam.step(&mut det.params, &grads, lr)?;
        report.lr.push(lr);
    }
    Ok(report)
}

/// Mean loss of the current parameters over `samples`, with the training
/// RoI jitter fixed per sample so that two models see identical inputs.
pub fn mean_loss(det: &Detector, samples: &[Sample]) -> Result<LossBreakdown> {
    let seed = det.config().seed;
    let parts: Vec<LossBreakdown> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let g = Graph::new();
            Ok(det.loss(&g, s, mix_seed(seed ^ PROBE_SALT, i as u64))?.1)
        })
        .collect::<Result<_>>()?;
    let n = parts.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for p in &parts {
        m.rpn_cls += p.rpn_cls / n;
        m.rpn_reg += p.rpn_reg / n;
        m.rpn_ori += p.rpn_ori / n;
        m.rcnn_cls += p.rcnn_cls / n;
        m.rcnn_reg += p.rcnn_reg / n;
        m.total += p.total / n;
    }
    Ok(m)
}
