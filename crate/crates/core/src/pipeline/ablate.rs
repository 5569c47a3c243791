use std::fmt::Write as _;

use rayon::prelude::*;

use crate::pooling::PoolingMode;

use super::train::prepare_samples;
use super::{
    ap_r40, synthetic_corpus, train, Detector, DetectorConfig, ObjectClass, Result,
    SceneDetections, SyntheticScene,
};

/// Runs detection over scenes in parallel, keeping scene order.
pub fn detect_scenes(det: &Detector, scenes: &[SyntheticScene]) -> Result<Vec<SceneDetections>> {
    scenes
        .par_iter()
        .map(|s| {
            Ok(SceneDetections {
                detections: det.detect(&s.cloud)?,
                gt: s.objects.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub mode: PoolingMode,
    pub seed: u64,
    pub ap: Option<f64>,
}

/// Car AP of every pooling configuration and training seed on a shared
/// synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub iou: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Mean AP over the seeds of `mode`.
    pub fn mean(&self, mode: PoolingMode) -> Option<f64> {
        let aps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.ap)
            .collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed,iou,ap\n");
        for r in &self.rows {
            let ap = r.ap.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{},{},{:.2},{}", r.mode, r.seed, self.iou, ap);
        }
        out
    }
}

/// Trains one detector per `(mode, seed)` on the corpus of `base.seed` and
/// scores car AP at `iou` on its eval split.
pub fn ablation(
    base: &DetectorConfig,
    modes: &[PoolingMode],
    seeds: &[u64],
    iou: f64,
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let (train_scenes, eval_scenes) = synthetic_corpus(base);
    let mut rows = Vec::new();
    for &mode in modes {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.pool.mode = mode;
            cfg.seed = seed;
            let mut det = Detector::new(cfg)?;
            let samples = prepare_samples(&det, &train_scenes);
            train(&mut det, &samples, |_, _| {})?;
            let scored = detect_scenes(&det, &eval_scenes)?;
            let row = AblationRow {
                mode,
                seed,
                ap: ap_r40(&scored, ObjectClass::Car, iou),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(AblationReport { iou, rows })
}
