//! End-to-end assembly: configuration, synthetic scenes, KITTI-format I/O,
//! the two-stage detector, training, AP evaluation and the pooling ablation.

mod ablate;
mod anchors;
mod config;
mod detector;
mod eval;
mod kitti;
mod synthetic;
mod train;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub use ablate::{ablation, detect_scenes, AblationReport, AblationRow};
pub use anchors::{AnchorGrid, ANCHOR_YAWS};
pub use config::{ConfigError, DetectorConfig, SynthConfig};
pub use detector::{Detector, LossBreakdown, Proposal, Sample, REFINE_COLS, RPN_COLS};
pub use eval::{ap_r40, evaluate, format_report, ApRow, SceneDetections};
pub use kitti::{
    labels_to_objects, read_kitti_bin, read_label_file, read_sidecar, write_kitti_bin,
    write_labels, write_predictions, write_sidecar, KittiLabel,
};
pub use synthetic::{mix_seed, synthetic_corpus, synthetic_scene, SyntheticScene};
pub use train::{mean_loss, prepare_labeled, prepare_samples, train, TrainReport};

use crate::geometry::Box3D;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [Self::Car, Self::Pedestrian, Self::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn kitti_name(self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Pedestrian => "Pedestrian",
            Self::Cyclist => "Cyclist",
        }
    }

    /// `None` for classes the detector does not model (including `DontCare`).
    pub fn from_kitti_name(name: &str) -> Option<Self> {
        match name {
            "Car" => Some(Self::Car),
            "Pedestrian" => Some(Self::Pedestrian),
            "Cyclist" => Some(Self::Cyclist),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kitti_name())
    }
}

/// A labeled ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub class: ObjectClass,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
    pub class: ObjectClass,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: byte length {bytes} is not a multiple of 16")]
    BinLength { path: PathBuf, bytes: usize },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFinite { step: usize, breakdown: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
