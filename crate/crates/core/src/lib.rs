// Negated float comparisons in validation code deliberately reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod geometry;
pub mod losses;
pub mod pipeline;
pub mod pooling;
pub mod scene;
pub mod tensor;
pub mod verify;

pub use geometry::{Box3D, GeometryError};
pub use pipeline::{Detection, Detector, DetectorConfig, ObjectClass};
pub use scene::PointCloud;
pub use tensor::{Graph, ParamStore, Tensor, Var};
