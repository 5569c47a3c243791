//! Stage-I scene encoding: voxelization, keypoint sampling, a pooled voxel
//! feature hierarchy, BEV projection and the per-keypoint token sets fed to
//! the fusion module.
//!
//! Everything that depends only on the point cloud (voxel maps, keypoints,
//! neighborhoods, interpolation weights) is computed once into a
//! [`SceneLayout`]; the learned part in [`encoder`] reads it on every forward
//! pass.

pub mod encoder;
mod fps;
mod layout;
mod spatial;
mod voxel;

pub use encoder::{BevMap, EncodedScene, SceneEncoder};
pub use fps::fps_sample;
pub use layout::{BevLayout, KeypointLayout, SceneLayout};
pub use spatial::{dist2, SpatialHash};
pub use voxel::{voxelize, LevelLayout, VoxelGrid, VoxelHierarchy, NUM_LEVELS, VOXEL_STATS_DIM};

/// Points as `(x, y, z, intensity)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 4]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// Points strictly inside `[min, max)` on every axis.
    pub fn crop(&self, min: [f64; 3], max: [f64; 3]) -> Self {
        let points = self
            .points
            .iter()
            .filter(|p| (0..3).all(|a| p[a].is_finite() && p[a] >= min[a] && p[a] < max[a]))
            .copied()
            .collect();
        Self { points }
    }
}

/// Geometry and width settings for Stage-I encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub num_keypoints: usize,
    pub point_dim: usize,
    pub voxel_dims: [usize; 4],
    pub bev_dim: usize,
    pub keypoint_radius: f64,
    pub keypoint_max_neighbors: usize,
    pub voxel_radii: [f64; 4],
    pub voxel_max_neighbors: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            voxel_size: [0.05, 0.05, 0.1],
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            num_keypoints: 2048,
            point_dim: 32,
            voxel_dims: [32, 64, 128, 128],
            bev_dim: 256,
            keypoint_radius: 0.8,
            keypoint_max_neighbors: 32,
            voxel_radii: [0.4, 0.8, 1.6, 3.2],
            voxel_max_neighbors: 32,
        }
    }
}

impl EncoderConfig {
    /// Width of one voxel-BEV token.
    pub fn vb_dim(&self) -> usize {
        self.voxel_dims.iter().sum::<usize>() + self.bev_dim
    }
}

impl EncoderConfig {
    /// Level-0 voxel grid dimensions implied by the range and voxel size.
    pub fn grid_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| {
            ((self.range_max[a] - self.range_min[a]) / self.voxel_size[a]).ceil() as usize
        })
    }

    /// Side lengths of one BEV cell along x and y.
    pub fn bev_cell_size(&self) -> [f64; 2] {
        let stride = (1usize << (voxel::NUM_LEVELS - 1)) as f64;
        [self.voxel_size[0] * stride, self.voxel_size[1] * stride]
    }

    /// `(h, w, z_slices)` of the BEV plane built from the coarsest level.
    pub fn bev_dims(&self) -> [usize; 3] {
        let mut d = self.grid_dims();
        for _ in 1..voxel::NUM_LEVELS {
            d = d.map(|v| v.div_ceil(2));
        }
        d
    }
}
