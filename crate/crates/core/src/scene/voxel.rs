use std::collections::BTreeMap;
use std::sync::Arc;

use crate::tensor::{Index, Tensor};

use super::PointCloud;

/// Number of encoding levels in the voxel hierarchy.
pub const NUM_LEVELS: usize = 4;

/// Width of the level-0 voxel statistics: mean offset from the voxel center
/// in voxel units (3), mean and max intensity, and `ln(1 + count)`.
pub const VOXEL_STATS_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub dims: [usize; 3],
    /// Occupied voxel index → indices of the points it contains.
    pub occupied: BTreeMap<[usize; 3], Vec<usize>>,
    pub dropped: usize,
}

impl VoxelGrid {
    pub fn voxel_center(&self, key: [usize; 3], stride: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            let size = self.voxel_size[a] * stride as f64;
            c[a] = self.range_min[a] + (key[a] as f64 + 0.5) * size;
        }
        c
    }

    pub fn assigned(&self) -> usize {
        self.occupied.values().map(Vec::len).sum()
    }
}

/// Bins points by `floor((p - range_min) / size)`; points outside
/// `[range_min, range_max)` are dropped.
pub fn voxelize(
    pc: &PointCloud,
    size: [f64; 3],
    range_min: [f64; 3],
    range_max: [f64; 3],
) -> VoxelGrid {
    assert!(
        size.iter().all(|s| *s > 0.0),
        "voxel sizes must be positive"
    );
    assert!(
        (0..3).all(|a| range_min[a] < range_max[a]),
        "empty voxelization range"
    );
    let dims: [usize; 3] =
        std::array::from_fn(|a| ((range_max[a] - range_min[a]) / size[a]).ceil() as usize);
    let mut occupied: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    let mut dropped = 0;
    'points: for (i, p) in pc.points.iter().enumerate() {
        let mut key = [0usize; 3];
        for a in 0..3 {
            if !(p[a] >= range_min[a] && p[a] < range_max[a]) {
                dropped += 1;
                continue 'points;
            }
            let idx = ((p[a] - range_min[a]) / size[a]).floor();
            if idx < 0.0 || idx as usize >= dims[a] {
                dropped += 1;
                continue 'points;
            }
            key[a] = idx as usize;
        }
        occupied.entry(key).or_default().push(i);
    }
    VoxelGrid {
        voxel_size: size,
        range_min,
        range_max,
        dims,
        occupied,
        dropped,
    }
}

/// Occupied voxels of one hierarchy level.
#[derive(Debug, Clone)]
pub struct LevelLayout {
    pub stride: usize,
    pub dims: [usize; 3],
    pub keys: Vec<[usize; 3]>,
    pub centers: Vec<[f64; 3]>,
    /// For levels above 0: the row in this level that each voxel of the
    /// previous level pools into.
    pub parent_of_child: Index,
    /// For levels above 0: center of each previous-level voxel relative to
    /// its parent's center, in quarter parent voxels (each axis ±1).
    pub child_offsets: Tensor,
}

/// Sparse multi-level voxel layout plus the level-0 input statistics.
#[derive(Debug, Clone)]
pub struct VoxelHierarchy {
    pub levels: Vec<LevelLayout>,
    pub stats: Tensor,
}

impl VoxelHierarchy {
    pub fn build(grid: &VoxelGrid, pc: &PointCloud) -> Self {
        let keys0: Vec<[usize; 3]> = grid.occupied.keys().copied().collect();
        let mut stats = Vec::with_capacity(keys0.len() * VOXEL_STATS_DIM);
        for (key, members) in &grid.occupied {
            let c = grid.voxel_center(*key, 1);
            let n = members.len() as f64;
            let mut mean = [0.0; 3];
            let (mut isum, mut imax) = (0.0, f64::NEG_INFINITY);
            for &m in members {
                let p = pc.points[m];
                for a in 0..3 {
                    mean[a] += (p[a] - c[a]) / grid.voxel_size[a];
                }
                isum += p[3];
                imax = imax.max(p[3]);
            }
            stats.extend(mean.map(|v| v / n));
            stats.extend([isum / n, imax, n.ln_1p()]);
        }
        let centers0 = keys0.iter().map(|k| grid.voxel_center(*k, 1)).collect();
        let mut levels = vec![LevelLayout {
            stride: 1,
            dims: grid.dims,
            keys: keys0,
            centers: centers0,
            parent_of_child: Arc::new(Vec::new()),
            child_offsets: Tensor::zeros(&[0, 3]),
        }];
        for _ in 1..NUM_LEVELS {
            let prev = levels.last().expect("level 0 present");
            let stride = prev.stride * 2;
            let dims = prev.dims.map(|d| d.div_ceil(2));
            let mut index: BTreeMap<[usize; 3], usize> = BTreeMap::new();
            for k in &prev.keys {
                index.entry(k.map(|v| v / 2)).or_insert(0);
            }
            for (row, v) in index.values_mut().enumerate() {
                *v = row;
            }
            let parent: Vec<usize> = prev.keys.iter().map(|k| index[&k.map(|v| v / 2)]).collect();
            let keys: Vec<[usize; 3]> = index.keys().copied().collect();
            let centers: Vec<[f64; 3]> =
                keys.iter().map(|k| grid.voxel_center(*k, stride)).collect();
            let mut offsets = Vec::with_capacity(3 * parent.len());
            for (c, &p) in prev.centers.iter().zip(&parent) {
                for a in 0..3 {
                    offsets
                        .push(4.0 * (c[a] - centers[p][a]) / (grid.voxel_size[a] * stride as f64));
                }
            }
            levels.push(LevelLayout {
                stride,
                dims,
                keys,
                centers,
                parent_of_child: Arc::new(parent),
                child_offsets: Tensor::matrix(offsets.len() / 3, 3, offsets),
            });
        }
        Self {
            levels,
            stats: Tensor::matrix(stats.len() / VOXEL_STATS_DIM, VOXEL_STATS_DIM, stats),
        }
    }
}
