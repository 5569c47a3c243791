use std::collections::BTreeMap;
use std::sync::Arc;

use crate::tensor::{Index, Tensor};

use super::voxel::NUM_LEVELS;
use super::{
    fps_sample, voxelize, EncoderConfig, PointCloud, SpatialHash, VoxelGrid, VoxelHierarchy,
};

/// Placement of the coarsest voxel level onto the BEV plane.
#[derive(Debug, Clone)]
pub struct BevLayout {
    /// Cells along x.
    pub h: usize,
    /// Cells along y.
    pub w: usize,
    pub z_slices: usize,
    pub cell_size: [f64; 2],
    pub origin: [f64; 2],
    /// Flat index `ix * w + iy` of every occupied BEV cell, ascending.
    pub occupied_cells: Index,
    /// For every coarsest-level voxel, `occupied_row * z_slices + iz`.
    pub slot_of_voxel: Index,
}

impl BevLayout {
    fn build(h: &VoxelHierarchy, grid: &VoxelGrid) -> Self {
        let top = &h.levels[NUM_LEVELS - 1];
        let [hx, wy, zs] = top.dims;
        let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
        for k in &top.keys {
            rows.entry(k[0] * wy + k[1]).or_insert(0);
        }
        for (r, v) in rows.values_mut().enumerate() {
            *v = r;
        }
        let slot_of_voxel = top
            .keys
            .iter()
            .map(|k| rows[&(k[0] * wy + k[1])] * zs + k[2])
            .collect();
        let stride = top.stride as f64;
        Self {
            h: hx,
            w: wy,
            z_slices: zs,
            cell_size: [grid.voxel_size[0] * stride, grid.voxel_size[1] * stride],
            origin: [grid.range_min[0], grid.range_min[1]],
            occupied_cells: Arc::new(rows.keys().copied().collect()),
            slot_of_voxel: Arc::new(slot_of_voxel),
        }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size[0],
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size[1],
        ]
    }

    /// Bilinear weights over cell centers; cells off the grid contribute
    /// nothing and zero weights are omitted.
    pub fn bilinear(&self, x: f64, y: f64) -> Vec<(usize, f64)> {
        let u = (x - self.origin[0]) / self.cell_size[0] - 0.5;
        let v = (y - self.origin[1]) / self.cell_size[1] - 0.5;
        let (i0, j0) = (u.floor(), v.floor());
        let (fu, fv) = (u - i0, v - j0);
        let mut out = Vec::with_capacity(4);
        for (di, wi) in [(0.0, 1.0 - fu), (1.0, fu)] {
            for (dj, wj) in [(0.0, 1.0 - fv), (1.0, fv)] {
                let (i, j) = (i0 + di, j0 + dj);
                let wgt = wi * wj;
                if wgt == 0.0 || i < 0.0 || j < 0.0 || i >= self.h as f64 || j >= self.w as f64 {
                    continue;
                }
                out.push((i as usize * self.w + j as usize, wgt));
            }
        }
        out
    }
}

/// Keypoints and their precomputed neighborhoods.
#[derive(Debug, Clone)]
pub struct KeypointLayout {
    pub coords: Vec<[f64; 3]>,
    pub indices: Vec<usize>,
    /// Keypoint id of every (keypoint, raw point) edge.
    pub point_seg: Index,
    /// `(dx, dy, dz, intensity)` of every edge, offsets relative to the keypoint.
    pub point_feats: Tensor,
    /// Per level: keypoint id and voxel row of every (keypoint, voxel) edge.
    pub voxel_edges: Vec<(Index, Index)>,
    pub bev_seg: Index,
    pub bev_cells: Index,
    pub bev_weights: Tensor,
}

impl KeypointLayout {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Parameter-independent preprocessing of one scene.
#[derive(Debug, Clone)]
pub struct SceneLayout {
    pub cloud: PointCloud,
    pub grid: VoxelGrid,
    pub hierarchy: VoxelHierarchy,
    pub bev: BevLayout,
    pub keypoints: KeypointLayout,
}

impl SceneLayout {
    pub fn build(pc: &PointCloud, cfg: &EncoderConfig) -> Self {
        let cloud = pc.crop(cfg.range_min, cfg.range_max);
        let grid = voxelize(&cloud, cfg.voxel_size, cfg.range_min, cfg.range_max);
        let hierarchy = VoxelHierarchy::build(&grid, &cloud);
        let bev = BevLayout::build(&hierarchy, &grid);
        let xyz = cloud.xyz();
        let indices = fps_sample(&xyz, cfg.num_keypoints);
        let coords: Vec<[f64; 3]> = indices.iter().map(|&i| xyz[i]).collect();

        let hash = SpatialHash::new(&xyz, cfg.keypoint_radius.max(1e-3));
        let (mut point_seg, mut feats) = (Vec::new(), Vec::new());
        for (k, c) in coords.iter().enumerate() {
            for j in hash.nearest_within(*c, cfg.keypoint_radius, cfg.keypoint_max_neighbors) {
                let p = cloud.points[j];
                point_seg.push(k);
                feats.extend([p[0] - c[0], p[1] - c[1], p[2] - c[2], p[3]]);
            }
        }
        let point_feats = Tensor::matrix(point_seg.len(), 4, feats);

        let mut voxel_edges = Vec::with_capacity(NUM_LEVELS);
        for (level, radius) in hierarchy.levels.iter().zip(cfg.voxel_radii) {
            let vh = SpatialHash::new(&level.centers, radius.max(1e-3));
            let (mut seg, mut vox) = (Vec::new(), Vec::new());
            for (k, c) in coords.iter().enumerate() {
                for v in vh.nearest_within(*c, radius, cfg.voxel_max_neighbors) {
                    seg.push(k);
                    vox.push(v);
                }
            }
            voxel_edges.push((Arc::new(seg), Arc::new(vox)));
        }

        let (mut bev_seg, mut bev_cells, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for (k, c) in coords.iter().enumerate() {
            for (cell, w) in bev.bilinear(c[0], c[1]) {
                bev_seg.push(k);
                bev_cells.push(cell);
                weights.push(w);
            }
        }
        let bev_weights = Tensor::matrix(weights.len(), 1, weights);

        Self {
            keypoints: KeypointLayout {
                coords,
                indices,
                point_seg: Arc::new(point_seg),
                point_feats,
                voxel_edges,
                bev_seg: Arc::new(bev_seg),
                bev_cells: Arc::new(bev_cells),
                bev_weights,
            },
            cloud,
            grid,
            hierarchy,
            bev,
        }
    }
}
