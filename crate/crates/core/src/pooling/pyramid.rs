use std::sync::Arc;

use rand::Rng;

use crate::attention::{edge_attention, Gate};
use crate::geometry::{generate_grid_points, rotate_to_local, Box3D};
use crate::scene::SpatialHash;
use crate::tensor::{Index, Linear, ParamStore, Result, Scope, Tensor, Var};

/// One pyramid level: lattice size, scale of the RoI it fills, and the
/// radius within which grid points gather keypoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidLevel {
    pub rho: [f64; 3],
    pub n: [usize; 3],
    pub radius: f64,
}

impl PyramidLevel {
    pub fn points(&self) -> usize {
        self.n.iter().product()
    }
}

pub fn default_levels() -> Vec<PyramidLevel> {
    vec![
        PyramidLevel {
            rho: [1.0; 3],
            n: [6; 3],
            radius: 0.4,
        },
        PyramidLevel {
            rho: [1.2; 3],
            n: [4; 3],
            radius: 0.8,
        },
        PyramidLevel {
            rho: [1.6; 3],
            n: [2; 3],
            radius: 1.6,
        },
    ]
}

/// Grid point coordinates of every level for one RoI.
pub fn pyramid_grid_build(roi: &Box3D, levels: &[PyramidLevel]) -> Vec<Vec<[f64; 3]>> {
    levels
        .iter()
        .map(|l| generate_grid_points(roi, l.n, l.rho))
        .collect()
}

/// Grid-point/keypoint edges of one level over a batch of RoIs. Grid point
/// `p` of RoI `r` is row `r * points + p`.
#[derive(Debug, Clone)]
pub struct LevelEdges {
    pub grid: Index,
    pub keypoint: Index,
    /// Keypoint minus grid point, in the RoI frame (E × 3).
    pub rel: Tensor,
    pub grid_points: usize,
}

pub fn level_edges(
    rois: &[Box3D],
    level: &PyramidLevel,
    coords: &[[f64; 3]],
    hash: &SpatialHash<'_>,
) -> LevelEdges {
    let per = level.points();
    let (mut grid, mut keypoint, mut rel) = (Vec::new(), Vec::new(), Vec::new());
    for (r, roi) in rois.iter().enumerate() {
        for (p, g) in generate_grid_points(roi, level.n, level.rho)
            .into_iter()
            .enumerate()
        {
            for k in hash.within(g, level.radius) {
                let c = coords[k];
                grid.push(r * per + p);
                keypoint.push(k);
                rel.extend(rotate_to_local(
                    roi.theta,
                    [c[0] - g[0], c[1] - g[1], c[2] - g[2]],
                ));
            }
        }
    }
    LevelEdges {
        rel: Tensor::matrix(grid.len(), 3, rel),
        grid: Arc::new(grid),
        keypoint: Arc::new(keypoint),
        grid_points: rois.len() * per,
    }
}

#[derive(Debug, Clone)]
struct LevelParams {
    q_pos: Linear,
    k: Linear,
    v: Linear,
    gate_qk: Gate,
    gate_v: Gate,
}

/// Attention pooling from grid points to nearby keypoints with positional
/// queries: `Σ softmax(σqk · Q_pos·K) ⊙ (V + σv · Q_pos)` per grid point.
#[derive(Debug, Clone)]
pub struct PyramidHead {
    pub levels: Vec<PyramidLevel>,
    params: Vec<LevelParams>,
    pub scale_qk: bool,
}

impl PyramidHead {
    pub fn init<R: Rng>(
        prefix: &str,
        store: &mut ParamStore,
        levels: Vec<PyramidLevel>,
        feat_dim: usize,
        dim: usize,
        scale_qk: bool,
        rng: &mut R,
    ) -> Self {
        let params = (0..levels.len())
            .map(|l| {
                let p = format!("{prefix}.level{l}");
                LevelParams {
                    q_pos: Linear::init(format!("{p}.q_pos"), store, 3, dim, rng),
                    k: Linear::init(format!("{p}.k"), store, feat_dim, dim, rng),
                    v: Linear::init(format!("{p}.v"), store, feat_dim, dim, rng),
                    gate_qk: Gate::init(format!("{p}.gate_qk"), store, dim, rng),
                    gate_v: Gate::init(format!("{p}.gate_v"), store, dim, rng),
                }
            })
            .collect();
        Self {
            levels,
            params,
            scale_qk,
        }
    }

    pub fn edges(&self, rois: &[Box3D], coords: &[[f64; 3]]) -> Vec<LevelEdges> {
        let cell = self.levels.iter().map(|l| l.radius).fold(1e-3, f64::max);
        let hash = SpatialHash::new(coords, cell);
        self.levels
            .iter()
            .map(|l| level_edges(rois, l, coords, &hash))
            .collect()
    }

    /// Per-grid-point features of one level (`R·points × dim`).
    pub fn level_forward<'g>(
        &self,
        scope: Scope<'g>,
        level: usize,
        edges: &LevelEdges,
        feats: &Var<'g>,
    ) -> Result<Var<'g>> {
        let p = &self.params[level];
        let dim = scope.params.get(&p.q_pos.bias_name())?.cols();
        if edges.grid.is_empty() {
            return Ok(scope.constant(Tensor::zeros(&[edges.grid_points, dim])));
        }
        let q = p.q_pos.forward(scope, &scope.constant(edges.rel.clone()))?;
        let k =
            p.k.forward(scope, feats)?
                .gather_rows(edges.keypoint.clone())?;
        let v =
            p.v.forward(scope, feats)?
                .gather_rows(edges.keypoint.clone())?;
        let g_qk = p.gate_qk.forward(scope, &q)?;
        let g_v = p.gate_v.forward(scope, &v)?;
        edge_attention(
            &q,
            &k,
            &v,
            Some((&g_qk, &g_v)),
            edges.grid.clone(),
            edges.grid_points,
            self.scale_qk,
        )
    }

    /// Every level flattened to one row per RoI (`R × points·dim`).
    pub fn forward_edges<'g>(
        &self,
        scope: Scope<'g>,
        edges: &[LevelEdges],
        rois: usize,
        feats: &Var<'g>,
    ) -> Result<Vec<Var<'g>>> {
        let mut out = Vec::with_capacity(edges.len());
        for (l, e) in edges.iter().enumerate() {
            let x = self.level_forward(scope, l, e, feats)?;
            let width = x.cols() * self.levels[l].points();
            out.push(x.reshape(rois, width)?);
        }
        Ok(out)
    }
}
