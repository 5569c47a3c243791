//! Multi-pooling RoI feature extraction: a clustering head that groups the
//! keypoints inside each enlarged proposal with DBSCAN, a pyramid head that
//! attends from nested grid lattices to nearby keypoints, and their fusion.
//! A plain grid head is kept as the ablation baseline.

mod cluster;
mod dbscan;
mod grid;
mod pyramid;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use cluster::{ClusterHead, ClusterLayout};
pub use dbscan::{dbscan, ClusterResult};
pub use grid::GridHead;
pub use pyramid::{
    default_levels, level_edges, pyramid_grid_build, LevelEdges, PyramidHead, PyramidLevel,
};

use crate::geometry::Box3D;
use crate::tensor::{Linear, ParamStore, Result, Scope, Var};

/// Which heads feed the refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolingMode {
    ClusterPyramid,
    Grid,
    Cluster,
    Pyramid,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 4] = [
        Self::Grid,
        Self::Cluster,
        Self::Pyramid,
        Self::ClusterPyramid,
    ];

    fn uses_cluster(self) -> bool {
        matches!(self, Self::Cluster | Self::ClusterPyramid)
    }

    fn uses_pyramid(self) -> bool {
        matches!(self, Self::Pyramid | Self::ClusterPyramid)
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClusterPyramid => "cph+pph",
            Self::Grid => "gph",
            Self::Cluster => "cph",
            Self::Pyramid => "pph",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cph+pph" => Ok(Self::ClusterPyramid),
            "gph" => Ok(Self::Grid),
            "cph" => Ok(Self::Cluster),
            "pph" => Ok(Self::Pyramid),
            other => Err(format!(
                "unknown pooling mode `{other}` (expected cph+pph, gph, cph or pph)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    pub mode: PoolingMode,
    /// Width of the keypoint features being pooled.
    pub feat_dim: usize,
    pub phi: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub cluster_width: usize,
    pub levels: Vec<PyramidLevel>,
    pub attn_dim: usize,
    pub pyramid_width: usize,
    pub fused_dim: usize,
    pub scale_qk: bool,
    /// Lattice of the plain grid head.
    pub grid: PyramidLevel,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            mode: PoolingMode::ClusterPyramid,
            feat_dim: 128,
            phi: 0.4,
            eps: 0.2,
            min_pts: 2,
            cluster_width: 128,
            levels: default_levels(),
            attn_dim: 128,
            pyramid_width: 128,
            fused_dim: 128,
            scale_qk: true,
            grid: PyramidLevel {
                rho: [1.0; 3],
                n: [6; 3],
                radius: 0.8,
            },
        }
    }
}

/// Pooled features for a batch of RoIs, one row each.
#[derive(Debug, Clone)]
pub struct RoIPoolResult<'g> {
    pub clustering: Option<Var<'g>>,
    pub pyramid: Option<Var<'g>>,
    pub fused: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct RoIPooler {
    cfg: PoolConfig,
    cluster: Option<ClusterHead>,
    pyramid: Option<(PyramidHead, Linear)>,
    grid: Option<GridHead>,
    out: Linear,
}

impl RoIPooler {
    pub fn init<R: Rng>(cfg: PoolConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let mut in_dim = 0;
        let cluster = cfg.mode.uses_cluster().then(|| {
            in_dim += cfg.cluster_width;
            ClusterHead::init(
                "pool.cph",
                store,
                cfg.feat_dim,
                cfg.cluster_width,
                cfg.phi,
                cfg.eps,
                cfg.min_pts,
                rng,
            )
        });
        let pyramid = cfg.mode.uses_pyramid().then(|| {
            in_dim += cfg.pyramid_width;
            let head = PyramidHead::init(
                "pool.pph",
                store,
                cfg.levels.clone(),
                cfg.feat_dim,
                cfg.attn_dim,
                cfg.scale_qk,
                rng,
            );
            let flat_in = cfg.levels.iter().map(PyramidLevel::points).sum::<usize>() * cfg.attn_dim;
            let stack = Linear::init("pool.pph.stack", store, flat_in, cfg.pyramid_width, rng);
            (head, stack)
        });
        let grid = (cfg.mode == PoolingMode::Grid).then(|| {
            in_dim += cfg.pyramid_width;
            GridHead::init(
                "pool.gph",
                store,
                cfg.grid,
                cfg.feat_dim,
                cfg.attn_dim,
                cfg.pyramid_width,
                rng,
            )
        });
        let out = Linear::init("pool.fuse", store, in_dim, cfg.fused_dim, rng);
        Self {
            cfg,
            cluster,
            pyramid,
            grid,
            out,
        }
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    pub fn cluster_head(&self) -> Option<&ClusterHead> {
        self.cluster.as_ref()
    }

    pub fn pyramid_head(&self) -> Option<&PyramidHead> {
        self.pyramid.as_ref().map(|(h, _)| h)
    }

    /// Flattened pyramid levels stacked by concatenation and projected.
    pub fn pyramid_feature<'g>(
        &self,
        scope: Scope<'g>,
        levels: &[Var<'g>],
    ) -> Result<Option<Var<'g>>> {
        let Some((_, stack)) = &self.pyramid else {
            return Ok(None);
        };
        let x = scope.graph.concat_cols(levels)?;
        Ok(Some(stack.forward(scope, &x)?.relu()))
    }

    /// Concatenates the head features present and applies the final affine map.
    pub fn fuse<'g>(
        &self,
        scope: Scope<'g>,
        clustering: Option<Var<'g>>,
        pyramid: Option<Var<'g>>,
    ) -> Result<Var<'g>> {
        let parts: Vec<Var<'g>> = clustering.into_iter().chain(pyramid).collect();
        let x = scope.graph.concat_cols(&parts)?;
        self.out.forward(scope, &x)
    }

    pub fn forward<'g>(
        &self,
        scope: Scope<'g>,
        rois: &[Box3D],
        coords: &[[f64; 3]],
        feats: &Var<'g>,
    ) -> Result<RoIPoolResult<'g>> {
        let clustering = match &self.cluster {
            Some(h) => Some(h.forward(scope, rois, coords, feats)?),
            None => None,
        };
        let pyramid = match (&self.pyramid, &self.grid) {
            (Some((head, _)), _) => {
                let edges = head.edges(rois, coords);
                let levels = head.forward_edges(scope, &edges, rois.len(), feats)?;
                self.pyramid_feature(scope, &levels)?
            }
            (None, Some(g)) => Some(g.forward(scope, rois, coords, feats)?),
            (None, None) => None,
        };
        let fused = self.fuse(scope, clustering, pyramid)?;
        Ok(RoIPoolResult {
            clustering,
            pyramid,
            fused,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::point_in_box;
    use crate::tensor::{Graph, Tensor};

    fn small_cfg(mode: PoolingMode) -> PoolConfig {
        PoolConfig {
            mode,
            feat_dim: 4,
            cluster_width: 5,
            levels: vec![
                PyramidLevel {
                    rho: [1.0; 3],
                    n: [2, 2, 1],
                    radius: 0.8,
                },
                PyramidLevel {
                    rho: [1.5; 3],
                    n: [1; 3],
                    radius: 1.6,
                },
            ],
            attn_dim: 3,
            pyramid_width: 6,
            fused_dim: 7,
            grid: PyramidLevel {
                rho: [1.0; 3],
                n: [2, 2, 1],
                radius: 0.8,
            },
            ..PoolConfig::default()
        }
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 3]>, Tensor) {
        let coords = (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.8..0.8),
                ]
            })
            .collect();
        let feats = Tensor::matrix(
            n,
            4,
            (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        (coords, feats)
    }

    #[test]
    fn pyramid_points_and_containment() {
        let roi = Box3D::new(1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let lv = [
            PyramidLevel {
                rho: [1.0; 3],
                n: [1; 3],
                radius: 1.0,
            },
            PyramidLevel {
                rho: [2.0; 3],
                n: [2; 3],
                radius: 1.0,
            },
        ];
        let g = pyramid_grid_build(&roi, &lv);
        assert_eq!(g[0].len(), 1);
        assert!((g[0][0][0] - 1.0).abs() < 1e-12 && (g[0][0][1] - 2.0).abs() < 1e-12);
        assert_eq!(g[1].len(), 8);
        assert!(g[1].iter().all(|p| !point_in_box(*p, &roi)));
    }

    #[test]
    fn every_mode_produces_configured_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (coords, feats) = scene(&mut rng, 40);
        let rois = [
            Box3D::new(0.0, 0.0, 0.0, 1.6, 1.6, 2.0, 0.2).unwrap(),
            Box3D::new(20.0, 0.0, 0.0, 1.6, 1.6, 2.0, 0.0).unwrap(),
        ];
        for mode in PoolingMode::ALL {
            let mut store = ParamStore::new();
            let pooler = RoIPooler::init(small_cfg(mode), &mut store, &mut rng);
            let g = Graph::new();
            let s = Scope::new(&g, &store);
            let f = g.constant(feats.clone());
            let out = pooler.forward(s, &rois, &coords, &f).unwrap();
            assert_eq!(out.fused.shape(), vec![2, 7], "{mode}");
            assert!(out.fused.value().is_finite());
            if let Some(c) = out.clustering {
                // The far RoI holds no keypoints.
                assert!(c.value().row_slice(1).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn zero_inputs_give_bias_only_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let pooler = RoIPooler::init(small_cfg(PoolingMode::ClusterPyramid), &mut store, &mut rng);
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let c = g.constant(Tensor::zeros(&[1, 5]));
        let p = g.constant(Tensor::zeros(&[1, 6]));
        let out = pooler.fuse(s, Some(c), Some(p)).unwrap().value();
        assert_eq!(out.data(), store.get("pool.fuse.b").unwrap().data());
    }

    #[test]
    fn single_neighbor_pyramid_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let level = PyramidLevel {
            rho: [1.0; 3],
            n: [1; 3],
            radius: 0.5,
        };
        let head = PyramidHead::init("p", &mut store, vec![level], 4, 3, true, &mut rng);
        let roi = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let coords = vec![[0.1, 0.2, 0.0], [3.0, 0.0, 0.0]];
        let feats = Tensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.1).collect());
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let f = g.constant(feats);
        let e = head.edges(&[roi], &coords);
        assert_eq!(e[0].keypoint.as_slice(), &[0]);
        let out = head.level_forward(s, 0, &e[0], &f).unwrap().value();
        let q = Linear::new("p.level0.q_pos")
            .forward(s, &g.constant(Tensor::row(&[0.1, 0.2, 0.0])))
            .unwrap();
        let v = Linear::new("p.level0.v").forward(s, &f).unwrap().value();
        let gv = Gate::new("p.level0.gate_v")
            .forward(s, &g.constant(Tensor::row(v.row_slice(0))))
            .unwrap()
            .value()
            .item();
        for c in 0..3 {
            let expect = v.at(0, c) + gv * q.value().at(0, c);
            assert!((out.at(0, c) - expect).abs() < 1e-14);
        }
    }

    use crate::attention::Gate;
}
