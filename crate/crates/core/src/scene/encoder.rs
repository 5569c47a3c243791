//! Learned Stage-I encoders over a precomputed [`SceneLayout`].

use rand::Rng;

use crate::tensor::{Linear, ParamStore, Result, Scope, Tensor, Var};

use super::voxel::{NUM_LEVELS, VOXEL_STATS_DIM};
use super::{EncoderConfig, SceneLayout};

/// Dense BEV feature map, one row per cell in `ix * w + iy` order.
#[derive(Debug, Clone, Copy)]
pub struct BevMap<'g> {
    pub h: usize,
    pub w: usize,
    pub cell_size: [f64; 2],
    pub features: Var<'g>,
}

impl BevMap<'_> {
    pub fn channels(&self) -> usize {
        self.features.cols()
    }
}

/// Output of one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncodedScene<'g> {
    /// Features of the occupied voxels at every hierarchy level.
    pub levels: Vec<Var<'g>>,
    pub bev: BevMap<'g>,
    /// `K × point_dim` keypoint features.
    pub f_p: Var<'g>,
    /// `K × vb_dim` voxel-BEV tokens.
    pub f_vb: Var<'g>,
}

/// Voxel hierarchy, BEV projection and keypoint encoders.
#[derive(Debug, Clone)]
pub struct SceneEncoder {
    cfg: EncoderConfig,
    voxel: Vec<Linear>,
    bev: Linear,
    point: [Linear; 2],
}

impl SceneEncoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        Self {
            cfg,
            voxel: (0..NUM_LEVELS)
                .map(|l| Linear::new(format!("enc.voxel{l}")))
                .collect(),
            bev: Linear::new("enc.bev"),
            point: [Linear::new("enc.point1"), Linear::new("enc.point2")],
        }
    }

    pub fn init<R: Rng>(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let enc = Self::new(cfg);
        let d = enc.cfg.voxel_dims;
        let mut fan_in = VOXEL_STATS_DIM;
        for (lin, out) in enc.voxel.iter().zip(d) {
            Linear::init(lin.prefix(), store, fan_in, out, rng);
            fan_in = out + 3;
        }
        let zs = enc.cfg.bev_dims()[2];
        Linear::init(
            enc.bev.prefix(),
            store,
            zs * d[NUM_LEVELS - 1],
            enc.cfg.bev_dim,
            rng,
        );
        let pd = enc.cfg.point_dim;
        Linear::init(enc.point[0].prefix(), store, 4, pd, rng);
        Linear::init(enc.point[1].prefix(), store, pd, pd, rng);
        enc
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Level 0 encodes the voxel statistics; every coarser level encodes each
    /// child's features with its offset inside the parent, then max-pools.
    pub fn voxel_levels<'g>(&self, scope: Scope<'g>, layout: &SceneLayout) -> Result<Vec<Var<'g>>> {
        let h = &layout.hierarchy;
        let mut levels = Vec::with_capacity(NUM_LEVELS);
        let mut x = scope.constant(h.stats.clone());
        for (l, lin) in self.voxel.iter().enumerate() {
            if l > 0 {
                let lv = &h.levels[l];
                let with_pos = scope
                    .graph
                    .concat_cols(&[x, scope.constant(lv.child_offsets.clone())])?;
                x = lin
                    .forward(scope, &with_pos)?
                    .relu()
                    .segment_max(lv.parent_of_child.clone(), lv.keys.len())?;
            } else {
                x = lin.forward(scope, &x)?.relu();
            }
            levels.push(x);
        }
        Ok(levels)
    }

    /// Collapses the coarsest level along z and projects each occupied cell.
    pub fn bev_project<'g>(
        &self,
        scope: Scope<'g>,
        layout: &SceneLayout,
        top: &Var<'g>,
    ) -> Result<BevMap<'g>> {
        let b = &layout.bev;
        let occupied = b.occupied_cells.len();
        let slots = top.segment_sum(b.slot_of_voxel.clone(), occupied * b.z_slices)?;
        let stacked = slots.reshape(occupied, b.z_slices * top.cols())?;
        let cells = self.bev.forward(scope, &stacked)?.relu();
        let features = cells.segment_sum(b.occupied_cells.clone(), b.cells())?;
        Ok(BevMap {
            h: b.h,
            w: b.w,
            cell_size: b.cell_size,
            features,
        })
    }

    /// Shared two-layer encoder over `(offset, intensity)` of each keypoint's
    /// neighbors, max-pooled per keypoint.
    pub fn point_features<'g>(&self, scope: Scope<'g>, layout: &SceneLayout) -> Result<Var<'g>> {
        let kp = &layout.keypoints;
        let x = scope.constant(kp.point_feats.clone());
        let x = self.point[0].forward(scope, &x)?.relu();
        let x = self.point[1].forward(scope, &x)?.relu();
        x.segment_max(kp.point_seg.clone(), kp.len())
    }

    /// Radius-pooled voxel means per level concatenated with the bilinear
    /// BEV sample at each keypoint.
    pub fn vb_tokens<'g>(
        &self,
        layout: &SceneLayout,
        levels: &[Var<'g>],
        bev: &BevMap<'g>,
    ) -> Result<Var<'g>> {
        let kp = &layout.keypoints;
        let k = kp.len();
        let mut parts = Vec::with_capacity(NUM_LEVELS + 1);
        for (x, (seg, vox)) in levels.iter().zip(&kp.voxel_edges) {
            parts.push(x.gather_rows(vox.clone())?.segment_mean(seg.clone(), k)?);
        }
        let g = bev.features.graph();
        let w = g.constant(kp.bev_weights.clone());
        let sampled = bev
            .features
            .gather_rows(kp.bev_cells.clone())?
            .mul_col(&w)?;
        parts.push(sampled.segment_sum(kp.bev_seg.clone(), k)?);
        g.concat_cols(&parts)
    }

    pub fn forward<'g>(&self, scope: Scope<'g>, layout: &SceneLayout) -> Result<EncodedScene<'g>> {
        let levels = self.voxel_levels(scope, layout)?;
        let bev = self.bev_project(scope, layout, &levels[NUM_LEVELS - 1])?;
        let f_p = self.point_features(scope, layout)?;
        let f_vb = self.vb_tokens(layout, &levels, &bev)?;
        Ok(EncodedScene {
            levels,
            bev,
            f_p,
            f_vb,
        })
    }
}

/// Rows of `t` that contain any nonzero entry.
pub fn nonzero_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .filter(|&r| t.row_slice(r).iter().any(|v| *v != 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::PointCloud;
    use crate::tensor::Graph;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            voxel_size: [0.1, 0.1, 0.2],
            range_min: [0.0, -3.2, -3.0],
            range_max: [6.4, 3.2, 1.0],
            num_keypoints: 32,
            point_dim: 8,
            voxel_dims: [4, 6, 8, 8],
            bev_dim: 10,
            keypoint_radius: 0.8,
            keypoint_max_neighbors: 16,
            voxel_radii: [0.4, 0.8, 1.6, 3.2],
            voxel_max_neighbors: 16,
        }
    }

    fn setup(cfg: &EncoderConfig) -> (SceneEncoder, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = SceneEncoder::init(cfg.clone(), &mut store, &mut rng);
        (enc, store)
    }

    fn cloud(seed: u64, n: usize, shift: [f64; 3]) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        1.0 + rng.random::<f64>() * 2.0 + shift[0],
                        -1.0 + rng.random::<f64>() * 2.0 + shift[1],
                        -1.5 + rng.random::<f64>() + shift[2],
                        rng.random(),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn default_token_width() {
        assert_eq!(EncoderConfig::default().vb_dim(), 608);
    }

    #[test]
    fn shapes_and_finiteness() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        let layout = SceneLayout::build(&cloud(1, 300, [0.0; 3]), &cfg);
        let g = Graph::new();
        let out = enc.forward(Scope::new(&g, &store), &layout).unwrap();
        assert_eq!(out.f_p.shape(), vec![32, 8]);
        assert_eq!(out.f_vb.shape(), vec![32, cfg.vb_dim()]);
        assert_eq!(out.bev.features.shape(), vec![8 * 8, 10]);
        assert!(out.f_p.value().is_finite() && out.f_vb.value().is_finite());
    }

    #[test]
    fn empty_scene_flows_through() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        let layout = SceneLayout::build(&PointCloud::default(), &cfg);
        let g = Graph::new();
        let out = enc.forward(Scope::new(&g, &store), &layout).unwrap();
        assert!(nonzero_rows(&out.bev.features.value()).is_empty());
        assert_eq!(out.f_p.rows(), 0);
        assert_eq!(out.f_vb.rows(), 0);
    }

    #[test]
    fn single_voxel_is_sparse_at_every_level() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        let layout = SceneLayout::build(&PointCloud::new(vec![[2.05, 0.05, -0.9, 0.4]]), &cfg);
        let g = Graph::new();
        let out = enc.forward(Scope::new(&g, &store), &layout).unwrap();
        for lv in &out.levels {
            assert_eq!(lv.rows(), 1);
        }
        assert!(nonzero_rows(&out.bev.features.value()).len() <= 1);
        let ix = (2.05 / 0.8) as usize;
        let iy = ((0.05 + 3.2) / 0.8) as usize;
        assert_eq!(layout.bev.occupied_cells.as_slice(), &[ix * 8 + iy]);
    }

    #[test]
    fn translation_by_coarse_voxel_multiple_is_equivariant() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        // 8 level-0 voxels along x keeps every level's grouping intact.
        let a = SceneLayout::build(&cloud(5, 200, [0.0; 3]), &cfg);
        let b = SceneLayout::build(&cloud(5, 200, [0.8, 0.0, 0.0]), &cfg);
        let g = Graph::new();
        let fa = enc.voxel_levels(Scope::new(&g, &store), &a).unwrap();
        let fb = enc.voxel_levels(Scope::new(&g, &store), &b).unwrap();
        for (l, (x, y)) in fa.iter().zip(&fb).enumerate() {
            let ka = &a.hierarchy.levels[l].keys;
            let kb = &b.hierarchy.levels[l].keys;
            let shift = 8 >> l;
            assert!(ka
                .iter()
                .zip(kb)
                .all(|(p, q)| q[0] == p[0] + shift && q[1..] == p[1..]));
            assert!(x.value().max_abs_diff(&y.value()) < 1e-12);
        }
    }

    #[test]
    fn point_order_within_voxels_does_not_matter() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        let pc = cloud(9, 150, [0.0; 3]);
        let mut rev = pc.clone();
        // Keep index 0 first so keypoint sampling starts from the same point.
        rev.points[1..].reverse();
        let la = SceneLayout::build(&pc, &cfg);
        let lb = SceneLayout::build(&rev, &cfg);
        let g = Graph::new();
        let a = enc.forward(Scope::new(&g, &store), &la).unwrap();
        let b = enc.forward(Scope::new(&g, &store), &lb).unwrap();
        assert!(a.levels[0].value().max_abs_diff(&b.levels[0].value()) < 1e-12);
        assert!(a.bev.features.value().max_abs_diff(&b.bev.features.value()) < 1e-12);
    }

    #[test]
    fn keypoint_at_cell_center_reads_that_cell() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        // Cell (2, 4) center is (2.0, 0.4); a second point makes a second cell.
        let pc = PointCloud::new(vec![[2.0, 0.4, -1.0, 0.3], [5.9, 2.9, 0.5, 0.1]]);
        let layout = SceneLayout::build(&pc, &cfg);
        let g = Graph::new();
        let out = enc.forward(Scope::new(&g, &store), &layout).unwrap();
        let vb = out.f_vb.value();
        let bev = out.bev.features.value();
        let off = cfg.voxel_dims.iter().sum::<usize>();
        let row0 = &vb.row_slice(0)[off..];
        let cell = bev.row_slice(2 * 8 + 4);
        assert!(row0.iter().zip(cell).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn isolated_keypoint_encodes_itself() {
        let cfg = small_cfg();
        let (enc, store) = setup(&cfg);
        let pc = PointCloud::new(vec![[1.0, 0.0, -1.0, 0.7]]);
        let layout = SceneLayout::build(&pc, &cfg);
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let f = enc.point_features(s, &layout).unwrap();
        let x = g.constant(Tensor::row(&[0.0, 0.0, 0.0, 0.7]));
        let x = enc.point[0].forward(s, &x).unwrap().relu();
        let x = enc.point[1].forward(s, &x).unwrap().relu();
        assert_eq!(f.value().data(), x.value().data());
    }
}
