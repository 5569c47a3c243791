use rand::Rng;

use crate::geometry::Box3D;
use crate::scene::SpatialHash;
use crate::tensor::{Linear, ParamStore, Result, Scope, Tensor, Var};

use super::pyramid::{level_edges, PyramidLevel};

/// Plain RoI grid pooling: one lattice inside the RoI, each grid point
/// max-pools an affine + ReLU encoding of `(offset ‖ feature)` over nearby
/// keypoints, and the flattened grid is projected to one row per RoI.
#[derive(Debug, Clone)]
pub struct GridHead {
    pub level: PyramidLevel,
    enc: Linear,
    flat: Linear,
}

impl GridHead {
    pub fn init<R: Rng>(
        prefix: &str,
        store: &mut ParamStore,
        level: PyramidLevel,
        feat_dim: usize,
        dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            level,
            enc: Linear::init(format!("{prefix}.enc"), store, 3 + feat_dim, dim, rng),
            flat: Linear::init(
                format!("{prefix}.flat"),
                store,
                dim * level.points(),
                out_dim,
                rng,
            ),
        }
    }

    pub fn forward<'g>(
        &self,
        scope: Scope<'g>,
        rois: &[Box3D],
        coords: &[[f64; 3]],
        feats: &Var<'g>,
    ) -> Result<Var<'g>> {
        let hash = SpatialHash::new(coords, self.level.radius.max(1e-3));
        let e = level_edges(rois, &self.level, coords, &hash);
        let dim = scope.params.get(&self.enc.bias_name())?.cols();
        let pooled = if e.grid.is_empty() {
            scope.constant(Tensor::zeros(&[e.grid_points, dim]))
        } else {
            let rel = scope.constant(e.rel.clone());
            let f = feats.gather_rows(e.keypoint.clone())?;
            let h = self
                .enc
                .forward(scope, &scope.graph.concat_cols(&[rel, f])?)?
                .relu();
            h.segment_max(e.grid.clone(), e.grid_points)?
        };
        let flat = pooled.reshape(rois.len(), dim * self.level.points())?;
        Ok(self.flat.forward(scope, &flat)?.relu())
    }
}
