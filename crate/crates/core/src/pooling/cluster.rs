use std::sync::Arc;

use rand::Rng;

use crate::geometry::{rotate_to_local, Box3D};
use crate::tensor::{Index, Linear, ParamStore, Result, Scope, Tensor, Var};

use super::dbscan;

/// Parameter-free part of the clustering head for a batch of RoIs.
#[derive(Debug, Clone)]
pub struct ClusterLayout {
    /// Keypoint index of every (cluster, member) edge.
    pub keypoint: Index,
    /// Member offset from its cluster centroid, in the RoI frame (E × 3).
    pub offsets: Tensor,
    pub edge_cluster: Index,
    pub cluster_roi: Index,
    pub clusters: usize,
}

/// Clusters the keypoints inside each enlarged RoI, encodes every member by
/// its centroid offset and feature through a shared affine + ReLU, max-pools
/// per cluster and then across clusters. RoIs without clusters give zeros.
#[derive(Debug, Clone)]
pub struct ClusterHead {
    lin: Linear,
    pub phi: f64,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterHead {
    pub fn new(prefix: &str, phi: f64, eps: f64, min_pts: usize) -> Self {
        Self {
            lin: Linear::new(format!("{prefix}.enc")),
            phi,
            eps,
            min_pts,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        prefix: &str,
        store: &mut ParamStore,
        feat_dim: usize,
        width: usize,
        phi: f64,
        eps: f64,
        min_pts: usize,
        rng: &mut R,
    ) -> Self {
        let head = Self::new(prefix, phi, eps, min_pts);
        Linear::init(head.lin.prefix(), store, 3 + feat_dim, width, rng);
        head
    }

    pub fn layout(&self, rois: &[Box3D], coords: &[[f64; 3]]) -> ClusterLayout {
        let (mut keypoint, mut offsets, mut edge_cluster, mut cluster_roi) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, roi) in rois.iter().enumerate() {
            let big = roi.enlarge(self.phi);
            let inside: Vec<usize> = (0..coords.len())
                .filter(|&i| big.contains(coords[i]))
                .collect();
            let pts: Vec<[f64; 3]> = inside.iter().map(|&i| coords[i]).collect();
            let res = dbscan(&pts, self.eps, self.min_pts);
            for (members, c) in res.clusters.iter().zip(&res.centroids) {
                let cid = cluster_roi.len();
                cluster_roi.push(r);
                for &m in members {
                    let p = pts[m];
                    keypoint.push(inside[m]);
                    offsets.extend(rotate_to_local(
                        roi.theta,
                        [p[0] - c[0], p[1] - c[1], p[2] - c[2]],
                    ));
                    edge_cluster.push(cid);
                }
            }
        }
        ClusterLayout {
            offsets: Tensor::matrix(keypoint.len(), 3, offsets),
            keypoint: Arc::new(keypoint),
            edge_cluster: Arc::new(edge_cluster),
            clusters: cluster_roi.len(),
            cluster_roi: Arc::new(cluster_roi),
        }
    }

    pub fn forward_layout<'g>(
        &self,
        scope: Scope<'g>,
        layout: &ClusterLayout,
        rois: usize,
        feats: &Var<'g>,
    ) -> Result<Var<'g>> {
        let width = scope.params.get(&self.lin.bias_name())?.cols();
        if layout.clusters == 0 {
            return Ok(scope.constant(Tensor::zeros(&[rois, width])));
        }
        let off = scope.constant(layout.offsets.clone());
        let f = feats.gather_rows(layout.keypoint.clone())?;
        let x = scope.graph.concat_cols(&[off, f])?;
        let h = self.lin.forward(scope, &x)?.relu();
        h.segment_max(layout.edge_cluster.clone(), layout.clusters)?
            .segment_max(layout.cluster_roi.clone(), rois)
    }

    /// One row per RoI.
    pub fn forward<'g>(
        &self,
        scope: Scope<'g>,
        rois: &[Box3D],
        coords: &[[f64; 3]],
        feats: &Var<'g>,
    ) -> Result<Var<'g>> {
        let layout = self.layout(rois, coords);
        self.forward_layout(scope, &layout, rois.len(), feats)
    }
}
