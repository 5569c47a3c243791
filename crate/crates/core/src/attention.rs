//! Point-voxel attention fusion.
//!
//! Three attention operators share one neighborhood abstraction: standard
//! dot-product attention, channelwise point attention, and gated point-voxel
//! attention, where a per-query scalar gate modulates the logits and a
//! per-key scalar gate mixes the query into the values. The fusion module
//! stacks them with self-attention layers into the `Z_pv` keypoint features.

use std::sync::Arc;

use rand::Rng;

use crate::scene::SpatialHash;
use crate::tensor::{
    Index, LayerNorm, Linear, ParamStore, Result, Scope, Tensor, TensorError, Var,
};

/// Which keys each query attends to.
#[derive(Debug, Clone, PartialEq)]
pub enum Neighborhood {
    /// Every query sees every key.
    Full,
    /// Explicit `(query, key)` pairs, grouped by ascending query.
    Edges { query: Index, key: Index },
}

impl Neighborhood {
    /// Keys within `radius` (inclusive) of each query; an infinite radius
    /// gives [`Neighborhood::Full`].
    pub fn within_radius(queries: &[[f64; 3]], keys: &[[f64; 3]], radius: f64) -> Self {
        if radius.is_infinite() {
            return Self::Full;
        }
        let hash = SpatialHash::new(keys, radius.max(1e-3));
        let (mut q, mut k) = (Vec::new(), Vec::new());
        for (i, p) in queries.iter().enumerate() {
            for j in hash.within(*p, radius) {
                q.push(i);
                k.push(j);
            }
        }
        Self::Edges {
            query: Arc::new(q),
            key: Arc::new(k),
        }
    }

    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let (mut q, mut k) = (Vec::new(), Vec::new());
        for (i, l) in lists.iter().enumerate() {
            for &j in l {
                q.push(i);
                k.push(j);
            }
        }
        Self::Edges {
            query: Arc::new(q),
            key: Arc::new(k),
        }
    }

    /// `(query, key)` index lists for `m` queries over `n` keys.
    pub fn edges(&self, m: usize, n: usize) -> (Index, Index) {
        match self {
            Self::Full => {
                let q = (0..m).flat_map(|i| std::iter::repeat_n(i, n)).collect();
                let k = (0..m).flat_map(|_| 0..n).collect();
                (Arc::new(q), Arc::new(k))
            }
            Self::Edges { query, key } => (query.clone(), key.clone()),
        }
    }

    pub fn keys_of(&self, i: usize, n: usize) -> Vec<usize> {
        match self {
            Self::Full => (0..n).collect(),
            Self::Edges { query, key } => query
                .iter()
                .zip(key.iter())
                .filter(|(q, _)| **q == i)
                .map(|(_, k)| *k)
                .collect(),
        }
    }
}

fn check_qkv(op: &'static str, q: &Var<'_>, k: &Var<'_>, v: &Var<'_>) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if k.rows() != v.rows() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: k.shape(),
            rhs: v.shape(),
        });
    }
    Ok(())
}

fn logit_scale(dim: usize, scale_qk: bool) -> f64 {
    if scale_qk && dim > 0 {
        1.0 / (dim as f64).sqrt()
    } else {
        1.0
    }
}

fn zeros<'g>(like: &Var<'g>, rows: usize, cols: usize) -> Var<'g> {
    like.graph().constant(Tensor::zeros(&[rows, cols]))
}

/// Per-edge gated attention shared by every operator. `q`, `k`, `v` hold one
/// row per edge and `seg` names each edge's query. With `gates = (g_qk, g_v)`
/// (each `E × 1`) the logit is `g_qk · q·k` and the value is `v + g_v · q`.
pub fn edge_attention<'g>(
    q: &Var<'g>,
    k: &Var<'g>,
    v: &Var<'g>,
    gates: Option<(&Var<'g>, &Var<'g>)>,
    seg: Index,
    queries: usize,
    scale_qk: bool,
) -> Result<Var<'g>> {
    let mut logits = q.row_dot(k)?.scale(logit_scale(q.cols(), scale_qk));
    let mut values = *v;
    if let Some((g_qk, g_v)) = gates {
        logits = logits.mul(g_qk)?;
        values = values.add(&q.mul_col(g_v)?)?;
    }
    let w = logits.segment_softmax(seg.clone(), queries)?;
    values.mul_col(&w)?.segment_sum(seg, queries)
}

/// `Z_i = Σ_j softmax_j(Q_i·K_j) V_j` over the neighborhood of query `i`.
pub fn standard_attention<'g>(
    q: &Var<'g>,
    k: &Var<'g>,
    v: &Var<'g>,
    nb: &Neighborhood,
    scale_qk: bool,
) -> Result<Var<'g>> {
    check_qkv("standard_attention", q, k, v)?;
    let (m, n) = (q.rows(), k.rows());
    match nb {
        Neighborhood::Full if n == 0 => Ok(zeros(q, m, v.cols())),
        Neighborhood::Full => {
            let logits = q
                .matmul(&k.transpose()?)?
                .scale(logit_scale(q.cols(), scale_qk));
            logits.softmax_rows()?.matmul(v)
        }
        Neighborhood::Edges { query, key } => {
            let qe = q.gather_rows(query.clone())?;
            let ke = k.gather_rows(key.clone())?;
            let ve = v.gather_rows(key.clone())?;
            edge_attention(&qe, &ke, &ve, None, query.clone(), m, scale_qk)
        }
    }
}

/// `Z_i = Σ_j softmax_j(Q_i + K_j) ⊙ (V_j + Q_i)` with the softmax taken per
/// channel over the neighborhood.
pub fn point_attention<'g>(
    q: &Var<'g>,
    k: &Var<'g>,
    v: &Var<'g>,
    nb: &Neighborhood,
) -> Result<Var<'g>> {
    check_qkv("point_attention", q, k, v)?;
    if q.cols() != v.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "point_attention",
            lhs: q.shape(),
            rhs: v.shape(),
        });
    }
    let m = q.rows();
    let (qi, ki) = nb.edges(m, k.rows());
    let qe = q.gather_rows(qi.clone())?;
    let w = qe
        .add(&k.gather_rows(ki.clone())?)?
        .segment_softmax(qi.clone(), m)?;
    let vals = v.gather_rows(ki)?.add(&qe)?;
    w.mul(&vals)?.segment_sum(qi, m)
}

/// Gated point-voxel attention:
/// `Z_i = Σ_j softmax_j(σqk_i · Q_i·K_j) (V_j + σv_j · Q_i)`.
/// `gate_qk` is `M × 1` (one per query), `gate_v` is `N × 1` (one per key).
pub fn point_voxel_attention<'g>(
    q: &Var<'g>,
    k: &Var<'g>,
    v: &Var<'g>,
    gate_qk: &Var<'g>,
    gate_v: &Var<'g>,
    nb: &Neighborhood,
    scale_qk: bool,
) -> Result<Var<'g>> {
    check_qkv("point_voxel_attention", q, k, v)?;
    let (m, n) = (q.rows(), k.rows());
    if q.cols() != v.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "point_voxel_attention",
            lhs: q.shape(),
            rhs: v.shape(),
        });
    }
    if gate_qk.shape() != [m, 1] || gate_v.shape() != [n, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "point_voxel_attention gates",
            lhs: gate_qk.shape(),
            rhs: gate_v.shape(),
        });
    }
    match nb {
        Neighborhood::Full if n == 0 => Ok(zeros(q, m, v.cols())),
        Neighborhood::Full => {
            let logits = q
                .matmul(&k.transpose()?)?
                .mul_col(gate_qk)?
                .scale(logit_scale(q.cols(), scale_qk));
            let a = logits.softmax_rows()?;
            a.matmul(v)?.add(&q.mul_col(&a.matmul(gate_v)?)?)
        }
        Neighborhood::Edges { query, key } => {
            let qe = q.gather_rows(query.clone())?;
            let ke = k.gather_rows(key.clone())?;
            let ve = v.gather_rows(key.clone())?;
            let gq = gate_qk.gather_rows(query.clone())?;
            let gv = gate_v.gather_rows(key.clone())?;
            edge_attention(&qe, &ke, &ve, Some((&gq, &gv)), query.clone(), m, scale_qk)
        }
    }
}

/// Affine projection to one scalar per token followed by a sigmoid.
#[derive(Debug, Clone)]
pub struct Gate {
    lin: Linear,
}

impl Gate {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            lin: Linear::new(prefix),
        }
    }

    pub fn init<R: Rng>(
        prefix: impl Into<String>,
        store: &mut ParamStore,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            lin: Linear::init(prefix, store, dim, 1, rng),
        }
    }

    pub fn linear(&self) -> &Linear {
        &self.lin
    }

    pub fn forward<'g>(&self, scope: Scope<'g>, x: &Var<'g>) -> Result<Var<'g>> {
        Ok(self.lin.forward(scope, x)?.sigmoid())
    }
}

/// Single-head self-attention with a residual connection and layer norm:
/// `LN(x + softmax(q kᵀ / √C) v)`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    norm: LayerNorm,
    scale_qk: bool,
}

impl SelfAttention {
    pub fn new(prefix: &str, scale_qk: bool) -> Self {
        Self {
            q: Linear::new(format!("{prefix}.q")),
            k: Linear::new(format!("{prefix}.k")),
            v: Linear::new(format!("{prefix}.v")),
            norm: LayerNorm::new(format!("{prefix}.norm")),
            scale_qk,
        }
    }

    pub fn init<R: Rng>(
        prefix: &str,
        store: &mut ParamStore,
        dim: usize,
        scale_qk: bool,
        rng: &mut R,
    ) -> Self {
        let sa = Self::new(prefix, scale_qk);
        for lin in [&sa.q, &sa.k, &sa.v] {
            Linear::init(lin.prefix(), store, dim, dim, rng);
        }
        LayerNorm::init(format!("{prefix}.norm"), store, dim);
        sa
    }

    pub fn value_proj(&self) -> &Linear {
        &self.v
    }

    pub fn forward<'g>(&self, scope: Scope<'g>, x: &Var<'g>) -> Result<Var<'g>> {
        let q = self.q.forward(scope, x)?;
        let k = self.k.forward(scope, x)?;
        let v = self.v.forward(scope, x)?;
        let att = standard_attention(&q, &k, &v, &Neighborhood::Full, self.scale_qk)?;
        self.norm.forward(scope, &x.add(&att)?)
    }
}

/// Widths and switches of the fusion module.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub point_dim: usize,
    pub vb_dim: usize,
    pub attn_dim: usize,
    pub blocks: usize,
    /// Neighborhood radius for the point-voxel attention; infinite means all keypoints.
    pub radius: f64,
    pub scale_qk: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            point_dim: 32,
            vb_dim: 608,
            attn_dim: 128,
            blocks: 2,
            radius: f64::INFINITY,
            scale_qk: true,
        }
    }
}

/// Fusion output with the intermediates of the last block.
#[derive(Debug, Clone)]
pub struct FusedFeatures<'g> {
    pub f_p_o: Var<'g>,
    pub f_vb_o: Var<'g>,
    pub z_pv1: Var<'g>,
    pub z_pv2: Var<'g>,
    pub z_pv: Var<'g>,
}

#[derive(Debug, Clone)]
struct FusionBlock {
    sa_query: SelfAttention,
    w1: Linear,
    w2: Linear,
    w_mlp: Linear,
    gate_qk: Gate,
    gate_v: Gate,
    norm_pv: LayerNorm,
    proj: Linear,
    sa_out: SelfAttention,
    norm_out: LayerNorm,
}

impl FusionBlock {
    fn init<R: Rng>(
        prefix: &str,
        store: &mut ParamStore,
        query_dim: usize,
        cfg: &FusionConfig,
        rng: &mut R,
    ) -> Self {
        let a = cfg.attn_dim;
        Self {
            sa_query: SelfAttention::init(
                &format!("{prefix}.sa_query"),
                store,
                query_dim,
                cfg.scale_qk,
                rng,
            ),
            w1: Linear::init(format!("{prefix}.w1"), store, query_dim, a, rng),
            w2: Linear::init(format!("{prefix}.w2"), store, cfg.vb_dim, a, rng),
            w_mlp: Linear::init(format!("{prefix}.w_mlp"), store, cfg.vb_dim, a, rng),
            gate_qk: Gate::init(format!("{prefix}.gate_qk"), store, a, rng),
            gate_v: Gate::init(format!("{prefix}.gate_v"), store, a, rng),
            norm_pv: LayerNorm::init(format!("{prefix}.norm_pv"), store, a),
            proj: Linear::init(format!("{prefix}.proj"), store, a, a, rng),
            sa_out: SelfAttention::init(&format!("{prefix}.sa_out"), store, a, cfg.scale_qk, rng),
            norm_out: LayerNorm::init(format!("{prefix}.norm_out"), store, a),
        }
    }
}

/// Self-attention on both token sets, gated point-voxel attention from
/// point queries to voxel-BEV keys, then a second self-attention with a skip
/// connection and normalization. Blocks after the first take the previous
/// block's output as their query tokens.
#[derive(Debug, Clone)]
pub struct FusionModule {
    cfg: FusionConfig,
    sa_vb: SelfAttention,
    blocks: Vec<FusionBlock>,
}

impl FusionModule {
    pub fn init<R: Rng>(cfg: FusionConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let sa_vb = SelfAttention::init("fusion.sa_vb", store, cfg.vb_dim, cfg.scale_qk, rng);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let query_dim = if b == 0 { cfg.point_dim } else { cfg.attn_dim };
            blocks.push(FusionBlock::init(
                &format!("fusion.block{b}"),
                store,
                query_dim,
                &cfg,
                rng,
            ));
        }
        Self { cfg, sa_vb, blocks }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn forward<'g>(
        &self,
        scope: Scope<'g>,
        f_p: &Var<'g>,
        f_vb: &Var<'g>,
        nb: &Neighborhood,
    ) -> Result<FusedFeatures<'g>> {
        if f_p.rows() != f_vb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "fusion_forward",
                lhs: f_p.shape(),
                rhs: f_vb.shape(),
            });
        }
        if self.blocks.is_empty() {
            return Err(TensorError::Invalid {
                op: "fusion_forward",
                msg: "no fusion blocks configured".into(),
            });
        }
        let f_vb_o = self.sa_vb.forward(scope, f_vb)?;
        let mut query = *f_p;
        let mut out = None;
        for blk in &self.blocks {
            let f_p_o = blk.sa_query.forward(scope, &query)?;
            let q = blk.w1.forward(scope, &f_p_o)?;
            let k = blk.w2.forward(scope, &f_vb_o)?;
            let v = blk.w_mlp.forward(scope, &f_vb_o)?;
            let g_qk = blk.gate_qk.forward(scope, &q)?;
            let g_v = blk.gate_v.forward(scope, &v)?;
            let pva = point_voxel_attention(&q, &k, &v, &g_qk, &g_v, nb, self.cfg.scale_qk)?;
            let z_pv1 = blk
                .proj
                .forward(scope, &blk.norm_pv.forward(scope, &pva)?)?;
            let z_pv2 = blk.sa_out.forward(scope, &z_pv1)?;
            let z_pv = blk.norm_out.forward(scope, &z_pv2.add(&z_pv1)?)?;
            query = z_pv;
            out = Some(FusedFeatures {
                f_p_o,
                f_vb_o,
                z_pv1,
                z_pv2,
                z_pv,
            });
        }
        Ok(out.expect("at least one block"))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Graph;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn singleton_key_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 3, 4));
        let k = g.constant(rand_t(&mut rng, 1, 4));
        let v = g.constant(rand_t(&mut rng, 1, 4));
        let z = standard_attention(&q, &k, &v, &Neighborhood::Full, true)
            .unwrap()
            .value();
        for r in 0..3 {
            assert_eq!(z.row_slice(r), v.value().row_slice(0));
        }
        let z = point_attention(&q, &k, &v, &Neighborhood::Full)
            .unwrap()
            .value();
        let (qv, vv) = (q.value(), v.value());
        for r in 0..3 {
            for c in 0..4 {
                assert!((z.at(r, c) - (vv.at(0, c) + qv.at(r, c))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_neighborhood_gives_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 2, 3));
        let k = g.constant(rand_t(&mut rng, 2, 3));
        let v = g.constant(rand_t(&mut rng, 2, 3));
        let nb = Neighborhood::from_lists(&[vec![0, 1], vec![]]);
        let z = standard_attention(&q, &k, &v, &nb, false).unwrap().value();
        assert_eq!(z.row_slice(1), &[0.0; 3]);
        assert!(z.row_slice(0).iter().any(|x| *x != 0.0));
    }

    #[test]
    fn radius_neighborhoods_shrink_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..4.0)))
            .collect();
        assert_eq!(
            Neighborhood::within_radius(&pts, &pts, f64::INFINITY),
            Neighborhood::Full
        );
        let small = Neighborhood::within_radius(&pts, &pts, 0.8);
        let big = Neighborhood::within_radius(&pts, &pts, 1.6);
        for i in 0..pts.len() {
            let s = small.keys_of(i, 30);
            let b = big.keys_of(i, 30);
            assert!(s.iter().all(|k| b.contains(k)));
        }
    }

    #[test]
    fn uniform_weights_when_qk_gate_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 2, 3));
        let k = g.constant(rand_t(&mut rng, 4, 3));
        let v = g.constant(rand_t(&mut rng, 4, 3));
        let gq = g.constant(Tensor::zeros(&[2, 1]));
        let gv = g.constant(Tensor::zeros(&[4, 1]));
        let z = point_voxel_attention(&q, &k, &v, &gq, &gv, &Neighborhood::Full, true)
            .unwrap()
            .value();
        let vv = v.value();
        for c in 0..3 {
            let mean = (0..4).map(|r| vv.at(r, c)).sum::<f64>() / 4.0;
            assert!((z.at(0, c) - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_and_edge_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 4, 3));
        let k = g.constant(rand_t(&mut rng, 6, 3));
        let v = g.constant(rand_t(&mut rng, 6, 3));
        let gq = g.constant(rand_t(&mut rng, 4, 1));
        let gv = g.constant(rand_t(&mut rng, 6, 1));
        let lists: Vec<Vec<usize>> = (0..4).map(|_| (0..6).collect()).collect();
        let edges = Neighborhood::from_lists(&lists);
        let a = point_voxel_attention(&q, &k, &v, &gq, &gv, &Neighborhood::Full, true).unwrap();
        let b = point_voxel_attention(&q, &k, &v, &gq, &gv, &edges, true).unwrap();
        assert!(a.value().max_abs_diff(&b.value()) < 1e-12);
        let a = standard_attention(&q, &k, &v, &Neighborhood::Full, false).unwrap();
        let b = standard_attention(&q, &k, &v, &edges, false).unwrap();
        assert!(a.value().max_abs_diff(&b.value()) < 1e-12);
    }

    #[test]
    fn gate_outputs_stay_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let gate = Gate::init("gate", &mut store, 5, &mut rng);
        let g = Graph::new();
        let x = g.constant(rand_t(&mut rng, 50, 5));
        let s = gate.forward(Scope::new(&g, &store), &x).unwrap().value();
        assert!(s.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn single_token_self_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let sa = SelfAttention::init("sa", &mut store, 4, true, &mut rng);
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let x = g.constant(rand_t(&mut rng, 1, 4));
        let out = sa.forward(s, &x).unwrap();
        let expect = x
            .add(&sa.value_proj().forward(s, &x).unwrap())
            .unwrap()
            .layer_norm_rows(1e-5)
            .unwrap();
        assert!(out.value().max_abs_diff(&expect.value()) < 1e-14);
    }

    #[test]
    fn fusion_shapes_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let cfg = FusionConfig {
            point_dim: 4,
            vb_dim: 6,
            attn_dim: 5,
            blocks: 2,
            radius: f64::INFINITY,
            scale_qk: true,
        };
        let fm = FusionModule::init(cfg, &mut store, &mut rng);
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let fp = g.constant(rand_t(&mut rng, 7, 4));
        let fvb = g.constant(rand_t(&mut rng, 7, 6));
        let out = fm.forward(s, &fp, &fvb, &Neighborhood::Full).unwrap();
        assert_eq!(out.z_pv.shape(), vec![7, 5]);

        for n in store.names().iter().filter(|n| n.ends_with(".b")) {
            store.get_mut(n).unwrap().data_mut().fill(0.0);
        }
        let g = Graph::new();
        let s = Scope::new(&g, &store);
        let fp = g.constant(Tensor::zeros(&[7, 4]));
        let fvb = g.constant(Tensor::zeros(&[7, 6]));
        let z = fm
            .forward(s, &fp, &fvb, &Neighborhood::Full)
            .unwrap()
            .z_pv
            .value();
        assert!(z.is_finite());
        for r in 0..7 {
            assert!(z.row_slice(r).iter().sum::<f64>().abs() < 1e-12);
        }
        let bad = g.constant(Tensor::zeros(&[6, 6]));
        assert!(fm.forward(s, &fp, &bad, &Neighborhood::Full).is_err());
    }
}
