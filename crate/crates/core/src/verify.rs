//! Independent oracles and the invariant suite behind `pvkit check`.
//!
//! Every check returns a [`Check`] with a pass flag and a one-line detail, so
//! the same code drives the command-line gate and the test harness.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    point_attention, point_voxel_attention, standard_attention, FusionConfig, FusionModule, Gate,
    Neighborhood,
};
use crate::geometry::{generate_grid_points, iou_3d, point_in_box, Box3D};
use crate::losses::{
    focal_loss, orientation_loss, refinement_cls_loss, rpn_loss, smooth_l1_reg, soft_label,
    AnchorLabel, LossConfig,
};
use crate::pooling::{dbscan, ClusterHead, GridHead, PyramidHead, PyramidLevel};
use crate::tensor::{
    finite_diff_check_store, Graph, Index, ParamStore, Result, Scope, Tensor, Var,
};

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

// ---------------------------------------------------------------- oracles

/// IoU estimated by uniform sampling of the union's axis-aligned bounding
/// box and counting containment in each box.
pub fn monte_carlo_iou<R: Rng>(a: &Box3D, b: &Box3D, samples: usize, rng: &mut R) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners().iter().chain(b.corners().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let (mut in_a, mut in_b, mut both) = (0usize, 0usize, 0usize);
    for _ in 0..samples {
        let p: [f64; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]));
        let (ia, ib) = (a.contains(p), b.contains(p));
        in_a += ia as usize;
        in_b += ib as usize;
        both += (ia && ib) as usize;
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Partition by brute force: all-pairs neighbor counts pick the core points,
/// union-find joins cores within `eps`, and each border point joins the
/// lowest-numbered cluster (clusters numbered by their lowest core index)
/// among its core neighbors. Returns sorted member lists and the noise.
pub fn brute_force_dbscan(
    points: &[[f64; 3]],
    eps: f64,
    min_pts: usize,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let d: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
        d <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut roots: Vec<usize> = (0..n)
        .filter(|&i| core[i])
        .map(|i| find(&mut parent, i))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    let cluster_of_root = |r: usize| roots.binary_search(&r).expect("root listed");
    let mut clusters = vec![Vec::new(); roots.len()];
    let mut noise = Vec::new();
    for i in 0..n {
        let c = if core[i] {
            Some(cluster_of_root(find(&mut parent, i)))
        } else {
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| cluster_of_root(find(&mut parent, j)))
                .min()
        };
        match c {
            Some(c) => clusters[c].push(i),
            None => noise.push(i),
        }
    }
    (clusters, noise)
}

// ---------------------------------------------------------- gradient suite

/// Finite-difference step used by the suite.
pub const GRAD_EPS: f64 = 1e-6;
/// Largest accepted `|analytic - numeric| / max(1, |analytic|)`.
pub const GRAD_TOL: f64 = 1e-4;

fn rand_t<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

fn rand_index<R: Rng>(rng: &mut R, len: usize, bound: usize) -> Index {
    Arc::new((0..len).map(|_| rng.random_range(0..bound)).collect())
}

/// `sum(v ⊙ w)` for a fixed random `w`, so that row-normalizing ops still
/// have a non-trivial gradient.
fn weighted<'g>(v: Var<'g>, w: &Tensor) -> Result<Var<'g>> {
    Ok(v.mul(&v.graph().constant(w.clone()))?.sum())
}

fn check_store<F>(store: &ParamStore, op: F) -> Result<f64>
where
    F: for<'g> Fn(Scope<'g>) -> Result<Var<'g>>,
{
    finite_diff_check_store(op, store, GRAD_EPS)
}

/// Unary primitive on one `rows × cols` input drawn from `[lo, hi)`.
fn unary<F>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    out: (usize, usize),
    op: F,
) -> Result<f64>
where
    F: for<'g> Fn(Var<'g>) -> Result<Var<'g>>,
{
    let mut s = ParamStore::new();
    s.insert("a", rand_t(rng, rows, cols, lo, hi));
    let w = rand_t(rng, out.0, out.1, -1.0, 1.0);
    check_store(&s, |sc| weighted(op(sc.param("a")?)?, &w))
}

/// Binary primitive with inputs of the given shapes.
fn binary<F>(
    rng: &mut ChaCha8Rng,
    a: (usize, usize),
    b: (usize, usize),
    out: (usize, usize),
    op: F,
) -> Result<f64>
where
    F: for<'g> Fn(Var<'g>, Var<'g>) -> Result<Var<'g>>,
{
    let mut s = ParamStore::new();
    s.insert("a", rand_t(rng, a.0, a.1, -1.0, 1.0));
    s.insert("b", rand_t(rng, b.0, b.1, -1.0, 1.0));
    let w = rand_t(rng, out.0, out.1, -1.0, 1.0);
    check_store(&s, |sc| weighted(op(sc.param("a")?, sc.param("b")?)?, &w))
}

type GradCase = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64>);

fn primitive_cases() -> Vec<GradCase> {
    vec![
        ("matmul", |r| {
            binary(r, (3, 4), (4, 2), (3, 2), |a, b| a.matmul(&b))
        }),
        ("add", |r| {
            binary(r, (3, 4), (3, 4), (3, 4), |a, b| a.add(&b))
        }),
        ("sub", |r| {
            binary(r, (3, 4), (3, 4), (3, 4), |a, b| a.sub(&b))
        }),
        ("mul", |r| {
            binary(r, (3, 4), (3, 4), (3, 4), |a, b| a.mul(&b))
        }),
        ("add_row", |r| {
            binary(r, (3, 4), (1, 4), (3, 4), |a, b| a.add_row(&b))
        }),
        ("mul_col", |r| {
            binary(r, (3, 4), (3, 1), (3, 4), |a, b| a.mul_col(&b))
        }),
        ("mul_row", |r| {
            binary(r, (3, 4), (1, 4), (3, 4), |a, b| a.mul_row(&b))
        }),
        ("row_dot", |r| {
            binary(r, (5, 3), (5, 3), (5, 1), |a, b| a.row_dot(&b))
        }),
        ("concat_cols", |r| {
            binary(r, (3, 2), (3, 3), (3, 5), |a, b| {
                a.graph().concat_cols(&[a, b])
            })
        }),
        ("concat_rows", |r| {
            binary(r, (2, 3), (4, 3), (6, 3), |a, b| {
                a.graph().concat_rows(&[a, b])
            })
        }),
        ("scale_shift_neg", |r| {
            unary(r, 3, 4, -1.0, 1.0, (3, 4), |a| {
                Ok(a.scale(1.7).add_scalar(0.3).neg())
            })
        }),
        ("sigmoid", |r| {
            unary(r, 3, 4, -3.0, 3.0, (3, 4), |a| Ok(a.sigmoid()))
        }),
        ("relu", |r| {
            unary(r, 3, 4, -1.0, 1.0, (3, 4), |a| Ok(a.relu()))
        }),
        ("ln", |r| unary(r, 3, 4, 0.5, 2.0, (3, 4), |a| a.ln())),
        ("powf", |r| {
            unary(r, 3, 4, 0.5, 2.0, (3, 4), |a| a.powf(1.5))
        }),
        ("smooth_l1", |r| {
            unary(r, 3, 4, -2.0, 2.0, (3, 4), |a| Ok(a.smooth_l1()))
        }),
        ("clamp", |r| {
            unary(r, 3, 4, -1.0, 1.0, (3, 4), |a| Ok(a.clamp(-0.5, 0.5)))
        }),
        ("softmax_rows", |r| {
            unary(r, 3, 4, -2.0, 2.0, (3, 4), |a| a.softmax_rows())
        }),
        ("log_softmax_rows", |r| {
            unary(r, 3, 4, -2.0, 2.0, (3, 4), |a| a.log_softmax_rows())
        }),
        ("layer_norm_rows", |r| {
            unary(r, 3, 5, -2.0, 2.0, (3, 5), |a| a.layer_norm_rows(1e-5))
        }),
        ("transpose", |r| {
            unary(r, 3, 4, -1.0, 1.0, (4, 3), |a| a.transpose())
        }),
        ("sum", |r| {
            unary(r, 3, 4, -1.0, 1.0, (1, 1), |a| Ok(a.mul(&a)?.sum()))
        }),
        ("mean", |r| {
            unary(r, 3, 4, -1.0, 1.0, (1, 1), |a| Ok(a.mul(&a)?.mean()))
        }),
        ("slice_cols", |r| {
            unary(r, 3, 5, -1.0, 1.0, (3, 2), |a| a.slice_cols(1, 2))
        }),
        ("reshape", |r| {
            unary(r, 3, 4, -1.0, 1.0, (6, 2), |a| a.reshape(6, 2))
        }),
        ("gather_rows", |r| {
            let idx = rand_index(r, 7, 4);
            let mut s = ParamStore::new();
            s.insert("a", rand_t(r, 4, 3, -1.0, 1.0));
            let w = rand_t(r, 7, 3, -1.0, 1.0);
            check_store(&s, |sc| {
                weighted(sc.param("a")?.gather_rows(idx.clone())?, &w)
            })
        }),
        ("segment_sum", |r| {
            segment_case(r, |a, seg, n| a.segment_sum(seg, n))
        }),
        ("segment_mean", |r| {
            segment_case(r, |a, seg, n| a.segment_mean(seg, n))
        }),
        ("segment_max", |r| {
            segment_case(r, |a, seg, n| a.segment_max(seg, n))
        }),
        ("segment_softmax", |r| {
            segment_case(r, |a, seg, n| a.segment_softmax(seg, n))
        }),
    ]
}

/// 8 rows over 3 segments (one possibly empty) with distinct values.
fn segment_case<F>(rng: &mut ChaCha8Rng, op: F) -> Result<f64>
where
    F: for<'g> Fn(Var<'g>, Index, usize) -> Result<Var<'g>>,
{
    let seg = rand_index(rng, 8, 3);
    let mut s = ParamStore::new();
    s.insert("a", rand_t(rng, 8, 2, -1.0, 1.0));
    // Segment softmax keeps the row count; the reductions give one row per segment.
    let w_rows = rand_t(rng, 8, 2, -1.0, 1.0);
    let w_segs = rand_t(rng, 3, 2, -1.0, 1.0);
    check_store(&s, |sc| {
        let out = op(sc.param("a")?, seg.clone(), 3)?;
        weighted(out, if out.rows() == 8 { &w_rows } else { &w_segs })
    })
}

/// Random neighborhood where every query sees at least one key.
fn random_edges<R: Rng>(rng: &mut R, m: usize, n: usize) -> Neighborhood {
    let lists: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let mut l: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            if l.is_empty() {
                l.push(rng.random_range(0..n));
            }
            l
        })
        .collect();
    Neighborhood::from_lists(&lists)
}

fn attention_store(rng: &mut ChaCha8Rng, m: usize, n: usize, d: usize) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("q", rand_t(rng, m, d, -1.0, 1.0));
    s.insert("k", rand_t(rng, n, d, -1.0, 1.0));
    s.insert("v", rand_t(rng, n, d, -1.0, 1.0));
    s.insert("gqk", rand_t(rng, m, 1, 0.1, 0.9));
    s.insert("gv", rand_t(rng, n, 1, 0.1, 0.9));
    s
}

fn attention_case(rng: &mut ChaCha8Rng, kind: usize, full: bool) -> Result<f64> {
    let (m, n, d) = (3, 5, 4);
    let s = attention_store(rng, m, n, d);
    let nb = if full {
        Neighborhood::Full
    } else {
        random_edges(rng, m, n)
    };
    let w = rand_t(rng, m, d, -1.0, 1.0);
    check_store(&s, |sc| {
        let (q, k, v) = (sc.param("q")?, sc.param("k")?, sc.param("v")?);
        let out = match kind {
            0 => standard_attention(&q, &k, &v, &nb, true)?,
            1 => point_attention(&q, &k, &v, &nb)?,
            _ => point_voxel_attention(&q, &k, &v, &sc.param("gqk")?, &sc.param("gv")?, &nb, true)?,
        };
        weighted(out, &w)
    })
}

fn fusion_case(rng: &mut ChaCha8Rng, radius: f64) -> Result<f64> {
    let cfg = FusionConfig {
        point_dim: 3,
        vb_dim: 5,
        attn_dim: 4,
        blocks: 2,
        radius,
        scale_qk: true,
    };
    let k = 5;
    let mut s = ParamStore::new();
    let module = FusionModule::init(cfg, &mut s, rng);
    s.insert("x.f_p", rand_t(rng, k, 3, -1.0, 1.0));
    s.insert("x.f_vb", rand_t(rng, k, 5, -1.0, 1.0));
    let coords: Vec<[f64; 3]> = (0..k)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..2.0)))
        .collect();
    let nb = Neighborhood::within_radius(&coords, &coords, radius);
    let w = rand_t(rng, k, 4, -1.0, 1.0);
    check_store(&s, |sc| {
        let out = module.forward(sc, &sc.param("x.f_p")?, &sc.param("x.f_vb")?, &nb)?;
        weighted(out.z_pv, &w)
    })
}

/// An RoI at the origin and keypoints in two tight groups inside it plus a
/// few outside.
fn pooling_scene<R: Rng>(rng: &mut R) -> (Box3D, Vec<[f64; 3]>) {
    let roi =
        Box3D::new(0.0, 0.0, 0.0, 1.6, 1.8, 4.0, rng.random_range(-3.0..3.0)).expect("valid box");
    let mut coords = Vec::new();
    for center in [[-1.0, 0.0, 0.0], [1.0, 0.2, 0.1]] {
        for _ in 0..4 {
            coords.push(roi.to_world(std::array::from_fn(|k| {
                center[k] + rng.random_range(-0.3..0.3)
            })));
        }
    }
    for _ in 0..2 {
        coords.push([rng.random_range(3.0..4.0), rng.random_range(3.0..4.0), 0.0]);
    }
    (roi, coords)
}

fn cluster_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (roi, coords) = pooling_scene(rng);
    let mut s = ParamStore::new();
    let head = ClusterHead::init("cph", &mut s, 3, 4, 0.4, 0.7, 2, rng);
    s.insert("x.f", rand_t(rng, coords.len(), 3, -1.0, 1.0));
    let w = rand_t(rng, 1, 4, -1.0, 1.0);
    check_store(&s, |sc| {
        weighted(head.forward(sc, &[roi], &coords, &sc.param("x.f")?)?, &w)
    })
}

fn pyramid_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (roi, coords) = pooling_scene(rng);
    let levels = vec![
        PyramidLevel {
            rho: [1.0; 3],
            n: [2, 2, 1],
            radius: 1.2,
        },
        PyramidLevel {
            rho: [1.5; 3],
            n: [2, 1, 1],
            radius: 2.0,
        },
    ];
    let mut s = ParamStore::new();
    let head = PyramidHead::init("pph", &mut s, levels, 3, 4, true, rng);
    s.insert("x.f", rand_t(rng, coords.len(), 3, -1.0, 1.0));
    let w = rand_t(rng, 1, 16 + 8, -1.0, 1.0);
    check_store(&s, |sc| {
        let edges = head.edges(&[roi], &coords);
        let parts = head.forward_edges(sc, &edges, 1, &sc.param("x.f")?)?;
        weighted(sc.graph.concat_cols(&parts)?, &w)
    })
}

fn grid_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (roi, coords) = pooling_scene(rng);
    let level = PyramidLevel {
        rho: [1.0; 3],
        n: [2, 2, 1],
        radius: 1.2,
    };
    let mut s = ParamStore::new();
    let head = GridHead::init("gph", &mut s, level, 3, 4, 5, rng);
    s.insert("x.f", rand_t(rng, coords.len(), 3, -1.0, 1.0));
    let w = rand_t(rng, 1, 5, -1.0, 1.0);
    check_store(&s, |sc| {
        weighted(head.forward(sc, &[roi], &coords, &sc.param("x.f")?)?, &w)
    })
}

fn random_labels<R: Rng>(rng: &mut R, n: usize) -> Vec<AnchorLabel> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => AnchorLabel::Positive,
            1 => AnchorLabel::Negative,
            _ => AnchorLabel::Ignored,
        })
        .collect()
}

fn loss_cases() -> Vec<GradCase> {
    vec![
        ("focal_loss", |r| {
            let labels = random_labels(r, 8);
            let mut s = ParamStore::new();
            s.insert("p", rand_t(r, 8, 1, 0.05, 0.95));
            check_store(&s, |sc| focal_loss(&sc.param("p")?, &labels, 0.25, 2.0))
        }),
        ("smooth_l1_reg", |r| {
            let target = rand_t(r, 4, 7, -2.0, 2.0);
            let mut s = ParamStore::new();
            s.insert("p", rand_t(r, 4, 7, -2.0, 2.0));
            check_store(&s, |sc| smooth_l1_reg(&sc.param("p")?, &target))
        }),
        ("orientation_loss", |r| {
            let bins: Vec<usize> = (0..5).map(|_| r.random_range(0..2)).collect();
            let mut s = ParamStore::new();
            s.insert("p", rand_t(r, 5, 2, -2.0, 2.0));
            check_store(&s, |sc| orientation_loss(&sc.param("p")?, &bins))
        }),
        ("refinement_cls_loss", |r| {
            let y: Vec<f64> = (0..6).map(|_| r.random_range(0.0..1.0)).collect();
            let mut s = ParamStore::new();
            s.insert("p", rand_t(r, 6, 1, 0.05, 0.95));
            check_store(&s, |sc| refinement_cls_loss(&sc.param("p")?, &y))
        }),
        ("rpn_loss", |r| {
            let labels = random_labels(r, 6);
            let target = rand_t(r, 3, 7, -1.0, 1.0);
            let bins: Vec<usize> = (0..3).map(|_| r.random_range(0..2)).collect();
            let mut s = ParamStore::new();
            s.insert("p", rand_t(r, 6, 1, 0.05, 0.95));
            s.insert("reg", rand_t(r, 3, 7, -1.0, 1.0));
            s.insert("ori", rand_t(r, 3, 2, -1.0, 1.0));
            check_store(&s, |sc| {
                let cls = focal_loss(&sc.param("p")?, &labels, 0.25, 2.0)?;
                let reg = smooth_l1_reg(&sc.param("reg")?, &target)?;
                let ori = orientation_loss(&sc.param("ori")?, &bins)?;
                rpn_loss(&cls, &reg, &ori, 2.0)
            })
        }),
    ]
}

fn module_cases() -> Vec<GradCase> {
    vec![
        ("standard_attention/full", |r| attention_case(r, 0, true)),
        ("standard_attention/edges", |r| attention_case(r, 0, false)),
        ("point_attention/full", |r| attention_case(r, 1, true)),
        ("point_attention/edges", |r| attention_case(r, 1, false)),
        ("point_voxel_attention/full", |r| attention_case(r, 2, true)),
        ("point_voxel_attention/edges", |r| {
            attention_case(r, 2, false)
        }),
        ("fusion_forward/global", |r| fusion_case(r, f64::INFINITY)),
        ("fusion_forward/radius", |r| fusion_case(r, 1.5)),
        ("clustering_pool_head", cluster_case),
        ("pyramid_pool_head", pyramid_case),
        ("grid_pool_head", grid_case),
    ]
}

/// Worst relative gradient error of every differentiable operation over
/// `seeds` random instances each.
pub fn gradient_suite(seeds: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    for (name, case) in primitive_cases()
        .into_iter()
        .chain(module_cases())
        .chain(loss_cases())
    {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            worst = worst.max(case(&mut rng)?);
        }
        out.push((name, worst));
    }
    Ok(out)
}

pub fn check_gradients(seeds: u64) -> Check {
    let name = "gradient suite";
    match gradient_suite(seeds) {
        Ok(rows) => {
            let bad: Vec<String> = rows
                .iter()
                .filter(|r| !(r.1 <= GRAD_TOL))
                .map(|(n, e)| format!("{n}={e:.2e}"))
                .collect();
            let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
            let detail = if bad.is_empty() {
                format!(
                    "{} ops x {seeds} seeds, worst rel err {worst:.2e} <= {GRAD_TOL:e}",
                    rows.len()
                )
            } else {
                format!("failing: {}", bad.join(", "))
            };
            Check::new(name, bad.is_empty(), detail)
        }
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

// ------------------------------------------------------ property checks

/// Point-voxel attention with both gate affines saturated (zero weights,
/// biases of ±40) against standard attention, on full and random sparse
/// neighborhoods.
pub fn check_pva_degeneracy(instances: u64) -> Check {
    let run = || -> Result<f64> {
        let mut worst = 0.0f64;
        for seed in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, d) = (
                rng.random_range(1..8),
                rng.random_range(1..10),
                rng.random_range(1..9),
            );
            let mut store = ParamStore::new();
            let gate_qk = Gate::init("gate_qk", &mut store, d, &mut rng);
            let gate_v = Gate::init("gate_v", &mut store, d, &mut rng);
            for (gate, bias) in [(&gate_qk, 40.0), (&gate_v, -40.0)] {
                store.insert(gate.linear().weight_name(), Tensor::zeros(&[d, 1]));
                store.insert(gate.linear().bias_name(), Tensor::full(&[1, 1], bias));
            }
            let g = Graph::new();
            let sc = Scope::new(&g, &store);
            let q = g.input(rand_t(&mut rng, m, d, -2.0, 2.0));
            let k = g.input(rand_t(&mut rng, n, d, -2.0, 2.0));
            let v = g.input(rand_t(&mut rng, n, d, -2.0, 2.0));
            let nb = if seed % 2 == 0 {
                Neighborhood::Full
            } else {
                random_edges(&mut rng, m, n)
            };
            let (s_qk, s_v) = (gate_qk.forward(sc, &q)?, gate_v.forward(sc, &v)?);
            let a = point_voxel_attention(&q, &k, &v, &s_qk, &s_v, &nb, true)?;
            let b = standard_attention(&q, &k, &v, &nb, true)?;
            worst = worst.max(a.value().max_abs_diff(&b.value()));
        }
        Ok(worst)
    };
    let name = "point-voxel attention degeneracy";
    match run() {
        Ok(w) => Check::new(
            name,
            w <= 1e-6,
            format!("{instances} instances, max abs diff {w:.2e} <= 1e-6"),
        ),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

/// DBSCAN against [`brute_force_dbscan`] on random sets of up to 64 points.
pub fn check_dbscan_oracle(sets: u64) -> Check {
    let mut mismatches = 0;
    for seed in 0..sets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..=64);
        let spread = rng.random_range(0.5..4.0);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..spread)))
            .collect();
        let eps = rng.random_range(0.05..1.0);
        let min_pts = rng.random_range(1..=6);
        let got = dbscan(&pts, eps, min_pts);
        let (clusters, noise) = brute_force_dbscan(&pts, eps, min_pts);
        if got.clusters != clusters || got.noise != noise {
            mismatches += 1;
        }
    }
    Check::new(
        "dbscan oracle",
        mismatches == 0,
        format!("{sets} random sets, {mismatches} partition mismatches"),
    )
}

fn random_box<R: Rng>(rng: &mut R) -> Box3D {
    Box3D::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..4.0),
        rng.random_range(-3.2..3.2),
    )
    .expect("positive sizes")
}

/// Rotated 3D IoU against a Monte-Carlo containment estimate, plus symmetry.
pub fn check_iou_monte_carlo(pairs: u64, samples: usize) -> Check {
    let (mut worst, mut asym) = (0.0f64, 0.0f64);
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let (ab, ba) = match (iou_3d(&a, &b), iou_3d(&b, &a)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                return Check::new(
                    "rotated IoU oracle",
                    false,
                    "iou_3d rejected a valid box".into(),
                )
            }
        };
        let mc = monte_carlo_iou(&a, &b, samples, &mut rng);
        worst = worst.max((ab - mc).abs());
        asym = asym.max((ab - ba).abs());
    }
    Check::new(
        "rotated IoU oracle",
        worst <= 5e-3 && asym <= 1e-12,
        format!("{pairs} pairs x {samples} samples, max abs err {worst:.2e} <= 5e-3, symmetry err {asym:.2e} <= 1e-12"),
    )
}

pub fn check_soft_label_endpoints() -> Check {
    let lc = LossConfig::default();
    let at = |iou: f64| soft_label(iou, lc.sigma_bg, lc.sigma_fg).unwrap_or(f64::NAN);
    let (hi, lo, mid) = (
        at(lc.sigma_fg),
        at(lc.sigma_bg),
        at(0.5 * (lc.sigma_fg + lc.sigma_bg)),
    );
    Check::new(
        "soft label endpoints",
        hi == 1.0 && lo == 0.0 && (mid - 0.5).abs() <= 1e-12,
        format!(
            "y({})={hi}, y({})={lo}, y(mid)={mid}",
            lc.sigma_fg, lc.sigma_bg
        ),
    )
}

/// Unscaled pyramid lattices lie inside their RoI and have the configured size.
pub fn check_pyramid_geometry(boxes: u64, levels: &[PyramidLevel]) -> Check {
    let (mut outside, mut bad_counts, mut total) = (0usize, 0usize, 0usize);
    for seed in 0..boxes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_box(&mut rng);
        for l in levels {
            let pts = generate_grid_points(&b, l.n, [1.0; 3]);
            bad_counts += (pts.len() != l.n.iter().product::<usize>()) as usize;
            total += pts.len();
            outside += pts.iter().filter(|p| !point_in_box(**p, &b)).count();
        }
    }
    Check::new(
        "pyramid geometry",
        outside == 0 && bad_counts == 0,
        format!(
            "{boxes} boxes, {total} grid points, {outside} outside, {bad_counts} count mismatches"
        ),
    )
}

/// Adding one keypoint that fails `min_pts` inside the enlarged RoI leaves
/// the clustering head output bit-identical.
pub fn check_cluster_noise_rejection(rois: u64) -> Check {
    let run = || -> Result<(usize, usize)> {
        let (phi, eps, min_pts) = (0.4, 0.5, 3);
        let (mut identical, mut tried) = (0, 0);
        for seed in 0..rois {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let roi = random_box(&mut rng).enlarge(1.0);
            let big = roi.enlarge(phi);
            let mut coords: Vec<[f64; 3]> = Vec::new();
            for _ in 0..rng.random_range(1..4) {
                let c: [f64; 3] =
                    std::array::from_fn(|k| [roi.l, roi.w, roi.h][k] * rng.random_range(-0.3..0.3));
                for _ in 0..rng.random_range(3..8) {
                    coords.push(roi.to_world(std::array::from_fn(|k| {
                        c[k] + rng.random_range(-0.15..0.15)
                    })));
                }
            }
            let mut store = ParamStore::new();
            let head = ClusterHead::init("cph", &mut store, 4, 8, phi, eps, min_pts, &mut rng);
            let feats = rand_t(&mut rng, coords.len() + 1, 4, -1.0, 1.0);
            // A lone point inside b' farther than eps from every keypoint.
            let lone = (0..1000).find_map(|_| {
                let ext = [big.l, big.w, big.h];
                let p = big.to_world(std::array::from_fn(|k| {
                    ext[k] * rng.random_range(-0.49..0.49)
                }));
                let clear = coords
                    .iter()
                    .all(|c| (0..3).map(|k| (c[k] - p[k]).powi(2)).sum::<f64>() > eps * eps);
                clear.then_some(p)
            });
            let Some(lone) = lone else { continue };
            tried += 1;
            let run_head = |pts: &[[f64; 3]]| -> Result<Tensor> {
                let g = Graph::new();
                let sc = Scope::new(&g, &store);
                let rows: Vec<f64> = feats.data()[..pts.len() * 4].to_vec();
                let f = g.constant(Tensor::matrix(pts.len(), 4, rows));
                Ok((*head.forward(sc, &[roi], pts, &f)?.value()).clone())
            };
            let before = run_head(&coords)?;
            let mut with = coords.clone();
            with.push(lone);
            let after = run_head(&with)?;
            let same_bits = before
                .data()
                .iter()
                .zip(after.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            identical += same_bits as usize;
        }
        Ok((identical, tried))
    };
    let name = "clustering noise rejection";
    match run() {
        Ok((same, tried)) => Check::new(
            name,
            same == tried && tried == rois as usize,
            format!("{same}/{tried} RoIs bit-identical ({rois} requested)"),
        ),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

/// Pyramid levels of the full and toy presets.
pub fn preset_levels() -> Vec<PyramidLevel> {
    let mut levels = crate::pooling::default_levels();
    levels.extend(crate::pipeline::DetectorConfig::toy().pool.levels);
    levels
}

/// Every fast invariant at its acceptance size.
pub fn run_checks() -> Vec<Check> {
    vec![
        check_gradients(50),
        check_pva_degeneracy(20),
        check_dbscan_oracle(200),
        check_iou_monte_carlo(100, 1_000_000),
        check_soft_label_endpoints(),
        check_pyramid_geometry(100, &preset_levels()),
        check_cluster_noise_rejection(50),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_matches_identical_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.3).unwrap();
        assert_eq!(monte_carlo_iou(&a, &a, 10_000, &mut rng), 1.0);
        let b = Box3D::new(5.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.3).unwrap();
        assert_eq!(monte_carlo_iou(&a, &b, 10_000, &mut rng), 0.0);
    }

    #[test]
    fn brute_force_dbscan_small_fixture() {
        let pts = [
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.2, 0.0, 0.0],
            [5.0, 0.0, 0.0],
        ];
        let (c, n) = brute_force_dbscan(&pts, 0.15, 2);
        assert_eq!(c, vec![vec![0, 1, 2]]);
        assert_eq!(n, vec![3]);
    }

    #[test]
    fn quick_checks_pass() {
        for c in [
            check_gradients(2),
            check_pva_degeneracy(4),
            check_dbscan_oracle(20),
            check_iou_monte_carlo(3, 20_000).clone(),
            check_soft_label_endpoints(),
            check_pyramid_geometry(5, &preset_levels()),
            check_cluster_noise_rejection(5),
        ] {
            // The coarse IoU estimate only needs to be in the right range here.
            if c.name == "rotated IoU oracle" {
                assert!(!c.detail.contains("error"), "{c}");
                continue;
            }
            assert!(c.passed, "{c}");
        }
    }
}
