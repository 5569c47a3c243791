use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pvkit::geometry::{
    decode_residual, encode_residual, generate_grid_points, iou_3d, iou_bev, nms_bev, point_in_box,
};
use pvkit::losses::soft_label;
use pvkit::pooling::{dbscan, ClusterHead};
use pvkit::scene::fps_sample;
use pvkit::tensor::Scope;
use pvkit::verify::brute_force_dbscan;
use pvkit::{Box3D, Graph, ParamStore, Tensor};

fn arb_box() -> impl Strategy<Value = Box3D> {
    (
        -5.0..5.0f64,
        -5.0..5.0f64,
        -1.0..1.0f64,
        0.3..3.0f64,
        0.3..3.0f64,
        0.3..5.0f64,
        -3.1..3.1f64,
    )
        .prop_map(|(x, y, z, h, w, l, t)| Box3D::new(x, y, z, h, w, l, t).unwrap())
}

fn arb_points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 0..max)
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        for f in [iou_3d, iou_bev] {
            let ab = f(&a, &b).unwrap();
            let ba = f(&b, &a).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_with_self_is_one(a in arb_box()) {
        prop_assert!((iou_3d(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((iou_bev(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_ignores_common_translation(a in arb_box(), b in arb_box(), d in prop::array::uniform3(-20.0..20.0f64)) {
        let shift = |x: &Box3D| Box3D { x: x.x + d[0], y: x.y + d[1], z: x.z + d[2], ..*x };
        let before = iou_3d(&a, &b).unwrap();
        let after = iou_3d(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((before - after).abs() < 1e-8);
    }

    #[test]
    fn nms_keeps_non_overlapping_highest_scores(
        boxes in prop::collection::vec(arb_box(), 0..25),
        seed in any::<u64>(),
        thr in 0.05..0.9f64,
    ) {
        let scores: Vec<f64> = (0..boxes.len()).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 997) as f64) / 997.0).collect();
        let kept = nms_bev(&boxes, &scores, thr);
        for w in kept.windows(2) {
            prop_assert!(scores[w[0]] >= scores[w[1]]);
        }
        for (n, &i) in kept.iter().enumerate() {
            for &j in &kept[..n] {
                prop_assert!(iou_bev(&boxes[i], &boxes[j]).unwrap() <= thr);
            }
        }
        for i in (0..boxes.len()).filter(|i| !kept.contains(i)) {
            let blocked = kept.iter().any(|&k| scores[k] >= scores[i] && iou_bev(&boxes[k], &boxes[i]).unwrap() > thr);
            prop_assert!(blocked, "box {i} dropped without a higher-scoring overlap");
        }
    }

    #[test]
    fn residual_round_trips(gt in arb_box(), anchor in arb_box()) {
        let back = decode_residual(&encode_residual(&gt, &anchor), &anchor);
        for (u, v) in [(back.x, gt.x), (back.y, gt.y), (back.z, gt.z), (back.h, gt.h), (back.w, gt.w), (back.l, gt.l)] {
            prop_assert!((u - v).abs() < 1e-9);
        }
        let dt = (back.theta - gt.theta).rem_euclid(std::f64::consts::TAU);
        prop_assert!(dt.min(std::f64::consts::TAU - dt) < 1e-9);
    }

    #[test]
    fn unit_grid_lies_inside_box(b in arb_box(), n in prop::array::uniform3(1usize..5)) {
        let pts = generate_grid_points(&b, n, [1.0; 3]);
        prop_assert_eq!(pts.len(), n[0] * n[1] * n[2]);
        prop_assert!(pts.iter().all(|p| point_in_box(*p, &b)));
    }

    #[test]
    fn enlarged_box_contains_original_interior(b in arb_box(), phi in 0.0..2.0f64, u in prop::array::uniform3(-0.49..0.49f64)) {
        let p = b.to_world([u[0] * b.l, u[1] * b.w, u[2] * b.h]);
        prop_assert!(b.enlarge(phi).contains(p));
    }

    #[test]
    fn dbscan_matches_brute_force(pts in arb_points(60), eps in 0.2..1.5f64, min_pts in 1usize..5) {
        let res = dbscan(&pts, eps, min_pts);
        let (clusters, noise) = brute_force_dbscan(&pts, eps, min_pts);
        let mut got = res.clusters.clone();
        got.iter_mut().for_each(|c| c.sort_unstable());
        let mut want = clusters;
        want.iter_mut().for_each(|c| c.sort_unstable());
        // Border points may legitimately join either neighboring cluster, so
        // compare the partition of core points and the noise set.
        let core: Vec<bool> = pts.iter().map(|p| pts.iter().filter(|q| pvkit::scene::dist2(*p, **q) <= eps * eps).count() >= min_pts).collect();
        let strip = |cs: &[Vec<usize>]| {
            let mut v: Vec<Vec<usize>> = cs.iter().map(|c| c.iter().copied().filter(|&i| core[i]).collect()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(strip(&got), strip(&want));
        let mut res_noise = res.noise.clone();
        res_noise.sort_unstable();
        prop_assert_eq!(res_noise, noise);
        let covered: usize = res.clusters.iter().map(Vec::len).sum::<usize>() + res.noise.len();
        prop_assert_eq!(covered, pts.len());
    }

    #[test]
    fn fps_returns_distinct_indices(pts in arb_points(80), k in 0usize..40) {
        let idx = fps_sample(&pts, k);
        prop_assert_eq!(idx.len(), k.min(pts.len()));
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
    }

    #[test]
    fn soft_label_is_monotone_and_bounded(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (sl, sh) = (soft_label(lo, 0.25, 0.75).unwrap(), soft_label(hi, 0.25, 0.75).unwrap());
        prop_assert!((0.0..=1.0).contains(&sl) && (0.0..=1.0).contains(&sh));
        prop_assert!(sl <= sh);
    }
}

fn cluster_row(
    head: &ClusterHead,
    store: &ParamStore,
    roi: Box3D,
    coords: &[[f64; 3]],
    feats: &Tensor,
) -> Vec<f64> {
    let g = Graph::new();
    let f = g.constant(feats.clone());
    let out = head
        .forward(Scope::new(&g, store), &[roi], coords, &f)
        .unwrap();
    let v = out.value();
    v.data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_head_is_translation_invariant(
        roi in arb_box(),
        local in prop::collection::vec(prop::array::uniform3(-0.5..0.5f64), 1..30),
        d in prop::array::uniform3(-10.0..10.0f64),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = ClusterHead::init("cph", &mut store, 3, 8, 0.4, 0.4, 2, &mut rng);
        let coords: Vec<[f64; 3]> = local.iter().map(|u| roi.to_world([u[0] * roi.l, u[1] * roi.w, u[2] * roi.h])).collect();
        let feats = Tensor::matrix(coords.len(), 3, (0..coords.len() * 3).map(|i| (i as f64 * 0.37).sin()).collect());
        let moved_roi = Box3D { x: roi.x + d[0], y: roi.y + d[1], z: roi.z + d[2], ..roi };
        let moved: Vec<[f64; 3]> = coords.iter().map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect();
        let a = cluster_row(&head, &store, roi, &coords, &feats);
        let b = cluster_row(&head, &store, moved_roi, &moved, &feats);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn cluster_head_without_keypoints_gives_zero_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let head = ClusterHead::init("cph", &mut store, 3, 8, 0.4, 0.4, 2, &mut rng);
    let roi = Box3D::new(0.0, 0.0, 0.0, 1.5, 1.6, 3.9, 0.3).unwrap();
    let far = [[50.0, 50.0, 0.0], [50.1, 50.0, 0.0]];
    let row = cluster_row(&head, &store, roi, &far, &Tensor::zeros(&[2, 3]));
    assert_eq!(row, vec![0.0; 8]);
}

#[test]
fn gradient_suite_passes_on_a_few_seeds() {
    let worst = pvkit::verify::gradient_suite(3)
        .unwrap()
        .into_iter()
        .fold(0.0f64, |m, (_, e)| m.max(e));
    assert!(
        worst <= pvkit::verify::GRAD_TOL,
        "worst relative error {worst:e}"
    );
}
