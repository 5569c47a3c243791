//! Oriented 3D boxes: corners, containment, rotated IoU, NMS, RoI grid
//! points and residual encoding.
//!
//! Boxes are yaw-rotated about the vertical axis. `l` runs along the heading
//! (local x), `w` across it (local y) and `h` vertically; `(x, y, z)` is the
//! geometric center.

use std::f64::consts::PI;

use thiserror::Error;

/// Absolute tolerance for degenerate polygon intersections, in meters.
pub const POLY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box: dimensions (h={h}, w={w}, l={l}) must be positive and finite")]
    Degenerate { h: f64, w: f64, l: f64 },
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
}

impl Box3D {
    /// Validated constructor; yaw is wrapped into `[-π, π)`.
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        h: f64,
        w: f64,
        l: f64,
        theta: f64,
    ) -> Result<Self, GeometryError> {
        let b = Self {
            x,
            y,
            z,
            h,
            w,
            l,
            theta: normalize_angle(theta),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.h) && ok(self.w) && ok(self.l) {
            Ok(())
        } else {
            Err(GeometryError::Degenerate {
                h: self.h,
                w: self.w,
                l: self.l,
            })
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    /// Radius of the circle circumscribing the BEV footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * (self.l * self.l + self.w * self.w).sqrt()
    }

    /// World-frame offset of a local-frame vector.
    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * local[0] - s * local[1],
            self.y + s * local[0] + c * local[1],
            self.z + local[2],
        ]
    }

    /// Expresses a world point in the box frame (origin at the center).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        rotate_to_local(self.theta, [p[0] - self.x, p[1] - self.y, p[2] - self.z])
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            let p = self.to_world([lx, ly, 0.0]);
            [p[0], p[1]]
        })
    }

    /// The eight corners: bottom face first, then top face, each in the
    /// footprint's counter-clockwise order.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = self.bev_corners();
        let (zb, zt) = (self.z - 0.5 * self.h, self.z + 0.5 * self.h);
        let mut out = [[0.0; 3]; 8];
        for i in 0..4 {
            out[i] = [bev[i][0], bev[i][1], zb];
            out[i + 4] = [bev[i][0], bev[i][1], zt];
        }
        out
    }

    /// Strict containment: points on a face are outside.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let q = self.to_local(p);
        q[0].abs() < 0.5 * self.l && q[1].abs() < 0.5 * self.w && q[2].abs() < 0.5 * self.h
    }

    /// Grows each of `h`, `w`, `l` by `phi`, keeping center and yaw.
    pub fn enlarge(&self, phi: f64) -> Self {
        Self {
            h: self.h + phi,
            w: self.w + phi,
            l: self.l + phi,
            ..*self
        }
    }
}

/// Rotates a world-aligned offset by `-theta`.
pub fn rotate_to_local(theta: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
}

pub fn box_corners(b: &Box3D) -> [[f64; 3]; 8] {
    b.corners()
}

pub fn point_in_box(p: [f64; 3], b: &Box3D) -> bool {
    b.contains(p)
}

pub fn enlarge_box(b: &Box3D, phi: f64) -> Box3D {
    b.enlarge(phi)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive for counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Sutherland–Hodgman clipping of `subject` by the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= -POLY_EPS;
            let prev_in = cross(a, b, prev) >= -POLY_EPS;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = [q[0] - p[0], q[1] - p[1]];
    let de = [b[0] - a[0], b[1] - a[1]];
    let denom = dp[0] * de[1] - dp[1] * de[0];
    if denom.abs() < POLY_EPS * POLY_EPS {
        return q;
    }
    let t = ((a[0] - p[0]) * de[1] - (a[1] - p[1]) * de[0]) / denom;
    [p[0] + t * dp[0], p[1] + t * dp[1]]
}

/// Area of the intersection of two BEV footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy >= reach * reach {
        return 0.0;
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    let area = polygon_area(&poly);
    if area < POLY_EPS {
        0.0
    } else {
        area
    }
}

/// Rotated IoU of the BEV footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    let inter = bev_intersection_area(a, b);
    let union = a.l * a.w + b.l * b.w - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Rotated 3D IoU: BEV polygon overlap times vertical overlap, over the
/// union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    let z_lo = (a.z - 0.5 * a.h).max(b.z - 0.5 * b.h);
    let z_hi = (a.z + 0.5 * a.h).min(b.z + 0.5 * b.h);
    let dz = z_hi - z_lo;
    if dz <= 0.0 {
        return Ok(0.0);
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Greedy BEV non-maximum suppression. Candidates are visited by descending
/// score (lower index first on ties); a candidate is dropped when its BEV IoU
/// with any kept box exceeds `iou_threshold`. Returns kept indices in visit
/// order.
pub fn nms_bev(boxes: &[Box3D], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(
        boxes.len(),
        scores.len(),
        "nms_bev: boxes and scores differ in length"
    );
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| iou_bev(&boxes[k], &boxes[i]).unwrap_or(0.0) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Regular lattice of `n_l·n_w·n_h` cell centers filling the box scaled by
/// `rho` per axis, centered on the box center and rotated with its yaw.
/// Points are ordered with the length index outermost and the height index
/// innermost.
pub fn generate_grid_points(b: &Box3D, n: [usize; 3], rho: [f64; 3]) -> Vec<[f64; 3]> {
    let ext = [rho[0] * b.l, rho[1] * b.w, rho[2] * b.h];
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let local = [
                    ext[0] * ((i as f64 + 0.5) / n[0] as f64 - 0.5),
                    ext[1] * ((j as f64 + 0.5) / n[1] as f64 - 0.5),
                    ext[2] * ((k as f64 + 0.5) / n[2] as f64 - 0.5),
                ];
                out.push(b.to_world(local));
            }
        }
    }
    out
}

/// Encoded box offsets relative to an anchor, in `x, y, z, l, h, w, θ` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxResidual(pub [f64; 7]);

impl BoxResidual {
    pub fn as_array(&self) -> [f64; 7] {
        self.0
    }
}

/// Center offsets over the anchor's BEV diagonal (height for z), log size
/// ratios and the raw yaw difference.
pub fn encode_residual(gt: &Box3D, anchor: &Box3D) -> BoxResidual {
    let diag = (anchor.l * anchor.l + anchor.w * anchor.w).sqrt();
    BoxResidual([
        (gt.x - anchor.x) / diag,
        (gt.y - anchor.y) / diag,
        (gt.z - anchor.z) / anchor.h,
        (gt.l / anchor.l).ln(),
        (gt.h / anchor.h).ln(),
        (gt.w / anchor.w).ln(),
        gt.theta - anchor.theta,
    ])
}

pub fn decode_residual(res: &BoxResidual, anchor: &Box3D) -> Box3D {
    let r = res.0;
    let diag = (anchor.l * anchor.l + anchor.w * anchor.w).sqrt();
    Box3D {
        x: anchor.x + r[0] * diag,
        y: anchor.y + r[1] * diag,
        z: anchor.z + r[2] * anchor.h,
        l: anchor.l * r[3].exp(),
        h: anchor.h * r[4].exp(),
        w: anchor.w * r[5].exp(),
        theta: normalize_angle(anchor.theta + r[6]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, t: f64) -> Box3D {
        Box3D::new(x, y, z, h, w, l, t).unwrap()
    }

    fn unit() -> Box3D {
        bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)
    }

    fn sorted(mut pts: Vec<[f64; 3]>) -> Vec<[i64; 3]> {
        let mut q: Vec<[i64; 3]> = pts
            .drain(..)
            .map(|p| p.map(|v| (v * 1e6).round() as i64))
            .collect();
        q.sort();
        q
    }

    #[test]
    fn unit_cube_corners() {
        for c in unit().corners() {
            assert!(c.iter().all(|v| (v.abs() - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn quarter_turn_swaps_length_and_width() {
        let b = bx(0.0, 0.0, 0.0, 1.0, 2.0, 4.0, PI / 2.0);
        let xs: Vec<f64> = b.bev_corners().iter().map(|c| c[0].abs()).collect();
        let ys: Vec<f64> = b.bev_corners().iter().map(|c| c[1].abs()).collect();
        assert!(xs.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(ys.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn half_turn_reproduces_corner_set() {
        let a = bx(1.0, 2.0, 0.5, 1.5, 1.6, 3.9, 0.0);
        let b = Box3D { theta: -PI, ..a };
        assert_eq!(sorted(a.corners().to_vec()), sorted(b.corners().to_vec()));
    }

    #[test]
    fn angles_normalize_into_half_open_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.25), 0.25);
    }

    #[test]
    fn containment() {
        let b = unit();
        assert!(b.contains([0.0, 0.0, 0.0]));
        assert!(!b.contains([1.0, 1.0, 1.0]));
        // 45° box of length 2, width 0.2: the point (0.6, 0.6) lies on its
        // long axis (distance 0.85 < 1) but outside the axis-aligned twin's
        // half-width 0.1.
        let rot = bx(0.0, 0.0, 0.0, 1.0, 0.2, 2.0, PI / 4.0);
        let aligned = Box3D { theta: 0.0, ..rot };
        assert!(rot.contains([0.6, 0.6, 0.0]));
        assert!(!aligned.contains([0.6, 0.6, 0.0]));
    }

    #[test]
    fn enlarge_adds_phi_to_each_size() {
        let b = bx(3.0, 1.0, -1.0, 1.5, 1.6, 3.9, 0.3);
        assert_eq!(b.enlarge(0.0), b);
        let e = b.enlarge(0.4);
        assert!(
            (e.h - 1.9).abs() < 1e-12 && (e.w - 2.0).abs() < 1e-12 && (e.l - 4.3).abs() < 1e-12
        );
        assert_eq!((e.x, e.y, e.z, e.theta), (b.x, b.y, b.z, b.theta));
        assert!(e.volume() > b.volume());
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bx(0.0, 0.0, 0.0, 1.5, 1.6, 3.9, 0.7);
        assert!((iou_3d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let far = Box3D { x: 10.0, ..a };
        assert_eq!(iou_3d(&a, &far).unwrap(), 0.0);
        let above = Box3D { z: 5.0, ..a };
        assert_eq!(iou_3d(&a, &above).unwrap(), 0.0);
    }

    #[test]
    fn iou_axis_aligned_hand_value() {
        // Unit cubes offset by 0.5 along x: overlap 0.5, union 1.5.
        let a = unit();
        let b = Box3D { x: 0.5, ..a };
        assert!((iou_3d(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_degenerate_boxes() {
        let a = unit();
        let d = Box3D { h: 0.0, ..a };
        assert!(iou_3d(&a, &d).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn nms_basic_cases() {
        let a = bx(0.0, 0.0, 0.0, 1.5, 1.6, 3.9, 0.0);
        assert_eq!(nms_bev(&[a], &[0.3], 0.7), vec![0]);
        assert_eq!(nms_bev(&[a, a], &[0.8, 0.9], 0.7), vec![1]);
        let far = Box3D { x: 20.0, ..a };
        assert_eq!(nms_bev(&[a, far], &[0.5, 0.5], 0.7), vec![0, 1]);
    }

    #[test]
    fn grid_point_conventions() {
        let b = bx(1.0, -2.0, 0.5, 2.0, 3.0, 4.0, 0.4);
        let single = generate_grid_points(&b, [1, 1, 1], [1.7, 0.3, 2.0]);
        assert_eq!(single.len(), 1);
        assert!(single[0]
            .iter()
            .zip(b.center())
            .all(|(a, c)| (a - c).abs() < 1e-12));

        let pair = generate_grid_points(&unit(), [2, 1, 1], [1.0; 3]);
        assert!((pair[0][0] + 0.25).abs() < 1e-15 && (pair[1][0] - 0.25).abs() < 1e-15);

        let pts = generate_grid_points(&b, [3, 4, 5], [1.0; 3]);
        assert_eq!(pts.len(), 60);
        assert!(pts.iter().all(|p| b.contains(*p)));
    }

    #[test]
    fn residual_round_trip_and_log_ratio() {
        let anchor = bx(10.0, 2.0, -1.0, 1.56, 1.6, 3.9, PI / 2.0);
        assert!(encode_residual(&anchor, &anchor)
            .0
            .iter()
            .all(|v| *v == 0.0));
        let gt = bx(10.7, 1.4, -0.8, 1.4, 1.7, 4.4, 1.2);
        let back = decode_residual(&encode_residual(&gt, &anchor), &anchor);
        for (a, b) in [
            (back.x, gt.x),
            (back.y, gt.y),
            (back.z, gt.z),
            (back.h, gt.h),
            (back.w, gt.w),
            (back.l, gt.l),
            (back.theta, gt.theta),
        ] {
            assert!((a - b).abs() < 1e-9);
        }
        let doubled = Box3D {
            h: 2.0 * anchor.h,
            w: 2.0 * anchor.w,
            l: 2.0 * anchor.l,
            ..anchor
        };
        let r1 = encode_residual(&gt, &anchor).0;
        let r2 = encode_residual(&gt, &doubled).0;
        for i in 3..6 {
            assert!((r2[i] - r1[i] + 2f64.ln()).abs() < 1e-12);
        }
    }
}
