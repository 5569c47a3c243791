//! KITTI velodyne binaries and label text.
//!
//! Labels are converted to and from the lidar frame with an identity
//! calibration: camera `x = -y`, `y = -z + h/2` (bottom center, pointing
//! down), `z = x`, and `ry = -θ - π/2`. Fields the toy pipeline does not
//! model are written as truncation 0, occlusion 0, alpha -10 and an
//! all-zero 2D box.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{normalize_angle, Box3D};
use crate::scene::PointCloud;

use super::{io_err, Detection, GtObject, ObjectClass, PipelineError, Result};

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(PipelineError::BinLength {
            path: path.to_path_buf(),
            bytes: bytes.len(),
        });
    }
    let points = bytes
        .chunks_exact(16)
        .map(|rec| {
            std::array::from_fn(|i| {
                f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4-byte slice")) as f64
            })
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Writes points as little-endian `f32` quadruples.
pub fn write_kitti_bin(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(pc.len() * 16);
    for p in &pc.points {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// One label line in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i64,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    /// `(h, w, l)`.
    pub dims: [f64; 3],
    pub location: [f64; 3],
    pub ry: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(format!("expected 15 or 16 fields, found {}", f.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            f[i].parse::<f64>()
                .map_err(|_| format!("field {} (`{}`) is not a number", i + 1, f[i]))
        };
        Ok(Self {
            class_name: f[0].to_string(),
            truncation: num(1)?,
            occlusion: f[2]
                .parse()
                .map_err(|_| format!("field 3 (`{}`) is not an integer", f[2]))?,
            alpha: num(3)?,
            bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            ry: num(14)?,
            score: if f.len() == 16 { Some(num(15)?) } else { None },
        })
    }

    pub fn class(&self) -> Option<ObjectClass> {
        ObjectClass::from_kitti_name(&self.class_name)
    }

    pub fn from_box(class: ObjectClass, b: &Box3D, score: Option<f64>) -> Self {
        Self {
            class_name: class.kitti_name().to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha: -10.0,
            bbox2d: [0.0; 4],
            dims: [b.h, b.w, b.l],
            location: [-b.y, -b.z + 0.5 * b.h, b.x],
            ry: normalize_angle(-b.theta - FRAC_PI_2),
            score,
        }
    }

    /// Lidar-frame box; `None` when the dimensions are not positive.
    pub fn to_box(&self) -> Option<Box3D> {
        let [h, w, l] = self.dims;
        let [cx, cy, cz] = self.location;
        Box3D::new(cz, -cx, 0.5 * h - cy, h, w, l, -self.ry - FRAC_PI_2).ok()
    }

    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.class_name,
            self.truncation,
            self.occlusion,
            self.alpha,
            self.bbox2d[0],
            self.bbox2d[1],
            self.bbox2d[2],
            self.bbox2d[3],
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.ry,
        );
        if let Some(score) = self.score {
            let _ = write!(s, " {score:.4}");
        }
        s
    }
}

/// Every line of a label file; blank lines are skipped.
pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<KittiLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            KittiLabel::parse(line).map_err(|msg| PipelineError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })?,
        );
    }
    Ok(out)
}

/// Ground truth for the modeled classes; `DontCare` and other classes drop out.
pub fn labels_to_objects(labels: &[KittiLabel]) -> Vec<GtObject> {
    labels
        .iter()
        .filter_map(|l| {
            Some(GtObject {
                class: l.class()?,
                bbox: l.to_box()?,
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, objects: &[GtObject]) -> Result<()> {
    let path = path.as_ref();
    let text: String = objects
        .iter()
        .map(|o| KittiLabel::from_box(o.class, &o.bbox, None).to_line() + "\n")
        .collect();
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_predictions(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    let text: String = dets
        .iter()
        .map(|d| KittiLabel::from_box(d.class, &d.bbox, Some(d.score)).to_line() + "\n")
        .collect();
    std::fs::write(path, text).map_err(io_err(path))
}

const SIDECAR_HEADER: &str = "# class x y z h w l theta score";

/// Full-precision detections in the lidar frame, one per line.
pub fn write_sidecar(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("{SIDECAR_HEADER}\n");
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            text,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            d.class, b.x, b.y, b.z, b.h, b.w, b.l, b.theta, d.score
        );
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| PipelineError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(fail(format!("expected 9 fields, found {}", f.len())));
        }
        let class = ObjectClass::from_kitti_name(f[0])
            .ok_or_else(|| fail(format!("unknown class `{}`", f[0])))?;
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| fail(format!("`{s}` is not a number")))
            })
            .collect::<Result<_>>()?;
        let bbox = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
            .map_err(|e| fail(e.to_string()))?;
        out.push(Detection {
            bbox,
            score: v[7],
            class,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn single_record_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let rec: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        std::fs::write(&p, rec).unwrap();
        assert_eq!(
            read_kitti_bin(&p).unwrap().points,
            vec![[1.0, 2.0, 3.0, 0.5]]
        );
        std::fs::write(&p, []).unwrap();
        assert!(read_kitti_bin(&p).unwrap().is_empty());
        std::fs::write(&p, [0u8; 17]).unwrap();
        let err = read_kitti_bin(&p).unwrap_err();
        assert!(err.to_string().contains("17"), "{err}");
    }

    #[test]
    fn bin_round_trip_is_bit_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pc = PointCloud::new(
            (0..1000)
                .map(|_| std::array::from_fn(|_| rng.random_range(-50.0f32..50.0) as f64))
                .collect(),
        );
        write_kitti_bin(&p, &pc).unwrap();
        assert_eq!(read_kitti_bin(&p).unwrap(), pc);
    }

    #[test]
    fn prediction_round_trip_to_two_decimals() {
        let b = Box3D::new(12.345, -3.21, -0.87, 1.52, 1.63, 3.88, 0.4).unwrap();
        let l = KittiLabel::from_box(ObjectClass::Car, &b, Some(0.9));
        let back = KittiLabel::parse(&l.to_line()).unwrap();
        let r = back.to_box().unwrap();
        for (a, b) in [
            (r.x, b.x),
            (r.y, b.y),
            (r.z, b.z),
            (r.h, b.h),
            (r.w, b.w),
            (r.l, b.l),
            (r.theta, b.theta),
        ] {
            assert!((a - b).abs() <= 0.0051 + 1e-9, "{a} vs {b}");
        }
        assert_eq!(back.score, Some(0.9));
    }

    #[test]
    fn mixed_file_partitions_by_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("000000.txt");
        std::fs::write(
            &p,
            "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n\
             Pedestrian 0.00 0 0.21 423.17 173.67 433.17 224.03 1.60 0.48 0.96 -7.66 1.72 31.69 -0.03\n\
             DontCare -1 -1 -10.00 503.89 169.71 590.61 190.13 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00\n\
             Cyclist 0.00 1 -2.45 18.00 185.00 120.00 266.00 1.72 0.57 1.77 -15.61 2.16 18.33 -3.14\n\
             Car 0.50 2 1.97 0.00 190.00 116.00 350.00 1.48 1.60 3.81 -12.08 1.71 13.50 1.26\n",
        )
        .unwrap();
        let labels = read_label_file(&p).unwrap();
        assert_eq!(labels.len(), 5);
        let objs = labels_to_objects(&labels);
        let classes: Vec<ObjectClass> = objs.iter().map(|o| o.class).collect();
        assert_eq!(
            classes,
            vec![
                ObjectClass::Car,
                ObjectClass::Pedestrian,
                ObjectClass::Cyclist,
                ObjectClass::Car
            ]
        );
        let ped = objs[1].bbox;
        assert!((ped.x - 31.69).abs() < 1e-12 && (ped.y - 7.66).abs() < 1e-12);
        assert!((ped.z - (0.8 - 1.72)).abs() < 1e-12);
        assert!((ped.l - 0.96).abs() < 1e-12);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "Car 0 0 0 0 0 0 0 1 1 1 0 0 5 0\nCar 0 0\n").unwrap();
        let err = read_label_file(&p).unwrap_err();
        assert!(
            matches!(err, PipelineError::Format { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn sidecar_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.det");
        let d = Detection {
            bbox: Box3D::new(1.0 / 3.0, 2.0, -1.0, 1.5, 1.6, 3.9, 0.1234567).unwrap(),
            score: 0.987654321,
            class: ObjectClass::Cyclist,
        };
        write_sidecar(&p, &[d]).unwrap();
        assert_eq!(read_sidecar(&p).unwrap(), vec![d]);
    }
}
