use std::f64::consts::FRAC_PI_2;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::geometry::Box3D;
use crate::scene::PointCloud;

use super::{DetectorConfig, GtObject, ObjectClass};

/// A generated scene and the seed that reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub objects: Vec<GtObject>,
    pub seed: u64,
}

/// SplitMix64 finalizer over a base seed and a salt; used to derive
/// independent per-scene and per-purpose seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train and eval splits derived from `cfg.seed`.
pub fn synthetic_corpus(cfg: &DetectorConfig) -> (Vec<SyntheticScene>, Vec<SyntheticScene>) {
    let train = (0..cfg.synth.train_scenes)
        .map(|i| synthetic_scene(mix_seed(cfg.seed, 2 * i as u64), cfg))
        .collect();
    let eval = (0..cfg.synth.eval_scenes)
        .map(|i| synthetic_scene(mix_seed(cfg.seed, 2 * i as u64 + 1), cfg))
        .collect();
    (train, eval)
}

fn f32_round(p: [f64; 4]) -> [f64; 4] {
    p.map(|v| v as f32 as f64)
}

/// Ground plane, surface-sampled boxes and uniform clutter. Objects stand on
/// the ground, face along x or y (plus jitter) and never overlap.
pub fn synthetic_scene(seed: u64, cfg: &DetectorConfig) -> SyntheticScene {
    let s = &cfg.synth;
    let (lo, hi) = (cfg.encoder.range_min, cfg.encoder.range_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(s.objects_min..=s.objects_max);
    let classes = WeightedIndex::new(s.class_weights).expect("validated class weights");
    let mut objects: Vec<GtObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = ObjectClass::ALL[classes.sample(&mut rng)];
        let [h, w, l] = cfg
            .anchor_size(class)
            .map(|d| d * rng.random_range(1.0 - s.size_jitter..=1.0 + s.size_jitter));
        let radius = 0.5 * (l * l + w * w).sqrt();
        for _attempt in 0..100 {
            let margin = radius + 0.2;
            if lo[0] + margin >= hi[0] - margin || lo[1] + margin >= hi[1] - margin {
                break;
            }
            let x = rng.random_range(lo[0] + margin..hi[0] - margin);
            let y = rng.random_range(lo[1] + margin..hi[1] - margin);
            let base = if rng.random_bool(0.5) { 0.0 } else { FRAC_PI_2 };
            let theta = base + rng.random_range(-s.yaw_jitter..=s.yaw_jitter);
            let b = Box3D::new(x, y, s.ground_z + 0.5 * h, h, w, l, theta).expect("positive sizes");
            let clear = objects.iter().all(|o| {
                let d = ((o.bbox.x - x).powi(2) + (o.bbox.y - y).powi(2)).sqrt();
                d > o.bbox.bev_radius() + radius + 0.3
            });
            if clear {
                objects.push(GtObject { class, bbox: b });
                break;
            }
        }
    }

    let mut points = Vec::new();
    let noise = Normal::new(0.0f64, 0.02).expect("valid sigma");
    for _ in 0..s.ground_points {
        let x = rng.random_range(lo[0]..hi[0]);
        let y = rng.random_range(lo[1]..hi[1]);
        let z = (s.ground_z - noise.sample(&mut rng).abs()).max(lo[2]);
        points.push(f32_round([x, y, z, rng.random_range(0.0..0.2)]));
    }
    for o in &objects {
        sample_surface(
            &o.bbox,
            s.surface_density,
            s.min_surface_points,
            &mut rng,
            &mut points,
        );
    }
    let top = hi[2].min(s.ground_z + 3.0);
    let mut placed = 0;
    while placed < s.clutter_points {
        let p = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(s.ground_z..top),
        ];
        placed += 1;
        if objects.iter().any(|o| o.bbox.enlarge(0.4).contains(p)) {
            continue;
        }
        points.push(f32_round([p[0], p[1], p[2], rng.random_range(0.0..1.0)]));
    }
    SyntheticScene {
        cloud: PointCloud::new(points),
        objects,
        seed,
    }
}

/// Uniform samples over the top and four side faces, pulled 2% toward the
/// center so every sample lies strictly inside the box.
fn sample_surface(
    b: &Box3D,
    density: f64,
    min_points: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<[f64; 4]>,
) {
    let (l, w, h) = (b.l, b.w, b.h);
    let areas = [l * w, l * h, l * h, w * h, w * h];
    let total: f64 = areas.iter().sum();
    let n = ((density * total).round() as usize).max(min_points);
    let faces = WeightedIndex::new(areas).expect("positive face areas");
    let intensity = rng.random_range(0.3..0.9);
    for _ in 0..n {
        let u: f64 = rng.random_range(-0.5..0.5);
        let v: f64 = rng.random_range(-0.5..0.5);
        let local = match faces.sample(rng) {
            0 => [u * l, v * w, 0.5 * h],
            1 => [u * l, 0.5 * w, v * h],
            2 => [u * l, -0.5 * w, v * h],
            3 => [0.5 * l, u * w, v * h],
            _ => [-0.5 * l, u * w, v * h],
        };
        let p = b.to_world(local.map(|c| 0.98 * c));
        let jitter = rng.random_range(-0.05f64..0.05);
        out.push(f32_round([
            p[0],
            p[1],
            p[2],
            (intensity + jitter).clamp(0.0, 1.0),
        ]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_contains_surface_points() {
        let cfg = DetectorConfig::toy();
        let a = synthetic_scene(7, &cfg);
        assert_eq!(a, synthetic_scene(7, &cfg));
        assert_ne!(a, synthetic_scene(8, &cfg));
        for o in &a.objects {
            let inside = a
                .cloud
                .points
                .iter()
                .filter(|p| o.bbox.contains([p[0], p[1], p[2]]))
                .count();
            assert!(inside >= cfg.synth.min_surface_points);
        }
    }

    #[test]
    fn zero_objects_gives_background_only() {
        let mut cfg = DetectorConfig::toy();
        cfg.synth.objects_min = 0;
        cfg.synth.objects_max = 0;
        let s = synthetic_scene(1, &cfg);
        assert!(s.objects.is_empty());
        assert_eq!(
            s.cloud.len(),
            cfg.synth.ground_points + cfg.synth.clutter_points
        );
    }
}
