use std::collections::HashMap;

/// Uniform hash grid for fixed-radius neighbor queries.
pub struct SpatialHash<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(*p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    fn key(p: [f64; 3], cell: f64) -> [i64; 3] {
        p.map(|v| (v / cell).floor() as i64)
    }

    /// Indices of points within distance `r` of `q` (inclusive), ascending.
    pub fn within(&self, q: [f64; 3], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if r.is_infinite() {
            out.extend(0..self.points.len());
            return out;
        }
        let reach = (r / self.cell).ceil() as i64;
        let c = Self::key(q, self.cell);
        let r2 = r * r;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(b) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        out.extend(
                            b.iter()
                                .copied()
                                .filter(|&i| dist2(self.points[i], q) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Up to `max` nearest points within `r`, ordered by distance then index.
    pub fn nearest_within(&self, q: [f64; 3], r: f64, max: usize) -> Vec<usize> {
        let mut hits = self.within(q, r);
        if hits.len() > max {
            hits.sort_by(|&a, &b| {
                dist2(self.points[a], q)
                    .total_cmp(&dist2(self.points[b], q))
                    .then(a.cmp(&b))
            });
            hits.truncate(max);
            hits.sort_unstable();
        }
        hits
    }
}

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|i| {
                let t = i as f64;
                [
                    (t * 0.37).sin() * 3.0,
                    (t * 0.11).cos() * 3.0,
                    (t * 0.05).sin(),
                ]
            })
            .collect();
        let hash = SpatialHash::new(&pts, 0.4);
        for q in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.3], [3.0, 3.0, 0.0]] {
            for r in [0.1, 0.5, 1.3] {
                let brute: Vec<usize> = (0..pts.len())
                    .filter(|&i| dist2(pts[i], q) <= r * r)
                    .collect();
                assert_eq!(hash.within(q, r), brute);
            }
        }
    }
}
