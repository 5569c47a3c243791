use super::dist2;

/// Farthest point sampling seeded at index 0. Each step adds the point whose
/// distance to the selected set is largest (lowest index on ties). With fewer
/// than `k` points every index is returned in order.
pub fn fps_sample(points: &[[f64; 3]], k: usize) -> Vec<usize> {
    let n = points.len();
    if n <= k {
        return (0..n).collect();
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = 0;
    for _ in 0..k {
        selected.push(current);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(dist2(points[i], points[current]));
            if *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_picks_extremes() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(fps_sample(&pts, 2), vec![0, 2]);
    }

    #[test]
    fn k_at_least_n_returns_everything() {
        let pts = [[0.0; 3], [1.0, 2.0, 3.0], [4.0, 0.0, 1.0]];
        let mut all = fps_sample(&pts, 3);
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(fps_sample(&pts, 10), vec![0, 1, 2]);
    }
}
