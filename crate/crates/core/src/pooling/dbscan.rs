use std::collections::VecDeque;

use crate::scene::SpatialHash;

/// Clusters, noise and per-cluster centroids. Members are listed in
/// ascending index order; clusters are numbered in order of discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
}

impl ClusterResult {
    /// Cluster id of every input point, `None` for noise.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                out[m] = Some(c);
            }
        }
        out
    }
}

/// DBSCAN. A point is core when at least `min_pts` points, itself
/// included, lie within `eps` of it. Clusters grow breadth-first from the
/// lowest-index unvisited core point; a border point reachable from several
/// clusters joins the first one that reaches it.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> ClusterResult {
    assert!(eps > 0.0, "dbscan eps must be positive");
    assert!(min_pts >= 1, "dbscan min_pts must be at least 1");
    let n = points.len();
    let hash = SpatialHash::new(points, eps);
    let neighbors: Vec<Vec<usize>> = points.iter().map(|p| hash.within(*p, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for seed in 0..n {
        if label[seed].is_some() || !core[seed] {
            continue;
        }
        let c = clusters.len();
        let mut members = vec![seed];
        label[seed] = Some(c);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if label[q].is_some() {
                    continue;
                }
                label[q] = Some(c);
                members.push(q);
                if core[q] {
                    queue.push_back(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let noise = (0..n).filter(|&i| label[i].is_none()).collect();
    let centroids = clusters
        .iter()
        .map(|m| {
            let mut c = [0.0; 3];
            for &i in m {
                for a in 0..3 {
                    c[a] += points[i][a];
                }
            }
            c.map(|v| v / m.len() as f64)
        })
        .collect();
    ClusterResult {
        clusters,
        noise,
        centroids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs_form_two_clusters() {
        let pts = [
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [5.0, 0.0, 0.0],
            [5.1, 0.0, 0.0],
        ];
        let r = dbscan(&pts, 0.2, 2);
        assert_eq!(r.clusters, vec![vec![0, 1], vec![2, 3]]);
        assert!(r.noise.is_empty());
        assert!((r.centroids[1][0] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn isolated_point_is_noise() {
        let r = dbscan(&[[1.0, 2.0, 3.0]], 0.2, 2);
        assert!(r.clusters.is_empty());
        assert_eq!(r.noise, vec![0]);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // 1 is a border point reachable from both dense pairs.
        let xs = [0.0, 0.25, 0.5, -0.1, -0.2, 0.6, 0.7];
        let pts: Vec<[f64; 3]> = xs.iter().map(|x| [*x, 0.0, 0.0]).collect();
        let r = dbscan(&pts, 0.3, 4);
        assert_eq!(r.clusters, vec![vec![0, 1, 3, 4], vec![2, 5, 6]]);
    }
}
