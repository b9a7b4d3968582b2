//! Sampling and neighbourhood primitives for point sets.

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub n_centroids: usize,
    pub radius: f64,
    pub max_neighbors: usize,
}

impl GroupSpec {
    pub fn new(n_centroids: usize, radius: f64, max_neighbors: usize) -> Result<Self> {
        if n_centroids == 0 || !(radius > 0.0) || max_neighbors == 0 {
            return Err(Error::InvalidArgument(format!(
                "group spec needs positive values, got {n_centroids}/{radius}/{max_neighbors}"
            )));
        }
        Ok(Self {
            n_centroids,
            radius,
            max_neighbors,
        })
    }
}

/// Greedy farthest point sampling starting at `start`.
///
/// Each step picks the unselected point with the largest distance to the
/// selected set; ties go to the smallest index.
pub fn farthest_point_sample(points: &[Point3], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot sample {k} of {n} points")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!("start index {start} out of {n} points")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Indices within the closed ball, ascending, truncated to the first `k`.
pub fn ball_query(points: &[Point3], center: &Point3, radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, center) <= r2)
        .map(|(i, _)| i)
        .take(k)
        .collect()
}

/// Exactly `max_neighbors` source indices per centre. Short neighbourhoods
/// repeat their first neighbour; an empty one yields `None` (the centre
/// itself with zero features).
pub fn group_indices(points: &[Point3], centers: &[Point3], spec: &GroupSpec) -> Vec<Vec<Option<usize>>> {
    centers
        .iter()
        .map(|c| {
            let found = ball_query(points, c, spec.radius, spec.max_neighbors);
            match found.first() {
                None => vec![None; spec.max_neighbors],
                Some(&first) => {
                    let mut row: Vec<Option<usize>> = found.iter().map(|&i| Some(i)).collect();
                    row.resize(spec.max_neighbors, Some(first));
                    row
                }
            }
        })
        .collect()
}

/// One centroid's neighbourhood: `max_neighbors` rows of
/// `(relative x, y, z, features..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlock {
    pub center: Point3,
    pub sources: Vec<Option<usize>>,
    pub rows: Vec<Vec<f64>>,
}

/// Groups `features` (row-major, `channels` per point) around the given
/// centroid indices.
pub fn group(
    points: &[Point3],
    features: &[f64],
    channels: usize,
    centroids: &[usize],
    spec: &GroupSpec,
) -> Result<Vec<GroupBlock>> {
    if features.len() != points.len() * channels {
        return Err(Error::InvalidArgument("feature matrix shape".into()));
    }
    if let Some(&bad) = centroids.iter().find(|&&c| c >= points.len()) {
        return Err(Error::InvalidArgument(format!("centroid index {bad}")));
    }
    let centers: Vec<Point3> = centroids.iter().map(|&c| points[c]).collect();
    let blocks = group_indices(points, &centers, spec)
        .into_iter()
        .zip(centers)
        .map(|(sources, center)| {
            let rows = sources
                .iter()
                .map(|src| match src {
                    Some(i) => {
                        let p = points[*i];
                        let mut row = vec![p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                        row.extend_from_slice(&features[i * channels..(i + 1) * channels]);
                        row
                    }
                    None => vec![0.0; 3 + channels],
                })
                .collect();
            GroupBlock { center, sources, rows }
        })
        .collect();
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight transcription of the greedy definition, O(k·n·k).
    fn fps_oracle(points: &[Point3], k: usize, start: usize) -> Vec<usize> {
        let mut sel = vec![start];
        while sel.len() < k {
            let mut best = None;
            let mut best_d = -1.0;
            for i in 0..points.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel
                    .iter()
                    .map(|&s| dist2(&points[i], &points[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            sel.push(best.unwrap());
        }
        sel
    }

    fn square() -> Vec<Point3> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
    }

    #[test]
    fn fps_examples() {
        assert_eq!(farthest_point_sample(&square(), 1, 2).unwrap(), vec![2]);
        assert_eq!(farthest_point_sample(&square(), 2, 0).unwrap()[1], 3);
        let all = farthest_point_sample(&square(), 4, 0).unwrap();
        assert_eq!(all, vec![0, 3, 1, 2]);
        assert!(farthest_point_sample(&square(), 5, 0).is_err());
        assert!(farthest_point_sample(&square(), 2, 4).is_err());
    }

    #[test]
    fn ball_query_examples() {
        let pts: Vec<Point3> = (0..6).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
        assert!(ball_query(&pts, &[5.0, 5.0, 5.0], 0.1, 4).is_empty());
        assert_eq!(ball_query(&pts, &[0.0; 3], 0.045, 3), vec![0, 1, 2]);
        let edge = [[0.1, 0.0, 0.0]];
        assert_eq!(ball_query(&edge, &[0.0; 3], 0.1, 1), vec![0]);
    }

    #[test]
    fn group_pads_with_first_neighbour() {
        let pts = vec![[0.0; 3], [5.0, 0.0, 0.0]];
        let spec = GroupSpec::new(1, 0.5, 4).unwrap();
        let blocks = group(&pts, &[7.0, 8.0], 1, &[0], &spec).unwrap();
        assert_eq!(blocks[0].sources, vec![Some(0); 4]);
        assert_eq!(blocks[0].rows, vec![vec![0.0, 0.0, 0.0, 7.0]; 4]);
    }

    #[test]
    fn group_k1_takes_lowest_index() {
        let pts = vec![[0.0; 3], [0.1, 0.0, 0.0], [0.05, 0.0, 0.0]];
        let spec = GroupSpec::new(1, 0.5, 1).unwrap();
        let blocks = group(&pts, &[], 0, &[2], &spec).unwrap();
        assert_eq!(blocks[0].sources, vec![Some(0)]);
        assert!((blocks[0].rows[0][0] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn empty_neighbourhood_repeats_centre_with_zero_features() {
        let spec = GroupSpec::new(1, 0.1, 2).unwrap();
        let idx = group_indices(&[[1.0, 1.0, 1.0]], &[[0.0; 3]], &spec);
        assert_eq!(idx, vec![vec![None, None]]);
    }

    #[test]
    fn group_validates_inputs() {
        let spec = GroupSpec::new(1, 0.1, 2).unwrap();
        assert!(group(&square(), &[1.0], 1, &[0], &spec).is_err());
        assert!(group(&square(), &[], 0, &[9], &spec).is_err());
        assert!(GroupSpec::new(0, 0.1, 1).is_err());
        assert!(GroupSpec::new(1, 0.0, 1).is_err());
    }

    fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
        proptest::collection::vec(
            (0i32..20, 0i32..20, 0i32..3).prop_map(|(a, b, c)| [a as f64 * 0.05, b as f64 * 0.05, c as f64 * 0.05]),
            1..max,
        )
    }

    proptest! {
        // Coarse integer lattices make distance ties common.
        #[test]
        fn fps_matches_oracle(pts in cloud(64), k in 1usize..64, start in 0usize..64) {
            let k = k.min(pts.len());
            let start = start % pts.len();
            prop_assert_eq!(farthest_point_sample(&pts, k, start).unwrap(), fps_oracle(&pts, k, start));
        }

        #[test]
        fn fps_coverage_shrinks(pts in cloud(64)) {
            let order = farthest_point_sample(&pts, pts.len(), 0).unwrap();
            let mut prev = f64::INFINITY;
            for k in 1..=pts.len() {
                let cover = pts.iter()
                    .map(|p| order[..k].iter().map(|&s| dist2(p, &pts[s])).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max);
                prop_assert!(cover <= prev);
                prev = cover;
            }
        }

        #[test]
        fn ball_query_matches_scan(pts in cloud(64), c in 0usize..64, r in 0.01f64..0.5, k in 1usize..20) {
            let center = pts[c % pts.len()];
            let scan: Vec<usize> = (0..pts.len())
                .filter(|&i| dist2(&pts[i], &center).sqrt() <= r)
                .take(k)
                .collect();
            prop_assert_eq!(ball_query(&pts, &center, r, k), scan);
        }

        #[test]
        fn grouping_is_translation_equivariant(pts in cloud(40), shift in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)) {
            let spec = GroupSpec::new(1, 0.17, 6).unwrap();
            let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + shift.0, p[1] + shift.1, p[2] + shift.2]).collect();
            let a = group(&pts, &[], 0, &[0], &spec).unwrap();
            let b = group(&moved, &[], 0, &[0], &spec).unwrap();
            for (ra, rb) in a[0].rows.iter().zip(&b[0].rows) {
                for ax in 0..3 {
                    prop_assert!((ra[ax] - rb[ax]).abs() < 1e-9);
                }
            }
        }
    }
}
