//! Chamfer (nearest-neighbor) point correspondence with duplicate-match
//! diagnostics.

use std::collections::HashSet;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::Result;
use crate::mesh::Mesh;
use crate::spatial::SpatialIndex;

/// Per-vertex match from a reconstruction into ground truth: for each
/// reconstruction vertex, the index and position of its nearest ground-truth
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub matched_indices: Vec<usize>,
    pub matched_points: Vec<Point3<f64>>,
}

/// How many reconstruction vertices share their matched ground-truth point
/// with another vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicateStats {
    pub duplicate_count: usize,
    pub duplicate_rate: f64,
}

/// Builds the nearest-neighbor index over the ground truth.
pub fn build_index(g: &Mesh) -> Result<SpatialIndex> {
    SpatialIndex::build(g)
}

/// Matches every vertex of `r` to its exact nearest neighbor in the indexed
/// ground truth. Ties go to the lowest index; output order is by vertex
/// index regardless of scheduling.
pub fn chamfer_match(r: &Mesh, index: &SpatialIndex) -> Correspondence {
    let results: Vec<usize> = r
        .vertices()
        .par_iter()
        .map(|p| index.nearest(p).0)
        .collect();
    let matched_points = results.iter().map(|&j| index.points()[j]).collect();
    Correspondence {
        matched_indices: results,
        matched_points,
    }
}

/// Duplicate-match statistics: `count = N − |distinct matched indices|`.
pub fn duplicate_stats(c: &Correspondence) -> DuplicateStats {
    let n = c.matched_indices.len();
    let distinct: HashSet<usize> = c.matched_indices.iter().copied().collect();
    let duplicate_count = n - distinct.len();
    DuplicateStats {
        duplicate_count,
        duplicate_rate: if n == 0 {
            0.0
        } else {
            duplicate_count as f64 / n as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_mesh(rng: &mut impl Rng, n: usize) -> Mesh {
        let verts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        Mesh::new(verts, None, "t").unwrap()
    }

    #[test]
    fn identity_on_equal_point_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mesh(&mut rng, 200);
        let idx = build_index(&m).unwrap();
        let c = chamfer_match(&m, &idx);
        let expect: Vec<usize> = (0..m.len()).collect();
        assert_eq!(c.matched_indices, expect);
        assert_eq!(c.matched_points.as_slice(), m.vertices());
        assert_eq!(duplicate_stats(&c).duplicate_rate, 0.0);
    }

    #[test]
    fn matched_points_row_equals_indexed_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_mesh(&mut rng, 100);
        let g = random_mesh(&mut rng, 300);
        let idx = build_index(&g).unwrap();
        let c = chamfer_match(&r, &idx);
        for (i, &j) in c.matched_indices.iter().enumerate() {
            assert_eq!(c.matched_points[i], g.vertices()[j]);
        }
    }

    #[test]
    fn exactness_vs_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_mesh(&mut rng, 150);
        let g = random_mesh(&mut rng, 400);
        let idx = build_index(&g).unwrap();
        let c = chamfer_match(&r, &idx);
        for (i, ri) in r.vertices().iter().enumerate() {
            let d = (ri - c.matched_points[i]).norm();
            for gj in g.vertices() {
                assert!(d <= (ri - gj).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn two_sources_one_target_is_one_duplicate() {
        let g = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(0.0, 10.0, 0.0),
            ],
            None,
            "g",
        )
        .unwrap();
        let r = Mesh::new(
            vec![
                Point3::new(0.1, 0.0, 0.0),
                Point3::new(-0.1, 0.0, 0.0),
                Point3::new(10.0, 0.1, 0.0),
            ],
            None,
            "r",
        )
        .unwrap();
        let idx = build_index(&g).unwrap();
        let c = chamfer_match(&r, &idx);
        assert_eq!(c.matched_indices, vec![0, 0, 1]);
        let s = duplicate_stats(&c);
        assert_eq!(s.duplicate_count, 1);
        assert!((s.duplicate_rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_to_one_rate() {
        let c = Correspondence {
            matched_indices: vec![4; 10],
            matched_points: vec![Point3::origin(); 10],
        };
        let s = duplicate_stats(&c);
        assert_eq!(s.duplicate_count, 9);
        assert!((s.duplicate_rate - 0.9).abs() < 1e-15);
    }

    #[test]
    fn deterministic_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_mesh(&mut rng, 500);
        let g = random_mesh(&mut rng, 500);
        let idx = build_index(&g).unwrap();
        let a = chamfer_match(&r, &idx);
        let b = chamfer_match(&r, &idx);
        assert_eq!(a.matched_indices, b.matched_indices);
    }
}
