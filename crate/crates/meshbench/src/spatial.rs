//! Exact nearest-neighbor search over a fixed 3D point set.
//!
//! The tree is immutable after construction; queries are concurrent-safe.
//! Exact distance ties resolve to the lowest point index, so results are
//! deterministic and cacheable.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

struct Node {
    axis: u8,
    split: f64,
    // leaf: range into `order`; internal: child node ids
    left: u32,
    right: u32,
    leaf_start: u32,
    leaf_len: u32,
}

const LEAF_SIZE: usize = 16;

/// Balanced kd-tree over a point cloud.
pub struct SpatialIndex {
    points: Vec<Point3<f64>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

impl SpatialIndex {
    /// Builds the index over the vertices of `g`.
    pub fn build(g: &Mesh) -> Result<Self> {
        Self::from_points(g.vertices().to_vec())
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMesh("cannot index an empty point set".into()));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = points.len();
        let root = build_node(&points, &mut order, 0, n, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index and distance of the exact nearest neighbor of `q`.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(self.root, q, &mut best);
        (best.1 as usize, best.0.sqrt())
    }

    fn search(&self, node: u32, q: &Point3<f64>, best: &mut (f64, u32)) {
        let n = &self.nodes[node as usize];
        if n.leaf_len > 0 {
            for &i in &self.order[n.leaf_start as usize..(n.leaf_start + n.leaf_len) as usize] {
                let d2 = (self.points[i as usize] - q).norm_squared();
                if d2 < best.0 || (d2 == best.0 && i < best.1) {
                    *best = (d2, i);
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, best);
        // the far side can still hold an equal-distance, lower-index point
        if delta * delta <= best.0 {
            self.search(far, q, best);
        }
    }

    /// The `k` exact nearest neighbors of `q`, ordered by (distance, index).
    pub fn k_nearest(&self, q: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search_k(self.root, q, k, &mut best);
        best.into_iter()
            .map(|(d2, i)| (i as usize, d2.sqrt()))
            .collect()
    }

    fn search_k(&self, node: u32, q: &Point3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        let n = &self.nodes[node as usize];
        if n.leaf_len > 0 {
            for &i in &self.order[n.leaf_start as usize..(n.leaf_start + n.leaf_len) as usize] {
                let d2 = (self.points[i as usize] - q).norm_squared();
                let cand = (d2, i);
                if best.len() < k || cand < *best.last().unwrap() {
                    let pos = best.partition_point(|b| *b < cand);
                    best.insert(pos, cand);
                    if best.len() > k {
                        best.pop();
                    }
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search_k(near, q, k, best);
        if best.len() < k || delta * delta <= best.last().unwrap().0 {
            self.search_k(far, q, k, best);
        }
    }
}

fn build_node(
    points: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let len = end - start;
    if len <= LEAF_SIZE {
        nodes.push(Node {
            axis: 0,
            split: 0.0,
            left: 0,
            right: 0,
            leaf_start: start as u32,
            leaf_len: len as u32,
        });
        return (nodes.len() - 1) as u32;
    }
    // split on the widest axis at the median
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = len / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let split = points[slice[mid] as usize][axis];
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes.push(Node {
        axis: axis as u8,
        split,
        left,
        right,
        leaf_start: 0,
        leaf_len: 0,
    });
    (nodes.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect()
    }

    #[test]
    fn single_point_always_zero() {
        let idx = SpatialIndex::from_points(vec![Point3::new(1.0, 2.0, 3.0)]).unwrap();
        for q in [Point3::origin(), Point3::new(5.0, 5.0, 5.0)] {
            assert_eq!(idx.nearest(&q).0, 0);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 1000);
        let idx = SpatialIndex::from_points(pts.clone()).unwrap();
        for _ in 0..100 {
            let q = Point3::new(
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
            );
            let (bi, bd) = brute_nearest(&pts, &q);
            let (i, d) = idx.nearest(&q);
            assert_eq!(i, bi);
            assert!((d - bd).abs() < 1e-12);
        }
    }

    #[test]
    fn equidistant_tie_takes_lowest_index() {
        // many duplicate points: the query is equidistant to all of them
        let pts = vec![Point3::new(1.0, 0.0, 0.0); 40];
        let idx = SpatialIndex::from_points(pts).unwrap();
        assert_eq!(idx.nearest(&Point3::origin()).0, 0);

        // mirror pair around the query
        let mut pts = vec![Point3::new(5.0, 5.0, 5.0); 3];
        pts.push(Point3::new(-1.0, 0.0, 0.0));
        pts.push(Point3::new(1.0, 0.0, 0.0));
        let idx = SpatialIndex::from_points(pts).unwrap();
        assert_eq!(idx.nearest(&Point3::origin()).0, 3);
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 500);
        let idx = SpatialIndex::from_points(pts.clone()).unwrap();
        for _ in 0..50 {
            let q = Point3::new(
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
            );
            let got = idx.k_nearest(&q, 3);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in got.iter().zip(&all) {
                assert_eq!(g.0, w.1);
                assert!((g.1 - w.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_set_rejected() {
        assert!(SpatialIndex::from_points(vec![]).is_err());
    }
}
