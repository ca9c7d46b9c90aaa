//! Core geometric types: meshes, landmark sets, per-vertex errors and masks.
//!
//! All coordinates are in millimeters. Every type is immutable after
//! construction and safe to share across threads.

use nalgebra::Point3;

use crate::error::{Error, Result};

/// A triangle mesh or point cloud in millimeter coordinates.
///
/// Faces are optional: plain-text scan dumps carry only vertices, while OBJ
/// and PLY files may carry triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    faces: Option<Vec<[u32; 3]>>,
    label: String,
}

impl Mesh {
    /// Builds a mesh, validating that coordinates are finite, that there are
    /// at least 3 vertices and that face indices are in range and distinct.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        faces: Option<Vec<[u32; 3]>>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMesh(format!(
                    "non-finite coordinate at vertex {i}"
                )));
            }
        }
        if let Some(faces) = &faces {
            let n = vertices.len() as u32;
            for (i, f) in faces.iter().enumerate() {
                if f.iter().any(|&ix| ix >= n) {
                    return Err(Error::InvalidMesh(format!(
                        "face {i} references vertex index out of range (N={n})"
                    )));
                }
                if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                    return Err(Error::InvalidMesh(format!(
                        "face {i} has repeated vertex indices"
                    )));
                }
            }
        }
        Ok(Self {
            vertices,
            faces,
            label: label.into(),
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> Option<&[[u32; 3]]> {
        self.faces.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (hi - lo).norm()
    }

    /// Replaces the label, keeping geometry.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Sparse annotated 3D points with stable semantic ids.
///
/// Ids follow a 51-point face convention but are carried opaquely; the
/// toolkit only matches them between sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point3<f64>>,
    ids: Vec<u32>,
    on_mesh_indices: Option<Vec<usize>>,
}

impl LandmarkSet {
    /// At least 3 landmarks with unique ids are required.
    pub fn new(
        points: Vec<Point3<f64>>,
        ids: Vec<u32>,
        on_mesh_indices: Option<Vec<usize>>,
    ) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidLandmarks(format!(
                "fewer than 3 landmarks ({})",
                points.len()
            )));
        }
        if points.len() != ids.len() {
            return Err(Error::InvalidLandmarks(format!(
                "{} points but {} ids",
                points.len(),
                ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(*id) {
                return Err(Error::InvalidLandmarks(format!("duplicate id {id}")));
            }
        }
        if let Some(idx) = &on_mesh_indices {
            if idx.len() != points.len() {
                return Err(Error::InvalidLandmarks(
                    "on_mesh_indices length mismatch".into(),
                ));
            }
        }
        for (i, p) in points.iter().enumerate() {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidLandmarks(format!(
                    "non-finite coordinate at landmark {i}"
                )));
            }
        }
        Ok(Self {
            points,
            ids,
            on_mesh_indices,
        })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn on_mesh_indices(&self) -> Option<&[usize]> {
        self.on_mesh_indices.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point annotated with the given id, if present.
    pub fn point_by_id(&self, id: u32) -> Option<Point3<f64>> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|k| self.points[k])
    }

    /// Reorders `other` so its ids line up with `self`'s ids.
    /// Fails if the id sets differ.
    pub fn pair_by_id(&self, other: &LandmarkSet) -> Result<Vec<(Point3<f64>, Point3<f64>)>> {
        let mut pairs = Vec::with_capacity(self.len());
        for (k, id) in self.ids.iter().enumerate() {
            let q = other.point_by_id(*id).ok_or_else(|| {
                Error::InvalidLandmarks(format!("id {id} missing from second set"))
            })?;
            pairs.push((self.points[k], q));
        }
        if other.len() != self.len() {
            return Err(Error::InvalidLandmarks(format!(
                "id sets differ in size ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        Ok(pairs)
    }
}

/// Ordered set of vertex indices shared by compared methods.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexMask {
    indices: Vec<usize>,
}

impl VertexMask {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidMesh(format!(
                    "mask index {i} out of range (N={n})"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidMesh(format!("mask index {i} repeated")));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-vertex non-negative distances in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PerVertexError {
    values: Vec<f64>,
    mask: Option<VertexMask>,
    mean: f64,
}

impl PerVertexError {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_mask(values, None)
    }

    /// The aggregate mean is taken over the mask when one is given,
    /// otherwise over all vertices.
    pub fn with_mask(values: Vec<f64>, mask: Option<VertexMask>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numerical(
                "per-vertex error must be finite and non-negative".into(),
            ));
        }
        if let Some(m) = &mask {
            if let Some(&bad) = m.indices().iter().find(|&&i| i >= values.len()) {
                return Err(Error::LengthMismatch(format!(
                    "mask index {bad} out of range for {} values",
                    values.len()
                )));
            }
        }
        let mean = match &mask {
            Some(m) if !m.is_empty() => {
                m.indices().iter().map(|&i| values[i]).sum::<f64>() / m.len() as f64
            }
            _ => values.iter().sum::<f64>() / values.len() as f64,
        };
        Ok(Self { values, mask, mean })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&VertexMask> {
        self.mask.as_ref()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn mesh_rejects_nan() {
        let err = Mesh::new(
            vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, f64::NAN, 0.0)],
            None,
            "t",
        );
        assert!(err.is_err());
    }

    #[test]
    fn mesh_rejects_bad_face_index() {
        let err = Mesh::new(
            vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0)],
            Some(vec![[0, 1, 3]]),
            "t",
        );
        assert!(err.is_err());
    }

    #[test]
    fn mesh_rejects_too_few_vertices() {
        assert!(Mesh::new(vec![p(0.0, 0.0, 0.0)], None, "t").is_err());
    }

    #[test]
    fn landmarks_require_three_unique_ids() {
        let pts = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)];
        assert!(LandmarkSet::new(pts, vec![1, 2], None).is_err());

        let pts = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0)];
        assert!(LandmarkSet::new(pts, vec![13, 13, 19], None).is_err());
    }

    #[test]
    fn pair_by_id_reorders() {
        let a = LandmarkSet::new(
            vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.0, 0.0, 0.0)],
            vec![13, 19, 28],
            None,
        )
        .unwrap();
        let b = LandmarkSet::new(
            vec![p(2.0, 1.0, 0.0), p(0.0, 1.0, 0.0), p(1.0, 1.0, 0.0)],
            vec![28, 13, 19],
            None,
        )
        .unwrap();
        let pairs = a.pair_by_id(&b).unwrap();
        assert_eq!(pairs[0].1, p(0.0, 1.0, 0.0));
        assert_eq!(pairs[2].1, p(2.0, 1.0, 0.0));
    }

    #[test]
    fn masked_mean() {
        let mask = VertexMask::new(vec![0, 2], 3).unwrap();
        let e = PerVertexError::with_mask(vec![1.0, 10.0, 3.0], Some(mask)).unwrap();
        assert_eq!(e.mean(), 2.0);
    }

    #[test]
    fn full_mask_mean_equals_unmasked() {
        let vals = vec![1.0, 2.0, 3.0, 4.0];
        let full = VertexMask::new((0..4).collect(), 4).unwrap();
        let a = PerVertexError::new(vals.clone()).unwrap();
        let b = PerVertexError::with_mask(vals, Some(full)).unwrap();
        assert_eq!(a.mean(), b.mean());
    }
}
