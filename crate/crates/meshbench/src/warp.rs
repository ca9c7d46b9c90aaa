//! Non-rigid warping.
//!
//! Elastic landmark registration (ELR) drags every vertex toward the target
//! landmarks with a distance-decaying magnitude coefficient, solved in closed
//! form from a small linear system. External warps (e.g. a non-rigid ICP)
//! plug in through a named registry and are resolved at config-validation
//! time.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, Point3};

use crate::error::{Error, Result};
use crate::mesh::{LandmarkSet, Mesh};
use crate::spatial::SpatialIndex;

/// Reject the landmark system when its reciprocal condition estimate is
/// below this.
pub const ELR_RCOND_MIN: f64 = 1e-12;

/// The coefficient and displacement matrices behind an ELR solve.
#[derive(Debug, Clone)]
pub struct ElrSystem {
    /// N×L magnitude coefficients, each in [0, 1].
    pub coefficients: DMatrix<f64>,
    /// L×L submatrix of `coefficients` at the landmark rows.
    pub landmark_coefficients: DMatrix<f64>,
    /// L×3 landmark displacements (target − source), once solved.
    pub displacements: Option<DMatrix<f64>>,
    /// L×3 per-landmark movement vectors, once solved.
    pub movements: Option<DMatrix<f64>>,
}

/// Magnitude coefficients for warping `r` from the landmarks at
/// `lmk_vertex_indices`: a vertex at distance `d` from landmark `i` gets
/// coefficient `1 − d / max_j d_j`, so the landmark vertex itself gets 1 and
/// the farthest vertex gets 0.
pub fn elr_coefficients(r: &Mesh, lmk_vertex_indices: &[usize]) -> Result<ElrSystem> {
    if r.len() < 2 {
        return Err(Error::InvalidMesh("need at least 2 vertices".into()));
    }
    let n = r.len();
    let l = lmk_vertex_indices.len();
    for &ix in lmk_vertex_indices {
        if ix >= n {
            return Err(Error::InvalidMesh(format!(
                "landmark vertex index {ix} out of range (N={n})"
            )));
        }
    }
    let mut a = DMatrix::zeros(n, l);
    for (col, &lix) in lmk_vertex_indices.iter().enumerate() {
        let lp = r.vertices()[lix];
        let mut max_d = 0.0f64;
        for v in r.vertices() {
            max_d = max_d.max((v - lp).norm());
        }
        if max_d <= 0.0 {
            return Err(Error::Degenerate(
                "zero-diameter mesh: all vertices coincide".into(),
            ));
        }
        for (k, v) in r.vertices().iter().enumerate() {
            a[(k, col)] = 1.0 - (v - lp).norm() / max_d;
        }
    }
    let mut a_tilde = DMatrix::zeros(l, l);
    for (row, &lix) in lmk_vertex_indices.iter().enumerate() {
        for col in 0..l {
            a_tilde[(row, col)] = a[(lix, col)];
        }
    }
    Ok(ElrSystem {
        coefficients: a,
        landmark_coefficients: a_tilde,
        displacements: None,
        movements: None,
    })
}

/// Warps `r` so its landmark vertices land on `targets` (paired positionally
/// with `lmk_vertex_indices`). Returns the warped mesh and the solved system.
pub fn elr_warp_indices(
    r: &Mesh,
    lmk_vertex_indices: &[usize],
    targets: &[Point3<f64>],
) -> Result<(Mesh, ElrSystem)> {
    if targets.len() != lmk_vertex_indices.len() {
        return Err(Error::LengthMismatch(format!(
            "{} targets for {} landmark indices",
            targets.len(),
            lmk_vertex_indices.len()
        )));
    }
    let mut system = elr_coefficients(r, lmk_vertex_indices)?;
    let l = lmk_vertex_indices.len();

    let mut e = DMatrix::zeros(l, 3);
    for (row, (&lix, target)) in lmk_vertex_indices.iter().zip(targets).enumerate() {
        let d = target - r.vertices()[lix];
        for c in 0..3 {
            e[(row, c)] = d[c];
        }
    }

    let svd = system.landmark_coefficients.clone().svd(true, true);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[l - 1];
    if !(smax > 0.0) || smin / smax < ELR_RCOND_MIN {
        return Err(Error::Degenerate(format!(
            "landmark coefficient matrix is singular or ill-conditioned \
             (rcond {:.2e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let u = svd
        .solve(&e, 0.0)
        .map_err(|m| Error::Numerical(m.to_string()))?;

    let offsets = &system.coefficients * &u;
    let vertices = r
        .vertices()
        .iter()
        .enumerate()
        .map(|(k, v)| Point3::new(v.x + offsets[(k, 0)], v.y + offsets[(k, 1)], v.z + offsets[(k, 2)]))
        .collect();
    let warped = Mesh::new(vertices, r.faces().map(|f| f.to_vec()), r.label())?;
    system.displacements = Some(e);
    system.movements = Some(u);
    Ok((warped, system))
}

/// Warps `r` toward `target_lmks`, matching landmarks to `src_lmks` by id.
/// Source landmarks without on-mesh indices are snapped to the nearest `r`
/// vertex.
pub fn elr_warp(r: &Mesh, src_lmks: &LandmarkSet, target_lmks: &LandmarkSet) -> Result<Mesh> {
    let indices = landmark_vertex_indices(r, src_lmks)?;
    let pairs = src_lmks.pair_by_id(target_lmks)?;
    let targets: Vec<Point3<f64>> = pairs.into_iter().map(|(_, t)| t).collect();
    let (warped, _) = elr_warp_indices(r, &indices, &targets)?;
    Ok(warped)
}

/// On-mesh vertex indices for a landmark set, snapping off-mesh landmark
/// coordinates to the nearest vertex of `m`.
pub fn landmark_vertex_indices(m: &Mesh, lmks: &LandmarkSet) -> Result<Vec<usize>> {
    if let Some(idx) = lmks.on_mesh_indices() {
        for &i in idx {
            if i >= m.len() {
                return Err(Error::InvalidLandmarks(format!(
                    "landmark vertex index {i} out of range (N={})",
                    m.len()
                )));
            }
        }
        return Ok(idx.to_vec());
    }
    let index = SpatialIndex::build(m)?;
    Ok(lmks.points().iter().map(|p| index.nearest(p).0).collect())
}

/// External warp: `warp(R, G, R_lmks, G_lmks) → Mesh` with the same vertex
/// count and ordering as `R`.
pub type WarpFn = Arc<dyn Fn(&Mesh, &Mesh, &LandmarkSet, &LandmarkSet) -> Result<Mesh> + Send + Sync>;

fn registry() -> &'static RwLock<HashMap<String, WarpFn>> {
    static REGISTRY: OnceLock<RwLock<HashMap<String, WarpFn>>> = OnceLock::new();
    REGISTRY.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Registers a named external warp. Fails on duplicate names.
pub fn register_warp_plugin(name: &str, f: WarpFn) -> Result<()> {
    let mut reg = registry().write().expect("warp registry poisoned");
    if reg.contains_key(name) {
        return Err(Error::Plugin {
            name: name.to_string(),
            reason: "already registered".into(),
        });
    }
    reg.insert(name.to_string(), f);
    Ok(())
}

/// Looks up a registered warp by name.
pub fn warp_plugin(name: &str) -> Option<WarpFn> {
    registry().read().expect("warp registry poisoned").get(name).cloned()
}

/// Runs a registered warp and checks its output contract.
pub fn run_warp_plugin(
    name: &str,
    r: &Mesh,
    g: &Mesh,
    r_lmks: &LandmarkSet,
    g_lmks: &LandmarkSet,
) -> Result<Mesh> {
    let f = warp_plugin(name).ok_or_else(|| Error::Plugin {
        name: name.to_string(),
        reason: "not registered".into(),
    })?;
    let out = f(r, g, r_lmks, g_lmks)?;
    if out.len() != r.len() {
        return Err(Error::Plugin {
            name: name.to_string(),
            reason: format!(
                "returned {} vertices, expected {}",
                out.len(),
                r.len()
            ),
        });
    }
    Ok(out)
}
