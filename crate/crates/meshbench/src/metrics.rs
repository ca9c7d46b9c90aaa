//! Per-vertex distance computation (P2P, P2Tri) and the
//! enforcing-topology-consistency (ETC) correction.
//!
//! ETC solves, independently per axis, a regularized quadratic program whose
//! system matrix is tridiagonal-plus-diagonal, so one O(N) Cholesky
//! factorization per axis suffices.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{LandmarkSet, Mesh, PerVertexError};
use crate::spatial::SpatialIndex;

/// Lower bound on ETC weights so the per-axis system stays strictly
/// positive definite even where the raw weight formula yields zero.
pub const W_FLOOR: f64 = 1e-6;

/// Landmark ids treated as the outer eye corners for the inter-ocular
/// distance, when present.
pub const OUTER_EYE_IDS: (u32, u32) = (19, 28);

/// Point-to-point distances `e_i = ||r_i − ĝ_i||`.
pub fn p2p(r: &Mesh, g_hat: &[Point3<f64>]) -> Result<PerVertexError> {
    if r.len() != g_hat.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vertices vs {} matched points",
            r.len(),
            g_hat.len()
        )));
    }
    let values = r
        .vertices()
        .iter()
        .zip(g_hat)
        .map(|(a, b)| (a - b).norm())
        .collect();
    PerVertexError::new(values)
}

fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

/// Exact Euclidean distance from `p` to triangle `abc` by region
/// decomposition; degenerate (collinear or duplicate) triangles fall back to
/// edge distances.
pub fn point_triangle_distance(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> f64 {
    let e0 = b - a;
    let e1 = c - a;
    let v0 = a - p;
    let a00 = e0.norm_squared();
    let a01 = e0.dot(&e1);
    let a11 = e1.norm_squared();
    let b0 = v0.dot(&e0);
    let b1 = v0.dot(&e1);
    let det = a00 * a11 - a01 * a01;
    if det <= 1e-14 * a00.max(a11).powi(2) {
        return point_segment_distance(p, a, b)
            .min(point_segment_distance(p, a, c))
            .min(point_segment_distance(p, b, c));
    }

    let clamp01 = |x: f64| x.clamp(0.0, 1.0);
    let mut s = a01 * b1 - a11 * b0;
    let mut t = a01 * b0 - a00 * b1;
    if s + t <= det {
        if s < 0.0 {
            if t < 0.0 {
                if b0 < 0.0 {
                    t = 0.0;
                    s = clamp01(-b0 / a00);
                } else {
                    s = 0.0;
                    t = clamp01(-b1 / a11);
                }
            } else {
                s = 0.0;
                t = clamp01(-b1 / a11);
            }
        } else if t < 0.0 {
            t = 0.0;
            s = clamp01(-b0 / a00);
        } else {
            s /= det;
            t /= det;
        }
    } else if s < 0.0 {
        let tmp0 = a01 + b0;
        let tmp1 = a11 + b1;
        if tmp1 > tmp0 {
            s = clamp01((tmp1 - tmp0) / (a00 - 2.0 * a01 + a11));
            t = 1.0 - s;
        } else {
            s = 0.0;
            t = clamp01(-b1 / a11);
        }
    } else if t < 0.0 {
        let tmp0 = a01 + b1;
        let tmp1 = a00 + b0;
        if tmp1 > tmp0 {
            t = clamp01((tmp1 - tmp0) / (a00 - 2.0 * a01 + a11));
            s = 1.0 - t;
        } else {
            t = 0.0;
            s = clamp01(-b0 / a00);
        }
    } else {
        s = clamp01(((a11 + b1) - (a01 + b0)) / (a00 - 2.0 * a01 + a11));
        t = 1.0 - s;
    }
    (p - (a + s * e0 + t * e1)).norm()
}

/// Point-to-triangle distances: each vertex is measured against the
/// triangle spanned by its 3 nearest matched ground-truth points.
pub fn p2tri(r: &Mesh, g_hat: &[Point3<f64>]) -> Result<PerVertexError> {
    let mut distinct = g_hat.to_vec();
    distinct.sort_by(|p, q| {
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
    });
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 distinct matched points, got {}",
            distinct.len()
        )));
    }
    // index the distinct set: the matched multiset repeats duplicated
    // points, which would collapse the triangle onto an edge
    let index = SpatialIndex::from_points(distinct.clone())?;
    let values: Vec<f64> = r
        .vertices()
        .par_iter()
        .map(|p| {
            let nn = index.k_nearest(p, 3);
            let a = distinct[nn[0].0];
            let b = distinct[nn[1].0];
            let c = distinct[nn[2].0];
            point_triangle_distance(p, &a, &b, &c)
        })
        .collect();
    PerVertexError::new(values)
}

/// Landmark-proximity weights for the ETC regularizer.
#[derive(Debug, Clone)]
pub struct EtcWeights {
    /// Per-point weights, floored at [`W_FLOOR`].
    pub w: Vec<f64>,
    /// Inter-ocular normalizing distance (mm).
    pub d_iod: f64,
    /// Distance to the closest landmark, per point.
    pub h1: Vec<f64>,
    /// Mean distance to the landmarks, per point.
    pub h2: Vec<f64>,
}

/// Weights `w_i = (h1(ĝ_i) + h2(ĝ_i) − min_j h2(ĝ_j)) / (2 d_iod)`, with
/// `h1` the closest-landmark distance and `h2` the mean landmark distance.
/// `d_iod` is the outer-eye-corner distance when those ids are annotated,
/// otherwise the maximum pairwise landmark distance.
pub fn etc_weights(g_hat: &[Point3<f64>], g_lmks: &LandmarkSet) -> Result<EtcWeights> {
    if g_lmks.len() < 2 {
        return Err(Error::InvalidLandmarks(
            "ETC weights need at least 2 landmarks".into(),
        ));
    }
    let d_iod = match (
        g_lmks.point_by_id(OUTER_EYE_IDS.0),
        g_lmks.point_by_id(OUTER_EYE_IDS.1),
    ) {
        (Some(a), Some(b)) => (a - b).norm(),
        _ => {
            let pts = g_lmks.points();
            let mut max = 0.0f64;
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    max = max.max((pts[i] - pts[j]).norm());
                }
            }
            max
        }
    };
    if !(d_iod > 0.0) {
        return Err(Error::Degenerate("inter-ocular distance is zero".into()));
    }
    let l = g_lmks.len() as f64;
    let (h1, h2): (Vec<f64>, Vec<f64>) = g_hat
        .par_iter()
        .map(|p| {
            let mut min = f64::INFINITY;
            let mut sum = 0.0;
            for q in g_lmks.points() {
                let d = (p - q).norm();
                min = min.min(d);
                sum += d;
            }
            (min, sum / l)
        })
        .unzip();
    let h2_min = h2.iter().copied().fold(f64::INFINITY, f64::min);
    let w = h1
        .iter()
        .zip(&h2)
        .map(|(a, b)| ((a + b - h2_min) / (2.0 * d_iod)).max(W_FLOOR))
        .collect();
    Ok(EtcWeights { w, d_iod, h1, h2 })
}

/// The solved state of one axis of the ETC quadratic program.
#[derive(Debug, Clone)]
pub struct EtcAxisSystem {
    /// Sorted-order permutation: `permutation[k]` is the original row index
    /// of the k-th smallest axis coordinate of R.
    pub permutation: Vec<usize>,
    /// `ε = r̃ − g̃` in sorted order.
    pub epsilon: Vec<f64>,
    /// Solved correction `δg̃*` in sorted order.
    pub delta: Vec<f64>,
}

/// Per-vertex correction offsets, rows aligned with R.
#[derive(Debug, Clone)]
pub struct CorrectionField {
    pub delta: Vec<Vector3<f64>>,
    /// Per-axis systems (x, y, z) kept for inspection.
    pub axes: [EtcAxisSystem; 3],
}

impl CorrectionField {
    /// The same solution with the correction sign flipped.
    pub fn negated(&self) -> Self {
        Self {
            delta: self.delta.iter().map(|d| -d).collect(),
            axes: self.axes.clone(),
        }
    }
}

/// `y = DᵀD x` for the forward-difference matrix D.
fn dtd_mul(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = 0.0;
        if i > 0 {
            v += x[i] - x[i - 1];
        }
        if i + 1 < n {
            v += x[i] - x[i + 1];
        }
        y[i] = v;
    }
    y
}

/// Solves `(DᵀD + diag(w²)) x = rhs` by tridiagonal Cholesky (LLᵀ).
/// The off-diagonal of the system is the constant −1.
fn solve_tridiag(w_sq: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    // diagonal of Q: 1 + w² at the ends, 2 + w² inside. The substitution
    // recurrences are division-latency bound, so keep reciprocals instead.
    let mut l_inv = vec![0.0; n];
    let mut l_sub = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let q_ii = if i == 0 || i == n - 1 { 1.0 } else { 2.0 } + w_sq[i];
        let prev = if i > 0 { l_sub[i - 1] * l_sub[i - 1] } else { 0.0 };
        let pivot = q_ii - prev;
        if pivot <= 0.0 {
            return Err(Error::Numerical(format!(
                "Cholesky pivot {pivot:.3e} at row {i}"
            )));
        }
        let inv = 1.0 / pivot.sqrt();
        l_inv[i] = inv;
        if i + 1 < n {
            l_sub[i] = -inv;
        }
    }
    // forward substitution L y = rhs
    let mut y = vec![0.0; n];
    for i in 0..n {
        let prev = if i > 0 { l_sub[i - 1] * y[i - 1] } else { 0.0 };
        y[i] = (rhs[i] - prev) * l_inv[i];
    }
    // back substitution Lᵀ x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let next = if i + 1 < n { l_sub[i] * x[i + 1] } else { 0.0 };
        x[i] = (y[i] - next) * l_inv[i];
    }
    Ok(x)
}

fn solve_axis(
    r: &Mesh,
    g_hat: &[Point3<f64>],
    w: &EtcWeights,
    axis: usize,
) -> Result<EtcAxisSystem> {
    let n = r.len();
    // ascending sort of R's axis coordinate; index breaks exact ties.
    // packing (total-order bits, index) into one u128 gives the same order
    // as total_cmp with a branchless comparator
    let mut keyed: Vec<u128> = r
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let bits = v[axis].to_bits();
            let monotone = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
            ((monotone as u128) << 64) | i as u128
        })
        .collect();
    keyed.sort_unstable();
    let permutation: Vec<usize> = keyed.into_iter().map(|k| k as u64 as usize).collect();
    let mut epsilon = vec![0.0; n];
    let mut w_sq = vec![0.0; n];
    for (k, &i) in permutation.iter().enumerate() {
        epsilon[k] = r.vertices()[i][axis] - g_hat[i][axis];
        w_sq[k] = w.w[i] * w.w[i];
    }
    let rhs = dtd_mul(&epsilon);
    let delta = solve_tridiag(&w_sq, &rhs)?;

    // residual check: ‖Qδ − rhs‖ < 1e-8 ‖rhs‖
    let mut res_sq = 0.0;
    let mut rhs_sq = 0.0;
    for i in 0..n {
        let mut qd = w_sq[i] * delta[i];
        if i > 0 {
            qd += delta[i] - delta[i - 1];
        }
        if i + 1 < n {
            qd += delta[i] - delta[i + 1];
        }
        res_sq += (qd - rhs[i]) * (qd - rhs[i]);
        rhs_sq += rhs[i] * rhs[i];
    }
    let res = res_sq.sqrt();
    let rhs_norm = rhs_sq.sqrt();
    if res > 1e-8 * rhs_norm.max(f64::MIN_POSITIVE) && rhs_norm > 0.0 {
        return Err(Error::Numerical(format!(
            "axis {axis} solve residual {res:.3e} exceeds 1e-8 × {rhs_norm:.3e}"
        )));
    }
    Ok(EtcAxisSystem {
        permutation,
        epsilon,
        delta,
    })
}

/// Solves the per-axis correction systems and assembles the offsets in the
/// original vertex order. The three axis solves run in parallel.
pub fn etc_correction(
    r: &Mesh,
    g_hat: &[Point3<f64>],
    w: &EtcWeights,
) -> Result<CorrectionField> {
    if r.len() != g_hat.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vertices vs {} matched points",
            r.len(),
            g_hat.len()
        )));
    }
    if w.w.len() != r.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights for {} vertices",
            w.w.len(),
            r.len()
        )));
    }
    if r.len() < 2 {
        return Err(Error::InvalidMesh("ETC needs at least 2 vertices".into()));
    }
    let solved: Vec<Result<EtcAxisSystem>> = (0..3usize)
        .into_par_iter()
        .map(|axis| solve_axis(r, g_hat, w, axis))
        .collect();
    let mut axes = Vec::with_capacity(3);
    for s in solved {
        axes.push(s?);
    }
    let axes: [EtcAxisSystem; 3] = axes.try_into().expect("three axes");

    let mut delta = vec![Vector3::zeros(); r.len()];
    for (axis, sys) in axes.iter().enumerate() {
        for (k, &orig) in sys.permutation.iter().enumerate() {
            delta[orig][axis] = sys.delta[k];
        }
    }
    Ok(CorrectionField { delta, axes })
}

/// Corrected per-vertex error `ẽ_i = ||r_i − (ĝ_i + δĝ_i)||`.
pub fn corrected_error(
    r: &Mesh,
    g_hat: &[Point3<f64>],
    field: &CorrectionField,
) -> Result<PerVertexError> {
    if r.len() != g_hat.len() || field.delta.len() != r.len() {
        return Err(Error::LengthMismatch(format!(
            "inconsistent row counts: {} vertices, {} matched, {} offsets",
            r.len(),
            g_hat.len(),
            field.delta.len()
        )));
    }
    let values = r
        .vertices()
        .iter()
        .zip(g_hat.iter().zip(&field.delta))
        .map(|(ri, (gi, di))| (ri - (gi + di)).norm())
        .collect();
    PerVertexError::new(values)
}
