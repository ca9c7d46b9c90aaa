//! Mesh cropping and rigid registration.
//!
//! Rigid landmark-based registration (RLR) fits a least-squares similarity
//! (or rigid) transform from sparse matched landmarks in closed form via SVD.
//! ICP refines an initial transform by alternating nearest-neighbor
//! correspondence with the same closed-form update.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{LandmarkSet, Mesh};
use crate::spatial::SpatialIndex;

/// Scale, rotation and translation applied as `s * Rot * v + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl SimilarityTransform {
    /// Validates orthonormality (`RotᵀRot = I` to 1e-9), positive
    /// determinant and positive scale.
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Degenerate(format!("scale must be positive, got {scale}")));
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if dev >= 1e-9 {
            return Err(Error::Degenerate(format!(
                "rotation is not orthonormal (max deviation {dev:.2e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::Degenerate("rotation has non-positive determinant".into()));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Degenerate("non-finite translation".into()));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// The transform mapping outputs back onto inputs.
    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        let s_inv = 1.0 / self.scale;
        Self {
            scale: s_inv,
            rotation: rot_inv,
            translation: -s_inv * (rot_inv * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }
}

/// ICP iteration controls.
#[derive(Debug, Clone)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Relative RMS improvement below which iteration stops.
    pub rel_tolerance: f64,
    /// Uniformly subsample the source to at most this many points.
    pub subsample: Option<usize>,
    pub with_scale: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rel_tolerance: 1e-6,
            subsample: None,
            with_scale: true,
        }
    }
}

impl IcpParams {
    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("icp max_iterations must be >= 1".into()));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::Config("icp rel_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Keeps the vertices within `radius` of `center`; faces survive iff all
/// three of their vertices do. Returns the cropped mesh and the old→new
/// vertex index map.
pub fn crop_mesh(
    g: &Mesh,
    center: &Point3<f64>,
    radius: f64,
) -> Result<(Mesh, Vec<Option<u32>>)> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("crop radius must be > 0, got {radius}")));
    }
    if !center.coords.iter().all(|c| c.is_finite()) {
        return Err(Error::Config("crop center must be finite".into()));
    }
    let r2 = radius * radius;
    let mut map = vec![None; g.len()];
    let mut vertices = Vec::new();
    for (i, v) in g.vertices().iter().enumerate() {
        if (v - center).norm_squared() <= r2 {
            map[i] = Some(vertices.len() as u32);
            vertices.push(*v);
        }
    }
    if vertices.is_empty() {
        return Err(Error::Degenerate(format!(
            "crop at radius {radius} removed every vertex"
        )));
    }
    let faces = g.faces().map(|faces| {
        faces
            .iter()
            .filter_map(|f| {
                match (map[f[0] as usize], map[f[1] as usize], map[f[2] as usize]) {
                    (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                    _ => None,
                }
            })
            .collect::<Vec<_>>()
    });
    let faces = faces.filter(|f| !f.is_empty());
    let mesh = Mesh::new(vertices, faces, g.label())?;
    Ok((mesh, map))
}

/// Least-squares similarity fit from matched point pairs (Umeyama).
fn fit_similarity(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s.coords - mu_s;
        let dc = d.coords - mu_d;
        cov += dc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    // collinear sources leave the rotation underdetermined
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(Error::Degenerate(
            "source points are (near-)collinear; rotation underdetermined".into(),
        ));
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * v_t;
    let scale = if with_scale {
        let trace_ds = sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)];
        if var_s <= 0.0 {
            return Err(Error::Degenerate("source points coincide".into()));
        }
        trace_ds / var_s
    } else {
        1.0
    };
    let t = mu_d - scale * (rot * mu_s);
    SimilarityTransform::new(scale, rot, t)
}

/// Rigid landmark-based registration: the similarity (or rigid, when
/// `with_scale` is false) transform minimizing the squared landmark
/// discrepancy, with landmarks matched by id.
pub fn rlr(
    src_lmks: &LandmarkSet,
    dst_lmks: &LandmarkSet,
    with_scale: bool,
) -> Result<SimilarityTransform> {
    let pairs = src_lmks.pair_by_id(dst_lmks)?;
    let (src, dst): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    fit_similarity(&src, &dst, with_scale)
}

/// Maps every vertex through `t`; faces are unchanged.
pub fn apply_transform(m: &Mesh, t: &SimilarityTransform) -> Mesh {
    let vertices = m.vertices().iter().map(|v| t.apply_point(v)).collect();
    Mesh::new(vertices, m.faces().map(|f| f.to_vec()), m.label())
        .expect("transforming a valid mesh keeps it valid")
}

/// Maps landmark points through `t`, keeping ids and indices.
pub fn apply_transform_landmarks(l: &LandmarkSet, t: &SimilarityTransform) -> LandmarkSet {
    let points = l.points().iter().map(|p| t.apply_point(p)).collect();
    LandmarkSet::new(
        points,
        l.ids().to_vec(),
        l.on_mesh_indices().map(|i| i.to_vec()),
    )
    .expect("transforming a valid landmark set keeps it valid")
}

/// Transform plus the RMS after each correspondence update.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: SimilarityTransform,
    pub rms_history: Vec<f64>,
}

/// Refines `init` by iterating nearest-neighbor correspondence into `g`
/// with a closed-form similarity update, until the relative RMS improvement
/// drops below `params.rel_tolerance` or `params.max_iterations` is hit.
pub fn icp(r: &Mesh, g: &Mesh, init: &SimilarityTransform, params: &IcpParams) -> Result<IcpResult> {
    params.validate()?;
    let index = SpatialIndex::build(g)?;

    let src: Vec<Point3<f64>> = match params.subsample {
        Some(k) if k > 0 && k < r.len() => {
            let step = r.len() as f64 / k as f64;
            (0..k)
                .map(|i| r.vertices()[(i as f64 * step) as usize])
                .collect()
        }
        _ => r.vertices().to_vec(),
    };

    let mut transform = init.clone();
    let mut rms_history: Vec<f64> = Vec::new();
    for _ in 0..params.max_iterations {
        let mut matched = Vec::with_capacity(src.len());
        let mut sum_sq = 0.0;
        let mut distinct = std::collections::HashSet::new();
        for p in &src {
            let q = transform.apply_point(p);
            let (j, d) = index.nearest(&q);
            matched.push(g.vertices()[j]);
            distinct.insert(j);
            sum_sq += d * d;
        }
        if distinct.len() < 3 {
            return Err(Error::Degenerate(format!(
                "icp correspondences collapsed to {} distinct target points",
                distinct.len()
            )));
        }
        let rms = (sum_sq / src.len() as f64).sqrt();
        let improved = match rms_history.last() {
            Some(&prev) => (prev - rms) / prev.max(f64::MIN_POSITIVE) >= params.rel_tolerance,
            None => true,
        };
        rms_history.push(rms);
        if !improved {
            break;
        }
        transform = fit_similarity(&src, &matched, params.with_scale)?;
    }
    Ok(IcpResult {
        transform,
        rms_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    fn random_transform(rng: &mut impl Rng, with_scale: bool) -> SimilarityTransform {
        let scale = if with_scale {
            rng.gen_range(0.5..2.0)
        } else {
            1.0
        };
        SimilarityTransform::new(
            scale,
            random_rotation(rng),
            Vector3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
            ),
        )
        .unwrap()
    }

    fn random_landmarks(rng: &mut impl Rng, l: usize) -> LandmarkSet {
        let points = (0..l)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect();
        LandmarkSet::new(points, (0..l as u32).collect(), None).unwrap()
    }

    fn transform_landmarks(l: &LandmarkSet, t: &SimilarityTransform) -> LandmarkSet {
        apply_transform_landmarks(l, t)
    }

    #[test]
    fn rlr_identity_on_equal_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_landmarks(&mut rng, 5);
        let t = rlr(&l, &l, true).unwrap();
        assert_abs_diff_eq!(t.scale(), 1.0, epsilon = 1e-9);
        assert!((t.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(t.translation().norm() < 1e-9);
    }

    #[test]
    fn rlr_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let src = random_landmarks(&mut rng, 6);
            let truth = random_transform(&mut rng, true);
            let dst = transform_landmarks(&src, &truth);
            let got = rlr(&src, &dst, true).unwrap();
            assert_abs_diff_eq!(got.scale(), truth.scale(), epsilon = 1e-8);
            assert!((got.rotation() - truth.rotation()).abs().max() < 1e-8);
            assert!((got.translation() - truth.translation()).norm() < 1e-6);
        }
    }

    #[test]
    fn rlr_rigid_only_when_scale_disabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_landmarks(&mut rng, 5);
        let truth = random_transform(&mut rng, true); // has scale != 1
        let dst = transform_landmarks(&src, &truth);
        let got = rlr(&src, &dst, false).unwrap();
        assert_eq!(got.scale(), 1.0);
    }

    #[test]
    fn rlr_beats_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_landmarks(&mut rng, 5);
        let dst = random_landmarks(&mut rng, 5);
        let fit = rlr(&src, &dst, true).unwrap();
        let residual = |t: &SimilarityTransform| -> f64 {
            src.points()
                .iter()
                .zip(dst.points())
                .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
                .sum()
        };
        let best = residual(&fit);
        for _ in 0..1000 {
            let t = random_transform(&mut rng, true);
            assert!(residual(&t) >= best - 1e-9);
        }
    }

    #[test]
    fn rlr_rejects_collinear_sources() {
        let src = LandmarkSet::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![1, 2, 3],
            None,
        )
        .unwrap();
        assert!(rlr(&src, &src, true).is_err());
    }

    #[test]
    fn rlr_rejects_id_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_landmarks(&mut rng, 4);
        let points = src.points().to_vec();
        let dst = LandmarkSet::new(points, vec![10, 11, 12, 13], None).unwrap();
        assert!(rlr(&src, &dst, true).is_err());
    }

    #[test]
    fn apply_transform_scales_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let verts: Vec<Point3<f64>> = (0..20)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let m = Mesh::new(verts, None, "t").unwrap();
        let t = random_transform(&mut rng, true);
        let mapped = apply_transform(&m, &t);
        for i in 0..m.len() {
            for j in (i + 1)..m.len() {
                let d0 = (m.vertices()[i] - m.vertices()[j]).norm();
                let d1 = (mapped.vertices()[i] - mapped.vertices()[j]).norm();
                assert_abs_diff_eq!(d1, t.scale() * d0, epsilon = 1e-9 * (1.0 + d1));
            }
        }
    }

    #[test]
    fn transform_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_transform(&mut rng, true);
        let inv = t.inverse();
        let p = Point3::new(3.0, -2.0, 1.5);
        let back = inv.apply_point(&t.apply_point(&p));
        assert!((back - p).norm() < 1e-9);

        let composed = t.compose(&inv);
        let q = composed.apply_point(&p);
        assert!((q - p).norm() < 1e-9);
    }

    fn grid_mesh() -> Mesh {
        let mut verts = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let x = i as f64;
                let y = j as f64;
                verts.push(Point3::new(x, y, (0.3 * x).sin() + (0.4 * y).cos()));
            }
        }
        Mesh::new(verts, None, "grid").unwrap()
    }

    #[test]
    fn icp_identity_on_equal_meshes() {
        let m = grid_mesh();
        let res = icp(&m, &m, &SimilarityTransform::identity(), &IcpParams::default()).unwrap();
        assert!(res.rms_history[0] < 1e-12);
        assert!((res.transform.rotation() - Matrix3::identity()).abs().max() < 1e-8);
        assert!(res.transform.translation().norm() < 1e-8);
        assert!(res.rms_history.len() <= 2);
    }

    #[test]
    fn icp_recovers_small_perturbation() {
        let g = grid_mesh();
        // 5 degree rotation, 0.3 unit translation on an 11x11 grid
        let angle = 5.0f64.to_radians();
        let perturb = SimilarityTransform::new(
            1.0,
            nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
            Vector3::new(0.3, -0.2, 0.1),
        )
        .unwrap();
        let r = apply_transform(&g, &perturb);
        let res = icp(&r, &g, &SimilarityTransform::identity(), &IcpParams::default()).unwrap();
        let final_rms = *res.rms_history.last().unwrap();
        assert!(final_rms < 1e-6, "final rms {final_rms}");
        // recovered transform is the inverse of the perturbation
        let inv = perturb.inverse();
        assert!((res.transform.rotation() - inv.rotation()).abs().max() < 1e-6);
    }

    #[test]
    fn icp_rms_non_increasing() {
        let g = grid_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let perturb = SimilarityTransform::new(
            1.0,
            nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.2).into_inner(),
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
        )
        .unwrap();
        let r = apply_transform(&g, &perturb);
        let res = icp(&r, &g, &SimilarityTransform::identity(), &IcpParams::default()).unwrap();
        for w in res.rms_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "rms increased: {:?}", res.rms_history);
        }
        assert!(res.rms_history.last().unwrap() <= &res.rms_history[0]);
    }

    #[test]
    fn crop_keeps_brute_force_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let verts: Vec<Point3<f64>> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        let m = Mesh::new(verts.clone(), None, "t").unwrap();
        let center = Point3::new(1.0, -2.0, 0.5);
        let radius = 6.0;
        let (cropped, map) = crop_mesh(&m, &center, radius).unwrap();
        let expect: Vec<Point3<f64>> = verts
            .iter()
            .copied()
            .filter(|v| (v - center).norm() <= radius)
            .collect();
        assert_eq!(cropped.vertices(), expect.as_slice());
        // map is injective
        let kept: Vec<u32> = map.iter().flatten().copied().collect();
        let mut sorted = kept.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(kept.len(), sorted.len());
    }

    #[test]
    fn crop_radius_exceeding_extent_is_identity() {
        let m = grid_mesh();
        let (cropped, map) = crop_mesh(&m, &Point3::origin(), 1e6).unwrap();
        assert_eq!(cropped.vertices(), m.vertices());
        for (i, entry) in map.iter().enumerate() {
            assert_eq!(*entry, Some(i as u32));
        }
    }

    #[test]
    fn crop_is_idempotent() {
        let m = grid_mesh();
        let center = Point3::new(5.0, 5.0, 0.0);
        let (once, _) = crop_mesh(&m, &center, 4.0).unwrap();
        let (twice, _) = crop_mesh(&once, &center, 4.0).unwrap();
        assert_eq!(once.vertices(), twice.vertices());
    }

    #[test]
    fn crop_too_small_errors() {
        let m = grid_mesh();
        assert!(crop_mesh(&m, &Point3::new(1e4, 0.0, 0.0), 1.0).is_err());
    }
}
