//! Synthetic corpus generation.
//!
//! Subjects are built from a shared face-like template so the reconstruction
//! and its ground truth have identical topology, making the true per-vertex
//! error known exactly. A scanner-like ground truth with a different
//! topology is derived by barycentric re-meshing plus noise and dropout.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{LandmarkSet, Mesh, PerVertexError};

/// RMS magnitude (mm) of the identity deformation applied to the template
/// per subject.
const IDENTITY_AMPLITUDE_MM: f64 = 5.0;

/// Corpus generation controls.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub seed: u64,
    pub n_subjects: usize,
    /// RMS reconstruction deformation (mm); the true error scale.
    pub deform_amplitude: f64,
    /// Gaussian noise added to scan points (mm).
    pub noise_sigma: f64,
    /// Fraction of scan points removed.
    pub dropout_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 100,
            deform_amplitude: 2.0,
            noise_sigma: 0.2,
            dropout_rate: 0.4,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.deform_amplitude < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("amplitude and sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be >= 1".into()));
        }
        Ok(())
    }
}

/// Template mesh with its designated landmark vertices.
#[derive(Debug, Clone)]
pub struct Template {
    pub mesh: Mesh,
    /// Landmarks on template vertices, ids per the 5-point reference
    /// convention, with on-mesh indices populated.
    pub landmarks: LandmarkSet,
}

/// One generated subject.
#[derive(Debug, Clone)]
pub struct SyntheticSubject {
    /// Template-topology ground truth.
    pub g_true: Mesh,
    /// Simulated reconstruction, same topology as `g_true`.
    pub r: Mesh,
    /// Scanner-like re-meshed/noised ground truth, different topology.
    pub g_scan: Mesh,
    /// Landmark positions on `g_true`.
    pub g_lmks: LandmarkSet,
    /// Landmark vertex indices into `r` (template topology).
    pub r_lmk_indices: Vec<usize>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic per-(seed, subject, stream) RNG, so parallel generation is
/// order-independent.
fn stream_rng(seed: u64, subject_id: u64, stream: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ 0xa076_1d64_78bd_642f) ^ subject_id)
        ^ splitmix64(stream.wrapping_mul(0x2545_f491_4f6c_dd1d));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Generates a smooth face-like open surface on a `resolution × resolution`
/// grid (≈180×220 mm) with five designated landmark vertices: the outer and
/// inner eye corners and the nose tip.
pub fn generate_template(resolution: usize) -> Result<Template> {
    if resolution < 8 {
        return Err(Error::Config(format!(
            "template resolution must be >= 8, got {resolution}"
        )));
    }
    let res = resolution;
    let half_w = 90.0;
    let half_h = 110.0;
    let mut vertices = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let x = -half_w + 2.0 * half_w * i as f64 / (res - 1) as f64;
            let y = -half_h + 2.0 * half_h * j as f64 / (res - 1) as f64;
            // dome with a nose bump and shallow eye sockets; all features are
            // smooth Gaussians with gentle gradients so the surface stays
            // well conditioned for nearest-neighbour matching at grid scale
            let dome = 50.0 * (-(x / 95.0).powi(2) - (y / 115.0).powi(2)).exp();
            let nose = 14.0 * (-(x * x + y * y) / (2.0 * 18.0_f64.powi(2))).exp();
            let socket_l = -5.0
                * (-((x + 28.0).powi(2) + (y - 30.0).powi(2)) / (2.0 * 14.0_f64.powi(2))).exp();
            let socket_r = -5.0
                * (-((x - 28.0).powi(2) + (y - 30.0).powi(2)) / (2.0 * 14.0_f64.powi(2))).exp();
            vertices.push(Point3::new(x, y, dome + nose + socket_l + socket_r));
        }
    }
    let mut faces = Vec::with_capacity(2 * (res - 1) * (res - 1));
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let a = (j * res + i) as u32;
            let b = a + 1;
            let c = a + res as u32;
            let d = c + 1;
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    let mesh = Mesh::new(vertices, Some(faces), format!("template-{res}"))?;

    // nearest grid vertex to each nominal landmark position
    let nominal: [(u32, f64, f64); 5] = [
        (13, 0.0, 0.0),    // nose tip
        (19, -34.0, 28.0), // outer right eye corner
        (28, 34.0, 28.0),  // outer left eye corner
        (31, -15.0, 28.0), // inner right eye corner
        (37, 15.0, 28.0),  // inner left eye corner
    ];
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut indices = Vec::new();
    for (id, x, y) in nominal {
        let ix = mesh
            .vertices()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a.x - x).powi(2) + (a.y - y).powi(2);
                let db = (b.x - x).powi(2) + (b.y - y).powi(2);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap();
        ids.push(id);
        indices.push(ix);
        points.push(mesh.vertices()[ix]);
    }
    if indices.iter().collect::<HashSet<_>>().len() != indices.len() {
        return Err(Error::Degenerate(
            "template too coarse: landmark vertices collide".into(),
        ));
    }
    let landmarks = LandmarkSet::new(points, ids, Some(indices))?;
    Ok(Template { mesh, landmarks })
}

/// Sum of a few low-frequency trigonometric displacement fields, scaled so
/// the RMS vertex displacement equals `amplitude`.
fn smooth_deformation(mesh: &Mesh, rng: &mut impl Rng, amplitude: f64) -> Vec<Vector3<f64>> {
    let n = mesh.len();
    if amplitude <= 0.0 {
        return vec![Vector3::zeros(); n];
    }
    let n_waves = 6;
    let mut offsets = vec![Vector3::zeros(); n];
    for _ in 0..n_waves {
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let wavelength = rng.gen_range(230.0..420.0f64);
        let freq = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize()
            * (2.0 * std::f64::consts::PI / wavelength);
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        for (k, v) in mesh.vertices().iter().enumerate() {
            offsets[k] += dir * (freq.dot(&v.coords) + phase).sin();
        }
    }
    let rms = (offsets.iter().map(|o| o.norm_squared()).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let s = amplitude / rms;
        for o in &mut offsets {
            *o *= s;
        }
    }
    offsets
}

fn displaced(mesh: &Mesh, offsets: &[Vector3<f64>], label: &str) -> Mesh {
    let vertices = mesh
        .vertices()
        .iter()
        .zip(offsets)
        .map(|(v, o)| v + o)
        .collect();
    Mesh::new(vertices, mesh.faces().map(|f| f.to_vec()), label)
        .expect("smooth displacement keeps the mesh valid")
}

/// Output vertices are the barycenters of the input's faces.
pub fn barycentric_remesh(m: &Mesh) -> Result<Mesh> {
    let faces = m
        .faces()
        .ok_or_else(|| Error::InvalidMesh("barycentric re-mesh needs faces".into()))?;
    let vertices: Vec<Point3<f64>> = faces
        .iter()
        .map(|f| {
            let a = m.vertices()[f[0] as usize];
            let b = m.vertices()[f[1] as usize];
            let c = m.vertices()[f[2] as usize];
            Point3::from((a.coords + b.coords + c.coords) / 3.0)
        })
        .collect();
    Mesh::new(vertices, None, format!("{}-remeshed", m.label()))
}

/// Deterministic identity ground truth for `(seed, subject_id)`.
pub fn generate_ground_truth(template: &Template, seed: u64, subject_id: usize) -> Mesh {
    let mut rng = stream_rng(seed, subject_id as u64, 0);
    let offsets = smooth_deformation(&template.mesh, &mut rng, IDENTITY_AMPLITUDE_MM);
    displaced(&template.mesh, &offsets, &format!("id{subject_id:04}"))
}

/// Deterministic simulated reconstruction of `g_true` for a given method
/// stream; its distance to `g_true` is the known true error.
pub fn generate_reconstruction(
    g_true: &Mesh,
    amplitude: f64,
    seed: u64,
    subject_id: usize,
    method_stream: u64,
) -> Mesh {
    let mut rng = stream_rng(seed, subject_id as u64, 1 + method_stream);
    let offsets = smooth_deformation(g_true, &mut rng, amplitude);
    displaced(g_true, &offsets, g_true.label())
}

/// Scanner-like ground truth: barycentric re-mesh of `g_true` plus Gaussian
/// noise and random dropout.
pub fn generate_scan(g_true: &Mesh, params: &SynthParams, subject_id: usize) -> Result<Mesh> {
    let remeshed = barycentric_remesh(g_true)?;
    let mut rng = stream_rng(params.seed, subject_id as u64, u64::MAX);
    let mut vertices = Vec::with_capacity(remeshed.len());
    for v in remeshed.vertices() {
        if params.dropout_rate > 0.0 && rng.gen::<f64>() < params.dropout_rate {
            continue;
        }
        let noise = if params.noise_sigma > 0.0 {
            Vector3::new(
                gauss(&mut rng) * params.noise_sigma,
                gauss(&mut rng) * params.noise_sigma,
                gauss(&mut rng) * params.noise_sigma,
            )
        } else {
            Vector3::zeros()
        };
        vertices.push(v + noise);
    }
    Mesh::new(vertices, None, format!("{}-scan", g_true.label()))
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates one full subject for `(params.seed, subject_id)`.
pub fn generate_subject(
    template: &Template,
    params: &SynthParams,
    subject_id: usize,
) -> Result<SyntheticSubject> {
    params.validate()?;
    let g_true = generate_ground_truth(template, params.seed, subject_id);
    let r = generate_reconstruction(&g_true, params.deform_amplitude, params.seed, subject_id, 0);
    let g_scan = generate_scan(&g_true, params, subject_id)?;
    let indices = template
        .landmarks
        .on_mesh_indices()
        .expect("template landmarks are on-mesh")
        .to_vec();
    let g_lmks = LandmarkSet::new(
        indices.iter().map(|&i| g_true.vertices()[i]).collect(),
        template.landmarks.ids().to_vec(),
        None,
    )?;
    Ok(SyntheticSubject {
        g_true,
        r,
        g_scan,
        g_lmks,
        r_lmk_indices: indices,
    })
}

/// Per-vertex distance with identity correspondence; both meshes must share
/// vertex count and ordering.
pub fn true_error(r: &Mesh, g_true: &Mesh) -> Result<PerVertexError> {
    if r.len() != g_true.len() {
        return Err(Error::LengthMismatch(format!(
            "topology mismatch: {} vs {} vertices",
            r.len(),
            g_true.len()
        )));
    }
    let values = r
        .vertices()
        .iter()
        .zip(g_true.vertices())
        .map(|(a, b)| (a - b).norm())
        .collect();
    PerVertexError::new(values)
}

/// A simulated reconstruction method: a name and its error scale.
#[derive(Debug, Clone)]
pub struct SynthMethod {
    pub name: String,
    pub deform_amplitude: f64,
}

/// Corpus layout description returned by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub dataset: String,
    pub topology: String,
    pub crop: String,
    /// Method strings for the experiment config ("topology/crop/name").
    pub method_specs: Vec<String>,
    /// Path of the topology info JSON (landmark indices + masks).
    pub mms_info_path: std::path::PathBuf,
}

/// Writes a complete synthetic corpus in the benchmark directory layout:
///
/// ```text
/// DATA_DIR/<dataset>/Gmeshes/idNNNN.txt|.lmks      scan + landmarks
/// DATA_DIR/<dataset>/Tmeshes/idNNNN.txt            template-topology truth
/// DATA_DIR/<dataset>/Rmeshes/SYNTH/pN/<m>/idNNNN.txt   reconstructions
/// DATA_DIR/<dataset>/mms/SYNTH-pN.json             landmark indices + masks
/// ```
pub fn write_corpus(
    data_dir: &Path,
    dataset: &str,
    template: &Template,
    params: &SynthParams,
    methods: &[SynthMethod],
) -> Result<CorpusLayout> {
    params.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("need at least one method".into()));
    }
    let topology = "SYNTH".to_string();
    let crop = format!("p{}", template.mesh.len());
    let base = data_dir.join(dataset);
    let gdir = base.join("Gmeshes");
    let tdir = base.join("Tmeshes");
    std::fs::create_dir_all(&gdir).map_err(|e| Error::Io {
        path: gdir.clone(),
        source: e,
    })?;
    std::fs::create_dir_all(&tdir).map_err(|e| Error::Io {
        path: tdir.clone(),
        source: e,
    })?;
    for m in methods {
        let d = base.join("Rmeshes").join(&topology).join(&crop).join(&m.name);
        std::fs::create_dir_all(&d).map_err(|e| Error::Io {
            path: d.clone(),
            source: e,
        })?;
    }

    for subject in 1..=params.n_subjects {
        let g_true = generate_ground_truth(template, params.seed, subject);
        let g_scan = generate_scan(&g_true, params, subject)?;
        let indices = template.landmarks.on_mesh_indices().unwrap();
        let g_lmks = LandmarkSet::new(
            indices.iter().map(|&i| g_true.vertices()[i]).collect(),
            template.landmarks.ids().to_vec(),
            None,
        )?;
        let stem = format!("id{subject:04}");
        io::save_mesh(&g_scan, gdir.join(format!("{stem}.txt")))?;
        io::save_landmarks(&g_lmks, gdir.join(format!("{stem}.lmks")))?;
        io::save_mesh(&g_true, tdir.join(format!("{stem}.txt")))?;
        for (mi, m) in methods.iter().enumerate() {
            let r = generate_reconstruction(
                &g_true,
                m.deform_amplitude,
                params.seed,
                subject,
                mi as u64,
            );
            let path = base
                .join("Rmeshes")
                .join(&topology)
                .join(&crop)
                .join(&m.name)
                .join(format!("{stem}.txt"));
            io::save_mesh(&r, path)?;
        }
    }

    // topology info: landmark vertex indices plus full and inner-face masks
    let nose = template
        .landmarks
        .point_by_id(13)
        .unwrap_or_else(|| template.mesh.vertices()[0]);
    let inner: Vec<usize> = template
        .mesh
        .vertices()
        .iter()
        .enumerate()
        .filter(|(_, v)| (*v - nose).norm() <= 60.0)
        .map(|(i, _)| i)
        .collect();
    let mut landmarks = serde_json::Map::new();
    for (id, &ix) in template
        .landmarks
        .ids()
        .iter()
        .zip(template.landmarks.on_mesh_indices().unwrap())
    {
        landmarks.insert(id.to_string(), serde_json::json!(ix));
    }
    let mms = serde_json::json!({
        "landmarks": landmarks,
        "masks": {
            "full": (0..template.mesh.len()).collect::<Vec<_>>(),
            "inner": inner,
        }
    });
    let mms_dir = base.join("mms");
    std::fs::create_dir_all(&mms_dir).map_err(|e| Error::Io {
        path: mms_dir.clone(),
        source: e,
    })?;
    let mms_info_path = mms_dir.join(format!("{topology}-{crop}.json"));
    std::fs::write(
        &mms_info_path,
        serde_json::to_string_pretty(&mms).expect("mms info serializes"),
    )
    .map_err(|e| Error::Io {
        path: mms_info_path.clone(),
        source: e,
    })?;

    Ok(CorpusLayout {
        dataset: dataset.to_string(),
        topology: topology.clone(),
        crop: crop.clone(),
        method_specs: methods
            .iter()
            .map(|m| format!("{topology}/{crop}/{}", m.name))
            .collect(),
        mms_info_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_valid_with_distinct_landmarks() {
        let t = generate_template(8).unwrap();
        assert!(t.mesh.faces().is_some());
        let idx = t.landmarks.on_mesh_indices().unwrap();
        assert_eq!(idx.len(), 5);
        let set: HashSet<_> = idx.iter().collect();
        assert_eq!(set.len(), 5);
        for &i in idx {
            assert!(i < t.mesh.len());
        }
    }

    #[test]
    fn template_euler_characteristic_is_one() {
        for res in [8, 15] {
            let t = generate_template(res).unwrap();
            let faces = t.mesh.faces().unwrap();
            let mut edges = HashSet::new();
            for f in faces {
                for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let v = t.mesh.len() as i64;
            let e = edges.len() as i64;
            let f = faces.len() as i64;
            assert_eq!(v - e + f, 1, "res {res}: V={v} E={e} F={f}");
        }
    }

    #[test]
    fn fan_barycenters_by_hand() {
        let m = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(-3.0, 0.0, 0.0),
                Point3::new(0.0, -3.0, 0.0),
            ],
            Some(vec![[0, 1, 2], [0, 2, 3], [0, 3, 4]]),
            "t",
        )
        .unwrap();
        let r = barycentric_remesh(&m).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r.vertices()[0] - Point3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((r.vertices()[1] - Point3::new(-1.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((r.vertices()[2] - Point3::new(-1.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn remesh_point_count_and_surface_membership() {
        let t = generate_template(10).unwrap();
        let r = barycentric_remesh(&t.mesh).unwrap();
        let faces = t.mesh.faces().unwrap();
        assert_eq!(r.len(), faces.len());
        // each barycenter lies exactly on its source triangle
        for (k, f) in faces.iter().enumerate() {
            let a = t.mesh.vertices()[f[0] as usize];
            let b = t.mesh.vertices()[f[1] as usize];
            let c = t.mesh.vertices()[f[2] as usize];
            let d = crate::metrics::point_triangle_distance(&r.vertices()[k], &a, &b, &c);
            assert!(d < 1e-12, "barycenter {k} off surface by {d}");
        }
    }

    #[test]
    fn remesh_without_faces_errors() {
        let m = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            None,
            "t",
        )
        .unwrap();
        assert!(barycentric_remesh(&m).is_err());
    }

    #[test]
    fn zero_amplitude_means_zero_true_error() {
        let t = generate_template(10).unwrap();
        let params = SynthParams {
            deform_amplitude: 0.0,
            ..Default::default()
        };
        let s = generate_subject(&t, &params, 1).unwrap();
        assert_eq!(s.r.vertices(), s.g_true.vertices());
        let e = true_error(&s.r, &s.g_true).unwrap();
        assert_eq!(e.mean(), 0.0);
    }

    #[test]
    fn clean_scan_lies_on_barycenters() {
        let t = generate_template(10).unwrap();
        let params = SynthParams {
            noise_sigma: 0.0,
            dropout_rate: 0.0,
            ..Default::default()
        };
        let s = generate_subject(&t, &params, 3).unwrap();
        let remeshed = barycentric_remesh(&s.g_true).unwrap();
        assert_eq!(s.g_scan.vertices(), remeshed.vertices());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let t = generate_template(9).unwrap();
        let params = SynthParams::default();
        let a = generate_subject(&t, &params, 7).unwrap();
        let b = generate_subject(&t, &params, 7).unwrap();
        assert_eq!(a.g_true.vertices(), b.g_true.vertices());
        assert_eq!(a.r.vertices(), b.r.vertices());
        assert_eq!(a.g_scan.vertices(), b.g_scan.vertices());
        // different subject differs
        let c = generate_subject(&t, &params, 8).unwrap();
        assert_ne!(a.g_true.vertices(), c.g_true.vertices());
    }

    #[test]
    fn deformation_rms_matches_amplitude() {
        let t = generate_template(12).unwrap();
        let params = SynthParams {
            deform_amplitude: 2.5,
            ..Default::default()
        };
        let s = generate_subject(&t, &params, 2).unwrap();
        let e = true_error(&s.r, &s.g_true).unwrap();
        let rms =
            (e.values().iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        assert!((rms - 2.5).abs() < 1e-9, "rms {rms}");
    }

    #[test]
    fn true_error_equals_p2p_identity() {
        let t = generate_template(9).unwrap();
        let s = generate_subject(&t, &SynthParams::default(), 5).unwrap();
        let te = true_error(&s.r, &s.g_true).unwrap();
        let pe = crate::metrics::p2p(&s.r, s.g_true.vertices()).unwrap();
        assert_eq!(te.values(), pe.values());
    }

    #[test]
    fn true_error_rejects_topology_mismatch() {
        let t = generate_template(9).unwrap();
        let s = generate_subject(&t, &SynthParams::default(), 5).unwrap();
        assert!(true_error(&s.r, &s.g_scan).is_err());
    }

    #[test]
    fn constant_shift_true_error() {
        let t = generate_template(8).unwrap();
        let shifted = Mesh::new(
            t.mesh
                .vertices()
                .iter()
                .map(|v| v + Vector3::new(1.0, 0.0, 0.0))
                .collect(),
            None,
            "s",
        )
        .unwrap();
        let e = true_error(&shifted, &t.mesh).unwrap();
        for v in e.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
