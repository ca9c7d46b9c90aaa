//! Estimator pipeline execution and the cached, parallel experiment runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correspondence::{build_index, chamfer_match, duplicate_stats};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{LandmarkSet, Mesh, PerVertexError, VertexMask};
use crate::metrics::{corrected_error, etc_correction, etc_weights, p2p, p2tri};
use crate::registration::{
    apply_transform, apply_transform_landmarks, crop_mesh, icp, rlr, IcpParams,
};
use crate::synth;
use crate::warp::{elr_warp, run_warp_plugin};

use super::config::{Experiment, MethodKey};
use super::metrics::{pearson, rate_of_inconsistency};
use super::spec::{
    CorrectionStage, DistanceStage, EstimatorSpec, RigidStage, WarpStage,
};

/// Landmark id of the nose tip in the 5-point reference convention; the
/// crop center.
pub const NOSE_TIP_ID: u32 = 13;

/// Output of one estimator on one subject pair.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub errors: PerVertexError,
    pub duplicate_rate: f64,
    /// Executed stage names, in order.
    pub stages: Vec<String>,
    pub stage_timings_ms: Vec<(String, f64)>,
    /// Instrumentation: which mesh fed the distance stage. Always
    /// "rigid-aligned" by construction; the warped mesh feeds only the
    /// correspondence stage.
    pub distance_input: &'static str,
}

fn subset_landmarks(l: &LandmarkSet, ids: &[u32]) -> Result<LandmarkSet> {
    let mut points = Vec::new();
    let mut kept_ids = Vec::new();
    let mut idx = Vec::new();
    for (k, id) in l.ids().iter().enumerate() {
        if ids.contains(id) {
            kept_ids.push(*id);
            points.push(l.points()[k]);
            if let Some(m) = l.on_mesh_indices() {
                idx.push(m[k]);
            }
        }
    }
    if kept_ids.len() < ids.len() {
        return Err(Error::InvalidLandmarks(format!(
            "requested ids {ids:?} not all present (have {:?})",
            l.ids()
        )));
    }
    let idx = l.on_mesh_indices().map(|_| idx);
    LandmarkSet::new(points, kept_ids, idx)
}

/// Runs one estimator pipeline in the fixed stage order
/// crop → rigid → warp → correspond → distance → correct.
///
/// The warped mesh (when a warp stage is configured) is used only to build
/// correspondences; distances are always measured from the rigid-aligned
/// reconstruction to the matched ground-truth points.
pub fn run_estimator(
    spec: &EstimatorSpec,
    r: &Mesh,
    g: &Mesh,
    r_lmks: &LandmarkSet,
    g_lmks: &LandmarkSet,
) -> Result<EstimatorRun> {
    spec.validate()?;
    let mut stages: Vec<String> = Vec::new();
    let mut timings: Vec<(String, f64)> = Vec::new();
    let record = |stages: &mut Vec<String>, timings: &mut Vec<(String, f64)>,
                      name: &str,
                      t0: Instant| {
        stages.push(name.to_string());
        timings.push((name.to_string(), t0.elapsed().as_secs_f64() * 1e3));
    };

    // landmark subsets for rigid alignment only; ETC keeps the full set so
    // the inter-ocular normalization still sees the outer eye corners
    let (align_r_lmks, align_g_lmks) = match &spec.options.rlr_landmark_ids {
        Some(ids) => (subset_landmarks(r_lmks, ids)?, subset_landmarks(g_lmks, ids)?),
        None => (r_lmks.clone(), g_lmks.clone()),
    };

    // crop
    let g_work: Mesh = if let Some(radius) = spec.options.crop_radius {
        let t0 = Instant::now();
        let center = g_lmks.point_by_id(NOSE_TIP_ID).ok_or_else(|| {
            Error::InvalidLandmarks(format!(
                "crop needs the nose tip landmark (id {NOSE_TIP_ID})"
            ))
        })?;
        let (cropped, _) = crop_mesh(g, &center, radius)?;
        record(&mut stages, &mut timings, "Crop", t0);
        cropped
    } else {
        g.clone()
    };

    // rigid
    let with_scale = spec.with_scale();
    let transform = match spec.rigid {
        RigidStage::Rlr => {
            let t0 = Instant::now();
            let t = rlr(&align_r_lmks, &align_g_lmks, with_scale)?;
            record(&mut stages, &mut timings, "RLR", t0);
            t
        }
        RigidStage::Icp => {
            let t0 = Instant::now();
            let init = rlr(&align_r_lmks, &align_g_lmks, with_scale)?;
            let params = spec
                .options
                .icp
                .map(|o| o.to_params(with_scale))
                .unwrap_or(IcpParams {
                    with_scale,
                    ..IcpParams::default()
                });
            let result = icp(r, &g_work, &init, &params)?;
            record(&mut stages, &mut timings, "ICP-with-RLR-init", t0);
            result.transform
        }
    };
    let aligned = apply_transform(r, &transform);
    let aligned_lmks = apply_transform_landmarks(r_lmks, &transform);

    // warp (correspondence source only)
    let corr_source: Mesh = match &spec.warp {
        WarpStage::None => aligned.clone(),
        WarpStage::Elr => {
            let t0 = Instant::now();
            let warped = elr_warp(&aligned, &aligned_lmks, g_lmks)?;
            record(&mut stages, &mut timings, "ELR", t0);
            warped
        }
        WarpStage::Plugin(p) => {
            let t0 = Instant::now();
            let warped = run_warp_plugin(p, &aligned, &g_work, &aligned_lmks, g_lmks)?;
            record(&mut stages, &mut timings, &format!("plugin:{p}"), t0);
            warped
        }
        WarpStage::ElrPlusPlugin(p) => {
            let t0 = Instant::now();
            let elr_out = elr_warp(&aligned, &aligned_lmks, g_lmks)?;
            record(&mut stages, &mut timings, "ELR", t0);
            let t0 = Instant::now();
            let warped = run_warp_plugin(p, &elr_out, &g_work, g_lmks, g_lmks)?;
            record(&mut stages, &mut timings, &format!("plugin:{p}"), t0);
            warped
        }
    };

    // correspond
    let t0 = Instant::now();
    let index = build_index(&g_work)?;
    let corr = chamfer_match(&corr_source, &index);
    let dup = duplicate_stats(&corr);
    record(&mut stages, &mut timings, "Chamfer", t0);

    // distance — from the rigid-aligned mesh, never the warped one
    let errors = match spec.distance {
        DistanceStage::P2p => {
            let t0 = Instant::now();
            let e = p2p(&aligned, &corr.matched_points)?;
            record(&mut stages, &mut timings, "P2P", t0);
            e
        }
        DistanceStage::P2tri => {
            let t0 = Instant::now();
            let e = p2tri(&aligned, &corr.matched_points)?;
            record(&mut stages, &mut timings, "P2Tri", t0);
            e
        }
    };

    // correct
    let errors = match spec.correction {
        CorrectionStage::None => errors,
        CorrectionStage::Etc => {
            let t0 = Instant::now();
            let w = etc_weights(&corr.matched_points, g_lmks)?;
            let mut field = etc_correction(&aligned, &corr.matched_points, &w)?;
            if spec.options.etc_negate.unwrap_or(false) {
                field = field.negated();
            }
            let e = corrected_error(&aligned, &corr.matched_points, &field)?;
            record(&mut stages, &mut timings, "ETC", t0);
            e
        }
    };

    Ok(EstimatorRun {
        errors,
        duplicate_rate: dup.duplicate_rate,
        stages,
        stage_timings_ms: timings,
        distance_input: "rigid-aligned",
    })
}

/// Cache sidecar metadata for one (method, estimator, subject) record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheSidecar {
    subject: String,
    method: String,
    estimator: String,
    n: usize,
    mean: f64,
    duplicate_rate: f64,
    stages: Vec<String>,
}

/// One completed work unit.
#[derive(Debug, Clone)]
pub struct SubjectResult {
    pub subject: String,
    pub method: String,
    pub estimator: String,
    /// Per-vertex errors, packed precision (what the cache stores).
    pub errors: Vec<f32>,
    /// Mean over the evaluation mask, accumulated from the packed values so
    /// it is exactly recomputable from the cache.
    pub mean: f64,
    pub duplicate_rate: f64,
    pub stages: Vec<String>,
    /// Per-stage wall time; empty when served from cache.
    pub stage_timings_ms: Vec<(String, f64)>,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EstimatorMetrics {
    pub roi: Option<f64>,
    pub pearson_r: Option<f64>,
    pub pearson_top_k: Option<f64>,
    /// (method, rank by estimated mean, rank by true mean, disagreement).
    pub ranking: Vec<(String, usize, usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub subjects: Vec<String>,
    /// Keyed (estimator, method-spec-string), subject order.
    pub results: BTreeMap<(String, String), Vec<SubjectResult>>,
    /// Per-method mean of per-subject true means (when ground truth with
    /// matching topology exists).
    pub true_means: BTreeMap<String, f64>,
    /// Per (estimator, method) mean of per-subject estimated means.
    pub est_means: BTreeMap<(String, String), f64>,
    pub metrics: BTreeMap<String, EstimatorMetrics>,
    /// Human-readable notes about skipped subjects.
    pub skipped: Vec<String>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

fn sorted_subject_stems(gdir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    let entries = std::fs::read_dir(gdir).map_err(|e| Error::Io {
        path: gdir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: gdir.to_path_buf(),
            source: e,
        })?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("txt") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Data(format!(
            "no subject meshes under {}",
            gdir.display()
        )));
    }
    Ok(stems)
}

fn file_digest(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Content-hash cache key: estimator spec + input file bytes + evaluation
/// mask. Any change to any of them yields a different key.
fn cache_key(
    spec: &EstimatorSpec,
    r_path: &Path,
    g_path: &Path,
    lmk_path: &Path,
    mask_name: &str,
    mask: &[usize],
    landmark_pairs: &[(u32, usize)],
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(b"record-v1\0");
    h.update(spec.canonical_json().as_bytes());
    h.update(b"\0");
    file_digest(&mut h, r_path)?;
    file_digest(&mut h, g_path)?;
    file_digest(&mut h, lmk_path)?;
    h.update(mask_name.as_bytes());
    h.update(b"\0");
    for &i in mask {
        h.update((i as u64).to_le_bytes());
    }
    for &(id, ix) in landmark_pairs {
        h.update(id.to_le_bytes());
        h.update((ix as u64).to_le_bytes());
    }
    Ok(format!("{:x}", h.finalize()))
}

fn masked_mean_f32(values: &[f32], mask: &[usize]) -> f64 {
    let sum: f64 = mask.iter().map(|&i| values[i] as f64).sum();
    sum / mask.len() as f64
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::Io {
        path: tmp.clone(),
        source: e,
    })?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn try_load_cache(
    cache_dir: &Path,
    key: &str,
    mask: &[usize],
) -> Option<(Vec<f32>, CacheSidecar)> {
    let sidecar_path = cache_dir.join(format!("{key}.json"));
    let bin_path = cache_dir.join(format!("{key}.bin"));
    let sidecar: CacheSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path).ok()?).ok()?;
    let bytes = std::fs::read(bin_path).ok()?;
    if bytes.len() != sidecar.n * 4 {
        return None; // corrupt record: recompute
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if mask.iter().any(|&i| i >= values.len()) {
        return None;
    }
    if masked_mean_f32(&values, mask) != sidecar.mean {
        return None; // mean must be recomputable from the stored values
    }
    Some((values, sidecar))
}

struct Unit<'a> {
    spec: &'a EstimatorSpec,
    method: &'a MethodKey,
    subject: String,
    r_path: PathBuf,
    g_path: PathBuf,
    lmk_path: PathBuf,
    mask: &'a [usize],
    mask_name: &'a str,
    landmark_pairs: &'a [(u32, usize)],
    cache_dir: &'a Path,
}

fn run_unit(u: &Unit) -> Result<SubjectResult> {
    let key = cache_key(
        u.spec,
        &u.r_path,
        &u.g_path,
        &u.lmk_path,
        u.mask_name,
        u.mask,
        u.landmark_pairs,
    )?;
    if let Some((values, sidecar)) = try_load_cache(u.cache_dir, &key, u.mask) {
        return Ok(SubjectResult {
            subject: u.subject.clone(),
            method: u.method.spec_string(),
            estimator: u.spec.name.clone(),
            errors: values,
            mean: sidecar.mean,
            duplicate_rate: sidecar.duplicate_rate,
            stages: sidecar.stages,
            stage_timings_ms: Vec::new(),
            from_cache: true,
        });
    }

    let r = io::load_mesh(&u.r_path)?;
    let g = io::load_mesh(&u.g_path)?;
    let g_lmks = io::load_landmarks(&u.lmk_path)?;
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut indices = Vec::new();
    for &(id, ix) in u.landmark_pairs {
        if ix >= r.len() {
            return Err(Error::Data(format!(
                "landmark vertex index {ix} out of range for {} (N={})",
                u.r_path.display(),
                r.len()
            )));
        }
        ids.push(id);
        indices.push(ix);
        points.push(r.vertices()[ix]);
    }
    let r_lmks = LandmarkSet::new(points, ids, Some(indices))?;

    let run = run_estimator(u.spec, &r, &g, &r_lmks, &g_lmks).map_err(|e| {
        Error::Data(format!(
            "estimator {} on {} / {}: {e}",
            u.spec.name,
            u.method.spec_string(),
            u.subject
        ))
    })?;
    let values: Vec<f32> = run.errors.values().iter().map(|&v| v as f32).collect();
    if u.mask.iter().any(|&i| i >= values.len()) {
        return Err(Error::Config(format!(
            "mask {:?} exceeds mesh size {}",
            u.mask_name,
            values.len()
        )));
    }
    let mean = masked_mean_f32(&values, u.mask);
    let sidecar = CacheSidecar {
        subject: u.subject.clone(),
        method: u.method.spec_string(),
        estimator: u.spec.name.clone(),
        n: values.len(),
        mean,
        duplicate_rate: run.duplicate_rate,
        stages: run.stages.clone(),
    };
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(&u.cache_dir.join(format!("{key}.bin")), &bytes)?;
    atomic_write(
        &u.cache_dir.join(format!("{key}.json")),
        serde_json::to_string_pretty(&sidecar)
            .expect("sidecar serializes")
            .as_bytes(),
    )?;

    Ok(SubjectResult {
        subject: u.subject.clone(),
        method: u.method.spec_string(),
        estimator: u.spec.name.clone(),
        errors: values,
        mean,
        duplicate_rate: run.duplicate_rate,
        stages: run.stages,
        stage_timings_ms: run.stage_timings_ms,
        from_cache: false,
    })
}

/// Runs the full (method × estimator × subject) grid with a bounded worker
/// pool. Results are cached by content hash; aggregation happens in
/// deterministic key order, so the outcome is independent of
/// `num_processes` and of scheduling.
pub fn run_experiment(
    experiment: &Experiment,
    data_dir: &Path,
    num_processes: usize,
) -> Result<ExperimentResult> {
    if num_processes == 0 {
        return Err(Error::Config("num_processes must be >= 1".into()));
    }
    let dataset_dir = data_dir.join(&experiment.config.dataset);
    let gdir = dataset_dir.join("Gmeshes");
    let tdir = dataset_dir.join("Tmeshes");
    let subjects = sorted_subject_stems(&gdir)?;
    let cache_dir = experiment.out_dir.join("cache");
    std::fs::create_dir_all(&cache_dir).map_err(|e| Error::Io {
        path: cache_dir.clone(),
        source: e,
    })?;

    let mask_name = experiment.config.mask.as_str();
    let pairs_by_topology: BTreeMap<String, Vec<(u32, usize)>> = experiment
        .mms
        .iter()
        .map(|(k, v)| (k.clone(), v.landmark_pairs()))
        .collect();
    let mut units: Vec<Unit> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    for spec in &experiment.estimators {
        for method in &experiment.methods {
            let mms = &experiment.mms[&method.topology];
            let mask = mms.masks[mask_name].as_slice();
            let landmark_pairs = pairs_by_topology[&method.topology].as_slice();
            for subject in &subjects {
                let r_path = method.dir(&dataset_dir).join(format!("{subject}.txt"));
                let g_path = gdir.join(format!("{subject}.txt"));
                let lmk_path = gdir.join(format!("{subject}.lmks"));
                if !r_path.is_file() {
                    skipped.push(format!(
                        "{} / {subject}: missing {}",
                        method.spec_string(),
                        r_path.display()
                    ));
                    continue;
                }
                if !lmk_path.is_file() {
                    skipped.push(format!(
                        "{subject}: missing landmarks {}",
                        lmk_path.display()
                    ));
                    continue;
                }
                units.push(Unit {
                    spec,
                    method,
                    subject: subject.clone(),
                    r_path,
                    g_path,
                    lmk_path,
                    mask,
                    mask_name,
                    landmark_pairs,
                    cache_dir: &cache_dir,
                });
            }
        }
    }
    skipped.sort();
    skipped.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(num_processes)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<SubjectResult>> =
        pool.install(|| units.par_iter().map(run_unit).collect());

    let mut results: BTreeMap<(String, String), Vec<SubjectResult>> = BTreeMap::new();
    let mut cache_hits = 0;
    let mut cache_misses = 0;
    for outcome in outcomes {
        let r = outcome?;
        if r.from_cache {
            cache_hits += 1;
        } else {
            cache_misses += 1;
        }
        results
            .entry((r.estimator.clone(), r.method.clone()))
            .or_default()
            .push(r);
    }
    for v in results.values_mut() {
        v.sort_by(|a, b| a.subject.cmp(&b.subject));
    }

    // true per-method means from template-topology ground truth, when present
    let mut true_means: BTreeMap<String, f64> = BTreeMap::new();
    for method in &experiment.methods {
        let mms = &experiment.mms[&method.topology];
        let mask = &mms.masks[mask_name];
        let mut subject_means = Vec::new();
        for subject in &subjects {
            let r_path = method.dir(&dataset_dir).join(format!("{subject}.txt"));
            let t_path = tdir.join(format!("{subject}.txt"));
            if !r_path.is_file() || !t_path.is_file() {
                continue;
            }
            let r = io::load_mesh(&r_path)?;
            let g_true = io::load_mesh(&t_path)?;
            if r.len() != g_true.len() {
                continue;
            }
            let e = synth::true_error(&r, &g_true)?;
            let vm = VertexMask::new(mask.clone(), e.len())?;
            let sum: f64 = vm.indices().iter().map(|&i| e.values()[i]).sum();
            subject_means.push(sum / vm.len() as f64);
        }
        if !subject_means.is_empty() {
            true_means.insert(
                method.spec_string(),
                subject_means.iter().sum::<f64>() / subject_means.len() as f64,
            );
        }
    }

    let mut est_means: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (key, subject_results) in &results {
        if subject_results.is_empty() {
            continue;
        }
        let m = subject_results.iter().map(|r| r.mean).sum::<f64>()
            / subject_results.len() as f64;
        est_means.insert(key.clone(), m);
    }

    let metrics = compute_metrics(experiment, &true_means, &est_means);

    Ok(ExperimentResult {
        experiment: experiment.clone(),
        subjects,
        results,
        true_means,
        est_means,
        metrics,
        skipped,
        cache_hits,
        cache_misses,
    })
}

fn rank_order(means: &[(String, f64)]) -> Vec<(String, usize)> {
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].1.total_cmp(&means[b].1).then(a.cmp(&b)));
    let mut ranks = vec![0usize; means.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }
    means
        .iter()
        .zip(ranks)
        .map(|((name, _), r)| (name.clone(), r))
        .collect()
}

fn compute_metrics(
    experiment: &Experiment,
    true_means: &BTreeMap<String, f64>,
    est_means: &BTreeMap<(String, String), f64>,
) -> BTreeMap<String, EstimatorMetrics> {
    let mut out = BTreeMap::new();
    for spec in &experiment.estimators {
        let mut t = Vec::new();
        let mut e = Vec::new();
        let mut names = Vec::new();
        for method in &experiment.methods {
            let ms = method.spec_string();
            let (Some(&tv), Some(&ev)) = (
                true_means.get(&ms),
                est_means.get(&(spec.name.clone(), ms.clone())),
            ) else {
                continue;
            };
            t.push(tv);
            e.push(ev);
            names.push(ms);
        }
        let mut m = EstimatorMetrics::default();
        if t.len() >= 2 {
            m.roi = rate_of_inconsistency(&t, &e).ok();
            m.pearson_r = pearson(&t, &e, None).ok();
            if t.len() > 5 {
                m.pearson_top_k = pearson(&t, &e, Some(5)).ok();
            }
            let est_ranks = rank_order(
                &names
                    .iter()
                    .cloned()
                    .zip(e.iter().copied())
                    .collect::<Vec<_>>(),
            );
            let true_ranks = rank_order(
                &names
                    .iter()
                    .cloned()
                    .zip(t.iter().copied())
                    .collect::<Vec<_>>(),
            );
            m.ranking = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let er = est_ranks[i].1;
                    let tr = true_ranks[i].1;
                    (n.clone(), er, tr, er != tr)
                })
                .collect();
        }
        out.insert(spec.name.clone(), m);
    }
    out
}
