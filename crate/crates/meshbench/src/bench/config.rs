//! Experiment configuration: which dataset, which reconstruction methods,
//! which estimators, and how to report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::spec::{parse_estimator, EstimatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReporterType {
    /// Aligned text + CSV of per-method per-estimator means with ranking
    /// markers.
    Table,
    /// CSV of (true, estimated) mean pairs per method per estimator.
    Scatter,
    /// Per-subject error meshes as binary PLY.
    Heatmap,
}

/// A reconstruction method reference: `topology/crop/name`, mirroring the
/// `Rmeshes/<topology>/<crop>/<method>` directory layout.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodKey {
    pub topology: String,
    pub crop: String,
    pub name: String,
}

impl MethodKey {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [t, c, n] if !t.is_empty() && !c.is_empty() && !n.is_empty() => Ok(Self {
                topology: t.to_string(),
                crop: c.to_string(),
                name: n.to_string(),
            }),
            _ => Err(Error::Config(format!(
                "method must be \"topology/crop/name\", got {s:?}"
            ))),
        }
    }

    pub fn spec_string(&self) -> String {
        format!("{}/{}/{}", self.topology, self.crop, self.name)
    }

    pub fn dir(&self, dataset_dir: &Path) -> PathBuf {
        dataset_dir
            .join("Rmeshes")
            .join(&self.topology)
            .join(&self.crop)
            .join(&self.name)
    }
}

/// An estimator entry in the experiment file: either an inline spec object
/// or `{"file": "path.json"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimatorRef {
    File {
        file: PathBuf,
    },
    Inline(EstimatorSpec),
}

/// Per-topology landmark vertex indices and named evaluation masks, loaded
/// from the JSON file referenced by `mms_info`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsInfo {
    /// Landmark id → vertex index in the topology's vertex order.
    pub landmarks: BTreeMap<String, usize>,
    /// Mask name → vertex index list.
    pub masks: BTreeMap<String, Vec<usize>>,
}

impl MmsInfo {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let info: MmsInfo = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if info.landmarks.len() < 3 {
            return Err(Error::Config(format!(
                "{}: needs at least 3 landmarks",
                path.display()
            )));
        }
        for k in info.landmarks.keys() {
            k.parse::<u32>().map_err(|_| {
                Error::Config(format!(
                    "{}: landmark key {k:?} is not a numeric id",
                    path.display()
                ))
            })?;
        }
        Ok(info)
    }

    pub fn landmark_pairs(&self) -> Vec<(u32, usize)> {
        let mut v: Vec<(u32, usize)> = self
            .landmarks
            .iter()
            .map(|(k, &ix)| (k.parse::<u32>().expect("validated"), ix))
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// "topology/crop/name" strings.
    pub methods: Vec<String>,
    pub estimators: Vec<EstimatorRef>,
    pub reporter_type: ReporterType,
    /// topology → path of the landmark/mask JSON for that topology.
    pub mms_info: BTreeMap<String, PathBuf>,
    /// Which named mask to evaluate over; defaults to "full".
    #[serde(default = "default_mask")]
    pub mask: String,
    pub out_dir: PathBuf,
}

fn default_mask() -> String {
    "full".to_string()
}

/// A fully validated experiment: paths resolved, estimator files expanded,
/// mms info loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodKey>,
    pub estimators: Vec<EstimatorSpec>,
    pub mms: BTreeMap<String, MmsInfo>,
    pub out_dir: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates an experiment file. Relative paths inside the file
/// (estimator refs, mms_info, out_dir) resolve against the file's directory.
pub fn load_experiment(config_path: &Path, data_dir: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::Io {
        path: config_path.to_path_buf(),
        source: e,
    })?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    validate_experiment(config, base, data_dir)
}

pub fn validate_experiment(
    config: ExperimentConfig,
    base: &Path,
    data_dir: &Path,
) -> Result<Experiment> {
    if config.methods.is_empty() {
        return Err(Error::Config("methods list is empty".into()));
    }
    if config.estimators.is_empty() {
        return Err(Error::Config("estimators list is empty".into()));
    }
    let dataset_dir = data_dir.join(&config.dataset);
    if !dataset_dir.join("Gmeshes").is_dir() {
        return Err(Error::Data(format!(
            "no Gmeshes directory under {}",
            dataset_dir.display()
        )));
    }

    let methods: Vec<MethodKey> = config
        .methods
        .iter()
        .map(|s| MethodKey::parse(s))
        .collect::<Result<_>>()?;
    for m in &methods {
        let d = m.dir(&dataset_dir);
        if !d.is_dir() {
            return Err(Error::Data(format!(
                "method directory missing: {}",
                d.display()
            )));
        }
    }

    let mut estimators = Vec::new();
    for e in &config.estimators {
        let spec = match e {
            EstimatorRef::Inline(s) => {
                s.validate()?;
                s.clone()
            }
            EstimatorRef::File { file } => {
                let path = resolve(base, file);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                parse_estimator(&text)?
            }
        };
        estimators.push(spec);
    }
    {
        let mut names: Vec<&str> = estimators.iter().map(|e| e.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != estimators.len() {
            return Err(Error::Config("duplicate estimator names".into()));
        }
    }

    let mut mms = BTreeMap::new();
    for m in &methods {
        if mms.contains_key(&m.topology) {
            continue;
        }
        let p = config.mms_info.get(&m.topology).ok_or_else(|| {
            Error::Config(format!("no mms_info entry for topology {:?}", m.topology))
        })?;
        let info = MmsInfo::load(&resolve(base, p))?;
        if !info.masks.contains_key(&config.mask) {
            return Err(Error::Config(format!(
                "mask {:?} not defined for topology {:?}",
                config.mask, m.topology
            )));
        }
        mms.insert(m.topology.clone(), info);
    }

    let out_dir = resolve(base, &config.out_dir);
    Ok(Experiment {
        config,
        methods,
        estimators,
        mms,
        out_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_key_parse() {
        let m = MethodKey::parse("BFM/p23470/deep3d").unwrap();
        assert_eq!(m.topology, "BFM");
        assert_eq!(m.crop, "p23470");
        assert_eq!(m.name, "deep3d");
        assert_eq!(m.spec_string(), "BFM/p23470/deep3d");
        assert!(MethodKey::parse("just-a-name").is_err());
        assert!(MethodKey::parse("a//b").is_err());
        assert!(MethodKey::parse("a/b/c/d").is_err());
    }

    #[test]
    fn estimator_ref_shapes() {
        let inline: EstimatorRef = serde_json::from_str(
            r#"{"name":"E1","rigid":"ICP","distance":"P2P"}"#,
        )
        .unwrap();
        assert!(matches!(inline, EstimatorRef::Inline(_)));
        let file: EstimatorRef = serde_json::from_str(r#"{"file":"e12.json"}"#).unwrap();
        assert!(matches!(file, EstimatorRef::File { .. }));
    }

    #[test]
    fn unknown_reporter_rejected() {
        let r: std::result::Result<ReporterType, _> = serde_json::from_str("\"sparkline\"");
        assert!(r.is_err());
        let t: ReporterType = serde_json::from_str("\"table\"").unwrap();
        assert_eq!(t, ReporterType::Table);
    }

    #[test]
    fn mms_info_validation() {
        let ok: MmsInfo = serde_json::from_str(
            r#"{"landmarks":{"13":0,"19":1,"28":2},"masks":{"full":[0,1,2]}}"#,
        )
        .unwrap();
        assert_eq!(ok.landmark_pairs(), vec![(13, 0), (19, 1), (28, 2)]);
    }
}
