//! Estimator composition specs, parsed from JSON.
//!
//! An estimator is a fixed-order pipeline crop → rigid → warp → correspond →
//! distance → correct, with the warp and correction stages optional. The
//! JSON shape is strict: unknown keys are rejected so a typo can never
//! silently change an experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::IcpParams;
use crate::warp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RigidStage {
    #[serde(rename = "RLR")]
    Rlr,
    #[serde(rename = "ICP")]
    Icp,
}

/// Warp stage selector. Plugin names are free-form strings resolved against
/// the warp registry at validation time; `"ELR+<name>"` chains the built-in
/// elastic warp with a plugin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WarpStage {
    None,
    Elr,
    Plugin(String),
    ElrPlusPlugin(String),
}

impl Default for WarpStage {
    fn default() -> Self {
        WarpStage::None
    }
}

impl TryFrom<String> for WarpStage {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Ok(match s.as_str() {
            "none" => WarpStage::None,
            "ELR" => WarpStage::Elr,
            other => {
                if let Some(rest) = other.strip_prefix("ELR+") {
                    if rest.is_empty() {
                        return Err(Error::Config("empty plugin name after ELR+".into()));
                    }
                    WarpStage::ElrPlusPlugin(rest.to_string())
                } else if other.is_empty() {
                    return Err(Error::Config("empty warp stage".into()));
                } else {
                    WarpStage::Plugin(other.to_string())
                }
            }
        })
    }
}

impl From<WarpStage> for String {
    fn from(w: WarpStage) -> String {
        match w {
            WarpStage::None => "none".into(),
            WarpStage::Elr => "ELR".into(),
            WarpStage::Plugin(p) => p,
            WarpStage::ElrPlusPlugin(p) => format!("ELR+{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceStage {
    #[serde(rename = "P2P")]
    P2p,
    #[serde(rename = "P2Tri")]
    P2tri,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionStage {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ETC")]
    Etc,
}

impl Default for CorrectionStage {
    fn default() -> Self {
        CorrectionStage::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpOptions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
}

impl IcpOptions {
    pub fn to_params(&self, with_scale: bool) -> IcpParams {
        let d = IcpParams::default();
        IcpParams {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            rel_tolerance: self.rel_tolerance.unwrap_or(d.rel_tolerance),
            subsample: self.subsample,
            with_scale,
        }
    }
}

/// Optional knobs; everything has a sensible default so most specs are the
/// four stage fields only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    /// Crop the ground truth to this radius (mm) around the nose tip before
    /// anything else. No crop when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop_radius: Option<f64>,
    /// Restrict rigid alignment to these landmark ids.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rlr_landmark_ids: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp: Option<IcpOptions>,
    /// Estimate scale during rigid alignment (default true).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub with_scale: Option<bool>,
    /// Flip the sign of the ETC offsets (audit flag for the correction's
    /// sign convention).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub etc_negate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: String,
    pub rigid: RigidStage,
    #[serde(default)]
    pub warp: WarpStage,
    pub distance: DistanceStage,
    #[serde(default)]
    pub correction: CorrectionStage,
    #[serde(default, skip_serializing_if = "is_default_options")]
    pub options: EstimatorOptions,
}

fn is_default_options(o: &EstimatorOptions) -> bool {
    *o == EstimatorOptions::default()
}

impl EstimatorSpec {
    /// Checks everything that can fail before any data is touched: plugin
    /// resolvability and option ranges.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("estimator name must be non-empty".into()));
        }
        let plugin = match &self.warp {
            WarpStage::Plugin(p) | WarpStage::ElrPlusPlugin(p) => Some(p),
            _ => None,
        };
        if let Some(p) = plugin {
            if warp::warp_plugin(p).is_none() {
                return Err(Error::Plugin {
                    name: p.clone(),
                    reason: "not registered".into(),
                });
            }
        }
        if let Some(r) = self.options.crop_radius {
            if !(r > 0.0) {
                return Err(Error::Config("crop_radius must be > 0".into()));
            }
        }
        if let Some(ids) = &self.options.rlr_landmark_ids {
            if ids.len() < 3 {
                return Err(Error::Config(
                    "rlr_landmark_ids needs at least 3 ids".into(),
                ));
            }
        }
        if let Some(icp) = &self.options.icp {
            if icp.max_iterations == Some(0) {
                return Err(Error::Config("icp max_iterations must be >= 1".into()));
            }
            if matches!(icp.rel_tolerance, Some(t) if !(t > 0.0)) {
                return Err(Error::Config("icp rel_tolerance must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn with_scale(&self) -> bool {
        self.options.with_scale.unwrap_or(true)
    }

    /// Canonical serialization used for cache keys: stable field order,
    /// defaults materialized.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("estimator spec serializes")
    }
}

/// Parses and validates one estimator spec from JSON text. Errors carry
/// serde's line/column for malformed input.
pub fn parse_estimator(json: &str) -> Result<EstimatorSpec> {
    let spec: EstimatorSpec = serde_json::from_str(json)
        .map_err(|e| Error::Config(format!("estimator spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e12_parses() {
        let s = parse_estimator(
            r#"{"name":"E12","rigid":"RLR","warp":"ELR","distance":"P2P","correction":"ETC"}"#,
        )
        .unwrap();
        assert_eq!(s.rigid, RigidStage::Rlr);
        assert_eq!(s.warp, WarpStage::Elr);
        assert_eq!(s.distance, DistanceStage::P2p);
        assert_eq!(s.correction, CorrectionStage::Etc);
        assert!(s.with_scale());
    }

    #[test]
    fn e1_parses_with_defaults() {
        let s = parse_estimator(
            r#"{"name":"E1","rigid":"ICP","warp":"none","distance":"P2P","correction":"none"}"#,
        )
        .unwrap();
        assert_eq!(s.rigid, RigidStage::Icp);
        assert_eq!(s.warp, WarpStage::None);
        // warp/correction may be omitted entirely
        let t = parse_estimator(r#"{"name":"E1","rigid":"ICP","distance":"P2P"}"#).unwrap();
        assert_eq!(t.warp, WarpStage::None);
        assert_eq!(t.correction, CorrectionStage::None);
    }

    #[test]
    fn unknown_stage_value_rejected() {
        assert!(parse_estimator(r#"{"name":"X","rigid":"XYZ","distance":"P2P"}"#).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse_estimator(
            r#"{"name":"X","rigid":"RLR","distance":"P2P","extra":1}"#
        )
        .is_err());
        assert!(parse_estimator(
            r#"{"name":"X","rigid":"RLR","distance":"P2P","options":{"bogus":1}}"#
        )
        .is_err());
    }

    #[test]
    fn unresolved_plugin_rejected_at_parse_time() {
        let err = parse_estimator(
            r#"{"name":"X","rigid":"RLR","warp":"no-such-plugin","distance":"P2P"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Plugin { .. }));
        let err = parse_estimator(
            r#"{"name":"X","rigid":"RLR","warp":"ELR+missing","distance":"P2P"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Plugin { .. }));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_estimator("{\"name\":").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "no position in: {msg}");
    }

    #[test]
    fn warp_string_round_trip() {
        for s in ["none", "ELR", "ELR+nicp", "nicp"] {
            let w = WarpStage::try_from(s.to_string()).unwrap();
            assert_eq!(String::from(w), s);
        }
        assert!(WarpStage::try_from("ELR+".to_string()).is_err());
    }

    #[test]
    fn canonical_json_is_stable() {
        let json = r#"{"name":"E12","rigid":"RLR","warp":"ELR","distance":"P2P","correction":"ETC"}"#;
        let a = parse_estimator(json).unwrap().canonical_json();
        let b = parse_estimator(json).unwrap().canonical_json();
        assert_eq!(a, b);
        let reparsed = parse_estimator(&a).unwrap();
        assert_eq!(reparsed.canonical_json(), a);
    }
}
