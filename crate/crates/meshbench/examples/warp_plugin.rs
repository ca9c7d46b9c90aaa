//! External warp plugins.
//!
//! The non-rigid warp stage is a named plugin slot: any function with the
//! signature `warp(R, G, R_lmks, G_lmks) -> Mesh` can be registered and then
//! referenced from an estimator spec by name. The built-in ELR warp can also
//! be composed with a plugin via "ELR+<name>".
//!
//! Here a toy plugin translates the reconstruction by the mean landmark
//! offset — a crude stand-in for a real non-rigid method such as NICP.

use std::sync::Arc;

use meshbench::bench::{parse_estimator, run_estimator};
use meshbench::synth;
use meshbench::warp::register_warp_plugin;
use meshbench::{LandmarkSet, Mesh};
use nalgebra::Vector3;

fn main() -> meshbench::Result<()> {
    register_warp_plugin(
        "mean-offset",
        Arc::new(|r: &Mesh, _g: &Mesh, r_lmks: &LandmarkSet, g_lmks: &LandmarkSet| {
            let pairs = r_lmks.pair_by_id(g_lmks)?;
            let n = pairs.len() as f64;
            let offset: Vector3<f64> =
                pairs.iter().map(|(a, b)| b - a).sum::<Vector3<f64>>() / n;
            let vertices = r.vertices().iter().map(|v| v + offset).collect();
            Mesh::new(vertices, r.faces().map(|f| f.to_vec()), r.label())
        }),
    )?;

    let spec = parse_estimator(
        r#"{
            "name": "demo",
            "rigid": "RLR",
            "warp": "mean-offset",
            "distance": "P2P",
            "correction": "none"
        }"#,
    )?;

    let template = synth::generate_template(40)?;
    let subject = synth::generate_subject(&template, &synth::SynthParams::default(), 2)?;
    let r_lmks = LandmarkSet::new(
        subject
            .r_lmk_indices
            .iter()
            .map(|&i| subject.r.vertices()[i])
            .collect(),
        subject.g_lmks.ids().to_vec(),
        Some(subject.r_lmk_indices.clone()),
    )?;

    let run = run_estimator(&spec, &subject.r, &subject.g_scan, &r_lmks, &subject.g_lmks)?;
    println!("stages: {:?}", run.stages);
    println!("distance input: {}", run.distance_input);
    println!("estimated mean error: {:.4} mm", run.errors.mean());
    Ok(())
}
