//! Rigid alignment: recover a known misalignment with landmark-based
//! registration (RLR) and refine it with ICP.
//!
//! A synthetic subject provides a reconstruction R and a ground truth G with
//! known correspondence. We displace R by a fixed similarity transform, then
//! undo it two ways and report the residual RMS against the true positions.

use meshbench::registration::{apply_transform, apply_transform_landmarks, icp, rlr, IcpParams, SimilarityTransform};
use meshbench::synth;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

fn rms(a: &meshbench::Mesh, b: &meshbench::Mesh) -> f64 {
    let n = a.len() as f64;
    let sum: f64 = a
        .vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    (sum / n).sqrt()
}

fn main() -> meshbench::Result<()> {
    let template = synth::generate_template(50)?;
    let params = synth::SynthParams::default();
    let subject = synth::generate_subject(&template, &params, 1)?;

    // a known misalignment: 25° about an oblique axis plus a translation
    let axis = Unit::new_normalize(Vector3::new(0.3, 1.0, -0.2));
    let rot: Matrix3<f64> = Rotation3::from_axis_angle(&axis, 25f64.to_radians()).into_inner();
    let offset = SimilarityTransform::new(1.0, rot, Vector3::new(14.0, -9.0, 22.0))?;

    let r = apply_transform(&subject.r, &offset);
    let r_lmks = apply_transform_landmarks(
        &meshbench::LandmarkSet::new(
            subject
                .r_lmk_indices
                .iter()
                .map(|&i| subject.r.vertices()[i])
                .collect(),
            subject.g_lmks.ids().to_vec(),
            Some(subject.r_lmk_indices.clone()),
        )?,
        &offset,
    );
    println!("misaligned RMS to G: {:8.3} mm", rms(&r, &subject.g_true));

    // landmark-only alignment
    let t_rlr = rlr(&r_lmks, &subject.g_lmks, false)?;
    let r_rlr = apply_transform(&r, &t_rlr);
    println!("after RLR:           {:8.3} mm", rms(&r_rlr, &subject.g_true));

    // ICP refinement, initialized from RLR
    let result = icp(&r, &subject.g_scan, &t_rlr, &IcpParams::default())?;
    let r_icp = apply_transform(&r, &result.transform);
    println!(
        "after ICP ({} iterations): {:5.3} mm",
        result.rms_history.len(),
        rms(&r_icp, &subject.g_true)
    );
    Ok(())
}
