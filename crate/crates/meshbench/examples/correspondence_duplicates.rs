//! Chamfer correspondence and duplicate matches.
//!
//! When the ground-truth scan is sparser than the reconstruction (here via
//! point dropout), several reconstruction vertices share the same nearest
//! scan point. The duplicate rate is the main driver of the systematic
//! error overestimation that ETC corrects.

use meshbench::correspondence::{build_index, chamfer_match, duplicate_stats};
use meshbench::synth;

fn main() -> meshbench::Result<()> {
    let template = synth::generate_template(50)?;
    println!("dropout  duplicate_rate");
    for dropout in [0.0, 0.2, 0.4, 0.6] {
        let params = synth::SynthParams {
            dropout_rate: dropout,
            ..Default::default()
        };
        let subject = synth::generate_subject(&template, &params, 3)?;
        let index = build_index(&subject.g_scan)?;
        let c = chamfer_match(&subject.r, &index);
        let stats = duplicate_stats(&c);
        println!(
            "  {dropout:.1}    {:.3}  ({} of {} vertices share a match)",
            stats.duplicate_rate,
            stats.duplicate_count,
            subject.r.len()
        );
    }
    Ok(())
}
