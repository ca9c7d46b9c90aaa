//! Generate a small on-disk synthetic corpus and show its layout.
//!
//! The layout mirrors what the benchmark runner expects:
//!   <dataset>/Gmeshes/idNNNN.txt + .lmks   scanner-like ground truth
//!   <dataset>/Tmeshes/idNNNN.txt           template-topology truth
//!   <dataset>/Rmeshes/<topology>/<crop>/<method>/idNNNN.txt
//!   <dataset>/mms/<topology>-<crop>.json   landmark ids and vertex masks

use meshbench::synth;

fn list(dir: &std::path::Path, indent: usize) {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok()).collect())
        .unwrap_or_default();
    entries.sort_by_key(|e| e.path());
    for (i, e) in entries.iter().enumerate() {
        if i >= 3 && entries.len() > 4 {
            println!("{:indent$}... ({} entries)", "", entries.len(), indent = indent);
            break;
        }
        println!("{:indent$}{}", "", e.file_name().to_string_lossy(), indent = indent);
        if e.path().is_dir() {
            list(&e.path(), indent + 2);
        }
    }
}

fn main() -> meshbench::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let template = synth::generate_template(30)?;
    let params = synth::SynthParams {
        n_subjects: 5,
        ..Default::default()
    };
    let methods = vec![
        synth::SynthMethod { name: "m1".into(), deform_amplitude: 1.0 },
        synth::SynthMethod { name: "m2".into(), deform_amplitude: 2.0 },
    ];
    let layout = synth::write_corpus(dir.path(), "demo", &template, &params, &methods)?;
    println!(
        "dataset {:?}, topology {:?}, crop {:?}",
        layout.dataset, layout.topology, layout.crop
    );
    println!("method specs: {:?}", layout.method_specs);
    println!();
    list(&dir.path().join("demo"), 0);
    Ok(())
}
