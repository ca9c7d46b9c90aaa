//! Thin CLI over the library: run an experiment, generate a synthetic
//! corpus, or re-render reports from a warm cache.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use meshbench::bench;
use meshbench::synth;
use meshbench::Error;

#[derive(Parser)]
#[command(name = "meshbench", about = "Geometric error estimation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON file over a data directory.
    Run(RunArgs),
    /// Generate a synthetic corpus with known true errors.
    Synth(SynthArgs),
    /// Re-render reports for an experiment from its cache.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    experiment: PathBuf,
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    num_processes: usize,
}

#[derive(Args)]
struct SynthArgs {
    data_dir: PathBuf,
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    subjects: usize,
    /// Template grid resolution (vertex count is resolution squared).
    #[arg(long, default_value_t = 70)]
    resolution: usize,
    /// Scan noise sigma in mm.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Scan dropout fraction in [0, 1).
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    /// Simulated methods as name:amplitude_mm pairs.
    #[arg(long, value_delimiter = ',', default_values_t = [
        "m1:0.5".to_string(), "m2:1.0".to_string(), "m3:1.5".to_string(),
        "m4:2.0".to_string(), "m5:3.0".to_string(),
    ])]
    methods: Vec<String>,
    /// Also write a ready-to-run experiment JSON here.
    #[arg(long)]
    emit_config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    experiment: PathBuf,
    data_dir: PathBuf,
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Plugin { .. } => ExitCode::from(2),
        Error::Numerical(_) | Error::Degenerate(_) => ExitCode::from(4),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_run(args: RunArgs) -> meshbench::Result<()> {
    let experiment = bench::load_experiment(&args.experiment, &args.data_dir)?;
    let result = bench::run_experiment(&experiment, &args.data_dir, args.num_processes)?;
    let files = bench::report(&result, &args.data_dir)?;
    println!(
        "{} unit(s): {} computed, {} from cache, {} skipped",
        result.cache_hits + result.cache_misses,
        result.cache_misses,
        result.cache_hits,
        result.skipped.len()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn parse_methods(specs: &[String]) -> meshbench::Result<Vec<synth::SynthMethod>> {
    specs
        .iter()
        .map(|s| {
            let (name, amp) = s.split_once(':').ok_or_else(|| {
                Error::Config(format!("method must be name:amplitude, got {s:?}"))
            })?;
            let deform_amplitude: f64 = amp
                .parse()
                .map_err(|_| Error::Config(format!("bad amplitude in {s:?}")))?;
            if name.is_empty() || !(deform_amplitude >= 0.0) {
                return Err(Error::Config(format!("bad method spec {s:?}")));
            }
            Ok(synth::SynthMethod {
                name: name.to_string(),
                deform_amplitude,
            })
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> meshbench::Result<()> {
    let template = synth::generate_template(args.resolution)?;
    let params = synth::SynthParams {
        seed: args.seed,
        n_subjects: args.subjects,
        deform_amplitude: 0.0, // per-method amplitudes below
        noise_sigma: args.noise,
        dropout_rate: args.dropout,
    };
    let methods = parse_methods(&args.methods)?;
    let layout = synth::write_corpus(&args.data_dir, &args.dataset, &template, &params, &methods)?;
    println!(
        "wrote {} subjects × {} methods under {}",
        args.subjects,
        methods.len(),
        args.data_dir.join(&args.dataset).display()
    );
    if let Some(config_path) = args.emit_config {
        // relative paths in the config resolve against the config file's
        // directory, so reference the mms file absolutely
        let mms_path = std::fs::canonicalize(&layout.mms_info_path).map_err(|e| Error::Io {
            path: layout.mms_info_path.clone(),
            source: e,
        })?;
        let config = serde_json::json!({
            "dataset": layout.dataset,
            "methods": layout.method_specs,
            "estimators": [
                {"name": "E1", "rigid": "ICP", "warp": "none",
                 "distance": "P2P", "correction": "none"},
                {"name": "E9", "rigid": "RLR", "warp": "none",
                 "distance": "P2P", "correction": "none"},
                {"name": "E11", "rigid": "RLR", "warp": "ELR",
                 "distance": "P2P", "correction": "none"},
                {"name": "E12", "rigid": "RLR", "warp": "ELR",
                 "distance": "P2P", "correction": "ETC"},
            ],
            "reporter_type": "table",
            "mms_info": { layout.topology.clone(): mms_path.to_string_lossy() },
            "mask": "full",
            "out_dir": "out",
        });
        std::fs::write(
            &config_path,
            serde_json::to_string_pretty(&config).expect("config serializes"),
        )
        .map_err(|e| Error::Io {
            path: config_path.clone(),
            source: e,
        })?;
        println!("wrote {}", config_path.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> meshbench::Result<()> {
    let experiment = bench::load_experiment(&args.experiment, &args.data_dir)?;
    let result = bench::run_experiment(&experiment, &args.data_dir, 1)?;
    let files = bench::report(&result, &args.data_dir)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
