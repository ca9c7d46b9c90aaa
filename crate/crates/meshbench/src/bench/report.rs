//! Report emission. Everything here is derived from cached per-vertex
//! errors (plus raw mesh geometry for the heatmap), so a warm-cache rerun
//! produces byte-identical files. Timings are deliberately excluded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::mesh::PerVertexError;

use super::config::ReporterType;
use super::runner::ExperimentResult;

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, content).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fmt_mean(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// Writes the configured reporter's files under `out_dir/report` and
/// returns their paths.
pub fn report(result: &ExperimentResult, data_dir: &Path) -> Result<Vec<PathBuf>> {
    let report_dir = result.experiment.out_dir.join("report");
    match result.experiment.config.reporter_type {
        ReporterType::Table => report_table(result, &report_dir),
        ReporterType::Scatter => report_scatter(result, &report_dir),
        ReporterType::Heatmap => report_heatmap(result, data_dir, &report_dir),
    }
}

/// Ranking markers for the three smallest means in a column.
fn markers(means: &[f64]) -> Vec<&'static str> {
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut out = vec![""; means.len()];
    for (rank, &i) in order.iter().enumerate().take(3) {
        out[i] = ["(1)", "(2)", "(3)"][rank];
    }
    out
}

fn report_table(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let methods: Vec<String> = result
        .experiment
        .methods
        .iter()
        .map(|m| m.spec_string())
        .collect();
    let estimators: Vec<String> = result
        .experiment
        .estimators
        .iter()
        .map(|e| e.name.clone())
        .collect();

    // per-estimator columns of per-method means, ranking markers per column
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for e in &estimators {
        columns.push(
            methods
                .iter()
                .map(|m| result.est_means.get(&(e.clone(), m.clone())).copied())
                .collect(),
        );
    }
    let column_markers: Vec<Vec<&str>> = columns
        .iter()
        .map(|col| {
            let present: Vec<f64> = col.iter().filter_map(|v| *v).collect();
            if present.len() == col.len() {
                markers(&present)
            } else {
                vec![""; col.len()]
            }
        })
        .collect();

    // CSV: one row per (method, estimator) with mean and per-column rank
    let mut csv = String::from("method,estimator,mean,rank,true_mean\n");
    for (ei, e) in estimators.iter().enumerate() {
        let mut order: Vec<usize> = (0..methods.len())
            .filter(|&mi| columns[ei][mi].is_some())
            .collect();
        order.sort_by(|&a, &b| {
            columns[ei][a]
                .unwrap()
                .total_cmp(&columns[ei][b].unwrap())
                .then(a.cmp(&b))
        });
        let mut rank = vec![None; methods.len()];
        for (k, &mi) in order.iter().enumerate() {
            rank[mi] = Some(k + 1);
        }
        for (mi, m) in methods.iter().enumerate() {
            let mean = columns[ei][mi].map(fmt_mean).unwrap_or_default();
            let r = rank[mi].map(|r| r.to_string()).unwrap_or_default();
            let t = result
                .true_means
                .get(m)
                .map(|&v| fmt_mean(v))
                .unwrap_or_default();
            writeln!(csv, "{m},{e},{mean},{r},{t}").unwrap();
        }
    }

    // aligned text table: methods down, estimators across
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let mut row = vec![m.clone()];
        row.push(
            result
                .true_means
                .get(m)
                .map(|&v| fmt_mean(v))
                .unwrap_or_else(|| "-".into()),
        );
        for (ei, _) in estimators.iter().enumerate() {
            let cell = match columns[ei][mi] {
                Some(v) => format!("{}{}", fmt_mean(v), column_markers[ei][mi]),
                None => "-".into(),
            };
            row.push(cell);
        }
        cells.push(row);
    }
    let mut header = vec!["method".to_string(), "true".to_string()];
    header.extend(estimators.iter().cloned());
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap()
        })
        .collect();
    let mut text = String::new();
    let fmt_row = |row: &[String]| {
        row.iter()
            .enumerate()
            .map(|(c, s)| format!("{:<w$}", s, w = widths[c]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(text, "{}", fmt_row(&header)).unwrap();
    for row in &cells {
        writeln!(text, "{}", fmt_row(row)).unwrap();
    }
    text.push('\n');
    for e in &estimators {
        let m = &result.metrics[e];
        writeln!(
            text,
            "{e}: rate_of_inconsistency={} pearson_r={} pearson_top5={}",
            fmt_opt(m.roi),
            fmt_opt(m.pearson_r),
            fmt_opt(m.pearson_top_k),
        )
        .unwrap();
        for (name, er, tr, flag) in &m.ranking {
            if *flag {
                writeln!(text, "  rank disagreement: {name} estimated #{er}, true #{tr}")
                    .unwrap();
            }
        }
    }
    if !result.skipped.is_empty() {
        text.push('\n');
        for s in &result.skipped {
            writeln!(text, "skipped: {s}").unwrap();
        }
    }

    let txt_path = dir.join("table.txt");
    let csv_path = dir.join("table.csv");
    write_file(&txt_path, text.as_bytes())?;
    write_file(&csv_path, csv.as_bytes())?;
    Ok(vec![txt_path, csv_path])
}

fn report_scatter(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("estimator,method,true_mean,est_mean\n");
    for e in &result.experiment.estimators {
        for m in &result.experiment.methods {
            let ms = m.spec_string();
            let t = result
                .true_means
                .get(&ms)
                .map(|&v| fmt_mean(v))
                .unwrap_or_default();
            let est = result
                .est_means
                .get(&(e.name.clone(), ms.clone()))
                .map(|&v| fmt_mean(v))
                .unwrap_or_default();
            writeln!(csv, "{},{ms},{t},{est}", e.name).unwrap();
        }
    }
    let path = dir.join("scatter.csv");
    write_file(&path, csv.as_bytes())?;
    Ok(vec![path])
}

fn report_heatmap(
    result: &ExperimentResult,
    data_dir: &Path,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let dataset_dir = data_dir.join(&result.experiment.config.dataset);
    let mut paths = Vec::new();
    for ((estimator, method), subject_results) in &result.results {
        let key = result
            .experiment
            .methods
            .iter()
            .find(|m| m.spec_string() == *method)
            .ok_or_else(|| Error::Data(format!("unknown method {method}")))?;
        for sr in subject_results {
            let r_path = key.dir(&dataset_dir).join(format!("{}.txt", sr.subject));
            let r = io::load_mesh(&r_path)?;
            if r.len() != sr.errors.len() {
                return Err(Error::Data(format!(
                    "{}: {} vertices but {} cached errors",
                    r_path.display(),
                    r.len(),
                    sr.errors.len()
                )));
            }
            let e = PerVertexError::new(sr.errors.iter().map(|&v| v as f64).collect())?;
            let out = dir
                .join(estimator)
                .join(method.replace('/', "_"))
                .join(format!("{}.ply", sr.subject));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).map_err(|err| Error::Io {
                    path: parent.to_path_buf(),
                    source: err,
                })?;
            }
            io::save_error_mesh(&r, &e, &out)?;
            paths.push(out);
        }
    }
    Ok(paths)
}
