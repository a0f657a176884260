//! Deterministic output files: CSV tables, JSON metadata sidecars and
//! gnuplot scripts.
//!
//! Floats are printed with 17 significant digits so values round-trip
//! exactly; reruns with the same inputs produce byte-identical files.
//! Sidecars carry the full effective configuration (in the input file
//! format) and the command that produced the artifact.

use std::path::Path;

use qmupl_core::figures::FigureData;

use crate::config::RunConfig;
use crate::CliError;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = String::with_capacity(rows.len() * header.len() * 12);
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Write `{stem}.csv` plus `{stem}.meta.json`, and optionally
/// `{stem}.gp`.
pub fn write_artifact(
    out: &Path,
    stem: &str,
    csv: &str,
    cfg: &RunConfig,
    command: &str,
    extra: serde_json::Value,
    plot_script: Option<&str>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(format!("{stem}.csv")), csv)?;
    let meta = serde_json::json!({
        "command": command,
        "tool": "qmupl",
        "version": env!("CARGO_PKG_VERSION"),
        "data_file": format!("{stem}.csv"),
        "config": cfg.echo(),
        "results": extra,
    });
    std::fs::write(
        out.join(format!("{stem}.meta.json")),
        serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n",
    )?;
    if let Some(script) = plot_script {
        std::fs::write(out.join(format!("{stem}.gp")), script)?;
    }
    Ok(())
}

/// Write a figure preset: CSV, metadata sidecar, gnuplot script.
pub fn write_figure(
    out: &Path,
    data: &FigureData,
    csv: &str,
    script: &str,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let stem = data.name.as_str();
    std::fs::write(out.join(format!("{stem}.csv")), csv)?;
    let meta = serde_json::json!({
        "command": format!("figure {stem}"),
        "tool": "qmupl",
        "version": env!("CARGO_PKG_VERSION"),
        "data_file": format!("{stem}.csv"),
        "plot_script": format!("{stem}.gp"),
        "x_label": data.x_label,
        "y_label": data.y_label,
        "log_x": data.log_x,
        "log_y": data.log_y,
        "curves": data.curves.iter().map(|c| &c.label).collect::<Vec<_>>(),
        "params": data.params,
    });
    std::fs::write(
        out.join(format!("{stem}.meta.json")),
        serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n",
    )?;
    std::fs::write(out.join(format!("{stem}.gp")), script)?;
    Ok(())
}

/// Minimal gnuplot script plotting every curve column against column 1.
pub fn gnuplot_script(data: &FigureData, header: &[String]) -> String {
    let stem = data.name.as_str();
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str(&format!("set xlabel '{}'\n", data.x_label));
    s.push_str(&format!("set ylabel '{}'\n", data.y_label));
    if data.log_x {
        s.push_str("set logscale x\n");
    }
    if data.log_y {
        s.push_str("set logscale y\n");
    }
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str(&format!("set output '{stem}.png'\n"));
    let mut parts = Vec::new();
    for col in 2..=header.len() {
        parts.push(format!("'{stem}.csv' using 1:{col} with lines"));
    }
    s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
    s
}
