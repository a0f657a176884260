//! Command-line front end for the collapse-dynamics library.
//!
//! Every run writes CSV data files plus a JSON metadata sidecar that
//! records the exact inputs, so any artifact can be regenerated
//! byte-for-byte from its sidecar alone.

mod artifacts;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qmupl_core::dynamics::observables;
use qmupl_core::ensemble::{run_ensemble, simulate};
use qmupl_core::figures::{figure, FigureName};
use qmupl_core::noise::NoiseGenerator;
use qmupl_core::validation;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; maps to exit code 2.
    Config(String),
    /// A computation or validation failed; maps to exit code 1.
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<qmupl_core::CoreError> for CliError {
    fn from(e: qmupl_core::CoreError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("io: {e}"))
    }
}

#[derive(Parser)]
#[command(
    name = "qmupl",
    version,
    about = "Non-Markovian collapse dynamics of a free particle"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for data files and metadata sidecars.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed; per-path generators are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Number of time steps in the propagation grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate individual noise realizations and write per-path
    /// observables at the report nodes.
    Simulate,
    /// Named deterministic figure presets (fig1, fig2, fig3, fig4).
    Figure { name: String },
    /// Ensemble averages over the physical measure with standard errors.
    Ensemble,
    /// Run the acceptance checks; exits 1 if any check fails.
    Validate {
        /// Check group to run (1-9); all groups when omitted.
        #[arg(long)]
        group: Option<usize>,
    },
    /// Compare the empirical noise covariance against the kernel.
    NoiseTest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Failure(_) => ExitCode::from(1),
            }
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = common.paths {
        cfg.n_paths = paths;
    }
    if let Some(grid) = common.grid {
        cfg.n_steps = grid;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate => cmd_simulate(&cli.common),
        Command::Figure { name } => cmd_figure(&cli.common, name),
        Command::Ensemble => cmd_ensemble(&cli.common),
        Command::Validate { group } => cmd_validate(&cli.common, *group),
        Command::NoiseTest => cmd_noise_test(&cli.common),
    }
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let econf = cfg.ensemble_config()?;
    let raw = simulate(&econf)?;
    let params = econf.params;

    let mut rows = Vec::new();
    for (path, states) in raw.states.iter().enumerate() {
        let Some(states) = states else { continue };
        for (k, state) in states.iter().enumerate() {
            let obs = observables(state, &params)?;
            rows.push(vec![
                raw.times[k],
                path as f64,
                obs.sigma,
                obs.mean_q,
                obs.mean_p,
                obs.energy,
            ]);
        }
    }
    let csv = artifacts::csv_table(
        &["time", "path", "sigma", "mean_q", "mean_p", "energy"],
        &rows,
    );
    artifacts::write_artifact(
        &common.out,
        "trajectories",
        &csv,
        &cfg,
        "simulate",
        serde_json::json!({ "flagged_paths": raw.flagged }),
        None,
    )?;
    println!(
        "simulate: {} paths, {} report nodes -> {}",
        cfg.n_paths,
        raw.times.len(),
        common.out.join("trajectories.csv").display()
    );
    Ok(())
}

fn cmd_ensemble(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let econf = cfg.ensemble_config()?;
    let report = run_ensemble(&econf)?;

    let mut rows = Vec::new();
    for k in 0..report.times.len() {
        rows.push(vec![
            report.times[k],
            report.mean_q[k],
            report.se_q[k],
            report.mean_p[k],
            report.se_p[k],
            report.mean_energy[k],
            report.se_energy[k],
            report.fluct_q[k],
            report.fluct_p[k],
        ]);
    }
    let csv = artifacts::csv_table(
        &[
            "time", "mean_q", "se_q", "mean_p", "se_p", "mean_energy",
            "se_energy", "fluct_q", "fluct_p",
        ],
        &rows,
    );
    artifacts::write_artifact(
        &common.out,
        "ensemble",
        &csv,
        &cfg,
        "ensemble",
        serde_json::json!({
            "n_paths": report.n_paths,
            "flagged_paths": report.flagged,
        }),
        None,
    )?;
    println!(
        "ensemble: {} paths averaged -> {}",
        report.n_paths,
        common.out.join("ensemble.csv").display()
    );
    Ok(())
}

fn cmd_figure(common: &Common, name: &str) -> Result<(), CliError> {
    let name = FigureName::parse(name).map_err(|e| CliError::Config(e.to_string()))?;
    if common.config.is_some()
        || common.seed.is_some()
        || common.paths.is_some()
        || common.grid.is_some()
    {
        return Err(CliError::Config(
            "figure presets are fixed; --config, --seed, --paths and --grid do not apply".into(),
        ));
    }
    let data = figure(name)?;

    let mut header: Vec<String> = vec![data.x_label.clone()];
    for (i, c) in data.curves.iter().enumerate() {
        header.push(format!("curve{}_{}", i, sanitize(&c.label)));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (k, &x) in data.x.iter().enumerate() {
        let mut row = vec![x];
        row.extend(data.curves.iter().map(|c| c.values[k]));
        rows.push(row);
    }
    let csv = artifacts::csv_table(&header_refs, &rows);
    let script = artifacts::gnuplot_script(&data, &header);
    artifacts::write_figure(&common.out, &data, &csv, &script)?;
    println!(
        "figure {}: {} curves over {} points -> {}",
        data.name.as_str(),
        data.curves.len(),
        data.x.len(),
        common.out.join(format!("{}.csv", data.name.as_str())).display()
    );
    Ok(())
}

fn cmd_validate(common: &Common, group: Option<usize>) -> Result<(), CliError> {
    let groups: Vec<usize> = match group {
        Some(g) if (1..=validation::N_GROUPS).contains(&g) => vec![g],
        Some(g) => {
            return Err(CliError::Config(format!(
                "group must be 1..={} (got {g})",
                validation::N_GROUPS
            )))
        }
        None => (1..=validation::N_GROUPS).collect(),
    };
    let mut all = Vec::new();
    for g in groups {
        let results = validation::run_group(g).map_err(|e| CliError::Failure(e.to_string()))?;
        for r in &results {
            println!(
                "[{}] group {} {}: measured {:.6e}, allowed {:.6e}",
                if r.passed { "PASS" } else { "FAIL" },
                r.group,
                r.name,
                r.measured,
                r.allowed
            );
        }
        all.extend(results);
    }
    let report = serde_json::json!({
        "checks": all.iter().map(|r| serde_json::json!({
            "group": r.group,
            "name": r.name,
            "passed": r.passed,
            "measured": r.measured,
            "allowed": r.allowed,
            "detail": r.detail,
        })).collect::<Vec<_>>(),
        "passed": validation::all_passed(&all),
    });
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("validation.json"),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    if validation::all_passed(&all) {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Failure("one or more validation checks failed".into()))
    }
}

fn cmd_noise_test(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let econf = cfg.ensemble_config()?;
    let gen = NoiseGenerator::new(&econf.kernel, econf.grid)?;
    let grid = econf.grid;
    let n = grid.n_steps;
    let want = econf.kernel.covariance_matrix(&grid)?;

    // probe nodes spread over the grid, away from the very first node
    // where the white kernel's discrete variance 1/eps dominates anyway
    let probes = [n / 8, n / 4, n / 2, 3 * n / 4, n - 1];
    let n_paths = cfg.n_paths.max(100);
    let mut second = vec![vec![0.0f64; probes.len()]; probes.len()];
    for path in 0..n_paths {
        let w = gen.sample_indexed(cfg.seed, path as u64);
        for (a, &i) in probes.iter().enumerate() {
            for (b, &j) in probes.iter().enumerate() {
                second[a][b] += w.values[i] * w.values[j];
            }
        }
    }
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for (a, &i) in probes.iter().enumerate() {
        for (b, &j) in probes.iter().enumerate().skip(a) {
            let emp = second[a][b] / n_paths as f64;
            let target = want[[i, j]];
            // Gaussian fourth-moment variance of the product estimator
            let se = ((want[[i, i]] * want[[j, j]] + target * target) / n_paths as f64).sqrt();
            let dev = (emp - target).abs() / se;
            worst = worst.max(dev);
            rows.push(vec![grid.node(i), grid.node(j), emp, target, se, dev]);
        }
    }
    let csv = artifacts::csv_table(
        &["t_i", "t_j", "empirical", "kernel", "se", "dev_in_se"],
        &rows,
    );
    artifacts::write_artifact(
        &common.out,
        "noise-test",
        &csv,
        &cfg,
        "noise-test",
        serde_json::json!({ "n_paths": n_paths, "worst_dev_in_se": worst }),
        None,
    )?;

    // identical seeds must reproduce the identical path
    let a = gen.sample_indexed(cfg.seed, 0);
    let b = gen.sample_indexed(cfg.seed, 0);
    if a.values != b.values {
        return Err(CliError::Failure("seeded paths are not reproducible".into()));
    }
    println!("noise-test: worst covariance deviation {worst:.2} se over {n_paths} paths");
    if worst > 5.0 {
        return Err(CliError::Failure(format!(
            "empirical covariance deviates {worst:.2} se from the kernel"
        )));
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}
