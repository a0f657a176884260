//! Key-value run configuration shared by the simulation subcommands.
//!
//! The file format is one `key = value` pair per line, `#` comments and
//! blank lines ignored. Unknown keys are rejected so typos cannot
//! silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use qmupl_core::dynamics::GaussianState;
use qmupl_core::ensemble::{EnsembleConfig, XiMode};
use qmupl_core::{CorrelationKernel, PhysicalParams, TimeGrid, HBAR_SI};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Si,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    White,
    Exponential { gamma: f64 },
}

/// Parsed run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub units: Units,
    /// Particle mass: kg under SI units, dimensionless otherwise.
    pub mass: f64,
    pub m0: f64,
    pub lambda0: f64,
    pub kernel: KernelChoice,
    pub t_final: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub n_paths: usize,
    pub report_every: Option<usize>,
    pub sigma0: f64,
    pub q0: f64,
    pub p0: f64,
    pub mode: XiMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            units: Units::Natural,
            mass: 1.0,
            m0: 1.0,
            lambda0: 0.25,
            kernel: KernelChoice::Exponential { gamma: 1.0 },
            t_final: 2.0,
            n_steps: 400,
            seed: 42,
            n_paths: 1000,
            report_every: None,
            sigma0: 1.0,
            q0: 0.0,
            p0: 0.0,
            mode: XiMode::Collapse,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut gamma: Option<f64> = None;
        let mut kernel: Option<&str> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            let num = || -> Result<f64, CliError> {
                value
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: {key} needs a number", lineno + 1)))
            };
            let int = || -> Result<usize, CliError> {
                value
                    .parse::<usize>()
                    .map_err(|_| bad(format!("line {}: {key} needs an integer", lineno + 1)))
            };
            match key {
                "mass_kg" | "mass" => cfg.mass = num()?,
                "m0_kg" | "m0" => cfg.m0 = num()?,
                "lambda0" => cfg.lambda0 = num()?,
                "kernel" => kernel = Some(value),
                "gamma" => gamma = Some(num()?),
                "t_final" => cfg.t_final = num()?,
                "n_steps" => cfg.n_steps = int()?,
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|_| bad(format!("line {}: seed needs a u64", lineno + 1)))?
                }
                "paths" => cfg.n_paths = int()?,
                "report_every" => cfg.report_every = Some(int()?),
                "sigma0" => cfg.sigma0 = num()?,
                "q0" => cfg.q0 = num()?,
                "p0" => cfg.p0 = num()?,
                "units" => {
                    cfg.units = match value {
                        "si" => Units::Si,
                        "natural" => Units::Natural,
                        other => return Err(bad(format!("unknown units '{other}'"))),
                    }
                }
                "mode" => {
                    cfg.mode = match value {
                        "collapse" => XiMode::Collapse,
                        "unitary" => XiMode::Unitary,
                        other => return Err(bad(format!("unknown mode '{other}'"))),
                    }
                }
                other => return Err(bad(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        match (kernel, gamma) {
            (Some("white"), None) => cfg.kernel = KernelChoice::White,
            (Some("white"), Some(_)) => {
                return Err(bad("gamma makes no sense with the white kernel"))
            }
            (Some("exponential"), Some(g)) => cfg.kernel = KernelChoice::Exponential { gamma: g },
            (Some("exponential"), None) => {
                return Err(bad("the exponential kernel needs a gamma value"))
            }
            (Some(other), _) => return Err(bad(format!("unknown kernel '{other}'"))),
            (None, Some(g)) => cfg.kernel = KernelChoice::Exponential { gamma: g },
            (None, None) => {}
        }
        Ok(cfg)
    }

    pub fn hbar(&self) -> f64 {
        match self.units {
            Units::Si => HBAR_SI,
            Units::Natural => 1.0,
        }
    }

    pub fn params(&self) -> Result<PhysicalParams, CliError> {
        PhysicalParams::new(self.mass, self.m0, self.hbar(), self.lambda0)
            .map_err(|e| bad(format!("invalid physical parameters: {e}")))
    }

    pub fn kernel(&self) -> Result<CorrelationKernel, CliError> {
        match self.kernel {
            KernelChoice::White => Ok(CorrelationKernel::White),
            KernelChoice::Exponential { gamma } => CorrelationKernel::exponential(gamma)
                .map_err(|e| bad(format!("invalid kernel: {e}"))),
        }
    }

    /// Initial normalized Gaussian: spread sigma0, centered at (q0, p0).
    pub fn initial_state(&self) -> Result<GaussianState, CliError> {
        if !(self.sigma0 > 0.0) {
            return Err(bad(format!("sigma0 must be positive (got {})", self.sigma0)));
        }
        let ar = 0.25 / (self.sigma0 * self.sigma0);
        let beta = Complex64::new(2.0 * ar * self.q0, self.p0 / self.hbar());
        GaussianState::new(Complex64::new(ar, 0.0), beta, Complex64::new(0.0, 0.0))
            .map(|s| s.normalized())
            .map_err(|e| bad(format!("invalid initial state: {e}")))
    }

    fn report_every(&self) -> usize {
        match self.report_every {
            Some(r) => r,
            // default to ten report intervals when that divides the grid
            None if self.n_steps % 10 == 0 => self.n_steps / 10,
            None => 1,
        }
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig, CliError> {
        let grid = TimeGrid::new(self.t_final, self.n_steps)
            .map_err(|e| bad(format!("invalid time grid: {e}")))?;
        Ok(EnsembleConfig {
            params: self.params()?,
            kernel: self.kernel()?,
            grid,
            n_paths: self.n_paths,
            master_seed: self.seed,
            initial: self.initial_state()?,
            xi_mode: self.mode,
            report_every: self.report_every(),
        })
    }

    /// Echo of the effective configuration, in the input file format.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "units = {}",
            match self.units {
                Units::Si => "si",
                Units::Natural => "natural",
            }
        );
        let _ = writeln!(s, "mass = {}", self.mass);
        let _ = writeln!(s, "m0 = {}", self.m0);
        let _ = writeln!(s, "lambda0 = {}", self.lambda0);
        match self.kernel {
            KernelChoice::White => {
                let _ = writeln!(s, "kernel = white");
            }
            KernelChoice::Exponential { gamma } => {
                let _ = writeln!(s, "kernel = exponential");
                let _ = writeln!(s, "gamma = {gamma}");
            }
        }
        let _ = writeln!(s, "t_final = {}", self.t_final);
        let _ = writeln!(s, "n_steps = {}", self.n_steps);
        let _ = writeln!(s, "report_every = {}", self.report_every());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "paths = {}", self.n_paths);
        let _ = writeln!(s, "sigma0 = {}", self.sigma0);
        let _ = writeln!(s, "q0 = {}", self.q0);
        let _ = writeln!(s, "p0 = {}", self.p0);
        let _ = writeln!(
            s,
            "mode = {}",
            match self.mode {
                XiMode::Collapse => "collapse",
                XiMode::Unitary => "unitary",
            }
        );
        s
    }
}
