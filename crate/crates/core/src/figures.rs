//! Deterministic data behind the four standard figures.
//!
//! The spread sigma(t) of a Gaussian packet is noise independent, so each
//! figure is a single closed-form evaluation per (gamma, t) point; no
//! Monte Carlo is involved and the presets run in milliseconds. All
//! quantities are in SI units (seconds, meters, 1/seconds).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::closedform::exponential::ExponentialGreen;
use crate::closedform::white::WhiteGreen;
use crate::dynamics::KernelGreen;
use crate::error::{CoreError, Result};
use crate::params::PhysicalParams;

/// Ratios gamma/omega of the standard logarithmic sweep, bracketing the
/// strongly non-Markovian regime and the white-noise plateau.
pub const GAMMA_SWEEP_MIN: f64 = 1e-2;
pub const GAMMA_SWEEP_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureName {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl FigureName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            _ => Err(CoreError::Domain(format!(
                "unknown figure '{s}' (expected fig1, fig2, fig3 or fig4)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
        }
    }

    pub const ALL: [FigureName; 4] = [Self::Fig1, Self::Fig2, Self::Fig3, Self::Fig4];
}

/// One curve of a figure: sigma values over the shared x grid.
#[derive(Debug, Clone, Serialize)]
pub struct FigureCurve {
    pub label: String,
    /// Correlation rate in 1/s; None marks the white-noise reference.
    pub gamma: Option<f64>,
    pub values: Vec<f64>,
}

/// Parameters stamped into the metadata sidecar of every figure.
#[derive(Debug, Clone, Serialize)]
pub struct FigureParams {
    pub mass_kg: f64,
    pub m0_kg: f64,
    pub lambda0: f64,
    pub lambda: f64,
    pub omega: f64,
    pub sigma0_m: f64,
    /// Fixed evaluation time for the gamma sweeps (fig3/fig4).
    pub t_eval_s: Option<f64>,
    pub description: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureData {
    pub name: FigureName,
    pub x_label: String,
    pub y_label: String,
    /// Suggested x-axis scale for the plot script.
    pub log_x: bool,
    pub log_y: bool,
    pub x: Vec<f64>,
    pub curves: Vec<FigureCurve>,
    pub params: FigureParams,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// alpha of a centered packet with the given spread.
fn alpha0(sigma0: f64) -> Complex64 {
    Complex64::new(0.25 / (sigma0 * sigma0), 0.0)
}

fn sigma_curve_over_time(
    p: &PhysicalParams,
    gamma: Option<f64>,
    sigma0: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    let a0 = alpha0(sigma0);
    match gamma {
        None => {
            let g = WhiteGreen::new(p)?;
            times
                .iter()
                .map(|&t| KernelGreen::White(&g).sigma_at(a0, t))
                .collect()
        }
        Some(gamma) => {
            let g = ExponentialGreen::new(p, gamma)?;
            times
                .iter()
                .map(|&t| KernelGreen::Exponential(&g).sigma_at(a0, t))
                .collect()
        }
    }
}

/// sigma(t) curves for a gamma list plus the white (gamma = infinity)
/// reference, m = 1 kg, sigma(0) = 1 m.
fn spread_vs_time(name: FigureName, times: Vec<f64>, log_x: bool) -> Result<FigureData> {
    let p = PhysicalParams::grw(1.0)?;
    let omega = p.omega();
    let sigma0 = 1.0;
    let ratios = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
    let mut curves: Vec<FigureCurve> = ratios
        .par_iter()
        .map(|&r| {
            let gamma = r * omega;
            Ok(FigureCurve {
                label: format!("gamma = {gamma:.3e}/s"),
                gamma: Some(gamma),
                values: sigma_curve_over_time(&p, Some(gamma), sigma0, &times)?,
            })
        })
        .collect::<Result<_>>()?;
    curves.push(FigureCurve {
        label: "gamma = infinity (white)".into(),
        gamma: None,
        values: sigma_curve_over_time(&p, None, sigma0, &times)?,
    });
    Ok(FigureData {
        name,
        x_label: "t_seconds".into(),
        y_label: "sigma_meters".into(),
        log_x,
        log_y: true,
        x: times,
        curves,
        params: FigureParams {
            mass_kg: p.m,
            m0_kg: p.m0,
            lambda0: p.lambda0,
            lambda: p.lambda,
            omega,
            sigma0_m: sigma0,
            t_eval_s: None,
            description: format!(
                "spread of a 1 kg Gaussian packet, sigma(0) = 1 m, for several \
                 correlation rates gamma and the white-noise reference ({})",
                name.as_str()
            ),
        },
    })
}

/// sigma(t_eval) as a function of gamma, with the white value alongside.
fn spread_vs_gamma(name: FigureName, p: PhysicalParams, t_eval: f64) -> Result<FigureData> {
    let omega = p.omega();
    let sigma0 = 1.0;
    let gammas = log_grid(GAMMA_SWEEP_MIN * omega, GAMMA_SWEEP_MAX * omega, 61);
    let a0 = alpha0(sigma0);
    let values: Vec<f64> = gammas
        .par_iter()
        .map(|&gamma| {
            let g = ExponentialGreen::new(&p, gamma)?;
            KernelGreen::Exponential(&g).sigma_at(a0, t_eval)
        })
        .collect::<Result<_>>()?;
    let white = WhiteGreen::new(&p)?;
    let white_sigma = KernelGreen::White(&white).sigma_at(a0, t_eval)?;
    Ok(FigureData {
        name,
        x_label: "gamma_per_second".into(),
        y_label: "sigma_meters".into(),
        log_x: true,
        log_y: true,
        x: gammas,
        curves: vec![
            FigureCurve {
                label: "exponential kernel".into(),
                gamma: None,
                values,
            },
            FigureCurve {
                label: "white-noise reference".into(),
                gamma: None,
                values: vec![white_sigma; 61],
            },
        ],
        params: FigureParams {
            mass_kg: p.m,
            m0_kg: p.m0,
            lambda0: p.lambda0,
            lambda: p.lambda,
            omega,
            sigma0_m: sigma0,
            t_eval_s: Some(t_eval),
            description: format!(
                "spread reached at t = {t_eval:.3e} s from sigma(0) = 1 m as a \
                 function of the correlation rate gamma ({})",
                name.as_str()
            ),
        },
    })
}

/// Deterministic data of one of the standard figures.
pub fn figure(name: FigureName) -> Result<FigureData> {
    match name {
        // short horizon, linear time axis
        FigureName::Fig1 => spread_vs_time(name, linear_grid(5e-5, 1e-2, 200), false),
        // long horizon, logarithmic time axis; the white asymptote
        // sits at sigma_infinity ~ 1.7e-15 m
        FigureName::Fig2 => spread_vs_time(name, log_grid(1e-2, 1e7, 200), true),
        FigureName::Fig3 => spread_vs_gamma(name, PhysicalParams::grw(1.01e-3)?, 1e-3),
        FigureName::Fig4 => spread_vs_gamma(name, PhysicalParams::adler(1.06e-18)?, 3.33e-2),
    }
}
