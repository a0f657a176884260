//! Cross-oracle validation suite.
//!
//! Nine numbered groups of checks compare independent computational
//! routes against each other: the discretized boundary-value solver
//! against both closed forms, closed forms against their white-noise
//! limits, Monte Carlo ensembles against analytic expectation laws, and
//! the structural identities of the model (time reversal, decomposition,
//! Vieta relations, positive definiteness, well-posedness). Each check
//! reports the measured figure of merit next to its allowed bound so a
//! failure is diagnosable from the report alone.

use std::time::Instant;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Solve, UPLO};
use num_complex::Complex64;
use serde::Serialize;

use crate::bvp::{uniqueness_probe, DiscretizedSystem};
use crate::closedform::exponential::ExponentialGreen;
use crate::closedform::trapezoid_complex;
use crate::closedform::white::WhiteGreen;
use crate::dynamics::{
    mass_rescale_check, mass_rescale_state, propagate, GaussianState, GreenCoefficients,
    KernelGreen,
};
use crate::ensemble::{
    analytic_energy, imaginary_noise_compare, run_ensemble, variance_scaling, EnsembleConfig,
    XiMode,
};
use crate::error::{CoreError, Result};
use crate::figures::{figure, FigureName};
use crate::manybody::coupling_matrix;
use crate::noise::{NoiseGenerator, SmoothNoise};
use crate::params::{CorrelationKernel, PhysicalParams, TimeGrid};

/// One validation check: passes when `measured <= allowed`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    /// Check group (1 through 9).
    pub group: usize,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub allowed: f64,
    pub detail: String,
}

impl CheckResult {
    fn bounded(
        group: usize,
        name: &str,
        measured: f64,
        allowed: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            group,
            name: name.into(),
            passed: measured.is_finite() && measured <= allowed,
            measured,
            allowed,
            detail: detail.into(),
        }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    !results.is_empty() && results.iter().all(|r| r.passed)
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn natural() -> Result<PhysicalParams> {
    PhysicalParams::dimensionless(0.25)
}

/// Standard ensemble configuration of the Monte Carlo checks: a
/// normalized packet with nonzero mean position and momentum.
fn moving_packet_config(kernel: CorrelationKernel, n_paths: usize) -> Result<EnsembleConfig> {
    Ok(EnsembleConfig {
        params: natural()?,
        kernel,
        grid: TimeGrid::new(2.0, 400)?,
        n_paths,
        master_seed: 42,
        initial: GaussianState::new(
            Complex64::new(0.5, 0.0),
            Complex64::new(0.3, 0.8),
            Complex64::new(0.0, 0.0),
        )?
        .normalized(),
        xi_mode: XiMode::Collapse,
        report_every: 100,
    })
}

fn runtime_check(group: usize, started: Instant, allowed_s: f64) -> CheckResult {
    CheckResult::bounded(
        group,
        "runtime budget",
        started.elapsed().as_secs_f64(),
        allowed_s,
        "wall-clock seconds for this check group",
    )
}

/// Group 1: the general discretized solver with a near-delta tabulated
/// kernel reproduces the white-noise closed forms (profile, coefficients,
/// prefactor), and the exponential closed form at gamma/omega = 1e3
/// approaches the white one.
pub fn check_white_oracle() -> Result<Vec<CheckResult>> {
    let started = Instant::now();
    let g = 1;
    let p = natural()?;
    let t = 2.0;
    let grid = TimeGrid::new(t, 4000)?;
    // correlation time 1/gamma spans 10 grid steps: short against the
    // horizon yet still resolved, so the discrete boundary layer at the
    // endpoints does not pollute the one-sided derivative stencils
    let gamma = 200.0 * p.omega();
    let kernel = CorrelationKernel::tabulated_exponential(grid, gamma)?;
    let sys = DiscretizedSystem::assemble(&kernel, grid, &p)?;
    let fac = sys.factorize()?;
    let f = fac.solve_f()?;
    let gsol = fac.solve_g()?;
    let white = WhiteGreen::new(&p)?;
    let kappa = Complex64::new(0.0, p.m / (2.0 * p.hbar));

    let mut out = Vec::new();
    let mut max_err = 0.0f64;
    for k in 0..=grid.n_steps {
        max_err = max_err.max((f.values[k] - white.f(t, grid.node(k))).norm());
    }
    out.push(CheckResult::bounded(
        g,
        "near-delta f profile vs white closed form",
        max_err,
        1e-2,
        "max deviation over 4001 nodes, relative to the profile scale f(0) = 1",
    ));
    out.push(CheckResult::bounded(
        g,
        "near-delta A_t vs white closed form",
        rel(kappa * f.prime_0, white.coef_a(t)),
        1e-2,
        "A_t = k f'(0) from the discrete solution",
    ));
    out.push(CheckResult::bounded(
        g,
        "near-delta B_t vs white closed form",
        rel(kappa * (f.prime_t - gsol.prime_0), white.coef_b(t)),
        1e-2,
        "B_t = k (f'(t) - g'(0)) from the discrete solution",
    ));
    // two-grid Richardson step for u(t); the fine-grid determinant comes
    // for free from the factorization already used for f and g
    let u_fine = fac.prefactor_u()?;
    let coarse = TimeGrid::new(t, grid.n_steps / 2)?;
    let u_coarse = DiscretizedSystem::assemble(
        &CorrelationKernel::tabulated_exponential(coarse, gamma)?,
        coarse,
        &p,
    )?
    .factorize()?
    .prefactor_u()?;
    let u = u_fine + (u_fine - u_coarse) / 3.0;
    out.push(CheckResult::bounded(
        g,
        "near-delta prefactor u(t) vs white closed form",
        rel(u, white.u(t)),
        1e-2,
        "Richardson-extrapolated determinant prefactor",
    ));

    let gamma_cf = 1e3 * p.omega();
    let exp = ExponentialGreen::new(&p, gamma_cf)?;
    let mut max_f = 0.0f64;
    for &s in &[0.0, 0.3, 0.7, 1.0, 1.5, 1.9] {
        max_f = max_f.max((exp.f(t, s)? - white.f(t, s)).norm());
    }
    out.push(CheckResult::bounded(
        g,
        "exponential closed form at gamma/omega = 1e3 vs white",
        max_f
            .max(rel(exp.coef_a(t)?, white.coef_a(t)))
            .max(rel(exp.coef_b(t)?, white.coef_b(t))),
        1e-2,
        "profile samples and both deterministic coefficients",
    ));
    out.push(runtime_check(g, started, 60.0));
    Ok(out)
}

/// Group 2: the exponential closed forms for f and for the noise profile
/// h (smooth test noise) match the discretized solver at N = 2000 across
/// three correlation rates.
pub fn check_exponential_vs_bvp() -> Result<Vec<CheckResult>> {
    let started = Instant::now();
    let g = 2;
    let p = natural()?;
    let t = 2.0;
    let grid = TimeGrid::new(t, 2000)?;
    let noise = SmoothNoise::Sinusoid {
        amp: 1.1,
        freq: 2.5,
        phase: 0.7,
    };
    let mut out = Vec::new();
    for &ratio in &[0.1, 1.0, 10.0] {
        let gamma = ratio * p.omega();
        let green = ExponentialGreen::new(&p, gamma)?;
        let sys = DiscretizedSystem::assemble(
            &CorrelationKernel::exponential(gamma)?,
            grid,
            &p,
        )?;
        let fac = sys.factorize()?;

        let f = fac.solve_f()?;
        let mut max_f = 0.0f64;
        for k in 0..=grid.n_steps {
            let want = green.f(t, grid.node(k))?;
            max_f = max_f.max((f.values[k] - want).norm() / want.norm().max(1.0));
        }
        out.push(CheckResult::bounded(
            g,
            &format!("f closed form vs solver, gamma/omega = {ratio}"),
            max_f,
            1e-4,
            "max relative deviation over 2001 nodes",
        ));

        let path = noise.on_grid(grid);
        let h = fac.solve_h(&path)?;
        let want = green.h_solution(grid, &noise)?;
        let scale = want
            .values
            .iter()
            .map(|v| v.norm())
            .fold(f64::MIN_POSITIVE, f64::max);
        let mut max_h = 0.0f64;
        for k in 0..=grid.n_steps {
            max_h = max_h.max((h.values[k] - want.values[k]).norm() / scale);
        }
        out.push(CheckResult::bounded(
            g,
            &format!("h closed form vs solver, gamma/omega = {ratio}"),
            max_h,
            1e-4,
            "smooth sinusoid noise, deviation relative to the profile scale",
        ));
    }
    out.push(runtime_check(g, started, 60.0));
    Ok(out)
}

/// Group 3: asymptotic spread. The white-limit alpha_infinity equals
/// sqrt(lambda m / 2 i hbar); for a 1 kg particle the asymptotic spread
/// sits within a factor 2 of the quoted 1.27e-15 m; and the deterministic
/// alpha_t reaches alpha_infinity to 1% by omega t = 50.
pub fn check_asymptotic_spread() -> Result<Vec<CheckResult>> {
    let g = 3;
    let p = natural()?;
    let mut out = Vec::new();

    let want = (Complex64::new(0.0, -1.0) * p.lambda * p.m / (2.0 * p.hbar)).sqrt();
    let exp = ExponentialGreen::new(&p, 1e6 * p.omega())?;
    out.push(CheckResult::bounded(
        g,
        "alpha_infinity white limit at gamma/omega = 1e6",
        rel(exp.alpha_infinity(), want),
        1e-6,
        "closed-form root combination vs sqrt(lambda m / 2 i hbar)",
    ));

    let grw = PhysicalParams::grw(1.0)?;
    let white = WhiteGreen::new(&grw)?;
    let sigma_inf = 1.0 / (2.0 * white.alpha_infinity().re.sqrt());
    let quoted = 1.27e-15;
    let ratio = (sigma_inf / quoted).max(quoted / sigma_inf);
    out.push(CheckResult::bounded(
        g,
        "1 kg asymptotic spread vs quoted 1.27e-15 m",
        ratio,
        2.0,
        format!(
            "computed sigma_infinity = {sigma_inf:.3e} m; the factor-2 \
             window covers the normalization ambiguity of the quoted value"
        ),
    ));

    let mut worst = 0.0f64;
    for &ratio in &[0.1, 1.0, 10.0] {
        let green = ExponentialGreen::new(&p, ratio * p.omega())?;
        let kg = KernelGreen::Exponential(&green);
        let (a, b, quad) = kg.deterministic_coefs(50.0 / p.omega())?;
        let coefs = GreenCoefficients {
            a,
            a_tilde: a,
            b,
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(0.0, 0.0),
            e: Complex64::new(0.0, 0.0),
            quad_invariant: Some(quad),
        };
        let state = propagate(&GaussianState::from_spread(1.0)?, &coefs)?;
        worst = worst.max(rel(state.alpha, green.alpha_infinity()));
    }
    out.push(CheckResult::bounded(
        g,
        "alpha_t at omega t = 50 vs alpha_infinity",
        worst,
        1e-2,
        "worst case over gamma/omega in {0.1, 1, 10}",
    ));
    Ok(out)
}

/// Group 4: figure reproduction. The sigma(t) curves are monotone in
/// gamma with the white reference as their lower envelope, the gap to the
/// white curve shrinks as gamma grows, and the fig3 sweep localizes below
/// 1e-7 m in its upper gamma range.
pub fn check_figures() -> Result<Vec<CheckResult>> {
    let started = Instant::now();
    let g = 4;
    let mut out = Vec::new();
    for name in [FigureName::Fig1, FigureName::Fig2] {
        let data = figure(name)?;
        let last = data.x.len() - 1;
        let finals: Vec<f64> = data.curves.iter().map(|c| c.values[last]).collect();
        // curves are ordered by growing gamma with white last
        let mut worst_ratio = 0.0f64;
        for pair in finals.windows(2) {
            worst_ratio = worst_ratio.max(pair[1] / pair[0]);
        }
        out.push(CheckResult::bounded(
            g,
            &format!("{} monotone in gamma at the final time", name.as_str()),
            worst_ratio,
            1.0,
            "largest adjacent sigma ratio along growing gamma (white last)",
        ));

        let white = *finals.last().unwrap();
        let gaps: Vec<f64> = finals[..finals.len() - 1]
            .iter()
            .map(|s| s - white)
            .collect();
        let mut worst_gap_ratio = 0.0f64;
        for pair in gaps.windows(2) {
            worst_gap_ratio = worst_gap_ratio.max(pair[1] / pair[0]);
        }
        out.push(CheckResult::bounded(
            g,
            &format!("{} converges to the white reference", name.as_str()),
            worst_gap_ratio,
            1.0,
            "gap to the white curve shrinks curve to curve as gamma grows",
        ));
    }

    let fig3 = figure(FigureName::Fig3)?;
    out.push(CheckResult::bounded(
        g,
        "fig3 localization in the upper gamma range",
        *fig3.curves[0].values.last().unwrap(),
        1e-7,
        "sigma(1e-3 s) in meters at the top of the gamma sweep",
    ));
    figure(FigureName::Fig4)?;
    out.push(runtime_check(g, started, 300.0));
    Ok(out)
}

/// Group 5: physical-measure means stay Newtonian. Over omega t in
/// [0, 10] with gamma = omega, the ensemble mean momentum is constant and
/// the mean position moves on the matching straight line, within three
/// standard errors at 1e4 paths.
pub fn check_newtonian_means() -> Result<Vec<CheckResult>> {
    let started = Instant::now();
    let g = 5;
    let mut config = moving_packet_config(CorrelationKernel::exponential(1.0)?, 10_000)?;
    config.grid = TimeGrid::new(10.0, 1000)?;
    config.report_every = 100;
    let rep = run_ensemble(&config)?;
    let q0 = rep.mean_q[0];
    let p0 = rep.mean_p[0];
    let mut worst_p = 0.0f64;
    let mut worst_q = 0.0f64;
    for j in 1..rep.times.len() {
        worst_p = worst_p.max((rep.mean_p[j] - p0).abs() / rep.se_p[j]);
        let want_q = q0 + p0 / config.params.m * rep.times[j];
        worst_q = worst_q.max((rep.mean_q[j] - want_q).abs() / rep.se_q[j]);
    }
    let mut out = vec![
        CheckResult::bounded(
            g,
            "mean momentum constant",
            worst_p,
            3.0,
            "worst deviation from p(0) in standard errors over 10 report times",
        ),
        CheckResult::bounded(
            g,
            "mean position Newtonian",
            worst_q,
            3.0,
            "worst deviation from q(0) + p(0) t / m in standard errors",
        ),
    ];
    out.push(runtime_check(g, started, 600.0));
    Ok(out)
}

/// Group 6: mean energy growth matches
/// (lambda hbar^2 / 2m) (t + (e^{-gamma t} - 1)/gamma) within 5% at 1e3
/// paths, and the small-time quadratic and large-time linear regimes are
/// both visible in the sampled curve.
pub fn check_energy_growth() -> Result<Vec<CheckResult>> {
    let g = 6;
    let mut config = moving_packet_config(CorrelationKernel::exponential(1.0)?, 1000)?;
    config.grid = TimeGrid::new(4.0, 400)?;
    config.report_every = 25;
    let rep = run_ensemble(&config)?;
    let e0 = rep.mean_energy[0];
    let scale = config.params.lambda * config.params.hbar * config.params.hbar
        / (2.0 * config.params.m);

    // the gain estimate carries Monte Carlo noise of its own, so the 5%
    // band applies to the deviation in excess of two standard errors
    let mut worst = 0.0f64;
    for j in 1..rep.times.len() {
        let want = analytic_energy(&config.params, &config.kernel, rep.times[j])?;
        let dev = ((rep.mean_energy[j] - e0) - want).abs() - 2.0 * rep.se_energy[j];
        worst = worst.max(dev.max(0.0) / want);
    }
    let mut out = vec![CheckResult::bounded(
        g,
        "mean energy vs analytic growth law",
        worst,
        0.05,
        "worst relative deviation of the energy gain beyond two standard \
         errors, over 16 report times",
    )];

    // early on the gain grows quadratically, so it sits far below the
    // asymptotic linear rate
    let j_small = rep.times.iter().position(|&t| t >= 0.25).unwrap();
    let small_ratio = (rep.mean_energy[j_small] - e0) / (scale * rep.times[j_small]);
    out.push(CheckResult::bounded(
        g,
        "small-time quadratic regime",
        small_ratio,
        0.2,
        "energy gain at t = 0.25 relative to the asymptotic linear rate",
    ));

    let j3 = rep.times.iter().position(|&t| t >= 3.0).unwrap();
    let j4 = rep.times.len() - 1;
    let slope = (rep.mean_energy[j4] - rep.mean_energy[j3])
        / (scale * (rep.times[j4] - rep.times[j3]));
    out.push(CheckResult::bounded(
        g,
        "large-time linear regime",
        (slope - 1.0).abs(),
        0.25,
        "late-time energy slope relative to lambda hbar^2 / 2m",
    ));
    Ok(out)
}

/// Group 7: the imaginary-noise trick. Collapse (xi = 1) and random
/// unitary (xi = i) runs give the same density matrix on a 41-point
/// position grid, entrywise within four combined standard errors at 1e4
/// paths; the derived observables agree as well.
pub fn check_imaginary_noise_trick() -> Result<Vec<CheckResult>> {
    let g = 7;
    let mut config = moving_packet_config(CorrelationKernel::White, 10_000)?;
    // both modes are O(eps) accurate with different constants; the grid
    // must be fine enough that the gap sits below the Monte Carlo errors
    config.grid = TimeGrid::new(2.0, 1600)?;
    config.report_every = 400;
    config.initial = GaussianState::from_spread(1.0)?.normalized();
    let x_grid: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
    let cmp = imaginary_noise_compare(&config, &x_grid)?;

    let mut out = vec![CheckResult::bounded(
        g,
        "density matrices agree entrywise",
        cmp.worst_dev_in_se,
        4.0,
        format!(
            "worst entry deviation in combined standard errors; traces \
             {:.4} (collapse) and {:.4} (unitary)",
            cmp.trace_collapse, cmp.trace_unitary
        ),
    )];
    let worst_obs = cmp
        .mean_q_dev_in_se
        .iter()
        .chain(&cmp.mean_p_dev_in_se)
        .chain(&cmp.energy_dev_in_se)
        .fold(0.0f64, |a, &d| a.max(d));
    out.push(CheckResult::bounded(
        g,
        "derived observables agree",
        worst_obs,
        4.0,
        "mean position, momentum and energy at every report time",
    ));
    Ok(out)
}

/// Group 8: mass scaling. With matched noise, position fluctuations at
/// 100x the mass shrink exactly tenfold, and the deterministic spreads
/// obey the rescaling symmetry to 1e-10.
pub fn check_mass_scaling() -> Result<Vec<CheckResult>> {
    let g = 8;
    let mut config = moving_packet_config(CorrelationKernel::White, 300)?;
    config.initial = GaussianState::from_spread(1.0)?.normalized();
    let fit = variance_scaling(&config, &[1.0, 10.0, 100.0])?;
    let ratio = (fit.fluct_q[2] / fit.fluct_q[0]).powi(2);
    let mut out = vec![
        CheckResult::bounded(
            g,
            "position variance ratio at 100x mass",
            (ratio - 0.01).abs(),
            1e-10,
            "matched noise seeds make the 1/100 variance ratio exact",
        ),
        CheckResult::bounded(
            g,
            "fluctuation scaling exponents",
            (fit.slope_q + 0.5)
                .abs()
                .max((fit.slope_p - 0.5).abs())
                .max((fit.slope_v + 0.5).abs()),
            0.02,
            "log-log slopes of position (-1/2), momentum (+1/2) and velocity (-1/2) fluctuations",
        ),
    ];

    // pathwise symmetry of the deterministic spread
    let ratio_m = 100.0;
    let p0 = natural()?;
    let pm = PhysicalParams::new(ratio_m * p0.m, p0.m0, p0.hbar, p0.lambda0)?;
    let grid = TimeGrid::new(2.0, 500)?;
    let gen = NoiseGenerator::new(&CorrelationKernel::White, grid)?;
    let path = gen.sample_indexed(17, 4);
    let w0 = WhiteGreen::new(&p0)?;
    let wm = WhiteGreen::new(&pm)?;
    let s0 = GaussianState::from_spread(1.0)?;
    let sm = mass_rescale_state(&s0, ratio_m)?;
    let mut traj0 = Vec::new();
    let mut trajm = Vec::new();
    for (c0, cm) in w0.trajectory(&path).iter().zip(wm.trajectory(&path)).skip(1) {
        let mut g0 = GreenCoefficients::from_green_coefs(*c0);
        g0.quad_invariant = Some(w0.a_sq_minus_quarter_b_sq());
        let mut gm = GreenCoefficients::from_green_coefs(cm);
        gm.quad_invariant = Some(wm.a_sq_minus_quarter_b_sq());
        traj0.push(propagate(&s0, &g0)?);
        trajm.push(propagate(&sm, &gm)?);
    }
    let report = mass_rescale_check(&trajm, &traj0, ratio_m)?;
    out.push(CheckResult::bounded(
        g,
        "deterministic spread rescaling symmetry",
        report.max_sigma_deviation,
        1e-10,
        "max relative deviation of sigma_m sqrt(m/m0) from sigma_m0 along a shared path",
    ));
    Ok(out)
}

/// Group 9: structural property suite: time reversal, solution
/// decomposition, homogeneous-mode splitting of h, the three routes to
/// E_t, Vieta identities of the characteristic roots, positive
/// definiteness of the many-body coupling matrix, and grid stability of
/// the uniqueness probe.
pub fn check_properties() -> Result<Vec<CheckResult>> {
    let g = 9;
    let p = natural()?;
    let mut out = Vec::new();

    // g(s) = f(t - s) for time-translation-invariant kernels
    {
        let grid = TimeGrid::new(2.0, 400)?;
        let kernel = CorrelationKernel::exponential(1.0)?;
        let fac_sys = DiscretizedSystem::assemble(&kernel, grid, &p)?;
        let fac = fac_sys.factorize()?;
        let f = fac.solve_f()?;
        let gsol = fac.solve_g()?;
        let n = grid.n_steps;
        let mut worst = 0.0f64;
        for k in 0..=n {
            worst = worst.max((gsol.values[k] - f.values[n - k]).norm());
        }
        out.push(CheckResult::bounded(
            g,
            "time-reversal symmetry g(s) = f(t - s)",
            worst,
            1e-8,
            "exponential kernel, 400-step grid",
        ));

        // z = f x0 + g x + h
        let gen = NoiseGenerator::new(&kernel, grid)?;
        let noise = gen.sample_indexed(11, 0);
        let (x0, x) = (0.7, -0.4);
        let z = fac.solve(&crate::bvp::BoundaryProblem::Full {
            noise: &noise,
            x0,
            x,
        })?;
        let h = fac.solve_h(&noise)?;
        let mut worst = 0.0f64;
        for k in 0..=n {
            let want = f.values[k] * x0 + gsol.values[k] * x + h.values[k];
            worst = worst.max((z.values[k] - want).norm());
        }
        out.push(CheckResult::bounded(
            g,
            "solution decomposition z = f x0 + g x + h",
            worst,
            1e-10,
            "full boundary problem against its three building blocks",
        ));
    }

    // h splits into a particular part plus homogeneous characteristic modes
    {
        let green = ExponentialGreen::new(&p, 1.2)?;
        let grid = TimeGrid::new(2.0, 800)?;
        let noise = SmoothNoise::Sinusoid {
            amp: 0.9,
            freq: 3.0,
            phase: 0.3,
        };
        let h = green.h_solution(grid, &noise)?;
        let hp = green.h_particular_smooth(grid, &noise);
        let diff: Vec<Complex64> = h
            .values
            .iter()
            .zip(&hp)
            .map(|(&a, &b)| a - b)
            .collect();
        let scale = diff.iter().map(|v| v.norm()).fold(f64::MIN_POSITIVE, f64::max);
        let modes = |s: f64| -> [Complex64; 4] {
            let [u1, u2] = green.ups;
            [
                (u1 * s).sinh(),
                (u1 * s).cosh(),
                (u2 * s).sinh(),
                (u2 * s).cosh(),
            ]
        };
        let n = grid.n_steps;
        let sample = [n / 5, 2 * n / 5, 3 * n / 5, 4 * n / 5];
        let mat = Array2::from_shape_fn((4, 4), |(i, j)| modes(grid.node(sample[i]))[j]);
        let rhs = Array1::from_shape_fn(4, |i| diff[sample[i]]);
        let coef = mat.solve(&rhs).map_err(CoreError::from)?;
        let mut worst = 0.0f64;
        for k in 0..=n {
            let m = modes(grid.node(k));
            let fitted = (0..4).map(|j| coef[j] * m[j]).sum::<Complex64>();
            worst = worst.max((diff[k] - fitted).norm() / scale);
        }
        out.push(CheckResult::bounded(
            g,
            "h splitting into particular plus homogeneous modes",
            worst,
            1e-6,
            "h minus its particular part lies in the span of the four characteristic modes",
        ));
    }

    // three routes to E_t
    {
        let white = WhiteGreen::new(&p)?;
        let grid = TimeGrid::new(2.5, 3000)?;
        let gen = NoiseGenerator::new(&CorrelationKernel::White, grid)?;
        let path = gen.sample_indexed(7, 1);
        let end = white.coefs(&path);
        let h = white.h_values(&path);
        let integrand: Vec<Complex64> = h
            .iter()
            .zip(&path.values)
            .map(|(&hv, &w)| w * hv)
            .collect();
        let e_direct = 0.5 * p.lambda.sqrt() * trapezoid_complex(&integrand, grid.eps());
        let v = white.upsilon;
        let eps = grid.eps();
        let mut j_cum = Complex64::new(0.0, 0.0);
        let mut vals = vec![Complex64::new(0.0, 0.0); grid.n_nodes()];
        for k in 1..grid.n_nodes() {
            let s0 = grid.node(k - 1);
            let s1 = grid.node(k);
            j_cum += 0.5
                * eps
                * (path.values[k - 1] * (v * s0).sinh() + path.values[k] * (v * s1).sinh());
            vals[k] = path.values[k] * white.f(grid.t_final, s1) * j_cum;
        }
        let e_iter = 0.5 * v * trapezoid_complex(&vals, eps);
        let scale = end.e.norm().max(f64::MIN_POSITIVE);
        out.push(CheckResult::bounded(
            g,
            "triple equality of the E_t routes",
            ((end.e - e_direct).norm() / scale).max((end.e - e_iter).norm() / scale),
            2e-3,
            "accumulated D^2 route vs direct noise quadrature vs iterated integral",
        ));
    }

    // Vieta identities of the characteristic roots
    {
        let mut worst = 0.0f64;
        for &gamma in &[0.07, 1.0, 35.0] {
            let green = ExponentialGreen::new(&p, gamma)?;
            let [u1, u2] = green.ups;
            let g2 = gamma * gamma;
            let w2 = p.omega() * p.omega();
            let sum = u1 * u1 + u2 * u2 - Complex64::new(g2, 0.0);
            let prod = u1 * u1 * u2 * u2 - Complex64::new(0.0, 0.5 * g2 * w2);
            worst = worst
                .max(sum.norm() / g2)
                .max(prod.norm() / (0.5 * g2 * w2));
        }
        out.push(CheckResult::bounded(
            g,
            "Vieta identities of the characteristic roots",
            worst,
            1e-12,
            "sum and product of the squared roots across three gamma values",
        ));
    }

    // positive definiteness of the relative-coordinate coupling matrix
    {
        let lambdas = [1.0, 2.0, 3.0, 4.0];
        let cm = coupling_matrix(&lambdas)?;
        let chol_ok = cm.matrix.cholesky(UPLO::Lower).is_ok();
        out.push(CheckResult::bounded(
            g,
            "coupling matrix positive definite",
            if chol_ok { cm.certificate } else { f64::INFINITY },
            1.0,
            "rank-one certificate below one and an explicit Cholesky factorization",
        ));
    }

    // grid stability of the smallest singular value
    {
        let kernel = CorrelationKernel::exponential(1.5)?;
        let report = uniqueness_probe(&kernel, 2.0, &[100, 200, 400], &p)?;
        let s0 = report[0].sigma_min;
        let mut worst = 0.0f64;
        for entry in &report {
            let r = entry.sigma_min / s0;
            worst = worst.max(r.max(1.0 / r));
        }
        out.push(CheckResult::bounded(
            g,
            "uniqueness probe stable across grids",
            worst,
            2.0,
            "smallest singular value of the preconditioned operator at N = 100, 200, 400",
        ));
    }

    Ok(out)
}

/// Run one check group by number.
pub fn run_group(group: usize) -> Result<Vec<CheckResult>> {
    match group {
        1 => check_white_oracle(),
        2 => check_exponential_vs_bvp(),
        3 => check_asymptotic_spread(),
        4 => check_figures(),
        5 => check_newtonian_means(),
        6 => check_energy_growth(),
        7 => check_imaginary_noise_trick(),
        8 => check_mass_scaling(),
        9 => check_properties(),
        _ => Err(CoreError::Domain(format!(
            "check group must be 1 through 9 (got {group})"
        ))),
    }
}

pub const N_GROUPS: usize = 9;

/// Run the full suite in order.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for group in 1..=N_GROUPS {
        out.extend(run_group(group)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_groups_pass() {
        for group in [3, 4, 8, 9] {
            let results = run_group(group).unwrap();
            assert!(!results.is_empty());
            for r in &results {
                assert!(
                    r.passed,
                    "group {group}: {} measured {} allowed {} ({})",
                    r.name, r.measured, r.allowed, r.detail
                );
            }
        }
    }

    #[test]
    fn group_numbers_are_validated() {
        assert!(run_group(0).is_err());
        assert!(run_group(10).is_err());
    }
}
