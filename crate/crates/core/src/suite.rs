//! The verification battery: twenty Monte Carlo checks, each comparing a sampler
//! with an analytic value computed by a different route.

use serde::{Deserialize, Serialize};

use crate::batch;
use crate::cumulant::{extinction_prob, mean, stationary_laplace, transition_laplace};
use crate::discrete::{gwi_simulate, OffspringLaw};
use crate::error::{Error, Result};
use crate::measures::LevyMeasure;
use crate::mechanism::{stable_branching_sigma, BranchingMechanism, ImmigrationMechanism};
use crate::paths::{
    excursion_reconstruct_feller, feller_transition_sample, immigration_reconstruct_feller,
    simulate_feller_exact, uniform_grid, CbiScheme, LevyScheme, PathOptions, RateSpec, SamplePath,
    StableScheme,
};
use crate::rngkit::RandomStream;
use crate::verify::{
    branching_property_check_with, martingale_check, mc_compare, CheckReport, Z_THRESHOLD,
};

/// Smallest path count the suite accepts.
pub const MIN_SUITE_PATHS: usize = 1000;

/// Fraction of checks that must pass.
pub const PASS_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Paths per check (per arm for the branching property).
    pub n: usize,
    /// Step of the Euler-type schemes; their bias allowance is `3·euler_dt`.
    pub euler_dt: f64,
    /// Grid of the exact Feller paths used by the martingale checks.
    pub martingale_dt: f64,
    /// z-score threshold of every check.
    pub z_threshold: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 1,
            n: 100_000,
            euler_dt: 1e-2,
            martingale_dt: 2e-3,
            z_threshold: Z_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub reports: Vec<CheckReport>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> usize {
        self.reports.iter().filter(|r| r.pass).count()
    }

    pub fn total(&self) -> usize {
        self.reports.len()
    }

    /// Passes needed for the suite to succeed.
    pub fn required(&self) -> usize {
        (PASS_FRACTION * self.total() as f64 - 1e-9).ceil() as usize
    }

    pub fn succeeded(&self) -> bool {
        self.passed() >= self.required()
    }

    pub fn summary(&self) -> String {
        format!("PASS {}/{}", self.passed(), self.total())
    }
}

struct Ctx {
    cfg: SuiteConfig,
    root: RandomStream,
}

impl Ctx {
    fn stream(&self, check: u64) -> RandomStream {
        self.root.split(check)
    }

    fn draw<F>(&self, check: u64, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&mut RandomStream) -> Result<f64> + Sync + Send,
    {
        batch::map_indexed(&self.stream(check), self.cfg.n, |_, s| f(s))
    }

    fn compare(
        &self,
        name: &str,
        analytic: f64,
        samples: &[f64],
        lambda: f64,
        bias: f64,
        dt: f64,
    ) -> Result<CheckReport> {
        let h: Vec<f64> = samples.iter().map(|x| (-lambda * x).exp()).collect();
        Ok(
            mc_compare(name, analytic, &h, self.cfg.z_threshold, bias)?
                .with_meta(self.cfg.seed, dt),
        )
    }

    fn euler_bias(&self) -> f64 {
        3.0 * self.cfg.euler_dt
    }
}

/// Runs the battery. Results do not depend on the number of worker threads.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteOutcome> {
    if cfg.n < MIN_SUITE_PATHS {
        return Err(Error::domain(format!(
            "the suite needs at least {MIN_SUITE_PATHS} paths per check, got {}",
            cfg.n
        )));
    }
    if !(cfg.euler_dt > 0.0 && cfg.euler_dt <= 0.1)
        || !(cfg.martingale_dt > 0.0 && cfg.martingale_dt <= 0.25)
    {
        return Err(Error::domain(
            "suite steps must lie in (0, 0.1] (Euler) and (0, 0.25] (martingale grid)",
        ));
    }
    if !(cfg.z_threshold > 0.0 && cfg.z_threshold.is_finite()) {
        return Err(Error::domain("z threshold must be positive"));
    }
    let ctx = Ctx {
        cfg: *cfg,
        root: RandomStream::new(cfg.seed),
    };
    let mut reports = Vec::with_capacity(20);
    reports.extend(feller_exact_checks(&ctx)?);
    reports.extend(cir_checks(&ctx)?);
    reports.extend(reconstruction_checks(&ctx)?);
    reports.extend(martingale_checks(&ctx)?);
    reports.push(
        branching_property_check_with(
            |x, s| feller_transition_sample(1.0, 0.0, 0.0, x, 1.0, s),
            1.0,
            1.0,
            1.0,
            cfg.n,
            &ctx.stream(40),
            cfg.z_threshold,
        )?
        .with_meta(cfg.seed, 0.0),
    );
    reports.extend(scheme_checks(&ctx)?);
    reports.push(gwi_check(&ctx)?);
    Ok(SuiteOutcome { reports })
}

fn feller_exact_checks(ctx: &Ctx) -> Result<Vec<CheckReport>> {
    let critical = BranchingMechanism::feller(0.0, 1.0)?;
    let ys = ctx.draw(0, |s| feller_transition_sample(1.0, 0.0, 0.0, 1.0, 1.0, s))?;
    let laplace = ctx.compare(
        "feller_laplace",
        transition_laplace(&critical, None, 1.0, 1.0, 1.0)?,
        &ys,
        1.0,
        0.0,
        0.0,
    )?;
    let dead: Vec<f64> = ys
        .iter()
        .map(|&y| if y == 0.0 { 1.0 } else { 0.0 })
        .collect();
    let extinction = mc_compare(
        "feller_extinction",
        extinction_prob(&critical, 1.0, Some(1.0))?.prob,
        &dead,
        ctx.cfg.z_threshold,
        0.0,
    )?
    .with_meta(ctx.cfg.seed, 0.0);

    let sub = BranchingMechanism::feller(1.0, 1.0)?;
    let ys = ctx.draw(1, |s| feller_transition_sample(1.0, 1.0, 0.0, 1.0, 1.0, s))?;
    let drift = ctx.compare(
        "feller_laplace_drift",
        transition_laplace(&sub, None, 1.0, 1.0, 1.0)?,
        &ys,
        1.0,
        0.0,
        0.0,
    )?;

    let half = BranchingMechanism::feller(0.5, 1.0)?;
    let ys = ctx.draw(2, |s| feller_transition_sample(1.0, 0.5, 0.0, 2.0, 1.0, s))?;
    let m = mc_compare(
        "feller_mean",
        mean(&half, None, None, 2.0, 1.0)?,
        &ys,
        ctx.cfg.z_threshold,
        0.0,
    )?
    .with_meta(ctx.cfg.seed, 0.0);
    Ok(vec![laplace, extinction, drift, m])
}

fn cir_checks(ctx: &Ctx) -> Result<Vec<CheckReport>> {
    let phi = BranchingMechanism::feller(1.0, 1.0)?;
    let psi = ImmigrationMechanism::linear(1.0)?;
    let ys = ctx.draw(10, |s| feller_transition_sample(1.0, 1.0, 1.0, 0.0, 1.0, s))?;
    let mut out = vec![ctx.compare(
        "cir_transition",
        transition_laplace(&phi, Some(&psi), 0.0, 1.0, 1.0)?,
        &ys,
        1.0,
        0.0,
        0.0,
    )?];
    let ys = ctx.draw(11, |s| {
        feller_transition_sample(1.0, 1.0, 1.0, 1.0, 15.0, s)
    })?;
    for lambda in [0.5, 1.0, 2.0] {
        out.push(ctx.compare(
            &format!("cir_stationary_l{lambda}"),
            stationary_laplace(&phi, &psi, lambda)?,
            &ys,
            lambda,
            0.0,
            0.0,
        )?);
    }
    Ok(out)
}

fn reconstruction_checks(ctx: &Ctx) -> Result<Vec<CheckReport>> {
    let critical = BranchingMechanism::feller(0.0, 1.0)?;
    let paths = batch::map_indexed(&ctx.stream(20), ctx.cfg.n, |_, s| {
        let p = excursion_reconstruct_feller(1.0, 0.0, 1.0, 1.0, 2.0, 1.0, s)?;
        Ok((p.values[0], p.final_value()))
    })?;
    let (at1, at2): (Vec<f64>, Vec<f64>) = paths.into_iter().unzip();
    let e1 = ctx.compare(
        "excursion_t1",
        transition_laplace(&critical, None, 1.0, 1.0, 1.0)?,
        &at1,
        1.0,
        0.0,
        0.0,
    )?;
    let e2 = ctx.compare(
        "excursion_t2",
        transition_laplace(&critical, None, 1.0, 2.0, 1.0)?,
        &at2,
        1.0,
        0.0,
        0.0,
    )?;

    let phi = BranchingMechanism::feller(1.0, 1.0)?;
    let psi = ImmigrationMechanism::new(1.0, LevyMeasure::atoms(vec![(1.0, 0.5)]))?;
    let ys = ctx.draw(21, |s| {
        immigration_reconstruct_feller(1.0, 1.0, &psi, 3.0, 0.5, 0.5, 1e-3, s)
            .map(|p| p.final_value())
    })?;
    let imm = ctx.compare(
        "immigration_reconstruct",
        transition_laplace(&phi, Some(&psi), 0.0, 3.0, 1.0)?,
        &ys,
        1.0,
        0.0,
        0.5,
    )?;
    Ok(vec![e1, e2, imm])
}

fn martingale_checks(ctx: &Ctx) -> Result<Vec<CheckReport>> {
    let dt = ctx.cfg.martingale_dt;
    let grid = uniform_grid(0.0, 1.0, dt)?;
    let times = [0.0, 0.25, 0.5, 1.0];
    let paths: Vec<SamplePath> = batch::map_indexed(&ctx.stream(30), ctx.cfg.n, |_, s| {
        simulate_feller_exact(1.0, 0.0, 0.0, 1.0, &grid, s)?.restrict_to(&times)
    })?;
    let phi = BranchingMechanism::feller(0.0, 1.0)?;
    Ok(martingale_check(
        &paths,
        &phi,
        &ImmigrationMechanism::none(),
        1.0,
        &times[1..],
        ctx.cfg.z_threshold,
    )?
    .into_iter()
    .map(|r| r.with_meta(ctx.cfg.seed, dt))
    .collect())
}

fn scheme_checks(ctx: &Ctx) -> Result<Vec<CheckReport>> {
    let dt = ctx.cfg.euler_dt;
    let opts = PathOptions::new(1.0, dt, dt).endpoints_only();
    let none = ImmigrationMechanism::none();
    let mut out = Vec::new();
    let feller = BranchingMechanism::feller(0.0, 1.0)?;
    let atoms = BranchingMechanism::new(0.0, 0.5, LevyMeasure::atoms(vec![(1.0, 1.0)]))?;
    for (k, (name, phi)) in [("euler_feller", feller), ("euler_atoms", atoms)]
        .into_iter()
        .enumerate()
    {
        let scheme = CbiScheme::new(&phi, &none, opts)?;
        let ys = ctx.draw(50 + k as u64, |s| {
            scheme
                .simulate(&RateSpec::Unit, 1.0, s)
                .map(|p| p.final_value())
        })?;
        out.push(ctx.compare(
            name,
            transition_laplace(&phi, None, 1.0, 1.0, 1.0)?,
            &ys,
            1.0,
            ctx.euler_bias(),
            dt,
        )?);
    }

    let alpha = 1.5;
    let stable = BranchingMechanism::stable(0.0, 1.0, alpha)?;
    let scheme = StableScheme::new(0.0, stable_branching_sigma(alpha), alpha, 0.0, &none, opts)?;
    let ys = ctx.draw(52, |s| scheme.simulate(1.0, s).map(|p| p.final_value()))?;
    out.push(ctx.compare(
        "stable_sde",
        transition_laplace(&stable, None, 1.0, 1.0, 1.0)?,
        &ys,
        1.0,
        ctx.euler_bias(),
        dt,
    )?);

    // started far from zero so that stopping is negligible: E e^{-(Y_1 - x)} = e^{φ(1)}
    let x0 = 10.0;
    let levy = LevyScheme::new(&stable, opts)?;
    let ys = ctx.draw(53, |s| levy.simulate(x0, s).map(|p| p.final_value() - x0))?;
    out.push(ctx.compare("levy_stable", stable.phi(1.0)?.exp(), &ys, 1.0, 0.0, dt)?);
    Ok(out)
}

fn gwi_check(ctx: &Ctx) -> Result<CheckReport> {
    let g = OffspringLaw::Binary { p: 0.5 };
    let h = OffspringLaw::Geometric { p: 0.5 };
    let (k, y0, lambda) = (100u64, 100u64, 1.0);
    let z = (-lambda / k as f64).exp();
    let analytic = g.pgf(z)?.powi(y0 as i32) * h.pgf(z)?;
    let ys = ctx.draw(60, |s| {
        Ok(gwi_simulate(&g, &h, y0, 1, s)?[1] as f64 / k as f64)
    })?;
    ctx.compare("gwi_one_step", analytic, &ys, lambda, 0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_small_batches() {
        let cfg = SuiteConfig {
            n: 100,
            ..SuiteConfig::default()
        };
        assert!(run_suite(&cfg).unwrap_err().is_domain());
    }

    #[test]
    fn small_suite_runs() {
        let cfg = SuiteConfig {
            n: 2000,
            seed: 5,
            ..SuiteConfig::default()
        };
        let out = run_suite(&cfg).unwrap();
        assert_eq!(out.total(), 20);
        assert_eq!(out.required(), 19);
        assert!(
            out.succeeded(),
            "{:#?}",
            out.reports.iter().filter(|r| !r.pass).collect::<Vec<_>>()
        );
        assert_eq!(out, run_suite(&cfg).unwrap());
    }
}
