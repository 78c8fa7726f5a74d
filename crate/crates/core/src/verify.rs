//! Monte Carlo estimates and oracle comparisons.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::batch;
use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism};
use crate::paths::{feller_transition_sample, CbiScheme, PathOptions, RateSpec, SamplePath};
use crate::rngkit::RandomStream;

/// Default z-score threshold of the checks.
pub const Z_THRESHOLD: f64 = 4.0;

/// Fewest samples [`mc_compare`] accepts.
pub const MIN_SAMPLES: usize = 100;

/// Relative tolerance for the jump integrals in `generator_apply`. The switch to the
/// Taylor form near zero leaves noise a little above 1e-10.
const GENERATOR_REL_TOL: f64 = 1e-9;

/// Below this jump size the generator integrands use a second-order Taylor form.
const TAYLOR_CUTOFF: f64 = 5e-6;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MCEstimate {
    /// Two-pass mean and `std / sqrt(n)`; stderr is 0 when `n < 2`.
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return MCEstimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                n: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        };
        MCEstimate { mean, stderr, n }
    }
}

/// Outcome of comparing a Monte Carlo estimate with an analytic value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub analytic: f64,
    pub estimate: MCEstimate,
    pub z_score: f64,
    /// Largest accepted `|estimate - analytic|`.
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
    pub dt: f64,
}

impl CheckReport {
    pub fn with_meta(mut self, seed: u64, dt: f64) -> Self {
        self.seed = seed;
        self.dt = dt;
        self
    }
}

/// `z = (mean - analytic)/max(stderr, 1e-15)`; passes iff
/// `|mean - analytic| <= z_threshold·stderr + bias_allowance`.
pub fn mc_compare(
    name: &str,
    analytic: f64,
    samples: &[f64],
    z_threshold: f64,
    bias_allowance: f64,
) -> Result<CheckReport> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "{name}: {} samples, at least {MIN_SAMPLES} needed",
            samples.len()
        )));
    }
    compare_estimate(
        name,
        analytic,
        MCEstimate::from_values(samples.iter().copied()),
        z_threshold,
        bias_allowance,
    )
}

/// [`mc_compare`] on an estimate that is already aggregated.
pub fn compare_estimate(
    name: &str,
    analytic: f64,
    estimate: MCEstimate,
    z_threshold: f64,
    bias_allowance: f64,
) -> Result<CheckReport> {
    if !(bias_allowance >= 0.0) || !(z_threshold > 0.0) {
        return Err(Error::domain(
            "z threshold must be positive and bias allowance nonnegative",
        ));
    }
    let diff = estimate.mean - analytic;
    let tolerance = z_threshold * estimate.stderr + bias_allowance;
    Ok(CheckReport {
        name: name.to_string(),
        analytic,
        estimate,
        z_score: diff / estimate.stderr.max(1e-15),
        tolerance,
        pass: diff.abs() <= tolerance,
        seed: 0,
        dt: 0.0,
    })
}

/// Writes reports with header `name,analytic,estimate,stderr,z,pass,seed,n,dt`.
pub fn write_reports<W: Write>(w: W, reports: &[CheckReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Numeric(format!("csv write failed: {e}"));
    out.write_record([
        "name", "analytic", "estimate", "stderr", "z", "pass", "seed", "n", "dt",
    ])
    .map_err(io)?;
    for r in reports {
        out.write_record([
            r.name.clone(),
            r.analytic.to_string(),
            r.estimate.mean.to_string(),
            r.estimate.stderr.to_string(),
            r.z_score.to_string(),
            r.pass.to_string(),
            r.seed.to_string(),
            r.estimate.n.to_string(),
            r.dt.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()
        .map_err(|e| Error::Numeric(format!("csv write failed: {e}")))
}

/// Checks that `E exp{-λy(t) + ∫_0^t [ψ(λ) - y(s)φ(λ)] ds}` stays at its `t = 0`
/// value, one report per `t`.
pub fn martingale_check(
    paths: &[SamplePath],
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    lambda: f64,
    t_list: &[f64],
    z_threshold: f64,
) -> Result<Vec<CheckReport>> {
    let (f, g) = (phi.phi(lambda)?, psi.psi(lambda)?);
    let start = MCEstimate::from_values(paths.iter().map(|p| (-lambda * p.values[0]).exp())).mean;
    t_list
        .iter()
        .map(|&t| {
            let h: Vec<f64> = paths
                .iter()
                .map(|p| Ok((-lambda * p.value_at(t)? + t * g - f * p.integral_at(t)?).exp()))
                .collect::<Result<_>>()?;
            mc_compare(&format!("martingale_t{t}"), start, &h, z_threshold, 0.0)
        })
        .collect()
}

/// A test function with its first two derivatives.
pub struct TestFn {
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl TestFn {
    pub fn new<F, D1, D2>(f: F, d1: D1, d2: D2) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFn {
            f: Box::new(f),
            d1: Box::new(d1),
            d2: Box::new(d2),
        }
    }

    /// `x ↦ e^{-λx}`.
    pub fn exponential(lambda: f64) -> Self {
        TestFn::new(
            move |x| (-lambda * x).exp(),
            move |x| -lambda * (-lambda * x).exp(),
            move |x| lambda * lambda * (-lambda * x).exp(),
        )
    }
}

/// Generator `c x f'' + x∫[f(x+z) - f(x) - z f'(x)] m(dz) + (ρβ - bx) f'
/// + ρ∫[f(x+z) - f(x)] n(dz)` at `x` with immigration rate value `ρ`.
pub fn generator_apply(
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    rate_value: f64,
    f: &TestFn,
    x: f64,
) -> Result<f64> {
    if !(x >= 0.0) || !(rate_value >= 0.0) {
        return Err(Error::domain("state and rate must be nonnegative"));
    }
    let (fx, d1, d2) = ((f.f)(x), (f.d1)(x), (f.d2)(x));
    if !(fx.is_finite() && d1.is_finite() && d2.is_finite()) {
        return Err(Error::numeric(format!("test function not finite at {x}")));
    }
    let branching = if x > 0.0 && !phi.m.is_null() {
        x * phi.m.integrate_tol(
            |z| {
                if z < TAYLOR_CUTOFF {
                    0.5 * z * z * d2
                } else {
                    (f.f)(x + z) - fx - z * d1
                }
            },
            GENERATOR_REL_TOL,
        )?
    } else {
        0.0
    };
    let immigration = if rate_value > 0.0 && !psi.n.is_null() {
        rate_value
            * psi.n.integrate_tol(
                |z| {
                    if z < TAYLOR_CUTOFF {
                        z * d1 + 0.5 * z * z * d2
                    } else {
                        (f.f)(x + z) - fx
                    }
                },
                GENERATOR_REL_TOL,
            )?
    } else {
        0.0
    };
    Ok(phi.c * x * d2 + branching + (rate_value * psi.beta - phi.b * x) * d1 + immigration)
}

/// Fraction of paths at zero at time `t`.
pub fn extinction_estimate(paths: &[SamplePath], t: f64) -> Result<MCEstimate> {
    let hits: Vec<f64> = paths
        .iter()
        .map(|p| Ok(if p.value_at(t)? == 0.0 { 1.0 } else { 0.0 }))
        .collect::<Result<_>>()?;
    Ok(MCEstimate::from_values(hits))
}

/// Compares `E e^{-λX}` from `x1 + x2` with the product of the Laplace transforms
/// from `x1` and `x2` estimated on independent runs. `sample(x, s)` draws `X`.
pub fn branching_property_check_with<F>(
    sample: F,
    x1: f64,
    x2: f64,
    lambda: f64,
    n: usize,
    root: &RandomStream,
    z_threshold: f64,
) -> Result<CheckReport>
where
    F: Fn(f64, &mut RandomStream) -> Result<f64> + Sync + Send,
{
    if n < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "branching check needs at least {MIN_SAMPLES} samples"
        )));
    }
    let arm = |k: u64, x: f64| {
        let sub = root.split(k);
        batch::estimate(&sub, n, |_, s| sample(x, s).map(|v| (-lambda * v).exp()))
    };
    let joint = arm(0, x1 + x2)?;
    let a = arm(1, x1)?;
    let b = arm(2, x2)?;
    let product = a.mean * b.mean;
    let diff = joint.mean - product;
    let stderr =
        (joint.stderr.powi(2) + (b.mean * a.stderr).powi(2) + (a.mean * b.stderr).powi(2)).sqrt();
    let tolerance = z_threshold * stderr;
    Ok(CheckReport {
        name: "branching_property".into(),
        analytic: product,
        estimate: MCEstimate {
            mean: joint.mean,
            stderr,
            n,
        },
        z_score: diff / stderr.max(1e-15),
        tolerance,
        pass: diff.abs() <= tolerance,
        seed: root.seed(),
        dt: 0.0,
    })
}

/// Branching property at time `t`: exact transitions for Feller mechanisms, the
/// Euler scheme with step `dt` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn branching_property_check(
    phi: &BranchingMechanism,
    x1: f64,
    x2: f64,
    t: f64,
    lambda: f64,
    n: usize,
    dt: f64,
    root: &RandomStream,
) -> Result<CheckReport> {
    if phi.m.is_null() && phi.c > 0.0 {
        let (c, b) = (phi.c, phi.b);
        branching_property_check_with(
            |x, s| feller_transition_sample(c, b, 0.0, x, t, s),
            x1,
            x2,
            lambda,
            n,
            root,
            Z_THRESHOLD,
        )
    } else {
        let scheme = CbiScheme::new(
            phi,
            &ImmigrationMechanism::none(),
            PathOptions::new(t, dt, dt).endpoints_only(),
        )?;
        let report = branching_property_check_with(
            |x, s| {
                scheme
                    .simulate(&RateSpec::Unit, x, s)
                    .map(|p| p.final_value())
            },
            x1,
            x2,
            lambda,
            n,
            root,
            Z_THRESHOLD,
        )?;
        Ok(report.with_meta(root.seed(), dt))
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::domain(
            "KS test needs two nonempty samples without NaN",
        ));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let x = (ne + 0.12 + 0.11 / ne) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term =
            2.0 * if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * (k * k) as f64 * x * x).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    Ok(KsResult {
        statistic: d,
        p_value: p.clamp(0.0, 1.0),
    })
}
