//! Measures on the half line: Lévy-measure variants with quadrature, tail
//! masses and jump sampling, infinitely divisible exponents, complete
//! monotonicity testing and empirical Laplace transforms.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::quad;
use crate::rngkit::RandomStream;
use crate::verify::MCEstimate;

/// Parametric Lévy measure on `(0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LevyMeasure {
    Null,
    /// Density `sigma z^{-1-alpha}`, `1 < alpha < 2`.
    StableBranching {
        sigma: f64,
        alpha: f64,
    },
    /// Density `sigma z^{-1-alpha}`, `0 < alpha < 1`.
    StableImmigration {
        sigma: f64,
        alpha: f64,
    },
    /// Density `a e^{-theta z}`.
    ExponentialJump {
        a: f64,
        theta: f64,
    },
    /// Point masses `w_i` at `z_i`.
    Atoms {
        atoms: Vec<(f64, f64)>,
    },
}

/// How a measure enters a mechanism; decides the integrability requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureRole {
    /// `(u ∧ u²) μ(du)` finite.
    Branching,
    /// `(1 ∧ u) μ(du)` finite.
    Immigration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    OneWedgeU,
    UWedgeU2,
    LogTail,
    ULogTail,
}

/// Expansion `e^{-x} - 1 + x`, accurate for small `x`.
#[inline]
pub(crate) fn em1x(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0)
    } else {
        (-x).exp_m1() + x
    }
}

/// `1 - e^{-x}`.
#[inline]
pub(crate) fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

impl LevyMeasure {
    pub fn stable_branching(sigma: f64, alpha: f64) -> Self {
        LevyMeasure::StableBranching { sigma, alpha }
    }

    pub fn stable_immigration(sigma: f64, alpha: f64) -> Self {
        LevyMeasure::StableImmigration { sigma, alpha }
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Self {
        LevyMeasure::Atoms { atoms }
    }

    pub fn is_null(&self) -> bool {
        match self {
            LevyMeasure::Null => true,
            LevyMeasure::Atoms { atoms } => atoms.is_empty(),
            LevyMeasure::ExponentialJump { a, .. } => *a == 0.0,
            _ => false,
        }
    }

    /// Checks parameters and the integrability condition for `role`.
    pub fn validate(&self, role: MeasureRole) -> Result<()> {
        match self {
            LevyMeasure::Null => {}
            LevyMeasure::StableBranching { sigma, alpha } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::domain(format!(
                        "stable sigma must be positive, got {sigma}"
                    )));
                }
                if !(*alpha > 1.0 && *alpha < 2.0) {
                    return Err(Error::domain(format!(
                        "branching stable index must lie in (1,2), got {alpha}"
                    )));
                }
            }
            LevyMeasure::StableImmigration { sigma, alpha } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::domain(format!(
                        "stable sigma must be positive, got {sigma}"
                    )));
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::domain(format!(
                        "immigration stable index must lie in (0,1), got {alpha}"
                    )));
                }
            }
            LevyMeasure::ExponentialJump { a, theta } => {
                if !(*a >= 0.0 && a.is_finite() && *theta > 0.0 && theta.is_finite()) {
                    return Err(Error::domain(format!(
                        "exponential jump measure needs a >= 0, theta > 0; got a={a}, theta={theta}"
                    )));
                }
            }
            LevyMeasure::Atoms { atoms } => {
                for &(z, w) in atoms {
                    if !(z > 0.0 && z.is_finite() && w > 0.0 && w.is_finite()) {
                        return Err(Error::domain(format!(
                            "atoms must have positive location and weight, got ({z}, {w})"
                        )));
                    }
                }
            }
        }
        let kind = match role {
            MeasureRole::Branching => TailKind::UWedgeU2,
            MeasureRole::Immigration => TailKind::OneWedgeU,
        };
        if self.tail_integral(kind)?.is_infinite() {
            return Err(Error::domain(format!(
                "measure {self:?} is not admissible in the {role:?} role"
            )));
        }
        Ok(())
    }

    /// Density at `u > 0`; zero for the atomic variants.
    pub fn density(&self, u: f64) -> f64 {
        match *self {
            LevyMeasure::StableBranching { sigma, alpha }
            | LevyMeasure::StableImmigration { sigma, alpha } => sigma * u.powf(-1.0 - alpha),
            LevyMeasure::ExponentialJump { a, theta } => a * (-theta * u).exp(),
            _ => 0.0,
        }
    }

    /// `v · density(u) · e^{log_jac}` computed in log space when a factor leaves
    /// the normal range.
    fn weighted(&self, u: f64, v: f64, log_jac: f64) -> f64 {
        let log_d = match *self {
            LevyMeasure::StableBranching { sigma, alpha }
            | LevyMeasure::StableImmigration { sigma, alpha } => {
                sigma.ln() - (1.0 + alpha) * u.ln()
            }
            LevyMeasure::ExponentialJump { a, theta } => a.ln() - theta * u,
            _ => return 0.0,
        };
        let direct = v * log_d.exp() * log_jac.exp();
        if direct.is_normal() && log_d.abs() < 600.0 && log_jac.abs() < 600.0 {
            direct
        } else {
            v.signum() * (v.abs().ln() + log_d + log_jac).exp()
        }
    }

    /// `∫ g(u) μ(du)`: exact sum for atoms, tanh-sinh quadrature for densities.
    pub fn integrate<G: FnMut(f64) -> f64>(&self, g: G) -> Result<f64> {
        self.integrate_tol(g, quad::DEFAULT_REL_TOL)
    }

    pub fn integrate_tol<G: FnMut(f64) -> f64>(&self, g: G, rel_tol: f64) -> Result<f64> {
        self.integrate_scaled(g, 1.0, rel_tol)
    }

    /// `∫ g(u) μ(du)` with the half line split at `scale`, the length scale on
    /// which `g` varies.
    pub fn integrate_scaled<G: FnMut(f64) -> f64>(
        &self,
        mut g: G,
        scale: f64,
        rel_tol: f64,
    ) -> Result<f64> {
        match self {
            LevyMeasure::Null => Ok(0.0),
            LevyMeasure::Atoms { atoms } => Ok(atoms.iter().map(|&(z, w)| w * g(z)).sum()),
            _ => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::domain(format!(
                        "integration scale must be positive, got {scale}"
                    )));
                }
                let ln_scale = scale.ln();
                let mut at = |w: f64, log_jac: f64| {
                    let u = scale * w;
                    if u == 0.0 || u.is_infinite() {
                        return 0.0;
                    }
                    let v = g(u);
                    if v == 0.0 {
                        0.0
                    } else {
                        self.weighted(u, v, ln_scale + log_jac)
                    }
                };
                let head = quad::tanh_sinh(|w| at(w, 0.0), 0.0, 1.0, rel_tol, 1e-300)?;
                let tail =
                    quad::tanh_sinh(|s| at(1.0 / s, -2.0 * s.ln()), 0.0, 1.0, rel_tol, 1e-300)?;
                Ok(head + tail)
            }
        }
    }

    /// Total mass `μ(0, inf)`; infinite for the stable variants.
    pub fn total_mass(&self) -> f64 {
        self.mass_above(0.0)
    }

    /// `μ(eps, inf)`.
    pub fn mass_above(&self, eps: f64) -> f64 {
        match *self {
            LevyMeasure::Null => 0.0,
            LevyMeasure::StableBranching { sigma, alpha }
            | LevyMeasure::StableImmigration { sigma, alpha } => {
                if eps <= 0.0 {
                    f64::INFINITY
                } else {
                    sigma * eps.powf(-alpha) / alpha
                }
            }
            LevyMeasure::ExponentialJump { a, theta } => a * (-theta * eps.max(0.0)).exp() / theta,
            LevyMeasure::Atoms { ref atoms } => {
                atoms.iter().filter(|(z, _)| *z > eps).map(|(_, w)| w).sum()
            }
        }
    }

    /// `∫_(eps, inf) z μ(dz)`.
    pub fn first_moment_above(&self, eps: f64) -> f64 {
        match *self {
            LevyMeasure::Null => 0.0,
            LevyMeasure::StableBranching { sigma, alpha } => {
                if eps <= 0.0 {
                    f64::INFINITY
                } else {
                    sigma * eps.powf(1.0 - alpha) / (alpha - 1.0)
                }
            }
            LevyMeasure::StableImmigration { .. } => f64::INFINITY,
            LevyMeasure::ExponentialJump { a, theta } => {
                a * gamma_ur(2.0, theta * eps.max(0.0)) / (theta * theta)
            }
            LevyMeasure::Atoms { ref atoms } => atoms
                .iter()
                .filter(|(z, _)| *z > eps)
                .map(|(z, w)| z * w)
                .sum(),
        }
    }

    /// `∫_(0, eps] z μ(dz)`.
    pub fn first_moment_below(&self, eps: f64) -> f64 {
        if eps <= 0.0 {
            return 0.0;
        }
        match *self {
            LevyMeasure::Null => 0.0,
            LevyMeasure::StableBranching { .. } => f64::INFINITY,
            LevyMeasure::StableImmigration { sigma, alpha } => {
                sigma * eps.powf(1.0 - alpha) / (1.0 - alpha)
            }
            LevyMeasure::ExponentialJump { a, theta } => {
                a * gamma_lr(2.0, theta * eps) / (theta * theta)
            }
            LevyMeasure::Atoms { ref atoms } => atoms
                .iter()
                .filter(|(z, _)| *z <= eps)
                .map(|(z, w)| z * w)
                .sum(),
        }
    }

    /// `∫_(0, eps] z² μ(dz)`.
    pub fn second_moment_below(&self, eps: f64) -> f64 {
        if eps <= 0.0 {
            return 0.0;
        }
        match *self {
            LevyMeasure::Null => 0.0,
            LevyMeasure::StableBranching { sigma, alpha }
            | LevyMeasure::StableImmigration { sigma, alpha } => {
                sigma * eps.powf(2.0 - alpha) / (2.0 - alpha)
            }
            LevyMeasure::ExponentialJump { a, theta } => {
                2.0 * a * gamma_lr(3.0, theta * eps) / (theta * theta * theta)
            }
            LevyMeasure::Atoms { ref atoms } => atoms
                .iter()
                .filter(|(z, _)| *z <= eps)
                .map(|(z, w)| z * z * w)
                .sum(),
        }
    }

    /// `∫ u μ(du)`, possibly infinite.
    pub fn first_moment(&self) -> f64 {
        self.first_moment_above(0.0)
    }

    /// Draw from `μ` restricted to `(eps, inf)` and normalized.
    pub fn sample_above(&self, eps: f64, s: &mut RandomStream) -> Result<f64> {
        match *self {
            LevyMeasure::Null => Err(Error::domain("cannot sample from the null measure")),
            LevyMeasure::StableBranching { alpha, .. }
            | LevyMeasure::StableImmigration { alpha, .. } => {
                if eps <= 0.0 {
                    return Err(Error::domain(
                        "stable jump sampling needs a positive cutoff",
                    ));
                }
                Ok(eps * s.uniform().powf(-1.0 / alpha))
            }
            LevyMeasure::ExponentialJump { theta, .. } => Ok(eps.max(0.0) + s.exp1() / theta),
            LevyMeasure::Atoms { ref atoms } => {
                let total: f64 = atoms.iter().filter(|(z, _)| *z > eps).map(|(_, w)| w).sum();
                if total <= 0.0 {
                    return Err(Error::domain("no atoms above the cutoff"));
                }
                let mut u = s.uniform() * total;
                let mut last = 0.0;
                for &(z, w) in atoms.iter().filter(|(z, _)| *z > eps) {
                    last = z;
                    if u < w {
                        return Ok(z);
                    }
                    u -= w;
                }
                Ok(last)
            }
        }
    }

    /// Tail functionals, with divergence decided per variant.
    pub fn tail_integral(&self, kind: TailKind) -> Result<f64> {
        let inf = f64::INFINITY;
        Ok(match *self {
            LevyMeasure::Null => 0.0,
            LevyMeasure::StableBranching { sigma, alpha }
            | LevyMeasure::StableImmigration { sigma, alpha } => match kind {
                TailKind::OneWedgeU => {
                    if alpha < 1.0 {
                        sigma / (1.0 - alpha) + sigma / alpha
                    } else {
                        inf
                    }
                }
                TailKind::UWedgeU2 => {
                    if alpha > 1.0 && alpha < 2.0 {
                        sigma / (2.0 - alpha) + sigma / (alpha - 1.0)
                    } else {
                        inf
                    }
                }
                TailKind::LogTail => sigma / (alpha * alpha),
                TailKind::ULogTail => {
                    if alpha > 1.0 {
                        sigma / ((alpha - 1.0) * (alpha - 1.0))
                    } else {
                        inf
                    }
                }
            },
            LevyMeasure::ExponentialJump { a, theta } => match kind {
                TailKind::OneWedgeU => {
                    a * (gamma_lr(2.0, theta) / (theta * theta) + (-theta).exp() / theta)
                }
                TailKind::UWedgeU2 => {
                    a * (2.0 * gamma_lr(3.0, theta) / theta.powi(3)
                        + gamma_ur(2.0, theta) / (theta * theta))
                }
                TailKind::LogTail => {
                    quad::to_infinity(|u| a * u.ln() * (-theta * u).exp(), 1.0, 1e-12, 1e-300)?
                }
                TailKind::ULogTail => {
                    quad::to_infinity(|u| a * u * u.ln() * (-theta * u).exp(), 1.0, 1e-12, 1e-300)?
                }
            },
            LevyMeasure::Atoms { ref atoms } => atoms
                .iter()
                .map(|&(z, w)| {
                    w * match kind {
                        TailKind::OneWedgeU => z.min(1.0),
                        TailKind::UWedgeU2 => z.min(z * z),
                        TailKind::LogTail => {
                            if z > 1.0 {
                                z.ln()
                            } else {
                                0.0
                            }
                        }
                        TailKind::ULogTail => {
                            if z > 1.0 {
                                z * z.ln()
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .sum(),
        })
    }
}

/// Drift and Lévy measure of an infinitely divisible law on the half line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfDivPair {
    pub h: f64,
    pub l: LevyMeasure,
}

impl InfDivPair {
    pub fn new(h: f64, l: LevyMeasure) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::domain(format!("drift must be nonnegative, got {h}")));
        }
        l.validate(MeasureRole::Immigration)?;
        Ok(InfDivPair { h, l })
    }
}

/// `h λ + ∫ (1 - e^{-λu}) l(du)`.
pub fn inf_div_exponent(p: &InfDivPair, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(p.h * lambda + p.l.integrate(|u| one_minus_exp(lambda * u))?)
}

/// First grid point where a finite-difference sign condition failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmViolation {
    pub lambda: f64,
    pub c: f64,
    pub order: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmCheck {
    pub passed: bool,
    pub violation: Option<CmViolation>,
}

/// Checks `(-1)^i Δ_c^i f(λ) >= -tol` on the grids for `i <= max_order`.
pub fn complete_monotone_check<F: Fn(f64) -> f64>(
    f: F,
    lambda_grid: &[f64],
    c_grid: &[f64],
    max_order: usize,
) -> Result<CmCheck> {
    if lambda_grid.is_empty() || c_grid.is_empty() {
        return Err(Error::domain("grids must be nonempty"));
    }
    if max_order > 12 {
        return Err(Error::domain(format!(
            "max_order must be <= 12, got {max_order}"
        )));
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain(format!("f({x}) = {v} is not finite")))
        }
    };
    let tol = 1e-9 * eval(0.0)?.abs().max(1.0);
    // binomial rows up to max_order
    let mut binom = vec![vec![1.0f64]];
    for i in 1..=max_order {
        let prev = &binom[i - 1];
        let mut row = vec![1.0; i + 1];
        for j in 1..i {
            row[j] = prev[j - 1] + prev[j];
        }
        binom.push(row);
    }
    for &lambda in lambda_grid {
        for &c in c_grid {
            let values: Vec<f64> = (0..=max_order)
                .map(|j| eval(lambda + j as f64 * c))
                .collect::<Result<_>>()?;
            for (order, row) in binom.iter().enumerate() {
                // (-1)^i Δ^i f(λ) = Σ_j (-1)^j C(i,j) f(λ + j c)
                let v: f64 = (0..=order)
                    .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } * row[j] * values[j])
                    .sum();
                if v < -tol {
                    return Ok(CmCheck {
                        passed: false,
                        violation: Some(CmViolation {
                            lambda,
                            c,
                            order,
                            value: v,
                        }),
                    });
                }
            }
        }
    }
    Ok(CmCheck {
        passed: true,
        violation: None,
    })
}

/// Mean and standard error of `e^{-λ X_i}`.
pub fn empirical_laplace(samples: &[f64], lambda: f64) -> Result<MCEstimate> {
    if samples.is_empty() {
        return Err(Error::domain(
            "empirical Laplace transform of an empty sample",
        ));
    }
    Ok(MCEstimate::from_values(
        samples.iter().map(|x| (-lambda * x).exp()),
    ))
}
