//! Branching mechanisms `φ` and immigration mechanisms `ψ`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::measures::{em1x, one_minus_exp, LevyMeasure, MeasureRole};
use crate::quad;

/// `φ(z) = b z + c z² + ∫ (e^{-zu} - 1 + zu) m(du)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism {
    pub b: f64,
    pub c: f64,
    pub m: LevyMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Critical,
    Subcritical,
    Supercritical,
}

/// `σ` for which `σ z^{-1-α} dz` gives the branching term `z^α`, `1 < α < 2`.
pub fn stable_branching_sigma(alpha: f64) -> f64 {
    alpha * (alpha - 1.0) / gamma(2.0 - alpha)
}

/// `σ` for which `σ z^{-1-α} dz` gives the immigration term `z^α`, `0 < α < 1`.
pub fn stable_immigration_sigma(alpha: f64) -> f64 {
    alpha / gamma(1.0 - alpha)
}

impl BranchingMechanism {
    pub fn new(b: f64, c: f64, m: LevyMeasure) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::domain(format!("b must be finite, got {b}")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::domain(format!("c must be nonnegative, got {c}")));
        }
        m.validate(MeasureRole::Branching)?;
        Ok(BranchingMechanism { b, c, m })
    }

    /// Feller branching diffusion `φ(z) = b z + c z²`.
    pub fn feller(b: f64, c: f64) -> Result<Self> {
        Self::new(b, c, LevyMeasure::Null)
    }

    /// `φ(z) = b z + scale · z^α` with a stable Lévy measure, `1 < α < 2`.
    pub fn stable(b: f64, scale: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::domain(format!(
                "stable branching index must lie in (1,2), got {alpha}"
            )));
        }
        Self::new(
            b,
            0.0,
            LevyMeasure::stable_branching(scale * stable_branching_sigma(alpha), alpha),
        )
    }

    fn check_arg(z: f64) -> Result<()> {
        if z >= 0.0 && z.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "mechanism argument must be finite and >= 0, got {z}"
            )))
        }
    }

    /// `φ(z) - b z`.
    pub fn phi0(&self, z: f64) -> Result<f64> {
        Self::check_arg(z)?;
        if z == 0.0 {
            return Ok(0.0);
        }
        Ok(self.c * z * z
            + self.m.integrate_scaled(
                |u| em1x(z * u),
                (1.0 / z).min(1e300),
                quad::DEFAULT_REL_TOL,
            )?)
    }

    pub fn phi(&self, z: f64) -> Result<f64> {
        if z == 0.0 {
            return Ok(0.0);
        }
        Ok(self.b * z + self.phi0(z)?)
    }

    /// `φ'(z) - b = 2 c z + ∫ u (1 - e^{-zu}) m(du)`.
    pub fn phi0_prime(&self, z: f64) -> Result<f64> {
        Self::check_arg(z)?;
        if z == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * self.c * z
            + self.m.integrate_scaled(
                |u| u * one_minus_exp(z * u),
                (1.0 / z).min(1e300),
                quad::DEFAULT_REL_TOL,
            )?)
    }

    pub fn phi_prime(&self, z: f64) -> Result<f64> {
        Ok(self.b + self.phi0_prime(z)?)
    }

    pub fn is_zero(&self) -> bool {
        self.b == 0.0 && self.c == 0.0 && self.m.is_null()
    }

    /// True when `φ(z)/z → ∞`.
    pub fn is_superlinear(&self) -> bool {
        self.c > 0.0 || matches!(self.m, LevyMeasure::StableBranching { .. })
    }

    /// Grey's condition: `φ > 0` on some `[θ, ∞)` and `∫_θ^∞ dz/φ(z) < ∞`.
    ///
    /// The integral converges iff `φ` grows superlinearly, which for the
    /// supported measures means `c > 0` or a stable component.
    pub fn grey_check(&self) -> bool {
        if self.is_zero() || !self.is_superlinear() {
            return false;
        }
        self.positive_beyond().is_some()
    }

    /// Some `θ >= 1` with `φ(θ) > 0`, found by doubling.
    fn positive_beyond(&self) -> Option<f64> {
        let mut theta = 1.0;
        while theta < 1e15 {
            match self.phi(theta) {
                Ok(v) if v > 0.0 => return Some(theta),
                Ok(_) => theta *= 2.0,
                Err(_) => return None,
            }
        }
        None
    }

    /// Largest root `v̄` of `φ(z) = 0`; 0 when `b >= 0`.
    pub fn largest_root(&self) -> Result<f64> {
        if !self.grey_check() {
            return Err(Error::domain(
                "Grey's condition fails: the largest root is infinite",
            ));
        }
        if self.b >= 0.0 {
            return Ok(0.0);
        }
        let mut hi = self
            .positive_beyond()
            .ok_or_else(|| Error::domain("no z with φ(z) > 0"))?;
        let mut lo = 0.0;
        // convexity: for z > 0, φ(z) <= 0 exactly on (0, v̄]
        for _ in 0..2000 {
            if hi - lo <= 1e-13 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.phi(mid)? <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Strict sign of `b`.
    pub fn classify(&self) -> Criticality {
        if self.b > 0.0 {
            Criticality::Subcritical
        } else if self.b < 0.0 {
            Criticality::Supercritical
        } else {
            Criticality::Critical
        }
    }
}

/// `ψ(z) = β z + ∫ (1 - e^{-zu}) n(du)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationMechanism {
    pub beta: f64,
    pub n: LevyMeasure,
}

impl ImmigrationMechanism {
    pub fn new(beta: f64, n: LevyMeasure) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::domain(format!(
                "beta must be nonnegative, got {beta}"
            )));
        }
        n.validate(MeasureRole::Immigration)?;
        Ok(ImmigrationMechanism { beta, n })
    }

    /// `ψ ≡ 0`.
    pub fn none() -> Self {
        ImmigrationMechanism {
            beta: 0.0,
            n: LevyMeasure::Null,
        }
    }

    /// `ψ(z) = β z`.
    pub fn linear(beta: f64) -> Result<Self> {
        Self::new(beta, LevyMeasure::Null)
    }

    /// `ψ(z) = β z + scale · z^α`, `0 < α < 1`.
    pub fn stable(beta: f64, scale: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!(
                "stable immigration index must lie in (0,1), got {alpha}"
            )));
        }
        Self::new(
            beta,
            LevyMeasure::stable_immigration(scale * stable_immigration_sigma(alpha), alpha),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.beta == 0.0 && self.n.is_null()
    }

    pub fn psi(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::domain(format!(
                "mechanism argument must be finite and >= 0, got {z}"
            )));
        }
        if z == 0.0 {
            return Ok(0.0);
        }
        Ok(self.beta * z
            + self.n.integrate_scaled(
                |u| one_minus_exp(z * u),
                (1.0 / z).min(1e300),
                quad::DEFAULT_REL_TOL,
            )?)
    }

    /// `ψ'(0) = β + ∫ u n(du)`; a domain error when the moment diverges.
    pub fn psi_prime0(&self) -> Result<f64> {
        let m1 = self.n.first_moment();
        if m1.is_infinite() {
            return Err(Error::domain("ψ'(0) is infinite: ∫ u n(du) diverges"));
        }
        Ok(self.beta + m1)
    }
}
