//! Cumulant semigroup `v_t(λ)` and the closed-form Laplace functionals built on it:
//! transition semigroups with and without immigration, extinction probabilities,
//! stationary laws and the size-biased semigroup.

use crate::error::{Error, Result};
use crate::measures::LevyMeasure;
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism};
use crate::ode::{dopri5, OdeOptions, OdeSolution};
use crate::quad;

/// Default local error tolerance for the cumulant ODE.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Solved `s ↦ v_s(λ)` with the integrals `∫_0^s ψ(v_r) dr` and `∫_0^s φ'_0(v_r) dr`.
#[derive(Debug, Clone)]
pub struct CumulantTrajectory {
    pub lambda: f64,
    pub t_grid: Vec<f64>,
    pub v_values: Vec<f64>,
    pub psi_integral: Vec<f64>,
    pub phi0prime_integral: Vec<f64>,
    solution: OdeSolution<3>,
}

impl CumulantTrajectory {
    pub fn horizon(&self) -> f64 {
        *self.t_grid.last().unwrap()
    }

    /// `v_t(λ)` at the horizon.
    pub fn v_final(&self) -> f64 {
        *self.v_values.last().unwrap()
    }

    pub fn psi_integral_final(&self) -> f64 {
        *self.psi_integral.last().unwrap()
    }

    pub fn phi0prime_integral_final(&self) -> f64 {
        *self.phi0prime_integral.last().unwrap()
    }

    /// Dense output of `v_s(λ)` for `0 <= s <= horizon`.
    pub fn v_at(&self, s: f64) -> f64 {
        self.solution.interpolate(s)[0].max(0.0)
    }

    pub fn psi_integral_at(&self, s: f64) -> f64 {
        self.solution.interpolate(s)[1]
    }

    pub fn phi0prime_integral_at(&self, s: f64) -> f64 {
        self.solution.interpolate(s)[2]
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

/// Solves `∂v/∂t = -φ(v)`, `v_0 = λ`, on `[0, t]` with the auxiliary integrals.
pub fn v_solve(
    phi: &BranchingMechanism,
    lambda: f64,
    t: f64,
    tol: f64,
) -> Result<CumulantTrajectory> {
    v_solve_with(phi, None, lambda, t, tol)
}

/// [`v_solve`] that also accumulates `∫ ψ(v_s) ds` for the given immigration mechanism.
pub fn v_solve_with(
    phi: &BranchingMechanism,
    psi: Option<&ImmigrationMechanism>,
    lambda: f64,
    t: f64,
    tol: f64,
) -> Result<CumulantTrajectory> {
    check_nonneg("lambda", lambda)?;
    check_nonneg("t", t)?;
    if !(tol > 0.0) {
        return Err(Error::domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let psi = psi.filter(|p| !p.is_zero());
    let rhs = |_: f64, y: &[f64; 3]| -> Result<[f64; 3]> {
        let v = y[0].max(0.0);
        let f = phi.phi(v)?;
        let g = match psi {
            Some(p) => p.psi(v)?,
            None => 0.0,
        };
        Ok([-f, g, phi.phi0_prime(v)?])
    };
    let solution = dopri5(rhs, 0.0, [lambda, 0.0, 0.0], t, &OdeOptions::with_tol(tol))?;
    Ok(CumulantTrajectory {
        lambda,
        t_grid: solution.t.clone(),
        v_values: solution.y.iter().map(|y| y[0].max(0.0)).collect(),
        psi_integral: solution.y.iter().map(|y| y[1]).collect(),
        phi0prime_integral: solution.y.iter().map(|y| y[2]).collect(),
        solution,
    })
}

/// `v_t(λ)` alone, skipping the auxiliary integrals.
pub fn v_value(phi: &BranchingMechanism, lambda: f64, t: f64, tol: f64) -> Result<f64> {
    check_nonneg("lambda", lambda)?;
    check_nonneg("t", t)?;
    let sol = dopri5(
        |_, y: &[f64; 1]| Ok([-phi.phi(y[0].max(0.0))?]),
        0.0,
        [lambda],
        t,
        &OdeOptions::with_tol(tol),
    )?;
    Ok(sol.last()[0].max(0.0))
}

/// `q^b_α(t) = b^{-1}(1 - e^{-αbt})`, with the `αt` limit for `|b| < 1e-12`.
pub fn q_b_alpha(b: f64, alpha: f64, t: f64) -> f64 {
    if b.abs() < 1e-12 {
        alpha * t
    } else {
        -(-alpha * b * t).exp_m1() / b
    }
}

/// Closed form of `v_t(λ)` for `φ(z) = c z^{1+α} + b z`, `0 < α <= 1`.
pub fn v_stable_closed(c: f64, alpha: f64, b: f64, t: f64, lambda: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::domain(format!("c must be positive, got {c}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0,1], got {alpha}"
        )));
    }
    check_nonneg("t", t)?;
    check_nonneg("lambda", lambda)?;
    if t == 0.0 || lambda == 0.0 {
        return Ok(lambda);
    }
    let q = q_b_alpha(b, alpha, t);
    Ok((-b * t).exp() * lambda / (1.0 + c * q * lambda.powf(alpha)).powf(1.0 / alpha))
}

/// Branching mechanism `c z^{1+α} + b z` matching [`v_stable_closed`].
pub fn stable_closed_mechanism(c: f64, alpha: f64, b: f64) -> Result<BranchingMechanism> {
    if (alpha - 1.0).abs() < 1e-15 {
        BranchingMechanism::feller(b, c)
    } else {
        BranchingMechanism::stable(b, c, 1.0 + alpha)
    }
}

/// Large-`z` form of `φ`: exact for the Feller and stable parts, linear plus
/// constant for finite-mean jump measures.
fn phi_asymptotic(phi: &BranchingMechanism, z: f64) -> f64 {
    let jumps = match phi.m {
        LevyMeasure::StableBranching { sigma, alpha } => {
            sigma * statrs::function::gamma::gamma(2.0 - alpha) / (alpha * (alpha - 1.0))
                * z.powf(alpha)
        }
        LevyMeasure::Null => 0.0,
        ref m => m.first_moment() * z - m.total_mass(),
    };
    phi.b * z + phi.c * z * z + jumps
}

/// `∫_u^∞ dz / φ(z)`, numerically up to `10⁴ max(u, 1)` and through the
/// asymptotic form of `φ` beyond.
pub fn inverse_phi_tail(phi: &BranchingMechanism, u: f64) -> Result<f64> {
    let cut = 1e4 * u.max(1.0);
    let head = quad::tanh_sinh(|z| 1.0 / phi.phi(z).unwrap_or(f64::NAN), u, cut, 1e-11, 0.0)?;
    let tail = quad::to_infinity(|z| 1.0 / phi_asymptotic(phi, z), cut, 1e-11, 0.0)?;
    Ok(head + tail)
}

/// `v̄_t = lim_{λ→∞} v_t(λ)`, from `∫_{v̄_t}^∞ dz/φ(z) = t`, cross-checked against
/// the ODE started from large initial values.
pub fn vbar_t(phi: &BranchingMechanism, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    let root = vbar_t_root(phi, t)?;
    let mut start: f64 = 1e8;
    let mut ode = f64::NAN;
    while start <= 1e20 {
        ode = v_value(phi, start.max(10.0 * root), t, 1e-12)?;
        if ((ode - root) / root).abs() <= 1e-6 {
            return Ok(root);
        }
        start *= 1e4;
    }
    Err(Error::numeric(format!(
        "v̄_t disagreement: root-find {root}, ODE from large initial value {ode}"
    )))
}

/// Root-finding half of [`vbar_t`].
pub fn vbar_t_root(phi: &BranchingMechanism, t: f64) -> Result<f64> {
    if !phi.grey_check() {
        return Err(Error::domain("Grey's condition fails: v̄_t is infinite"));
    }
    let floor = phi.largest_root()?;
    let g = |u: f64| inverse_phi_tail(phi, u).map(|v| v - t);

    let mut hi = (2.0 * floor).max(1.0);
    let mut g_hi = g(hi)?;
    while g_hi > 0.0 {
        hi *= 4.0;
        g_hi = g(hi)?;
        if hi > 1e300 {
            return Err(Error::numeric("could not bracket v̄_t"));
        }
    }
    let mut lo = hi;
    let mut g_lo = g_hi;
    while g_lo <= 0.0 {
        lo = floor + 0.25 * (lo - floor);
        g_lo = g(lo)?;
        if lo - floor < 1e-300 {
            return Err(Error::numeric("could not bracket v̄_t from below"));
        }
    }
    // Illinois regula falsi on [lo, hi], g(lo) > 0 > g(hi)
    let mut side = 0i8;
    for _ in 0..200 {
        let mid = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let mid = if mid > lo && mid < hi {
            mid
        } else {
            0.5 * (lo + hi)
        };
        let gm = g(mid)?;
        if gm > 0.0 {
            lo = mid;
            g_lo = gm;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            g_hi = gm;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 1e-13 * hi || gm == 0.0 {
            return Ok(mid);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `E_x exp(-λ X_t)` for the CB or CBI process.
pub fn transition_laplace(
    phi: &BranchingMechanism,
    psi: Option<&ImmigrationMechanism>,
    x: f64,
    t: f64,
    lambda: f64,
) -> Result<f64> {
    check_nonneg("x", x)?;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let traj = v_solve_with(phi, psi, lambda, t, DEFAULT_TOL)?;
    Ok((-x * traj.v_final() - traj.psi_integral_final()).exp())
}

/// Laplace transform of the CBI process with time-dependent immigration rate `ρ`:
/// `exp{-x v_t(λ) - ∫_0^t ρ(s) ψ(v_{t-s}(λ)) ds}`.
pub fn transition_laplace_time_rate<R: Fn(f64) -> f64>(
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    rate: R,
    x: f64,
    t: f64,
    lambda: f64,
) -> Result<f64> {
    check_nonneg("x", x)?;
    check_nonneg("t", t)?;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    // ∫_0^t ρ(t-r) ψ(v_r) dr rides along the ODE for v
    let sol = dopri5(
        |r, y: &[f64; 2]| {
            let v = y[0].max(0.0);
            Ok([-phi.phi(v)?, rate(t - r) * psi.psi(v)?])
        },
        0.0,
        [lambda, 0.0],
        t,
        &OdeOptions::with_tol(DEFAULT_TOL),
    )?;
    let [v, imm] = sol.last();
    Ok((-x * v.max(0.0) - imm).exp())
}

/// Expected state at time `t`, optionally with immigration and a time-dependent rate.
pub fn mean(
    phi: &BranchingMechanism,
    psi: Option<&ImmigrationMechanism>,
    rate: Option<&dyn Fn(f64) -> f64>,
    x: f64,
    t: f64,
) -> Result<f64> {
    check_nonneg("x", x)?;
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    let b = phi.b;
    let decay = |s: f64| (-b * s).exp();
    let branching = if t.is_infinite() {
        if b > 0.0 {
            0.0
        } else if b == 0.0 {
            x
        } else if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x * decay(t)
    };
    let Some(psi) = psi.filter(|p| !p.is_zero()) else {
        return Ok(branching);
    };
    let d0 = psi.psi_prime0()?;
    let imm = match rate {
        None => {
            if t.is_infinite() {
                if b > 0.0 {
                    d0 / b
                } else {
                    f64::INFINITY
                }
            } else {
                d0 * q_b_alpha(b, 1.0, t)
            }
        }
        Some(rho) => {
            if t.is_infinite() {
                return Err(Error::domain(
                    "a time-dependent rate needs a finite horizon",
                ));
            }
            d0 * quad::tanh_sinh(|s| decay(t - s) * rho(s), 0.0, t, 1e-10, 1e-300)?
        }
    };
    Ok(branching + imm)
}

/// Extinction probability with a flag telling whether Grey's condition held.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionProb {
    pub prob: f64,
    pub grey_holds: bool,
}

/// `Q_x{X_t = 0} = exp(-x v̄_t)`; `t = None` means `t = ∞` and uses the largest root of `φ`.
pub fn extinction_prob(phi: &BranchingMechanism, x: f64, t: Option<f64>) -> Result<ExtinctionProb> {
    check_nonneg("x", x)?;
    if x == 0.0 {
        return Ok(ExtinctionProb {
            prob: 1.0,
            grey_holds: phi.grey_check(),
        });
    }
    if !phi.grey_check() {
        return Ok(ExtinctionProb {
            prob: 0.0,
            grey_holds: false,
        });
    }
    let rate = match t {
        None => phi.largest_root()?,
        Some(t) => vbar_t(phi, t)?,
    };
    Ok(ExtinctionProb {
        prob: (-x * rate).exp(),
        grey_holds: true,
    })
}

/// Orders `p`, `q` with `φ(z) ~ z^p`, `ψ(z) ~ z^q` as `z → 0`.
fn small_z_orders(phi: &BranchingMechanism, psi: &ImmigrationMechanism) -> (f64, f64) {
    let p = if phi.b != 0.0 {
        1.0
    } else if let LevyMeasure::StableBranching { alpha, .. } = phi.m {
        alpha
    } else {
        2.0
    };
    let q = match psi.n {
        LevyMeasure::StableImmigration { alpha, .. } if psi.beta == 0.0 => alpha,
        _ => 1.0,
    };
    (p, q)
}

/// `∫_0^λ ψ(z)/φ(z) dz < ∞` near zero, decided from the small-`z` orders.
pub fn has_stationary_law(phi: &BranchingMechanism, psi: &ImmigrationMechanism) -> bool {
    if psi.is_zero() {
        return true;
    }
    if phi.b < 0.0 || phi.is_zero() {
        return false;
    }
    let (p, q) = small_z_orders(phi, psi);
    q - p > -1.0
}

/// Laplace transform `exp{-∫_0^λ ψ(z)/φ(z) dz}` of the stationary law.
pub fn stationary_laplace(
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    lambda: f64,
) -> Result<f64> {
    check_nonneg("lambda", lambda)?;
    if phi.b < 0.0 {
        return Err(Error::domain(
            "no stationary law: the process is supercritical",
        ));
    }
    if phi.is_zero() {
        return Err(Error::domain("no stationary law: φ vanishes identically"));
    }
    if psi.is_zero() || lambda == 0.0 {
        return Ok(1.0);
    }
    if !has_stationary_law(phi, psi) {
        return Err(Error::domain(
            "no stationary law: ∫_0 ψ(z)/φ(z) dz diverges",
        ));
    }
    // below z0 the ratio ψ/φ behaves like z^{q-p} and is integrated in closed form
    let (p, q) = small_z_orders(phi, psi);
    let z0 = 1e-10 * lambda;
    let ratio = |z: f64| -> Result<f64> { Ok(psi.psi(z)? / phi.phi(z)?) };
    let near_zero = ratio(z0)? * z0 / (1.0 + q - p);
    let mut failure = None;
    let integral = near_zero
        + quad::tanh_sinh(
            |z| {
                ratio(z).unwrap_or_else(|e| {
                    failure = Some(e);
                    0.0
                })
            },
            z0,
            lambda,
            1e-11,
            1e-300,
        )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((-integral).exp())
}

/// Size-biased semigroup transform `exp{-x v_t(λ) - ∫_0^t φ'_0(v_s(λ)) ds}`.
pub fn sizebiased_laplace(phi: &BranchingMechanism, x: f64, t: f64, lambda: f64) -> Result<f64> {
    check_nonneg("x", x)?;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let traj = v_solve(phi, lambda, t, DEFAULT_TOL)?;
    Ok((-x * traj.v_final() - traj.phi0prime_integral_final()).exp())
}
