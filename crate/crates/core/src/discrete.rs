//! Galton–Watson chains with and without immigration, their generating functions
//! and the rescaled recursion converging to the cumulant semigroup.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measures::em1x;
use crate::mechanism::BranchingMechanism;
use crate::rngkit::{sample_poisson, RandomStream};

/// Populations at or above this size are reported as overflow.
pub const POPULATION_LIMIT: u64 = 1 << 63;

/// Offspring (or immigrant) distribution on the nonnegative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OffspringLaw {
    /// `g(z) = (1 - p) + p z²`.
    Binary { p: f64 },
    /// `g(z) = exp(μ(z - 1))`.
    Poisson { mu: f64 },
    /// `p_j = p (1 - p)^j`, `g(z) = p / (1 - (1 - p) z)`.
    Geometric { p: f64 },
    /// `g(z) = z + α^{-1}(1 - z)^α`, `1 < α < 2`.
    StableOffspring { alpha: f64 },
    /// The law `g_k` built from a branching mechanism at scale `k`.
    FromMechanism { phi: BranchingMechanism, k: u64 },
}

impl OffspringLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OffspringLaw::Binary { p } if (0.0..=1.0).contains(&p) => Ok(()),
            OffspringLaw::Poisson { mu } if mu > 0.0 && mu.is_finite() => Ok(()),
            OffspringLaw::Geometric { p } if p > 0.0 && p < 1.0 => Ok(()),
            OffspringLaw::StableOffspring { alpha } if alpha > 1.0 && alpha < 2.0 => Ok(()),
            OffspringLaw::FromMechanism { k, .. } if k > 0 => Ok(()),
            ref law => Err(Error::domain(format!("invalid offspring law {law:?}"))),
        }
    }

    /// `γ_{0,k} = (1 + 2c) k + ∫ u (1 - e^{-ku}) m(du)` and `γ_k = γ_{0,k} + |b|`.
    fn mechanism_gammas(phi: &BranchingMechanism, k: u64) -> Result<(f64, f64)> {
        let k = k as f64;
        let g0 = (1.0 + 2.0 * phi.c) * k + phi.phi0_prime(k)? - 2.0 * phi.c * k;
        Ok((g0, g0 + phi.b.abs()))
    }

    /// The time scale `γ_k` that makes a `FromMechanism` family converge to `φ`.
    pub fn natural_gamma(&self) -> Option<Result<f64>> {
        match self {
            OffspringLaw::FromMechanism { phi, k } => {
                Some(Self::mechanism_gammas(phi, *k).map(|(_, g)| g))
            }
            _ => None,
        }
    }

    /// `g(1 - w) - (1 - w)`, evaluated without cancellation for small `w`.
    pub fn excess(&self, w: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::domain(format!(
                "pgf argument outside [0,1]: 1 - {w}"
            )));
        }
        Ok(match self {
            OffspringLaw::Binary { p } => w * (1.0 - 2.0 * p) + p * w * w,
            OffspringLaw::Poisson { mu } => em1x(mu * w) + w * (1.0 - mu),
            OffspringLaw::Geometric { p } => {
                (w * (2.0 * p - 1.0) + (1.0 - p) * w * w) / (p + (1.0 - p) * w)
            }
            OffspringLaw::StableOffspring { alpha } => w.powf(*alpha) / alpha,
            OffspringLaw::FromMechanism { phi, k } => {
                let (_, g) = Self::mechanism_gammas(phi, *k)?;
                let kf = *k as f64;
                let zero_part = phi.phi0(kf * w)? / kf;
                let one_part = if phi.b > 0.0 {
                    phi.b * w
                } else if phi.b < 0.0 {
                    -phi.b * (w * w - w)
                } else {
                    0.0
                };
                (zero_part + one_part) / g
            }
        })
    }

    /// `g(z)`.
    pub fn pgf(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!(
                "pgf argument must lie in [0,1], got {z}"
            )));
        }
        match *self {
            OffspringLaw::Poisson { mu } => Ok((mu * (z - 1.0)).exp()),
            OffspringLaw::Geometric { p } => Ok(p / (1.0 - (1.0 - p) * z)),
            _ => Ok(z + self.excess(1.0 - z)?),
        }
    }

    /// `1 - g(1 - w)`.
    pub fn complement(&self, w: f64) -> Result<f64> {
        Ok(w - self.excess(w)?)
    }

    /// `g'(1)`.
    pub fn mean(&self) -> Result<f64> {
        Ok(match self {
            OffspringLaw::Binary { p } => 2.0 * p,
            OffspringLaw::Poisson { mu } => *mu,
            OffspringLaw::Geometric { p } => (1.0 - p) / p,
            OffspringLaw::StableOffspring { .. } => 1.0,
            OffspringLaw::FromMechanism { phi, k } => {
                let (_, g) = Self::mechanism_gammas(phi, *k)?;
                1.0 - phi.b / g
            }
        })
    }

    /// Probability of exactly `j` offspring.
    pub fn prob(&self, j: u64) -> Result<f64> {
        Ok(match *self {
            OffspringLaw::Binary { p } => match j {
                0 => 1.0 - p,
                2 => p,
                _ => 0.0,
            },
            OffspringLaw::Poisson { mu } => {
                (j as f64 * mu.ln() - mu - ln_gamma(j as f64 + 1.0)).exp()
            }
            OffspringLaw::Geometric { p } => p * (1.0 - p).powf(j as f64),
            OffspringLaw::StableOffspring { alpha } => match j {
                0 => 1.0 / alpha,
                1 => 0.0,
                _ => stable_tail(alpha, j as f64) - stable_tail(alpha, j as f64 + 1.0),
            },
            OffspringLaw::FromMechanism { .. } => {
                return Err(Error::Unsupported(
                    "coefficients of a mechanism-built pgf are not available".into(),
                ))
            }
        })
    }
}

/// `P{ξ >= j}` for the stable offspring law, `j >= 2`:
/// `(α - 1)/α · Γ(j - α) / (Γ(2 - α) Γ(j))`.
pub fn stable_tail(alpha: f64, j: f64) -> f64 {
    let log_ratio = if j > 1e6 {
        // lnΓ(j - α) - lnΓ(j) without cancellation
        -alpha * j.ln() + alpha * (alpha + 1.0) / (2.0 * j)
    } else {
        ln_gamma(j - alpha) - ln_gamma(j)
    };
    (alpha - 1.0) / alpha * (log_ratio - ln_gamma(2.0 - alpha)).exp()
}

fn sample_stable_offspring(alpha: f64, s: &mut RandomStream) -> Result<u64> {
    let u = s.uniform();
    if u > (alpha - 1.0) / alpha {
        return Ok(0);
    }
    // largest j with P{ξ >= j} >= u
    let mut lo = 2.0f64;
    let mut hi = 4.0f64;
    while stable_tail(alpha, hi) >= u {
        lo = hi;
        hi *= 2.0;
        if hi >= POPULATION_LIMIT as f64 {
            return Err(Error::Overflow { step: 0 });
        }
    }
    while hi - lo > 1.0 {
        let mid = (0.5 * (lo + hi)).floor();
        if stable_tail(alpha, mid) >= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo as u64)
}

/// One draw from the offspring law.
pub fn sample_offspring(g: &OffspringLaw, s: &mut RandomStream) -> Result<u64> {
    match *g {
        OffspringLaw::Binary { p } => Ok(if s.uniform() < p { 2 } else { 0 }),
        OffspringLaw::Poisson { mu } => sample_poisson(s, mu),
        OffspringLaw::Geometric { p } => {
            let j = (s.uniform().ln() / (1.0 - p).ln()).floor();
            if j >= POPULATION_LIMIT as f64 {
                Err(Error::Overflow { step: 0 })
            } else {
                Ok(j as u64)
            }
        }
        OffspringLaw::StableOffspring { alpha } => sample_stable_offspring(alpha, s),
        OffspringLaw::FromMechanism { .. } => Err(Error::Unsupported(
            "mechanism-built offspring laws are evaluation-only".into(),
        )),
    }
}

/// Total offspring of `x` individuals.
fn offspring_sum(g: &OffspringLaw, x: u64, s: &mut RandomStream) -> Result<u64> {
    if let OffspringLaw::Poisson { mu } = *g {
        let mean = mu * x as f64;
        if mean >= POPULATION_LIMIT as f64 {
            return Err(Error::Overflow { step: 0 });
        }
        return sample_poisson(s, mean).and_then(|n| {
            if n < POPULATION_LIMIT {
                Ok(n)
            } else {
                Err(Error::Overflow { step: 0 })
            }
        });
    }
    let mut total = 0u64;
    for _ in 0..x {
        total = total
            .checked_add(sample_offspring(g, s)?)
            .filter(|t| *t < POPULATION_LIMIT)
            .ok_or(Error::Overflow { step: 0 })?;
    }
    Ok(total)
}

fn run_chain(
    g: &OffspringLaw,
    h: Option<&OffspringLaw>,
    x0: u64,
    n_steps: usize,
    s: &mut RandomStream,
) -> Result<Vec<u64>> {
    g.validate()?;
    if let Some(h) = h {
        h.validate()?;
    }
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(x0);
    let mut x = x0;
    for step in 1..=n_steps {
        let with_step = |e: Error| match e {
            Error::Overflow { .. } => Error::Overflow { step },
            e => e,
        };
        let mut next = offspring_sum(g, x, s).map_err(with_step)?;
        if let Some(h) = h {
            next = next
                .checked_add(sample_offspring(h, s).map_err(with_step)?)
                .filter(|t| *t < POPULATION_LIMIT)
                .ok_or(Error::Overflow { step })?;
        }
        x = next;
        path.push(x);
    }
    Ok(path)
}

/// Galton–Watson chain `x(n) = Σ_{i <= x(n-1)} ξ_{n,i}`.
pub fn gw_simulate(
    g: &OffspringLaw,
    x0: u64,
    n_steps: usize,
    s: &mut RandomStream,
) -> Result<Vec<u64>> {
    run_chain(g, None, x0, n_steps, s)
}

/// Galton–Watson chain with immigration `y(n) = Σ_{i <= y(n-1)} ξ_{n,i} + η_n`.
pub fn gwi_simulate(
    g: &OffspringLaw,
    h: &OffspringLaw,
    x0: u64,
    n_steps: usize,
    s: &mut RandomStream,
) -> Result<Vec<u64>> {
    run_chain(g, Some(h), x0, n_steps, s)
}

/// `v_k(t, λ) = -k log g^{[γ_k t]}(e^{-λ/k})`.
///
/// The iterate is carried as `w = 1 - z` whenever `z > 1/2`.
pub fn vk_recursion(g: &OffspringLaw, k: u64, gamma_k: f64, t: f64, lambda: f64) -> Result<f64> {
    if k == 0 || !(gamma_k > 0.0) {
        return Err(Error::domain("k and γ_k must be positive"));
    }
    if !(lambda >= 0.0) || !(t >= 0.0) {
        return Err(Error::domain("t and λ must be nonnegative"));
    }
    let kf = k as f64;
    let steps = (gamma_k * t).floor() as u64;
    enum State {
        Z(f64),
        W(f64),
    }
    let w0 = -(-lambda / kf).exp_m1();
    let mut state = if w0 < 0.5 {
        State::W(w0)
    } else {
        State::Z(1.0 - w0)
    };
    let out_of_range = |v: f64| !(0.0..=1.0).contains(&v) || v.is_nan();
    for _ in 0..steps {
        state = match state {
            State::W(w) => {
                let next = g.complement(w)?;
                if out_of_range(next) {
                    return Err(Error::numeric(format!(
                        "pgf iterate left [0,1]: 1 - {next}"
                    )));
                }
                if next > 0.5 {
                    State::Z(1.0 - next)
                } else {
                    State::W(next)
                }
            }
            State::Z(z) => {
                let next = g.pgf(z)?;
                if out_of_range(next) {
                    return Err(Error::numeric(format!("pgf iterate left [0,1]: {next}")));
                }
                if next > 0.5 {
                    State::W(g.complement(1.0 - z)?)
                } else {
                    State::Z(next)
                }
            }
        };
    }
    Ok(match state {
        State::W(w) => -kf * (-w).ln_1p(),
        State::Z(z) => -kf * z.ln(),
    })
}

/// One row of a scaling diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub k: u64,
    pub z: f64,
    #[serde(rename = "G_k")]
    pub g_k: f64,
    pub phi_k: f64,
    pub phi: f64,
    pub abs_err: f64,
}

/// `G_k(z) = kγ_k[g(e^{-z/k}) - e^{-z/k}]`.
pub fn g_k(g: &OffspringLaw, k: u64, gamma_k: f64, z: f64) -> Result<f64> {
    let kf = k as f64;
    let w = -(-z / kf).exp_m1();
    Ok(kf * gamma_k * g.excess(w)?)
}

/// `φ_k(z) = kγ_k[g(1 - z/k) - (1 - z/k)]` for `0 <= z <= k`.
pub fn phi_k(g: &OffspringLaw, k: u64, gamma_k: f64, z: f64) -> Result<f64> {
    let kf = k as f64;
    if !(0.0..=kf).contains(&z) {
        return Err(Error::domain(format!(
            "φ_k needs 0 <= z <= k = {k}, got {z}"
        )));
    }
    Ok(kf * gamma_k * g.excess(z / kf)?)
}

/// Tabulates `G_k`, `φ_k` and the target `φ` over a family `(k, g_k, γ_k)`.
pub fn scaling_diagnostics<F: Fn(f64) -> Result<f64>>(
    family: &[(u64, OffspringLaw, f64)],
    z_grid: &[f64],
    target: F,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(family.len() * z_grid.len());
    for (k, law, gamma) in family {
        for &z in z_grid {
            let pk = phi_k(law, *k, *gamma, z)?;
            let phi = target(z)?;
            rows.push(ScalingRow {
                k: *k,
                z,
                g_k: g_k(law, *k, *gamma, z)?,
                phi_k: pk,
                phi,
                abs_err: (pk - phi).abs(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::LevyMeasure;

    fn quadratic() -> BranchingMechanism {
        BranchingMechanism::feller(0.0, 1.0).unwrap()
    }

    #[test]
    fn pgf_examples() {
        assert_eq!(OffspringLaw::Binary { p: 1.0 }.pgf(0.5).unwrap(), 0.25);
        let fm = OffspringLaw::FromMechanism {
            phi: quadratic(),
            k: 1,
        };
        assert!((fm.pgf(0.5).unwrap() - 0.5833333333333334).abs() < 1e-12);
        assert!((fm.pgf(0.3).unwrap() - (1.0 + 0.3 + 0.09) / 3.0).abs() < 1e-12);
        let st = OffspringLaw::StableOffspring { alpha: 1.5 };
        assert!((st.pgf(0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        for law in [
            OffspringLaw::Binary { p: 0.3 },
            OffspringLaw::Poisson { mu: 1.7 },
            OffspringLaw::Geometric { p: 0.25 },
            st.clone(),
            fm,
        ] {
            assert!((law.pgf(1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(st.pgf(1.2).is_err());
    }

    #[test]
    fn coefficients_sum_to_one() {
        let st = OffspringLaw::StableOffspring { alpha: 1.5 };
        let mut total = 0.0;
        let mut p = (1.5 - 1.0) / 2.0;
        for j in 0..2000u64 {
            let pj = st.prob(j).unwrap();
            assert!(pj >= 0.0);
            if j >= 2 {
                // ratio recurrence p_{j+1} = p_j (j - α)/(j + 1)
                assert!((pj - p).abs() < 1e-13, "j={j}");
                p *= (j as f64 - 1.5) / (j as f64 + 1.0);
            }
            total += pj;
        }
        assert!((total + stable_tail(1.5, 2000.0) - 1.0).abs() < 1e-12);
        for law in [
            OffspringLaw::Poisson { mu: 2.0 },
            OffspringLaw::Geometric { p: 0.4 },
        ] {
            let s: f64 = (0..200).map(|j| law.prob(j).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_frequencies() {
        let mut s = RandomStream::new(11);
        let n = 100_000;
        let st = OffspringLaw::StableOffspring { alpha: 1.5 };
        let zeros = (0..n)
            .filter(|_| sample_offspring(&st, &mut s).unwrap() == 0)
            .count();
        let p = zeros as f64 / n as f64;
        assert!((p - 2.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / n as f64).sqrt());
        let twos = (0..n)
            .filter(|_| sample_offspring(&st, &mut s).unwrap() == 2)
            .count();
        let p2 = st.prob(2).unwrap();
        assert!((twos as f64 / n as f64 - p2).abs() < 4.0 * (p2 * (1.0 - p2) / n as f64).sqrt());
        let b = OffspringLaw::Binary { p: 0.0 };
        assert!((0..100).all(|_| sample_offspring(&b, &mut s).unwrap() == 0));
        let geo = OffspringLaw::Geometric { p: 1.0 / 3.0 };
        let m: f64 = (0..n)
            .map(|_| sample_offspring(&geo, &mut s).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((m - 2.0).abs() < 4.0 * (6.0f64 / n as f64).sqrt());
        let fm = OffspringLaw::FromMechanism {
            phi: quadratic(),
            k: 4,
        };
        assert!(matches!(
            sample_offspring(&fm, &mut s),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn chains() {
        let mut s = RandomStream::new(5);
        let b = OffspringLaw::Binary { p: 0.5 };
        assert_eq!(gw_simulate(&b, 0, 5, &mut s).unwrap(), vec![0; 6]);
        let none = OffspringLaw::Binary { p: 0.0 };
        let h = OffspringLaw::Poisson { mu: 2.0 };
        let path = gwi_simulate(&none, &h, 10, 3, &mut s).unwrap();
        assert_eq!(path.len(), 4);
        assert_eq!(path[0], 10);
        let huge = OffspringLaw::Poisson { mu: 1e6 };
        let err = gw_simulate(&huge, 1, 10, &mut s).unwrap_err();
        assert!(matches!(err, Error::Overflow { step } if step > 1));
    }

    #[test]
    fn vk_examples() {
        let b = OffspringLaw::Binary { p: 0.5 };
        assert_eq!(vk_recursion(&b, 3, 1.0, 0.0, 1.7).unwrap(), 1.7);
        let v = vk_recursion(&b, 1, 1.0, 1.0, 1.0).unwrap();
        let exact = -((1.0 + (-2.0f64).exp()) / 2.0).ln();
        assert!((v - exact).abs() < 1e-12);
        assert!((v - 0.566219).abs() < 1e-6);
        let v = vk_recursion(&b, 2048, 2048.0, 1.0, 1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 2e-3, "{v}");
    }

    #[test]
    fn mechanism_family_reproduces_phi() {
        let m = BranchingMechanism::new(
            0.0,
            0.5,
            LevyMeasure::ExponentialJump { a: 1.0, theta: 2.0 },
        )
        .unwrap();
        let law = OffspringLaw::FromMechanism {
            phi: m.clone(),
            k: 16,
        };
        let gamma = law.natural_gamma().unwrap().unwrap();
        for z in [0.0, 0.5, 3.0, 16.0] {
            let pk = phi_k(&law, 16, gamma, z).unwrap();
            assert!((pk - m.phi(z).unwrap()).abs() < 1e-10 * (1.0 + pk.abs()));
        }
        let neg = BranchingMechanism::feller(-0.7, 1.0).unwrap();
        let law = OffspringLaw::FromMechanism {
            phi: neg.clone(),
            k: 32,
        };
        let gamma = law.natural_gamma().unwrap().unwrap();
        for z in [0.5, 2.0, 10.0] {
            let exact = neg.phi(z).unwrap() + 0.7 * z * z / 32.0;
            assert!((phi_k(&law, 32, gamma, z).unwrap() - exact).abs() < 1e-12);
        }
        assert!(phi_k(&law, 32, gamma, 40.0).is_err());
        assert!((law.mean().unwrap() - (1.0 + 0.7 / gamma)).abs() < 1e-15);
    }

    #[test]
    fn diagnostics_table() {
        let family: Vec<_> = [16u64, 256, 4096]
            .iter()
            .map(|&k| (k, OffspringLaw::Binary { p: 0.5 }, k as f64))
            .collect();
        let grid = [0.5, 2.0, 10.0];
        let rows = scaling_diagnostics(&family, &grid, |z| Ok(z * z / 2.0)).unwrap();
        assert_eq!(rows.len(), 9);
        // φ_k is exactly z²/2 for binary splitting with γ_k = k; G_k converges to it
        for r in &rows {
            assert!(r.abs_err < 1e-12);
        }
        let gap = |k: u64| {
            rows.iter()
                .filter(|r| r.k == k)
                .map(|r| (r.g_k - r.phi_k).abs())
                .fold(0.0, f64::max)
        };
        assert!(gap(16) > gap(256) && gap(256) > gap(4096));
    }
}
