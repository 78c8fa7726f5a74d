use crate::error::{Error, Result};
use crate::measures::LevyMeasure;
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism};
use crate::rngkit::{
    sample_one_sided_stable, sample_poisson, sample_spectrally_positive_stable_increment,
    RandomStream,
};

use super::{PathOptions, RateSpec, SamplePath};

/// Jump intensities above this per step are treated as a numeric failure.
const MAX_STEP_INTENSITY: f64 = 1e9;

/// Immigration subordinator pieces shared by the schemes.
#[derive(Debug, Clone)]
struct Immigration {
    beta: f64,
    n: LevyMeasure,
    /// Jumps above this size are drawn explicitly.
    cutoff: f64,
    jump_mass: f64,
    /// `∫_(0, cutoff] u n(du)`, added as drift.
    small_mean: f64,
    zero: bool,
}

impl Immigration {
    fn new(psi: &ImmigrationMechanism, eps: f64) -> Self {
        let cutoff = if psi.n.total_mass().is_finite() {
            0.0
        } else {
            eps
        };
        Immigration {
            beta: psi.beta,
            n: psi.n.clone(),
            cutoff,
            jump_mass: psi.n.mass_above(cutoff),
            small_mean: psi.n.first_moment_below(cutoff),
            zero: psi.is_zero(),
        }
    }

    /// Drift part and the jump sizes (with times) over a step of length `h`.
    fn step(
        &self,
        r1: f64,
        r2: f64,
        t: f64,
        h: f64,
        s: &mut RandomStream,
        jumps: &mut Vec<(f64, f64)>,
    ) -> Result<f64> {
        let drift = (self.beta * r1 + self.small_mean * r2) * h;
        let intensity = r2 * self.jump_mass * h;
        if intensity > MAX_STEP_INTENSITY {
            return Err(Error::numeric(format!(
                "immigration intensity overflow: {intensity}"
            )));
        }
        if intensity > 0.0 {
            for _ in 0..sample_poisson(s, intensity)? {
                let size = self.n.sample_above(self.cutoff, s)?;
                jumps.push((t + h * s.uniform(), size));
            }
        }
        Ok(drift)
    }
}

/// Euler scheme for the jump SDE driven by `(φ, ψ)` with small jumps of the
/// branching measure replaced by their compensator.
#[derive(Debug, Clone)]
pub struct CbiScheme {
    phi: BranchingMechanism,
    opts: PathOptions,
    big_mass: f64,
    big_mean: f64,
    small_var: f64,
    imm: Immigration,
}

impl CbiScheme {
    pub fn new(
        phi: &BranchingMechanism,
        psi: &ImmigrationMechanism,
        opts: PathOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let eps = opts.eps_jump;
        let big_mean = phi.m.first_moment_above(eps);
        if !big_mean.is_finite() {
            return Err(Error::domain("branching measure needs ∫_(ε,∞) u m(du) < ∞"));
        }
        let small_var = if opts.small_jump_gaussian {
            phi.m.second_moment_below(eps)
        } else {
            0.0
        };
        Ok(CbiScheme {
            phi: phi.clone(),
            opts,
            big_mass: phi.m.mass_above(eps),
            big_mean,
            small_var,
            imm: Immigration::new(psi, eps),
        })
    }

    pub fn options(&self) -> &PathOptions {
        &self.opts
    }

    pub fn simulate(&self, rate: &RateSpec, x0: f64, s: &mut RandomStream) -> Result<SamplePath> {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(Error::domain(format!(
                "initial state must be finite and >= 0, got {x0}"
            )));
        }
        let (b, c) = (self.phi.b, self.phi.c);
        let steps = self.opts.steps();
        let mut path = SamplePath::default();
        path.push(0.0, x0, 0.0);
        let mut y = x0;
        let mut integral = 0.0;
        let mut t = 0.0;
        let mut step_jumps = Vec::new();
        for i in 0..steps {
            let h = self.opts.step_size(i, steps);
            let t_next = if i + 1 == steps {
                self.opts.t_end
            } else {
                (i + 1) as f64 * self.opts.dt
            };
            if path.extinct_at.is_some() {
                if self.opts.records(i, steps) {
                    path.push(t_next, 0.0, integral);
                }
                t = t_next;
                continue;
            }
            let (r1, r2) = rate.factors(t, y)?;
            step_jumps.clear();

            let mut cont = -b * y * h - y * self.big_mean * h;
            if c > 0.0 && y > 0.0 {
                cont += (2.0 * c * y * h).sqrt() * s.normal();
            }
            if self.small_var > 0.0 && y > 0.0 {
                cont += (y * self.small_var * h).sqrt() * s.normal();
            }
            let intensity = y * self.big_mass * h;
            if intensity > MAX_STEP_INTENSITY {
                return Err(Error::numeric(format!(
                    "branching jump intensity overflow at t = {t}: {intensity}"
                )));
            }
            if intensity > 0.0 {
                for _ in 0..sample_poisson(s, intensity)? {
                    let size = self.phi.m.sample_above(self.opts.eps_jump, s)?;
                    step_jumps.push((t + h * s.uniform(), size));
                }
            }
            cont += self.imm.step(r1, r2, t, h, s, &mut step_jumps)?;

            let jump_total: f64 = step_jumps.iter().map(|j| j.1).sum();
            let end_cont = y + cont;
            // continuous part by the trapezoid rule, each jump counted from its time on
            integral += if end_cont >= 0.0 {
                0.5 * h * (y + end_cont)
            } else {
                0.5 * h * y * y / (y - end_cont)
            };
            integral += step_jumps
                .iter()
                .map(|&(tj, z)| z * (t_next - tj))
                .sum::<f64>();
            y = (end_cont + jump_total).max(0.0);
            if self.opts.record_jumps {
                path.jumps.extend_from_slice(&step_jumps);
            }
            if y == 0.0 && self.imm.zero {
                path.extinct_at = Some(t_next);
            }
            t = t_next;
            if self.opts.records(i, steps) {
                path.push(t, y, integral);
            }
        }
        Ok(path)
    }
}

/// Euler scheme for the CBI process: diffusion, thinned branching jumps above
/// `eps_jump`, compensated small jumps, drift `βρ - by` and immigration jumps.
pub fn simulate_cbi(
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    rate: &RateSpec,
    x0: f64,
    opts: PathOptions,
    s: &mut RandomStream,
) -> Result<SamplePath> {
    CbiScheme::new(phi, psi, opts)?.simulate(rate, x0, s)
}

/// Euler scheme with exact stable increments for
/// `dy = √(2cy) dB + (σ y)^{1/α} dz_0 - b y dt + dz_1`.
#[derive(Debug, Clone)]
pub struct StableScheme {
    c: f64,
    sigma: f64,
    alpha: f64,
    b: f64,
    psi: ImmigrationMechanism,
    imm: Immigration,
    opts: PathOptions,
}

impl StableScheme {
    pub fn new(
        c: f64,
        sigma: f64,
        alpha: f64,
        b: f64,
        psi: &ImmigrationMechanism,
        opts: PathOptions,
    ) -> Result<Self> {
        opts.validate()?;
        if !(c >= 0.0) || !(sigma >= 0.0) {
            return Err(Error::domain("c and σ must be nonnegative"));
        }
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::domain(format!("α must lie in (1,2), got {alpha}")));
        }
        Ok(StableScheme {
            c,
            sigma,
            alpha,
            b,
            psi: psi.clone(),
            imm: Immigration::new(psi, opts.eps_jump),
            opts,
        })
    }

    fn subordinator_increment(&self, h: f64, t: f64, s: &mut RandomStream) -> Result<f64> {
        match self.psi.n {
            LevyMeasure::StableImmigration { sigma, alpha } => {
                let scale = h * sigma * statrs::function::gamma::gamma(1.0 - alpha) / alpha;
                Ok(self.psi.beta * h + sample_one_sided_stable(s, alpha, scale)?)
            }
            _ => {
                let mut jumps = Vec::new();
                let drift = self.imm.step(1.0, 1.0, t, h, s, &mut jumps)?;
                Ok(drift + jumps.iter().map(|j| j.1).sum::<f64>())
            }
        }
    }

    pub fn simulate(&self, x0: f64, s: &mut RandomStream) -> Result<SamplePath> {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(Error::domain(format!(
                "initial state must be finite and >= 0, got {x0}"
            )));
        }
        let steps = self.opts.steps();
        let mut path = SamplePath::default();
        path.push(0.0, x0, 0.0);
        let (mut y, mut integral, mut t) = (x0, 0.0, 0.0);
        for i in 0..steps {
            let h = self.opts.step_size(i, steps);
            let t_next = if i + 1 == steps {
                self.opts.t_end
            } else {
                (i + 1) as f64 * self.opts.dt
            };
            if path.extinct_at.is_none() {
                let mut next = y - self.b * y * h;
                if self.c > 0.0 && y > 0.0 {
                    next += (2.0 * self.c * y * h).sqrt() * s.normal();
                }
                if self.sigma > 0.0 && y > 0.0 {
                    let z0 = sample_spectrally_positive_stable_increment(s, self.alpha, h)?;
                    next += (self.sigma * y).powf(1.0 / self.alpha) * z0;
                }
                if !self.imm.zero {
                    next += self.subordinator_increment(h, t, s)?;
                }
                let next = next.max(0.0);
                integral += 0.5 * h * (y + next);
                y = next;
                if y == 0.0 && self.imm.zero {
                    path.extinct_at = Some(t_next);
                }
            }
            t = t_next;
            if self.opts.records(i, steps) {
                path.push(t, y, integral);
            }
        }
        Ok(path)
    }
}

/// Stable-mechanism SDE with exact stable increments; `eps_jump` in `opts` only
/// applies to infinite-mass immigration measures other than the stable one.
#[allow(clippy::too_many_arguments)]
pub fn simulate_stable_cbi(
    c: f64,
    sigma: f64,
    alpha: f64,
    b: f64,
    psi: &ImmigrationMechanism,
    x0: f64,
    opts: PathOptions,
    s: &mut RandomStream,
) -> Result<SamplePath> {
    StableScheme::new(c, sigma, alpha, b, psi, opts)?.simulate(x0, s)
}

/// Spectrally positive Lévy process with Laplace exponent `φ`, stopped at its
/// first passage to zero.
#[derive(Debug, Clone)]
pub struct LevyScheme {
    phi: BranchingMechanism,
    opts: PathOptions,
    stable: Option<(f64, f64)>,
    big_mass: f64,
    big_mean: f64,
    small_var: f64,
}

impl LevyScheme {
    pub fn new(phi: &BranchingMechanism, opts: PathOptions) -> Result<Self> {
        opts.validate()?;
        let eps = opts.eps_jump;
        let stable = match phi.m {
            LevyMeasure::StableBranching { sigma, alpha } => Some((sigma, alpha)),
            _ => None,
        };
        let big_mean = phi.m.first_moment_above(eps);
        if stable.is_none() && !big_mean.is_finite() {
            return Err(Error::domain("Lévy measure needs ∫_(ε,∞) u m(du) < ∞"));
        }
        Ok(LevyScheme {
            phi: phi.clone(),
            opts,
            stable,
            big_mass: phi.m.mass_above(eps),
            big_mean,
            small_var: if opts.small_jump_gaussian {
                phi.m.second_moment_below(eps)
            } else {
                0.0
            },
        })
    }

    pub fn simulate(&self, x0: f64, s: &mut RandomStream) -> Result<SamplePath> {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(Error::domain(format!(
                "initial state must be finite and >= 0, got {x0}"
            )));
        }
        let (b, c) = (self.phi.b, self.phi.c);
        let steps = self.opts.steps();
        let mut path = SamplePath::default();
        path.push(0.0, x0, 0.0);
        let (mut y, mut integral, mut t) = (x0, 0.0, 0.0);
        if x0 == 0.0 {
            path.extinct_at = Some(0.0);
        }
        for i in 0..steps {
            let h = self.opts.step_size(i, steps);
            let t_next = if i + 1 == steps {
                self.opts.t_end
            } else {
                (i + 1) as f64 * self.opts.dt
            };
            if path.extinct_at.is_none() {
                let mut cont = -b * h;
                if c > 0.0 {
                    cont += (2.0 * c * h).sqrt() * s.normal();
                }
                let mut jumps = 0.0;
                match self.stable {
                    Some((sigma, alpha)) => {
                        cont += sigma.powf(1.0 / alpha)
                            * sample_spectrally_positive_stable_increment(s, alpha, h)?;
                    }
                    None => {
                        cont -= self.big_mean * h;
                        if self.small_var > 0.0 {
                            cont += (self.small_var * h).sqrt() * s.normal();
                        }
                        let intensity = self.big_mass * h;
                        if intensity > MAX_STEP_INTENSITY {
                            return Err(Error::numeric(format!(
                                "jump intensity overflow: {intensity}"
                            )));
                        }
                        if intensity > 0.0 {
                            for _ in 0..sample_poisson(s, intensity)? {
                                let size = self.phi.m.sample_above(self.opts.eps_jump, s)?;
                                jumps += size;
                                if self.opts.record_jumps {
                                    path.jumps.push((t + h * s.uniform(), size));
                                }
                            }
                        }
                    }
                }
                let end_cont = y + cont;
                // Brownian bridge: chance that the continuous part crossed zero inside the step
                let crossed =
                    end_cont <= 0.0 || (c > 0.0 && s.uniform() < (-y * end_cont / (c * h)).exp());
                if crossed {
                    let frac = if end_cont < 0.0 {
                        y / (y - end_cont)
                    } else {
                        0.5
                    };
                    integral += 0.5 * frac * h * y;
                    y = 0.0;
                    path.extinct_at = Some(t + frac * h);
                } else {
                    let next = end_cont + jumps;
                    integral += 0.5 * h * (y + end_cont) + jumps * 0.5 * h;
                    y = next;
                }
            }
            t = t_next;
            if self.opts.records(i, steps) {
                path.push(t, y, integral);
            }
        }
        Ok(path)
    }
}

/// Lévy path with `E e^{-λ(Y_t - x)} = e^{tφ(λ)}` before absorption at zero.
pub fn simulate_levy(
    phi: &BranchingMechanism,
    x0: f64,
    opts: PathOptions,
    s: &mut RandomStream,
) -> Result<SamplePath> {
    LevyScheme::new(phi, opts)?.simulate(x0, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::MCEstimate;

    #[test]
    fn drift_only_path() {
        let phi = BranchingMechanism::feller(1.0, 0.0).unwrap();
        let mut s = RandomStream::new(1);
        let p = simulate_cbi(
            &phi,
            &ImmigrationMechanism::none(),
            &RateSpec::Unit,
            1.0,
            PathOptions::new(1.0, 1e-4, 1e-3),
            &mut s,
        )
        .unwrap();
        assert!((p.final_value() - (-1.0f64).exp()).abs() < 1e-4);
        assert!((p.final_integral() - (1.0 - (-1.0f64).exp())).abs() < 1e-4);
        assert_eq!(p.len(), 10_001);
    }

    #[test]
    fn feller_euler_mean_and_positivity() {
        let phi = BranchingMechanism::feller(0.0, 1.0).unwrap();
        let scheme = CbiScheme::new(
            &phi,
            &ImmigrationMechanism::none(),
            PathOptions::new(1.0, 1e-2, 1e-3).with_stride(10),
        )
        .unwrap();
        let root = RandomStream::new(7);
        let mut finals = Vec::new();
        for i in 0..4000 {
            let p = scheme
                .simulate(&RateSpec::Unit, 1.0, &mut root.split(i))
                .unwrap();
            assert!(p.values.iter().all(|&v| v >= 0.0));
            if let Some(e) = p.extinct_at {
                for (t, v) in p.t_grid.iter().zip(&p.values) {
                    if *t >= e {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
            for w in p.cum_integral.windows(2) {
                assert!(w[1] >= w[0]);
            }
            finals.push(p.final_value());
        }
        let est = MCEstimate::from_values(finals);
        assert!((est.mean - 1.0).abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn stable_levy_exponent() {
        let phi = BranchingMechanism::stable(0.0, 1.0, 1.5).unwrap();
        let scheme =
            LevyScheme::new(&phi, PathOptions::new(1.0, 0.05, 1e-3).endpoints_only()).unwrap();
        let root = RandomStream::new(9);
        let lambda = 0.5f64;
        let vals: Vec<f64> = (0..20000)
            .map(|i| {
                let p = scheme.simulate(1e6, &mut root.split(i)).unwrap();
                (-lambda * (p.final_value() - 1e6)).exp()
            })
            .collect();
        let est = MCEstimate::from_values(vals);
        let exact = lambda.powf(1.5).exp();
        assert!(
            (est.mean - exact).abs() < 4.0 * est.stderr,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn pure_drift_levy_hits_zero() {
        let phi = BranchingMechanism::feller(1.0, 0.0).unwrap();
        let mut s = RandomStream::new(3);
        let p = simulate_levy(&phi, 0.5, PathOptions::new(1.0, 1e-3, 1e-3), &mut s).unwrap();
        assert!((p.extinct_at.unwrap() - 0.5).abs() < 2e-3);
        assert!((p.value_at(0.25).unwrap() - 0.25).abs() < 1e-9);
        assert_eq!(p.final_value(), 0.0);
    }

    #[test]
    fn invalid_options() {
        let phi = BranchingMechanism::feller(0.0, 1.0).unwrap();
        let none = ImmigrationMechanism::none();
        let mut s = RandomStream::new(3);
        assert!(simulate_cbi(
            &phi,
            &none,
            &RateSpec::Unit,
            1.0,
            PathOptions::new(1.0, 0.0, 1e-3),
            &mut s
        )
        .unwrap_err()
        .is_domain());
        assert!(simulate_cbi(
            &phi,
            &none,
            &RateSpec::Unit,
            1.0,
            PathOptions::new(1.0, 1e-3, -1.0),
            &mut s
        )
        .unwrap_err()
        .is_domain());
    }
}
