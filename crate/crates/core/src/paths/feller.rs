use crate::cumulant::q_b_alpha;
use crate::error::{Error, Result};
use crate::measures::LevyMeasure;
use crate::mechanism::ImmigrationMechanism;
use crate::rngkit::{sample_gamma, sample_poisson, RandomStream};

use super::{uniform_grid, SamplePath};

fn check_feller(c: f64, beta: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!(
            "Feller sampling needs c > 0, got {c}"
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!(
            "β must be finite and >= 0, got {beta}"
        )));
    }
    Ok(())
}

/// Exact draw of `y(t)` given `y(0) = x` for `dy = √(2cy) dB + (β - by) dt`.
///
/// The branching part is a Poisson(`x e^{-bt}/(cq)`) sum of exponentials with mean
/// `cq`, the immigration part Gamma(`β/c`) with scale `cq`, where `q = q^b_1(t)`.
pub fn feller_transition_sample(
    c: f64,
    b: f64,
    beta: f64,
    x: f64,
    t: f64,
    s: &mut RandomStream,
) -> Result<f64> {
    check_feller(c, beta)?;
    if !(x >= 0.0) || !(t >= 0.0) {
        return Err(Error::domain("state and time must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(x);
    }
    let scale = c * q_b_alpha(b, 1.0, t);
    let mut y = 0.0;
    if x > 0.0 {
        let n = sample_poisson(s, x * (-b * t).exp() / scale)?;
        if n > 0 {
            y += sample_gamma(s, n as f64, 1.0 / scale)?;
        }
    }
    if beta > 0.0 {
        y += sample_gamma(s, beta / c, 1.0 / scale)?;
    }
    Ok(y)
}

/// Exact Feller/CIR path on `t_grid`; the integral column uses the trapezoid rule.
pub fn simulate_feller_exact(
    c: f64,
    b: f64,
    beta: f64,
    x0: f64,
    t_grid: &[f64],
    s: &mut RandomStream,
) -> Result<SamplePath> {
    check_feller(c, beta)?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] < 0.0 {
        return Err(Error::domain(
            "time grid must be nonempty, nonnegative and increasing",
        ));
    }
    let mut path = SamplePath::default();
    let mut y = feller_transition_sample(c, b, beta, x0, t_grid[0], s)?;
    let mut integral = 0.0;
    path.push(t_grid[0], y, 0.0);
    if y == 0.0 && beta == 0.0 {
        path.extinct_at = Some(t_grid[0]);
    }
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        let next = if y == 0.0 && beta == 0.0 {
            0.0
        } else {
            feller_transition_sample(c, b, beta, y, h, s)?
        };
        integral += 0.5 * h * (y + next);
        y = next;
        if y == 0.0 && beta == 0.0 && path.extinct_at.is_none() {
            path.extinct_at = Some(w[1]);
        }
        path.push(w[1], y, integral);
    }
    Ok(path)
}

/// Feller CB path rebuilt from the excursions alive at time `t0`.
///
/// There are Poisson(`x v̄_{t0}`) of them, each of exponential size with mean
/// `c q^b_1(t0)`, and each continues as an independent Feller CB. By the
/// branching property the survivors are advanced together. The output lives on
/// the grid `t0, t0 + dt, ..., t_end`.
pub fn excursion_reconstruct_feller(
    c: f64,
    b: f64,
    x: f64,
    t0: f64,
    t_end: f64,
    dt: f64,
    s: &mut RandomStream,
) -> Result<SamplePath> {
    check_feller(c, 0.0)?;
    if !(x >= 0.0) || !(t0 > 0.0) || !(t_end >= t0) {
        return Err(Error::domain("need x >= 0 and 0 < t0 <= t_end"));
    }
    let grid = uniform_grid(t0, t_end, dt)?;
    let scale = c * q_b_alpha(b, 1.0, t0);
    let vbar = (-b * t0).exp() / scale;
    let k = if x > 0.0 {
        sample_poisson(s, x * vbar)?
    } else {
        0
    };
    let y0 = if k > 0 {
        sample_gamma(s, k as f64, 1.0 / scale)?
    } else {
        0.0
    };
    let mut path = SamplePath::default();
    let mut y = y0;
    let mut integral = 0.0;
    path.push(t0, y, 0.0);
    if y == 0.0 {
        path.extinct_at = Some(t0);
    }
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let next = if y == 0.0 {
            0.0
        } else {
            feller_transition_sample(c, b, 0.0, y, h, s)?
        };
        integral += 0.5 * h * (y + next);
        y = next;
        if y == 0.0 && path.extinct_at.is_none() {
            path.extinct_at = Some(w[1]);
        }
        path.push(w[1], y, integral);
    }
    Ok(path)
}

/// Feller CBI path built from immigrants: continuous immigration through the
/// excursion stream with resolution `t0`, jump immigration through Feller CBs
/// started at the jump sizes.
///
/// Excursions older than `t0` are followed individually (pooled by the
/// branching property). Those younger than `t0` at a grid time are drawn from
/// their exact snapshot law, Gamma(`β/c`) with scale `c q^b_1(min(t, t0))`.
/// Each grid value therefore has the exact marginal law, but the young part is
/// redrawn independently at each grid time. Infinite-mass jump measures (stable)
/// keep jumps above `eps` explicit and move the mean of smaller jumps into `β`.
#[allow(clippy::too_many_arguments)]
pub fn immigration_reconstruct_feller(
    c: f64,
    b: f64,
    psi: &ImmigrationMechanism,
    t_end: f64,
    t0: f64,
    dt: f64,
    eps: f64,
    s: &mut RandomStream,
) -> Result<SamplePath> {
    let (cutoff, beta) = if psi.n.total_mass().is_finite() {
        (0.0, psi.beta)
    } else {
        if !(eps > 0.0) {
            return Err(Error::domain(
                "an infinite immigration measure needs eps > 0",
            ));
        }
        (eps, psi.beta + psi.n.first_moment_below(eps))
    };
    check_feller(c, beta)?;
    if !(t0 > 0.0) || !(t_end >= 0.0) {
        return Err(Error::domain("need t0 > 0 and t_end >= 0"));
    }
    let grid = uniform_grid(0.0, t_end, dt)?;
    let jump_rate = match psi.n {
        LevyMeasure::Null => 0.0,
        ref n => n.mass_above(cutoff),
    };
    let old_rate = beta * (-b * t0).exp() / (c * q_b_alpha(b, 1.0, t0));
    let old_scale = c * q_b_alpha(b, 1.0, t0);

    let mut path = SamplePath::default();
    path.push(0.0, 0.0, 0.0);
    let mut pooled = 0.0;
    let mut integral = 0.0;
    let mut prev = 0.0;
    for w in grid.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let h = tb - ta;
        if pooled > 0.0 {
            pooled = feller_transition_sample(c, b, 0.0, pooled, h, s)?;
        }
        // jump immigrants arriving in (ta, tb]
        if jump_rate > 0.0 {
            for _ in 0..sample_poisson(s, jump_rate * h)? {
                let arrival = ta + h * s.uniform();
                let size = psi.n.sample_above(cutoff, s)?;
                pooled += feller_transition_sample(c, b, 0.0, size, tb - arrival, s)?;
            }
        }
        // excursions reaching age t0 within (ta, tb], i.e. born in (ta - t0, tb - t0]
        if old_rate > 0.0 && tb > t0 {
            let lo = (ta - t0).max(0.0);
            let hi = tb - t0;
            for _ in 0..sample_poisson(s, old_rate * (hi - lo))? {
                let matured = lo + t0 + (hi - lo) * s.uniform();
                let size = s.exp1() * old_scale;
                pooled += feller_transition_sample(c, b, 0.0, size, tb - matured, s)?;
            }
        }
        let young = if beta > 0.0 {
            let age = tb.min(t0);
            sample_gamma(s, beta / c, 1.0 / (c * q_b_alpha(b, 1.0, age)))?
        } else {
            0.0
        };
        let y = pooled + young;
        integral += 0.5 * h * (prev + y);
        prev = y;
        path.push(tb, y, integral);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::MCEstimate;

    #[test]
    fn transition_moments() {
        let root = RandomStream::new(21);
        let (c, b, beta, x, t) = (0.7, 0.4, 0.9, 1.3, 0.8);
        let draws: Vec<f64> = (0..100_000)
            .map(|i| feller_transition_sample(c, b, beta, x, t, &mut root.split(i)).unwrap())
            .collect();
        let est = MCEstimate::from_values(draws.iter().copied());
        let mean = x * (-b * t).exp() + beta * q_b_alpha(b, 1.0, t);
        assert!((est.mean - mean).abs() < 4.0 * est.stderr);
        let lap = MCEstimate::from_values(draws.iter().map(|y| (-y).exp()));
        let q = c * q_b_alpha(b, 1.0, t);
        let exact = (-x * (-b * t).exp() / (1.0 + q)).exp() * (1.0 + q).powf(-beta / c);
        assert!((lap.mean - exact).abs() < 4.0 * lap.stderr);
    }

    #[test]
    fn zero_cases() {
        let mut s = RandomStream::new(2);
        let p = excursion_reconstruct_feller(1.0, 0.0, 0.0, 1.0, 2.0, 0.5, &mut s).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        let p = immigration_reconstruct_feller(
            1.0,
            1.0,
            &ImmigrationMechanism::none(),
            2.0,
            0.1,
            0.5,
            1e-3,
            &mut s,
        )
        .unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        assert!(simulate_feller_exact(0.0, 0.0, 0.0, 1.0, &[0.0, 1.0], &mut s).is_err());
    }

    #[test]
    fn exact_path_traps_zero() {
        let root = RandomStream::new(4);
        let grid = uniform_grid(0.0, 3.0, 0.1).unwrap();
        for i in 0..200 {
            let p = simulate_feller_exact(1.0, 0.0, 0.0, 0.5, &grid, &mut root.split(i)).unwrap();
            if let Some(e) = p.extinct_at {
                assert!(p
                    .t_grid
                    .iter()
                    .zip(&p.values)
                    .all(|(t, v)| *t < e || *v == 0.0));
            }
        }
    }
}
