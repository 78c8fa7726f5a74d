use crate::error::{Error, Result};

use super::{uniform_grid, SamplePath};

/// Values below this before absorption make the inverse time change ill-posed.
const POSITIVITY_GUARD: f64 = 1e-12;

/// `z(t) = x(κ(t))` with `κ(t) = inf{u: ∫_0^u x(s) ds >= t}`, sampled every `dt_out`
/// on the new clock. The path is treated as linear between grid points, so the
/// clock inverts a piecewise quadratic. If the input is absorbed, the output ends
/// at the total integral with value zero.
pub fn lamperti_forward(p: &SamplePath, dt_out: f64) -> Result<SamplePath> {
    if p.len() < 2 {
        return Err(Error::domain("time change needs at least two grid points"));
    }
    if p.values.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("time change needs a nonnegative path"));
    }
    let total = p.final_integral();
    let absorbed = p.extinct_at.is_some() && p.final_value() == 0.0;
    let targets = if total > 0.0 {
        uniform_grid(0.0, total, dt_out)?
    } else {
        vec![0.0]
    };

    let mut out = SamplePath::default();
    let mut seg = 0usize;
    let mut prev_z = p.values[0];
    let mut integral = 0.0;
    for (k, &target) in targets.iter().enumerate() {
        while seg + 2 < p.len() && p.cum_integral[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (p.values[seg], p.values[seg + 1]);
        let h = p.t_grid[seg + 1] - p.t_grid[seg];
        let d = (target - p.cum_integral[seg]).max(0.0);
        // a u + (b - a) u² / (2h) = d  ⇒  x(κ) = √(a² + 2(b - a) d / h)
        let z = if k + 1 == targets.len() {
            p.values[seg + 1]
        } else {
            (a * a + 2.0 * (b - a) * d / h).max(0.0).sqrt()
        };
        if k > 0 {
            integral += 0.5 * (target - targets[k - 1]) * (prev_z + z);
        }
        prev_z = z;
        out.push(target, z, integral);
    }
    if absorbed {
        out.extinct_at = Some(total);
    }
    Ok(out)
}

/// `X_t = Z_{θ(t)}` where `θ` inverts `u ↦ ∫_0^u Z_s^{-1} ds`, sampled every
/// `dt_out` up to `t_end`. For linear segments the inner integral is a logarithm and
/// `X = a·exp(D(b - a)/h)`; `∫_0^t X_s ds = θ(t)`.
pub fn lamperti_inverse(p: &SamplePath, dt_out: f64, t_end: f64) -> Result<SamplePath> {
    if p.len() < 2 {
        return Err(Error::domain("time change needs at least two grid points"));
    }
    let absorbed_at = p.extinct_at;
    let live = |i: usize| absorbed_at.is_none_or(|e| p.t_grid[i] < e);
    for i in 0..p.len() {
        if live(i) && p.values[i] < POSITIVITY_GUARD {
            return Err(Error::numeric(format!(
                "path value {} at t = {} is below {POSITIVITY_GUARD} before absorption",
                p.values[i], p.t_grid[i]
            )));
        }
    }
    // clock J at the grid points; infinite from the absorbing segment on
    let mut clock = vec![0.0; p.len()];
    for i in 0..p.len() - 1 {
        let (a, b) = (p.values[i], p.values[i + 1]);
        let h = p.t_grid[i + 1] - p.t_grid[i];
        clock[i + 1] = if !live(i) || b <= 0.0 {
            f64::INFINITY
        } else if a == b {
            clock[i] + h / a
        } else {
            clock[i] + h * ((b - a) / a).ln_1p() / (b - a)
        };
    }
    let horizon = *clock.last().unwrap();
    let end = t_end.min(horizon);
    let grid = uniform_grid(0.0, end, dt_out)?;
    let mut out = SamplePath::default();
    let mut seg = 0usize;
    for &t in &grid {
        while seg + 2 < p.len() && clock[seg + 1] < t {
            seg += 1;
        }
        let (a, b) = (p.values[seg], p.values[seg + 1]);
        let h = p.t_grid[seg + 1] - p.t_grid[seg];
        let d = t - clock[seg];
        let (x, theta) = if a == b {
            (a, p.t_grid[seg] + a * d)
        } else {
            let x = a * (d * (b - a) / h).exp();
            (x, p.t_grid[seg] + (x - a) * h / (b - a))
        };
        out.push(t, x, theta);
    }
    Ok(out)
}
