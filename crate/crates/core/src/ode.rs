//! Embedded Dormand–Prince 5(4) integrator with Hermite dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest allowed step, relative to `max(1, |t|)`.
    pub h_min_rel: f64,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-8,
            atol: 1e-8,
            max_steps: 1_000_000,
            h_min_rel: 1e-14,
        }
    }
}

/// Accepted nodes of an integration together with the right-hand side at each node.
#[derive(Debug, Clone)]
pub struct OdeSolution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub dy: Vec<[f64; N]>,
}

impl<const N: usize> OdeSolution<N> {
    pub fn last(&self) -> &[f64; N] {
        self.y
            .last()
            .expect("solution has at least the initial node")
    }

    /// Cubic Hermite interpolation between accepted nodes; clamps outside the range.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            return self.y[0];
        }
        if t >= self.t[n - 1] {
            return self.y[n - 1];
        }
        let i = match self.t.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        std::array::from_fn(|k| {
            h00 * self.y[i][k]
                + h10 * h * self.dy[i][k]
                + h01 * self.y[i + 1][k]
                + h11 * h * self.dy[i + 1][k]
        })
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end > t0`.
pub fn dopri5<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<OdeSolution<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;
    let mut sol = OdeSolution {
        t: vec![t],
        y: vec![y],
        dy: vec![k1],
    };
    if t_end <= t0 {
        return Ok(sol);
    }

    let span = t_end - t0;
    let scale0 = (0..N)
        .map(|i| opts.atol + opts.rtol * y0[i].abs())
        .fold(f64::INFINITY, f64::min);
    let rate0 = k1.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut h = if rate0 > 0.0 {
        (0.01 * scale0 / rate0).powf(0.2).min(1.0) * (scale0 / rate0).min(span)
    } else {
        span
    };
    h = h.clamp(span * 1e-12, span);

    let mut steps = 0usize;
    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::numeric(format!(
                "ODE exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        let h_min = opts.h_min_rel * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepUnderflow {
                last_time: t,
                last_value: y[0],
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let k2 = f(t + C2 * h, &combine(&y, h, &[(A21, &k1)]))?;
        let k3 = f(t + C3 * h, &combine(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(
            t + C4 * h,
            &combine(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        )?;
        let k5 = f(
            t + C5 * h,
            &combine(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let k6 = f(
            t + h,
            &combine(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        )?;
        let y_new = combine(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = f(t + h, &y_new)?;

        let mut err = 0.0;
        for i in 0..N {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / N as f64).sqrt();
        steps += 1;

        if !err.is_finite() {
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            y = y_new;
            k1 = k7;
            sol.t.push(t);
            sol.y.push(y);
            sol.dy.push(k1);
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(sol)
}
