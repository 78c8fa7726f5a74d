//! Continuous-state path simulation: jump SDE schemes, exact Feller transitions,
//! spectrally positive Lévy paths, Lamperti time changes and reconstructions from
//! excursions and immigrants.

mod feller;
mod lamperti;
mod sde;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use feller::{
    excursion_reconstruct_feller, feller_transition_sample, immigration_reconstruct_feller,
    simulate_feller_exact,
};
pub use lamperti::{lamperti_forward, lamperti_inverse};
pub use sde::{
    simulate_cbi, simulate_levy, simulate_stable_cbi, CbiScheme, LevyScheme, StableScheme,
};

/// Sampled càdlàg path. Between grid points the path is treated as linear.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplePath {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub jumps: Vec<(f64, f64)>,
    pub extinct_at: Option<f64>,
    pub cum_integral: Vec<f64>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn final_integral(&self) -> f64 {
        *self.cum_integral.last().unwrap_or(&0.0)
    }

    pub(crate) fn push(&mut self, t: f64, value: f64, integral: f64) {
        self.t_grid.push(t);
        self.values.push(value);
        self.cum_integral.push(integral);
    }

    /// Segment index `i` with `t_grid[i] <= t <= t_grid[i + 1]`.
    fn segment(&self, t: f64) -> Result<usize> {
        let first = *self
            .t_grid
            .first()
            .ok_or_else(|| Error::domain("empty path"))?;
        let last = *self.t_grid.last().unwrap();
        if !(t >= first && t <= last) {
            return Err(Error::domain(format!(
                "time {t} outside the path range [{first}, {last}]"
            )));
        }
        let i = self.t_grid.partition_point(|&s| s <= t);
        Ok(i.saturating_sub(1).min(self.t_grid.len().saturating_sub(2)))
    }

    /// Path value at `t`, linear between grid points.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let i = self.segment(t)?;
        if self.len() == 1 {
            return Ok(self.values[0]);
        }
        let (t0, t1) = (self.t_grid[i], self.t_grid[i + 1]);
        let (a, b) = (self.values[i], self.values[i + 1]);
        if t == t1 {
            return Ok(b);
        }
        Ok(a + (b - a) * (t - t0) / (t1 - t0))
    }

    /// `∫_0^t y(s) ds`, interpolated consistently with [`SamplePath::value_at`].
    pub fn integral_at(&self, t: f64) -> Result<f64> {
        let i = self.segment(t)?;
        if self.len() == 1 {
            return Ok(self.cum_integral[0]);
        }
        let (t0, t1) = (self.t_grid[i], self.t_grid[i + 1]);
        if t == t1 {
            return Ok(self.cum_integral[i + 1]);
        }
        let v = self.value_at(t)?;
        Ok(self.cum_integral[i] + 0.5 * (t - t0) * (self.values[i] + v))
    }

    /// Keeps only the states at `times` (values and integrals as in
    /// [`SamplePath::value_at`] and [`SamplePath::integral_at`]); jumps are dropped.
    pub fn restrict_to(&self, times: &[f64]) -> Result<SamplePath> {
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("restriction times must be increasing"));
        }
        let mut out = SamplePath {
            extinct_at: self.extinct_at,
            ..SamplePath::default()
        };
        for &t in times {
            out.push(t, self.value_at(t)?, self.integral_at(t)?);
        }
        Ok(out)
    }

    pub fn is_extinct_at(&self, t: f64) -> bool {
        self.extinct_at.is_some_and(|e| e <= t)
    }

    /// CSV dump with header `t,value,cum_integral,extinct`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numeric(format!("csv write failed: {e}"));
        out.write_record(["t", "value", "cum_integral", "extinct"])
            .map_err(io)?;
        for i in 0..self.len() {
            let t = self.t_grid[i];
            out.write_record([
                t.to_string(),
                self.values[i].to_string(),
                self.cum_integral[i].to_string(),
                (self.is_extinct_at(t) as u8).to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()
            .map_err(|e| Error::Numeric(format!("csv write failed: {e}")))
    }
}

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Immigration rate: constant, time-dependent, or a function of the current state.
#[derive(Clone)]
pub enum RateSpec {
    Unit,
    /// `ρ(t)` scales both the drift `β` and the jump rate of `n`.
    TimeFn(RateFn),
    /// `q(y(s-))` scales both the drift `β` and the jump rate of `n`.
    StateFn {
        q: RateFn,
        lipschitz_bound: f64,
    },
    /// `q1(y(s-))` scales the drift `β`, `q2(y(s-))` the jump rate of `n`.
    TwoStateFns {
        q1: RateFn,
        q2: RateFn,
        lipschitz_bound: f64,
    },
}

impl fmt::Debug for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSpec::Unit => write!(f, "Unit"),
            RateSpec::TimeFn(_) => write!(f, "TimeFn(..)"),
            RateSpec::StateFn {
                lipschitz_bound, ..
            } => {
                write!(f, "StateFn {{ lipschitz_bound: {lipschitz_bound} }}")
            }
            RateSpec::TwoStateFns {
                lipschitz_bound, ..
            } => {
                write!(f, "TwoStateFns {{ lipschitz_bound: {lipschitz_bound} }}")
            }
        }
    }
}

fn spot_check(q: &RateFn, bound: f64, name: &str) -> Result<()> {
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    for w in grid.windows(2) {
        let (a, b) = (q(w[0]), q(w[1]));
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::domain(format!(
                "{name} must be finite and nonnegative, got {a} at {}",
                w[0]
            )));
        }
        if (b - a).abs() > bound * (w[1] - w[0]) * (1.0 + 1e-9) {
            return Err(Error::domain(format!(
                "{name} violates its Lipschitz bound {bound} on [{}, {}]",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl RateSpec {
    pub fn time_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        RateSpec::TimeFn(Arc::new(f))
    }

    pub fn state_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(
        q: F,
        lipschitz_bound: f64,
    ) -> Result<Self> {
        let spec = RateSpec::StateFn {
            q: Arc::new(q),
            lipschitz_bound,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn two_state_fns<F, G>(q1: F, q2: G, lipschitz_bound: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let spec = RateSpec::TwoStateFns {
            q1: Arc::new(q1),
            q2: Arc::new(q2),
            lipschitz_bound,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks nonnegativity and the Lipschitz bound on a grid of `[0, 100]`.
    pub fn validate(&self) -> Result<()> {
        match self {
            RateSpec::Unit | RateSpec::TimeFn(_) => Ok(()),
            RateSpec::StateFn { q, lipschitz_bound } => spot_check(q, *lipschitz_bound, "q"),
            RateSpec::TwoStateFns {
                q1,
                q2,
                lipschitz_bound,
            } => {
                spot_check(q1, *lipschitz_bound, "q1")?;
                spot_check(q2, *lipschitz_bound, "q2")
            }
        }
    }

    /// `(drift factor, jump-rate factor)` at time `t` and left state `y`.
    pub(crate) fn factors(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        let (r1, r2) = match self {
            RateSpec::Unit => (1.0, 1.0),
            RateSpec::TimeFn(rho) => {
                let r = rho(t);
                (r, r)
            }
            RateSpec::StateFn { q, .. } => {
                let r = q(y);
                (r, r)
            }
            RateSpec::TwoStateFns { q1, q2, .. } => (q1(y), q2(y)),
        };
        if r1 >= 0.0 && r2 >= 0.0 && r1.is_finite() && r2.is_finite() {
            Ok((r1, r2))
        } else {
            Err(Error::numeric(format!(
                "immigration rate must be finite and >= 0, got ({r1}, {r2})"
            )))
        }
    }
}

/// Discretization and recording settings for the Euler schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Jumps at or below this size are replaced by their compensator.
    pub eps_jump: f64,
    /// Record every `stride`-th step; the final step is always recorded.
    pub stride: usize,
    /// Add a Gaussian term matching the variance of the removed small jumps.
    pub small_jump_gaussian: bool,
    pub record_jumps: bool,
}

impl PathOptions {
    pub fn new(t_end: f64, dt: f64, eps_jump: f64) -> Self {
        PathOptions {
            t_end,
            dt,
            eps_jump,
            stride: 1,
            small_jump_gaussian: true,
            record_jumps: true,
        }
    }

    /// Records only the initial and final states.
    pub fn endpoints_only(mut self) -> Self {
        self.stride = usize::MAX;
        self.record_jumps = false;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.eps_jump > 0.0 && self.eps_jump.is_finite()) {
            return Err(Error::domain(format!(
                "eps_jump must be positive, got {}",
                self.eps_jump
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::domain(format!(
                "horizon must be finite and >= 0, got {}",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Number of Euler steps; the last step is shortened to land on `t_end`.
    pub(crate) fn steps(&self) -> usize {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() <= 1e-9 * self.t_end.max(1.0) {
            n as usize
        } else {
            (self.t_end / self.dt).ceil() as usize
        }
    }

    pub(crate) fn step_size(&self, i: usize, steps: usize) -> f64 {
        if i + 1 == steps {
            self.t_end - i as f64 * self.dt
        } else {
            self.dt
        }
    }

    pub(crate) fn records(&self, i: usize, steps: usize) -> bool {
        i + 1 == steps || (i + 1).is_multiple_of(self.stride)
    }
}

/// Uniform grid `0, dt, 2dt, ..., t_end` with the last point exactly `t_end`.
pub fn uniform_grid(t_start: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_end >= t_start) {
        return Err(Error::domain("grid needs dt > 0 and t_end >= t_start"));
    }
    let n = ((t_end - t_start) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut grid: Vec<f64> = (0..n).map(|i| t_start + i as f64 * dt).collect();
    grid.push(t_end);
    Ok(grid)
}
