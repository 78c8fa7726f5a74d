//! Double-exponential (tanh-sinh) quadrature.
//!
//! Abscissae are stored as distances from the nearer endpoint so that
//! integrable algebraic singularities at either end are sampled without
//! cancellation. Refinement halves the step until two successive levels agree.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_LEVEL: usize = 8;
const MIN_LEVEL: usize = 3;
const T_MAX: f64 = 6.5;
const TINY: f64 = 1e-300;

/// Default relative tolerance for the Lévy-measure integrals.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Distance from the nearer endpoint of [0, 1].
    dist: f64,
    weight: f64,
}

struct Table {
    /// Center node (t = 0): x = 1/2, weight pi/4.
    center_weight: f64,
    /// `levels[k]` holds the nodes with t > 0 first introduced at level k.
    levels: Vec<Vec<Node>>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut levels = Vec::with_capacity(MAX_LEVEL + 1);
        for level in 0..=MAX_LEVEL {
            let h = 0.5f64.powi(level as i32);
            let mut nodes = Vec::new();
            let mut j = 1usize;
            loop {
                // level 0 takes all integers, later levels only odd multiples of h
                let t = j as f64 * h;
                if t > T_MAX {
                    break;
                }
                let y = FRAC_PI_2 * t.sinh();
                let e = (-2.0 * y).exp();
                let dist = e / (1.0 + e);
                let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
                let weight = 0.5 * FRAC_PI_2 * t.cosh() * sech2;
                if dist < TINY || weight < TINY {
                    break;
                }
                nodes.push(Node { dist, weight });
                j += if level == 0 { 1 } else { 2 };
            }
            levels.push(nodes);
        }
        Table {
            center_weight: 0.5 * FRAC_PI_2,
            levels,
        }
    })
}

/// Integral of `f` over `[a, b]` to relative tolerance `rel_tol` (or absolute `abs_tol`).
pub fn tanh_sinh<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("tanh_sinh needs a finite interval"));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let len = hi - lo;
    let tab = table();

    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!(
                "non-finite integrand {v} at x = {x}"
            )))
        }
    };

    let mut sum = tab.center_weight * eval(lo + 0.5 * len)?;
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for (level, nodes) in tab.levels.iter().enumerate() {
        for n in nodes {
            let left = eval(lo + len * n.dist)?;
            let right = eval(hi - len * n.dist)?;
            sum += n.weight * (left + right);
        }
        let h = 0.5f64.powi(level as i32);
        estimate = sum * h * len;
        if level >= MIN_LEVEL {
            residual = (estimate - prev).abs();
            if residual <= rel_tol * estimate.abs() || residual <= abs_tol {
                return Ok(sign * estimate);
            }
        }
        prev = estimate;
    }
    Err(Error::Quadrature {
        estimate: sign * estimate,
        residual,
    })
}

/// Integral of `f` over `(0, inf)`, split at 1 with `u = 1/s` on the tail.
pub fn half_line<F: FnMut(f64) -> f64>(mut f: F, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let head = tanh_sinh(&mut f, 0.0, 1.0, rel_tol, abs_tol)?;
    let tail = tanh_sinh(
        |s: f64| {
            let u = 1.0 / s;
            if u.is_infinite() {
                0.0
            } else {
                let v = f(u);
                if v == 0.0 {
                    0.0
                } else {
                    v * u * u
                }
            }
        },
        0.0,
        1.0,
        rel_tol,
        abs_tol,
    )?;
    Ok(head + tail)
}

/// Integral of `f` over `(a, inf)` for `a >= 0`.
pub fn to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if a < 0.0 || !a.is_finite() {
        return Err(Error::domain("lower limit must be finite and nonnegative"));
    }
    if a == 0.0 {
        return half_line(f, rel_tol, abs_tol);
    }
    // u = a / s maps (0, 1] onto [a, inf)
    tanh_sinh(
        |s: f64| {
            let u = a / s;
            if u.is_infinite() {
                0.0
            } else {
                let v = f(u);
                if v == 0.0 {
                    0.0
                } else {
                    v * u * u / a
                }
            }
        },
        0.0,
        1.0,
        rel_tol,
        abs_tol,
    )
}
