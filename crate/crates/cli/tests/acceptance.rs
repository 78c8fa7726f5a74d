//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cbi_core::batch::{estimate, map_indexed};
use cbi_core::cumulant::{
    stable_closed_mechanism, transition_laplace, v_stable_closed, v_value, DEFAULT_TOL,
};
use cbi_core::discrete::{vk_recursion, OffspringLaw};
use cbi_core::measures::LevyMeasure;
use cbi_core::mechanism::{stable_branching_sigma, BranchingMechanism, ImmigrationMechanism};
use cbi_core::paths::{
    excursion_reconstruct_feller, feller_transition_sample, lamperti_forward, lamperti_inverse,
    simulate_cbi, simulate_feller_exact, simulate_levy, simulate_stable_cbi, uniform_grid,
    PathOptions, RateSpec, SamplePath,
};
use cbi_core::rngkit::RandomStream;
use cbi_core::verify::{
    branching_property_check, generator_apply, martingale_check, MCEstimate, TestFn,
};

type Outcome = Result<(bool, String), String>;

const Z: f64 = 4.0;

fn within(e: &MCEstimate, analytic: f64, bias: f64) -> bool {
    (e.mean - analytic).abs() <= Z * e.stderr + bias
}

fn show(e: &MCEstimate, analytic: f64) -> String {
    format!(
        "{:.6} vs {:.6} (z = {:+.2})",
        e.mean,
        analytic,
        (e.mean - analytic) / e.stderr.max(1e-15)
    )
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for c in [0.5, 1.0] {
        for alpha in [0.5, 1.0] {
            for b in [-1.0, 0.0, 1.0] {
                let phi = stable_closed_mechanism(c, alpha, b).map_err(err)?;
                for t in [0.1, 1.0, 5.0] {
                    for lambda in [0.1, 1.0, 10.0] {
                        let ode = v_value(&phi, lambda, t, DEFAULT_TOL).map_err(err)?;
                        let exact = v_stable_closed(c, alpha, b, t, lambda).map_err(err)?;
                        worst = worst.max(((ode - exact) / exact).abs());
                    }
                }
            }
        }
    }
    Ok((
        worst < 1e-6,
        format!("max relative error {worst:.2e} over 108 points (limit 1e-6)"),
    ))
}

fn c2_semigroup() -> Outcome {
    let mechanisms = [
        BranchingMechanism::feller(0.0, 1.0).map_err(err)?,
        BranchingMechanism::stable(0.0, 1.0, 1.5).map_err(err)?,
        BranchingMechanism::feller(1.0, 1.0).map_err(err)?,
    ];
    let mut worst: f64 = 0.0;
    for phi in &mechanisms {
        for r in [0.1, 1.0, 3.0] {
            for t in [0.1, 1.0, 3.0] {
                for lambda in [0.5, 1.0, 5.0] {
                    let whole = v_value(phi, lambda, r + t, DEFAULT_TOL).map_err(err)?;
                    let inner = v_value(phi, lambda, t, DEFAULT_TOL).map_err(err)?;
                    worst = worst
                        .max((whole - v_value(phi, inner, r, DEFAULT_TOL).map_err(err)?).abs());
                }
            }
        }
    }
    Ok((
        worst < 1e-5,
        format!("max |v_(r+t) - v_r(v_t)| = {worst:.2e} (limit 1e-5)"),
    ))
}

fn c3_scaling_limit() -> Outcome {
    let phi = BranchingMechanism::feller(0.0, 1.0).map_err(err)?;
    let mut errs = Vec::new();
    let mut vals = Vec::new();
    for k in [1u64 << 8, 1 << 11, 1 << 14] {
        let law = OffspringLaw::FromMechanism {
            phi: phi.clone(),
            k,
        };
        let v = vk_recursion(&law, k, k as f64, 1.0, 1.0).map_err(err)?;
        vals.push(v);
        errs.push((v - 2.0 / 3.0).abs());
    }
    let decreasing = errs[0] > errs[1] && errs[1] > errs[2];
    let pass = decreasing && errs[2] < 1e-2;
    Ok((
        pass,
        format!(
            "v_k(1,1) = {:.6}, {:.6}, {:.6} at k = 2^8, 2^11, 2^14; |v_k - 2/3| = {:.2e}, {:.2e}, {:.2e} (limit 1e-2, decreasing: {decreasing})",
            vals[0], vals[1], vals[2], errs[0], errs[1], errs[2]
        ),
    ))
}

fn c3_note() -> String {
    let phi = BranchingMechanism::feller(0.0, 1.0).unwrap();
    let k = 1u64 << 14;
    let law = OffspringLaw::FromMechanism { phi, k };
    let gamma = law.natural_gamma().unwrap().unwrap();
    let natural = vk_recursion(&law, k, gamma, 1.0, 1.0).unwrap();
    let binary = vk_recursion(&OffspringLaw::Binary { p: 0.5 }, k, k as f64, 1.0, 1.0).unwrap();
    format!(
        "with time scale k this family converges to φ(z) = z²/3, whose v_1(1) is 0.75; \
         with its own time scale γ_k = {gamma} it gives {natural:.6} (target v_1(1) = 0.5 for z²); \
         Binary(1/2) with γ_k = k gives {binary:.6} (target 2/3)"
    )
}

fn c4_extinction() -> Outcome {
    let e = estimate(&RandomStream::new(4), 100_000, |_, s| {
        Ok(
            if feller_transition_sample(1.0, 0.0, 0.0, 1.0, 1.0, s)? == 0.0 {
                1.0
            } else {
                0.0
            },
        )
    })
    .map_err(err)?;
    let target = (-1.0f64).exp();
    Ok((
        within(&e, target, 0.0),
        format!("P{{y(1) = 0}} = {}", show(&e, target)),
    ))
}

fn c5_stationarity() -> Outcome {
    let ys = map_indexed(&RandomStream::new(5), 100_000, |_, s| {
        feller_transition_sample(1.0, 1.0, 1.0, 1.0, 15.0, s)
    })
    .map_err(err)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        let e = MCEstimate::from_values(ys.iter().map(|y| (-lambda * y).exp()));
        let target = 1.0 / (1.0 + lambda);
        pass &= within(&e, target, 0.0);
        parts.push(format!("λ={lambda}: {}", show(&e, target)));
    }
    Ok((pass, parts.join("; ")))
}

fn c6_euler() -> Outcome {
    let dt = 1e-3;
    let opts = PathOptions::new(1.0, dt, 1e-3).endpoints_only();
    let none = ImmigrationMechanism::none();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, phi) in [
        ("Feller", BranchingMechanism::feller(0.0, 1.0).map_err(err)?),
        (
            "Atoms[(1,1)]",
            BranchingMechanism::new(0.0, 0.0, LevyMeasure::atoms(vec![(1.0, 1.0)])).map_err(err)?,
        ),
    ] {
        let analytic = transition_laplace(&phi, None, 1.0, 1.0, 1.0).map_err(err)?;
        let e = estimate(&RandomStream::new(6), 100_000, |_, s| {
            Ok((-simulate_cbi(&phi, &none, &RateSpec::Unit, 1.0, opts, s)?.final_value()).exp())
        })
        .map_err(err)?;
        pass &= within(&e, analytic, 3.0 * dt);
        parts.push(format!("{name}: {}", show(&e, analytic)));
    }
    Ok((pass, parts.join("; ") + " (allowance 4 stderr + 3 dt)"))
}

fn c7_stable_sde() -> Outcome {
    let dt = 1e-3;
    let alpha = 1.5;
    let phi = BranchingMechanism::stable(0.0, 1.0, alpha).map_err(err)?;
    let analytic = (-v_value(&phi, 1.0, 1.0, DEFAULT_TOL).map_err(err)?).exp();
    let opts = PathOptions::new(1.0, dt, dt).endpoints_only();
    let sigma = stable_branching_sigma(alpha);
    let e = estimate(&RandomStream::new(7), 100_000, |_, s| {
        Ok((-simulate_stable_cbi(
            0.0,
            sigma,
            alpha,
            0.0,
            &ImmigrationMechanism::none(),
            1.0,
            opts,
            s,
        )?
        .final_value())
        .exp())
    })
    .map_err(err)?;
    Ok((
        within(&e, analytic, 3.0 * dt),
        format!("{} (allowance 4 stderr + 3 dt)", show(&e, analytic)),
    ))
}

/// Samples `f` on a uniform grid, with the trapezoid running integral that matches
/// the piecewise-linear reading of a path.
fn path_from(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> SamplePath {
    let t_grid = uniform_grid(0.0, t_end, dt).unwrap();
    let values: Vec<f64> = t_grid.iter().map(|&t| f(t)).collect();
    let mut cum_integral = vec![0.0];
    for i in 1..t_grid.len() {
        cum_integral.push(
            cum_integral[i - 1] + 0.5 * (t_grid[i] - t_grid[i - 1]) * (values[i] + values[i - 1]),
        );
    }
    SamplePath {
        t_grid,
        values,
        cum_integral,
        ..SamplePath::default()
    }
}

fn c8_lamperti() -> Outcome {
    let mut worst: f64 = 0.0;
    // x(t) = e^{-t} maps to z(s) = 1 - s
    let decay = path_from(|t| (-t).exp(), 30.0, 1e-4);
    let z = lamperti_forward(&decay, 1e-3).map_err(err)?;
    for (s, v) in z.t_grid.iter().zip(&z.values) {
        if *s <= 0.99 {
            worst = worst.max((v - (1.0 - s)).abs());
        }
    }
    // z(s) = 1 - s maps back to x(t) = e^{-t}
    let mut line = path_from(|s| 1.0 - s, 1.0, 1e-3);
    line.extinct_at = Some(1.0);
    let x = lamperti_inverse(&line, 1e-3, 3.0).map_err(err)?;
    for (t, v) in x.t_grid.iter().zip(&x.values) {
        worst = worst.max((v - (-t).exp()).abs());
    }
    // constant paths are fixed
    let flat = path_from(|_| 2.0, 5.0, 1e-2);
    for p in [
        lamperti_forward(&flat, 1e-2).map_err(err)?,
        lamperti_inverse(&flat, 1e-2, 2.0).map_err(err)?,
    ] {
        worst = worst.max(p.values.iter().map(|v| (v - 2.0).abs()).fold(0.0, f64::max));
    }
    // round trip of a positive path; the intermediate clock grid is fine enough that
    // resampling between source knots stays well under the tolerance
    let wave = path_from(|t| 1.5 + (3.0 * t).sin(), 2.0, 1e-3);
    let back =
        lamperti_inverse(&lamperti_forward(&wave, 2e-5).map_err(err)?, 1e-3, 1.9).map_err(err)?;
    for (t, v) in back.t_grid.iter().zip(&back.values) {
        worst = worst.max((v - wave.value_at(*t).map_err(err)?).abs());
    }
    let deterministic = worst < 1e-6;

    let n = 10_000;
    let (dt, s_eval, lambda) = (1e-3, 0.5, 1.0);
    let grid = uniform_grid(0.0, 20.0, dt).map_err(err)?;
    let forward = estimate(&RandomStream::new(81), n, |_, st| {
        let z = lamperti_forward(&simulate_feller_exact(1.0, 0.0, 0.0, 1.0, &grid, st)?, dt)?;
        let end = *z.t_grid.last().unwrap();
        let v = if s_eval <= end {
            z.value_at(s_eval)?
        } else if z.extinct_at.is_some() {
            0.0
        } else {
            return Err(cbi_core::Error::Numeric(
                "CB path outlived the horizon".into(),
            ));
        };
        Ok((-lambda * v).exp())
    })
    .map_err(err)?;
    let phi = BranchingMechanism::feller(0.0, 1.0).map_err(err)?;
    let opts = PathOptions::new(s_eval, dt, dt).endpoints_only();
    let levy = estimate(&RandomStream::new(82), n, |_, st| {
        Ok((-lambda * simulate_levy(&phi, 1.0, opts, st)?.final_value()).exp())
    })
    .map_err(err)?;
    let se = forward.stderr.hypot(levy.stderr);
    let z = (forward.mean - levy.mean) / se;
    Ok((
        deterministic && z.abs() <= Z,
        format!(
            "deterministic max error {worst:.2e} (limit 1e-6); time-changed CB {:.6} vs stopped Lévy {:.6}, combined z = {z:+.2}",
            forward.mean, levy.mean
        ),
    ))
}

fn c9_excursion() -> Outcome {
    let phi = BranchingMechanism::feller(0.0, 1.0).map_err(err)?;
    let pairs = map_indexed(&RandomStream::new(9), 10_000, |_, s| {
        let p = excursion_reconstruct_feller(1.0, 0.0, 1.0, 1.0, 2.0, 1.0, s)?;
        Ok((p.value_at(1.0)?, p.value_at(2.0)?))
    })
    .map_err(err)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (t, vals) in [
        (1.0, pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
        (2.0, pairs.iter().map(|p| p.1).collect()),
    ] {
        let analytic = transition_laplace(&phi, None, 1.0, t, 1.0).map_err(err)?;
        let e = MCEstimate::from_values(vals.iter().map(|y| (-y).exp()));
        pass &= within(&e, analytic, 0.0);
        parts.push(format!("t={t}: {}", show(&e, analytic)));
    }
    Ok((pass, parts.join("; ")))
}

fn c10_martingale() -> Outcome {
    let grid = uniform_grid(0.0, 1.0, 1e-3).map_err(err)?;
    let times = [0.0, 0.25, 0.5, 1.0];
    let paths = map_indexed(&RandomStream::new(10), 100_000, |_, s| {
        simulate_feller_exact(1.0, 0.0, 0.0, 1.0, &grid, s)?.restrict_to(&times)
    })
    .map_err(err)?;
    let phi = BranchingMechanism::feller(0.0, 1.0).map_err(err)?;
    let reports = martingale_check(
        &paths,
        &phi,
        &ImmigrationMechanism::none(),
        1.0,
        &times[1..],
        Z,
    )
    .map_err(err)?;
    let pass = reports.iter().all(|r| r.pass);
    let detail = reports
        .iter()
        .map(|r| format!("{}: {}", r.name, show(&r.estimate, r.analytic)))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((pass, detail))
}

fn c11_generator() -> Outcome {
    let mechanisms = [
        (
            BranchingMechanism::stable(0.5, 1.0, 1.5).map_err(err)?,
            ImmigrationMechanism::stable(0.2, 1.0, 0.5).map_err(err)?,
        ),
        (
            BranchingMechanism::new(
                -0.3,
                0.7,
                LevyMeasure::ExponentialJump { a: 2.0, theta: 1.5 },
            )
            .map_err(err)?,
            ImmigrationMechanism::new(1.0, LevyMeasure::atoms(vec![(0.5, 1.0), (2.0, 0.3)]))
                .map_err(err)?,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (phi, psi) in &mechanisms {
        for x in [0.5, 1.0, 2.0] {
            for lambda in [0.5, 1.0, 3.0] {
                let got =
                    generator_apply(phi, psi, 1.0, &TestFn::exponential(lambda), x).map_err(err)?;
                let exact = (x * phi.phi(lambda).map_err(err)? - psi.psi(lambda).map_err(err)?)
                    * (-lambda * x).exp();
                worst = worst.max(((got - exact) / exact).abs());
            }
        }
    }
    Ok((
        worst < 1e-7,
        format!("max relative error {worst:.2e} over 2 mechanisms x 9 points (limit 1e-7)"),
    ))
}

fn c12_branching() -> Outcome {
    let phi = BranchingMechanism::feller(0.0, 1.0).map_err(err)?;
    let r = branching_property_check(
        &phi,
        1.0,
        1.0,
        1.0,
        1.0,
        100_000,
        0.0,
        &RandomStream::new(12),
    )
    .map_err(err)?;
    Ok((
        r.z_score.abs() < Z,
        format!(
            "joint {:.6} vs product {:.6}, combined z = {:+.2}",
            r.estimate.mean, r.analytic, r.z_score
        ),
    ))
}

fn c13_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("suite.json");
    std::fs::write(
        &config,
        r#"{ "name": "suite", "seed": 2024, "run": { "kind": "verify_suite" } }"#,
    )
    .map_err(err)?;
    let run = |threads: &str, out: &Path| -> Result<(Vec<u8>, String), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_cbi"))
            .args([
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
                "--quiet",
            ])
            .output()
            .map_err(err)?;
        if o.status.code() != Some(0) {
            return Err(format!(
                "exit {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stderr)
            ));
        }
        let report = std::fs::read(out.join("suite/report.csv")).map_err(err)?;
        Ok((
            report,
            String::from_utf8_lossy(&o.stdout).trim().to_string(),
        ))
    };
    let (a, summary) = run("1", &dir.path().join("one"))?;
    let (b, _) = run("4", &dir.path().join("four"))?;
    Ok((
        a == b && !a.is_empty(),
        format!(
            "1 vs 4 threads: report.csv identical = {}, {summary}",
            a == b
        ),
    ))
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: "1",
            title: "cumulant ODE vs stable closed form",
            budget: Duration::from_secs(10),
            run: c1_closed_form,
        },
        Criterion {
            id: "2",
            title: "semigroup property",
            budget: Duration::from_secs(10),
            run: c2_semigroup,
        },
        Criterion {
            id: "3",
            title: "scaling limit of the z² offspring family",
            budget: Duration::from_secs(30),
            run: c3_scaling_limit,
        },
        Criterion {
            id: "4",
            title: "Feller extinction probability",
            budget: Duration::from_secs(20),
            run: c4_extinction,
        },
        Criterion {
            id: "5",
            title: "CIR stationarity",
            budget: Duration::from_secs(30),
            run: c5_stationarity,
        },
        Criterion {
            id: "6",
            title: "Euler scheme consistency",
            budget: Duration::from_secs(120),
            run: c6_euler,
        },
        Criterion {
            id: "7",
            title: "stable SDE",
            budget: Duration::from_secs(120),
            run: c7_stable_sde,
        },
        Criterion {
            id: "8",
            title: "Lamperti round trip",
            budget: Duration::from_secs(60),
            run: c8_lamperti,
        },
        Criterion {
            id: "9",
            title: "excursion reconstruction",
            budget: Duration::from_secs(60),
            run: c9_excursion,
        },
        Criterion {
            id: "10",
            title: "martingale property",
            budget: Duration::from_secs(60),
            run: c10_martingale,
        },
        Criterion {
            id: "11",
            title: "generator identity",
            budget: Duration::from_secs(1),
            run: c11_generator,
        },
        Criterion {
            id: "12",
            title: "branching property",
            budget: Duration::from_secs(30),
            run: c12_branching,
        },
        Criterion {
            id: "13",
            title: "determinism across thread counts",
            budget: Duration::from_secs(600),
            run: c13_determinism,
        },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let (pass, detail) = match result {
            Ok((ok, d)) => (ok && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = format!("{:.2} s of {} s", elapsed.as_secs_f64(), c.budget.as_secs());
        println!(
            "[{}] {:>2}. {}: {detail}; {timing}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.title
        );
        if c.id == "3" {
            println!("       note: {}", c3_note());
        }
        if !pass {
            failed.push(c.id);
        }
    }
    println!(
        "acceptance: {}/{} criteria pass",
        criteria.len() - failed.len(),
        criteria.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
