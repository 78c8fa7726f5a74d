//! Executes a validated config and writes its CSV outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cbi_core::batch::map_indexed;
use cbi_core::cumulant::{
    extinction_prob, stationary_laplace, transition_laplace, transition_laplace_time_rate, v_value,
    vbar_t, DEFAULT_TOL,
};
use cbi_core::discrete::{
    gw_simulate, gwi_simulate, scaling_diagnostics, vk_recursion, OffspringLaw,
};
use cbi_core::measures::LevyMeasure;
use cbi_core::mechanism::{BranchingMechanism, ImmigrationMechanism};
use cbi_core::paths::{
    excursion_reconstruct_feller, immigration_reconstruct_feller, lamperti_forward,
    simulate_feller_exact, uniform_grid, CbiScheme, LevyScheme, PathOptions, RateSpec, SamplePath,
    StableScheme,
};
use cbi_core::rngkit::RandomStream;
use cbi_core::suite::{run_suite, SuiteConfig};
use cbi_core::verify::{write_reports, MCEstimate};

use crate::config::{ExperimentConfig, FamilyConfig, RateConfig, RunSpec};
use crate::error::{CliError, CliResult};

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// `PASS k/n` for the verification suite.
    pub summary: Option<String>,
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).map_err(|source| io_error(path, source))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| io_error(path, source))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

/// `x` rounded to ten significant digits, the accuracy of the cumulant solver.
fn num10(x: f64) -> String {
    format!("{x:.9e}")
        .parse::<f64>()
        .map_or_else(|_| num(x), num)
}

/// Writes the outputs of `cfg` under `out_root/<name>/`.
pub fn run(cfg: &ExperimentConfig, out_root: &Path) -> CliResult<RunOutcome> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.name);
    fs::create_dir_all(&dir).map_err(|source| io_error(&dir, source))?;
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let summary = execute(cfg, &mut out)?;
    Ok(RunOutcome {
        dir,
        files: out.files,
        summary,
    })
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn table(&mut self, file: &str, t: &Table) -> CliResult<()> {
        let path = self.dir.join(file);
        t.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn path(&mut self, p: &SamplePath) -> CliResult<()> {
        let path = self.dir.join("paths.csv");
        let file = File::create(&path).map_err(|source| io_error(&path, source))?;
        p.write_csv(BufWriter::new(file))?;
        self.files.push(path);
        Ok(())
    }

    fn report(&mut self, reports: &[cbi_core::verify::CheckReport]) -> CliResult<()> {
        let path = self.dir.join("report.csv");
        let file = File::create(&path).map_err(|source| io_error(&path, source))?;
        write_reports(BufWriter::new(file), reports)?;
        self.files.push(path);
        Ok(())
    }
}

const SIM_HEADER: [&str; 6] = ["lambda", "t", "empirical", "stderr", "analytic", "z"];

/// One row per `λ` of `E e^{-λX}` against an optional analytic value.
fn laplace_rows(
    table: &mut Table,
    samples: &[f64],
    t: f64,
    lambdas: &[f64],
    analytic: impl Fn(f64) -> CliResult<Option<f64>>,
) -> CliResult<()> {
    for &l in lambdas {
        let e = MCEstimate::from_values(samples.iter().map(|x| (-l * x).exp()));
        let (a, z) = match analytic(l)? {
            Some(a) => (num(a), num((e.mean - a) / e.stderr.max(1e-15))),
            None => (String::new(), String::new()),
        };
        table.push([num(l), num(t), num(e.mean), num(e.stderr), a, z]);
    }
    Ok(())
}

fn require_feller(
    phi: &BranchingMechanism,
    psi: &ImmigrationMechanism,
    jumps_ok: bool,
) -> CliResult<()> {
    if !(phi.c > 0.0) || !phi.m.is_null() {
        return Err(CliError::Config(
            "this run kind needs c > 0 and m null (Feller branching)".into(),
        ));
    }
    if !jumps_ok && !psi.n.is_null() {
        return Err(CliError::Config("this run kind needs n null".into()));
    }
    Ok(())
}

fn execute(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Option<String>> {
    let phi = cfg.branching()?;
    let psi = cfg.immigration()?;
    let root = RandomStream::new(cfg.seed);
    match &cfg.run {
        RunSpec::Cumulant {
            lambda_grid,
            t_grid,
            tol,
        } => {
            let tol = tol.unwrap_or(DEFAULT_TOL);
            let mut t = Table::new(&["t", "lambda", "v"]);
            for &time in t_grid {
                for &l in lambda_grid {
                    t.push([num(time), num(l), num10(v_value(&phi, l, time, tol)?)]);
                }
            }
            out.table("results.csv", &t)?;
        }
        RunSpec::Extinction {
            x0,
            t_grid,
            ultimate,
        } => {
            if t_grid.contains(&0.0) {
                return Err(CliError::Config("extinction times must be positive".into()));
            }
            let mut t = Table::new(&["t", "x0", "vbar", "prob", "grey"]);
            let grey = phi.grey_check();
            for &time in t_grid {
                let p = extinction_prob(&phi, *x0, Some(time))?;
                let vbar = if grey {
                    vbar_t(&phi, time)?
                } else {
                    f64::INFINITY
                };
                t.push([
                    num(time),
                    num(*x0),
                    num(vbar),
                    num(p.prob),
                    grey.to_string(),
                ]);
            }
            if *ultimate {
                let p = extinction_prob(&phi, *x0, None)?;
                let vbar = if grey {
                    phi.largest_root()?
                } else {
                    f64::INFINITY
                };
                t.push([
                    "inf".to_string(),
                    num(*x0),
                    num(vbar),
                    num(p.prob),
                    grey.to_string(),
                ]);
            }
            out.table("results.csv", &t)?;
        }
        RunSpec::Stationary { lambda_grid } => {
            let mut t = Table::new(&["lambda", "laplace"]);
            for &l in lambda_grid {
                t.push([num(l), num(stationary_laplace(&phi, &psi, l)?)]);
            }
            out.table("results.csv", &t)?;
        }
        RunSpec::Gw {
            offspring,
            x0,
            n_steps,
            n_paths,
        } => {
            chains(out, &root, offspring, None, *x0, *n_steps, *n_paths)?;
        }
        RunSpec::Gwi {
            offspring,
            immigrants,
            x0,
            n_steps,
            n_paths,
        } => {
            chains(
                out,
                &root,
                offspring,
                Some(immigrants),
                *x0,
                *n_steps,
                *n_paths,
            )?;
        }
        RunSpec::Scaling {
            family,
            k_list,
            z_grid,
            t,
            lambda,
        } => {
            let members: Vec<(u64, OffspringLaw, f64)> = k_list
                .iter()
                .map(|&k| match family {
                    FamilyConfig::Mechanism => {
                        let law = OffspringLaw::FromMechanism {
                            phi: phi.clone(),
                            k,
                        };
                        let gamma = law.natural_gamma().expect("mechanism family")?;
                        Ok((k, law, gamma))
                    }
                    FamilyConfig::Law { law, gamma_factor } => {
                        Ok((k, law.clone(), gamma_factor * k as f64))
                    }
                })
                .collect::<cbi_core::Result<_>>()?;
            let grid: Vec<f64> = z_grid
                .iter()
                .copied()
                .filter(|&z| members.iter().all(|m| z <= m.0 as f64))
                .collect();
            let rows = scaling_diagnostics(&members, &grid, |z| phi.phi(z))?;
            let mut table = Table::new(&["k", "z", "G_k", "phi_k", "phi", "abs_err"]);
            for r in rows {
                table.push([
                    r.k.to_string(),
                    num(r.z),
                    num(r.g_k),
                    num(r.phi_k),
                    num(r.phi),
                    num(r.abs_err),
                ]);
            }
            out.table("results.csv", &table)?;
            let v = v_value(&phi, *lambda, *t, DEFAULT_TOL)?;
            let mut vk = Table::new(&["k", "gamma_k", "t", "lambda", "v_k", "v", "abs_err"]);
            for (k, law, gamma) in &members {
                let x = vk_recursion(law, *k, *gamma, *t, *lambda)?;
                vk.push([
                    k.to_string(),
                    num(*gamma),
                    num(*t),
                    num(*lambda),
                    num(x),
                    num(v),
                    num((x - v).abs()),
                ]);
            }
            out.table("vk.csv", &vk)?;
        }
        RunSpec::Sde {
            x0,
            t_end,
            dt,
            eps_jump,
            n_paths,
            lambda_grid,
            rate,
        } => {
            let opts = PathOptions::new(*t_end, *dt, eps_jump.unwrap_or(*dt));
            let scheme = CbiScheme::new(&phi, &psi, opts.endpoints_only())?;
            let spec = match *rate {
                RateConfig::Unit => RateSpec::Unit,
                RateConfig::TimeLinear { a, b } if a >= 0.0 && b >= 0.0 => {
                    RateSpec::time_fn(move |t| a + b * t)
                }
                RateConfig::StateAffine { a, b } if a >= 0.0 && b >= 0.0 => {
                    RateSpec::state_fn(move |y| a + b * y, b.max(f64::MIN_POSITIVE))?
                }
                _ => {
                    return Err(CliError::Config(
                        "rate coefficients must be nonnegative".into(),
                    ))
                }
            };
            spec.validate()?;
            let finals = map_indexed(&root, *n_paths, |_, s| {
                Ok(scheme.simulate(&spec, *x0, s)?.final_value())
            })?;
            let mut table = Table::new(&SIM_HEADER);
            laplace_rows(&mut table, &finals, *t_end, lambda_grid, |l| match *rate {
                RateConfig::Unit => Ok(Some(transition_laplace(&phi, Some(&psi), *x0, *t_end, l)?)),
                RateConfig::TimeLinear { a, b } => Ok(Some(transition_laplace_time_rate(
                    &phi,
                    &psi,
                    |t| a + b * t,
                    *x0,
                    *t_end,
                    l,
                )?)),
                RateConfig::StateAffine { .. } => Ok(None),
            })?;
            out.table("results.csv", &table)?;
            let full = CbiScheme::new(&phi, &psi, opts)?;
            out.path(&full.simulate(&spec, *x0, &mut root.split(0))?)?;
        }
        RunSpec::StableSde {
            x0,
            t_end,
            dt,
            n_paths,
            lambda_grid,
        } => {
            let LevyMeasure::StableBranching { sigma, alpha } = phi.m else {
                return Err(CliError::Config(
                    "stable_sde needs a stable_branching measure m".into(),
                ));
            };
            let opts = PathOptions::new(*t_end, *dt, *dt);
            let scheme =
                StableScheme::new(phi.c, sigma, alpha, phi.b, &psi, opts.endpoints_only())?;
            let finals = map_indexed(&root, *n_paths, |_, s| {
                Ok(scheme.simulate(*x0, s)?.final_value())
            })?;
            let mut table = Table::new(&SIM_HEADER);
            laplace_rows(&mut table, &finals, *t_end, lambda_grid, |l| {
                Ok(Some(transition_laplace(&phi, Some(&psi), *x0, *t_end, l)?))
            })?;
            out.table("results.csv", &table)?;
            let full = StableScheme::new(phi.c, sigma, alpha, phi.b, &psi, opts)?;
            out.path(&full.simulate(*x0, &mut root.split(0))?)?;
        }
        RunSpec::Feller {
            x0,
            t_grid,
            n_paths,
            lambda_grid,
        } => {
            require_feller(&phi, &psi, false)?;
            let paths = map_indexed(&root, *n_paths, |_, s| {
                simulate_feller_exact(phi.c, phi.b, psi.beta, *x0, t_grid, s)
            })?;
            let mut table = Table::new(&SIM_HEADER);
            for (j, &t) in t_grid.iter().enumerate() {
                let at: Vec<f64> = paths.iter().map(|p| p.values[j]).collect();
                laplace_rows(&mut table, &at, t, lambda_grid, |l| {
                    Ok(Some(transition_laplace(&phi, Some(&psi), *x0, t, l)?))
                })?;
            }
            out.table("results.csv", &table)?;
            out.path(&paths[0])?;
        }
        RunSpec::Levy {
            x0,
            t_end,
            dt,
            eps_jump,
            n_paths,
            lambda_grid,
        } => {
            let opts = PathOptions::new(*t_end, *dt, eps_jump.unwrap_or(*dt));
            let scheme = LevyScheme::new(&phi, opts.endpoints_only())?;
            let finals = map_indexed(&root, *n_paths, |_, s| {
                Ok(scheme.simulate(*x0, s)?.final_value())
            })?;
            let mut table = Table::new(&SIM_HEADER);
            laplace_rows(&mut table, &finals, *t_end, lambda_grid, |_| Ok(None))?;
            out.table("results.csv", &table)?;
            out.path(&LevyScheme::new(&phi, opts)?.simulate(*x0, &mut root.split(0))?)?;
        }
        RunSpec::Lamperti {
            x0,
            t_end,
            s,
            dt,
            n_paths,
            lambda_grid,
        } => {
            let (forward, first) =
                lamperti_batch(&phi, *x0, *t_end, *s, *dt, *n_paths, &root.split(0))?;
            let levy = LevyScheme::new(&phi, PathOptions::new(*s, *dt, *dt).endpoints_only())?;
            let direct = map_indexed(&root.split(1), *n_paths, |_, st| {
                Ok(levy.simulate(*x0, st)?.final_value())
            })?;
            let mut table = Table::new(&[
                "lambda",
                "s",
                "forward",
                "forward_stderr",
                "levy",
                "levy_stderr",
                "z",
            ]);
            for &l in lambda_grid {
                let a = MCEstimate::from_values(forward.iter().map(|z| (-l * z).exp()));
                let b = MCEstimate::from_values(direct.iter().map(|z| (-l * z).exp()));
                let z = (a.mean - b.mean) / a.stderr.hypot(b.stderr).max(1e-15);
                table.push([
                    num(l),
                    num(*s),
                    num(a.mean),
                    num(a.stderr),
                    num(b.mean),
                    num(b.stderr),
                    num(z),
                ]);
            }
            out.table("results.csv", &table)?;
            out.path(&first)?;
        }
        RunSpec::Excursion {
            x0,
            t0,
            t_grid,
            n_paths,
            lambda_grid,
        } => {
            require_feller(&phi, &psi, true)?;
            check_window(t_grid, *t0)?;
            let t_end = *t_grid.last().unwrap();
            let paths = map_indexed(&root, *n_paths, |_, s| {
                excursion_reconstruct_feller(
                    phi.c,
                    phi.b,
                    *x0,
                    *t0,
                    t_end,
                    grid_step(t_grid, *t0),
                    s,
                )
            })?;
            let mut table = Table::new(&SIM_HEADER);
            for &t in t_grid {
                let at: Vec<f64> = paths
                    .iter()
                    .map(|p| p.value_at(t))
                    .collect::<cbi_core::Result<_>>()?;
                laplace_rows(&mut table, &at, t, lambda_grid, |l| {
                    Ok(Some(transition_laplace(&phi, None, *x0, t, l)?))
                })?;
            }
            out.table("results.csv", &table)?;
            out.path(&paths[0])?;
        }
        RunSpec::ImmigrationReconstruct {
            t0,
            t_grid,
            n_paths,
            eps_jump,
            lambda_grid,
        } => {
            require_feller(&phi, &psi, true)?;
            check_window(t_grid, 0.0)?;
            let t_end = *t_grid.last().unwrap();
            let dt = grid_step(t_grid, 0.0);
            let paths = map_indexed(&root, *n_paths, |_, s| {
                immigration_reconstruct_feller(phi.c, phi.b, &psi, t_end, *t0, dt, *eps_jump, s)
            })?;
            let mut table = Table::new(&SIM_HEADER);
            for &t in t_grid {
                let at: Vec<f64> = paths
                    .iter()
                    .map(|p| p.value_at(t))
                    .collect::<cbi_core::Result<_>>()?;
                laplace_rows(&mut table, &at, t, lambda_grid, |l| {
                    Ok(Some(transition_laplace(&phi, Some(&psi), 0.0, t, l)?))
                })?;
            }
            out.table("results.csv", &table)?;
            out.path(&paths[0])?;
        }
        RunSpec::VerifySuite {
            n_paths,
            euler_dt,
            martingale_dt,
            z_threshold,
        } => {
            let defaults = SuiteConfig::default();
            let suite = SuiteConfig {
                seed: cfg.seed,
                n: *n_paths,
                euler_dt: euler_dt.unwrap_or(defaults.euler_dt),
                martingale_dt: martingale_dt.unwrap_or(defaults.martingale_dt),
                z_threshold: z_threshold.unwrap_or(defaults.z_threshold),
            };
            let outcome = run_suite(&suite)?;
            out.report(&outcome.reports)?;
            let mut t = Table::new(&["passed", "total", "required", "succeeded"]);
            t.push([
                outcome.passed().to_string(),
                outcome.total().to_string(),
                outcome.required().to_string(),
                outcome.succeeded().to_string(),
            ]);
            out.table("results.csv", &t)?;
            let summary = outcome.summary();
            if !outcome.succeeded() {
                println!("{summary}");
                return Err(CliError::SuiteFailed {
                    passed: outcome.passed(),
                    total: outcome.total(),
                    required: outcome.required(),
                });
            }
            return Ok(Some(summary));
        }
    }
    Ok(None)
}

/// Every evaluation time must lie in `[start, ∞)`.
fn check_window(t_grid: &[f64], start: f64) -> CliResult<()> {
    if t_grid.iter().any(|&t| t < start) {
        return Err(CliError::Config(format!(
            "evaluation times must be >= {start}"
        )));
    }
    Ok(())
}

/// Simulation step that puts every evaluation time on the grid when the times
/// are spaced evenly from `start`; otherwise 0.01.
fn grid_step(t_grid: &[f64], start: f64) -> f64 {
    let first_gap = t_grid.iter().map(|t| t - start).find(|&g| g > 0.0);
    match first_gap {
        Some(h)
            if t_grid.iter().all(|&t| {
                let r = (t - start) / h;
                (r - r.round()).abs() < 1e-9
            }) =>
        {
            h
        }
        _ => 0.01,
    }
}

/// Lamperti-transformed CB paths evaluated at time `s` of the new clock.
fn lamperti_batch(
    phi: &BranchingMechanism,
    x0: f64,
    t_end: f64,
    s: f64,
    dt: f64,
    n: usize,
    root: &RandomStream,
) -> CliResult<(Vec<f64>, SamplePath)> {
    let none = ImmigrationMechanism::none();
    let exact = phi.m.is_null() && phi.c > 0.0;
    let grid = uniform_grid(0.0, t_end, dt)?;
    let scheme = CbiScheme::new(phi, &none, PathOptions::new(t_end, dt, dt))?;
    let cb = |st: &mut RandomStream| {
        if exact {
            simulate_feller_exact(phi.c, phi.b, 0.0, x0, &grid, st)
        } else {
            scheme.simulate(&RateSpec::Unit, x0, st)
        }
    };
    let at_s = |p: &SamplePath| -> cbi_core::Result<f64> {
        let z = lamperti_forward(p, dt)?;
        let end = *z.t_grid.last().unwrap();
        if s <= end {
            z.value_at(s)
        } else if z.extinct_at.is_some() {
            Ok(0.0)
        } else {
            Err(cbi_core::Error::Numeric(format!(
                "CB path not absorbed by t = {t_end} and its integral {end} is below s = {s}; raise t_end"
            )))
        }
    };
    let values = map_indexed(root, n, |_, st| at_s(&cb(st)?))?;
    let first = lamperti_forward(&cb(&mut root.split(0))?, dt)?;
    Ok((values, first))
}

fn chains(
    out: &mut Outputs,
    root: &RandomStream,
    g: &OffspringLaw,
    h: Option<&OffspringLaw>,
    x0: u64,
    n_steps: usize,
    n_paths: usize,
) -> CliResult<()> {
    let runs = map_indexed(root, n_paths, |_, s| match h {
        None => gw_simulate(g, x0, n_steps, s),
        Some(h) => gwi_simulate(g, h, x0, n_steps, s),
    })?;
    let mut t = Table::new(&["step", "mean", "stderr", "zero_fraction"]);
    for step in 0..=n_steps {
        let e = MCEstimate::from_values(runs.iter().map(|r| r[step] as f64));
        let zeros = runs.iter().filter(|r| r[step] == 0).count() as f64 / n_paths as f64;
        t.push([step.to_string(), num(e.mean), num(e.stderr), num(zeros)]);
    }
    out.table("results.csv", &t)?;
    let mut p = Table::new(&["t", "value", "cum_integral", "extinct"]);
    let mut total = 0u128;
    for (step, &v) in runs[0].iter().enumerate() {
        let extinct = h.is_none() && runs[0][..=step].contains(&0);
        p.push([
            step.to_string(),
            v.to_string(),
            total.to_string(),
            (extinct as u8).to_string(),
        ]);
        total += v as u128;
    }
    out.table("paths.csv", &p)
}
