//! Experiment configuration, read from JSON.

use std::path::Path;

use cbi_core::discrete::OffspringLaw;
use cbi_core::measures::LevyMeasure;
use cbi_core::mechanism::{BranchingMechanism, ImmigrationMechanism};
use cbi_core::suite::SuiteConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output goes to `<out>/<name>/`.
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub immigration: Option<ImmigrationSpec>,
    pub run: RunSpec,
}

/// `φ(z) = b z + c z² + ∫ (e^{-zu} - 1 + zu) m(du)`; defaults to `φ(z) = z²`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "null_measure")]
    pub m: LevyMeasure,
}

impl Default for MechanismSpec {
    fn default() -> Self {
        MechanismSpec {
            b: 0.0,
            c: 1.0,
            m: LevyMeasure::Null,
        }
    }
}

/// `ψ(z) = β z + ∫ (1 - e^{-zu}) n(du)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationSpec {
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "null_measure")]
    pub n: LevyMeasure,
}

fn null_measure() -> LevyMeasure {
    LevyMeasure::Null
}

/// Immigration rate of the Euler scheme.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    #[default]
    Unit,
    /// `ρ(t) = a + b t`, both nonnegative.
    TimeLinear { a: f64, b: f64 },
    /// `q(y) = a + b y`, both nonnegative; Lipschitz bound `b`.
    StateAffine { a: f64, b: f64 },
}

/// Which scaling family to tabulate.
#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// Offspring laws built from the mechanism, with their natural time scale.
    #[default]
    Mechanism,
    /// A fixed offspring law with `γ_k = gamma_factor · k`.
    Law {
        law: OffspringLaw,
        #[serde(default = "one")]
        gamma_factor: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn unit_grid() -> Vec<f64> {
    vec![1.0]
}
fn default_paths() -> usize {
    10_000
}
fn default_dt() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunSpec {
    /// `v_t(λ)` on a grid.
    Cumulant {
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
        #[serde(default = "unit_grid")]
        t_grid: Vec<f64>,
        #[serde(default)]
        tol: Option<f64>,
    },
    /// `P_x{X_t = 0}` on a grid, plus the ultimate probability.
    Extinction {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "unit_grid")]
        t_grid: Vec<f64>,
        #[serde(default = "default_true")]
        ultimate: bool,
    },
    /// Laplace transform of the stationary law.
    Stationary {
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    Gw {
        offspring: OffspringLaw,
        x0: u64,
        n_steps: usize,
        #[serde(default = "default_paths")]
        n_paths: usize,
    },
    Gwi {
        offspring: OffspringLaw,
        immigrants: OffspringLaw,
        x0: u64,
        n_steps: usize,
        #[serde(default = "default_paths")]
        n_paths: usize,
    },
    /// `G_k`, `φ_k` tables and `v_k(t, λ)` against the mechanism.
    Scaling {
        #[serde(default)]
        family: FamilyConfig,
        k_list: Vec<u64>,
        z_grid: Vec<f64>,
        #[serde(default = "one")]
        t: f64,
        #[serde(default = "one")]
        lambda: f64,
    },
    /// Euler scheme for the mechanism and immigration of the config.
    Sde {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "one")]
        t_end: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        eps_jump: Option<f64>,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
        #[serde(default)]
        rate: RateConfig,
    },
    /// Euler scheme with exact stable increments; needs a stable `m`.
    StableSde {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "one")]
        t_end: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    /// Exact Feller/CIR transitions; needs `m` and `n` null.
    Feller {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "unit_grid")]
        t_grid: Vec<f64>,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    /// Spectrally positive Lévy paths stopped at zero.
    Levy {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "one")]
        t_end: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        eps_jump: Option<f64>,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    /// CB paths time-changed into stopped Lévy paths, compared with direct Lévy paths.
    Lamperti {
        #[serde(default = "one")]
        x0: f64,
        /// Horizon of the CB paths.
        #[serde(default = "default_horizon")]
        t_end: f64,
        /// Time on the new clock at which the Laplace transforms are compared.
        #[serde(default = "half")]
        s: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    /// Feller paths rebuilt from excursions alive at `t0`.
    Excursion {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "one")]
        t0: f64,
        t_grid: Vec<f64>,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    /// Feller CBI paths built from immigrants, started at zero.
    ImmigrationReconstruct {
        #[serde(default = "half")]
        t0: f64,
        t_grid: Vec<f64>,
        #[serde(default = "default_paths")]
        n_paths: usize,
        #[serde(default = "default_dt")]
        eps_jump: f64,
        #[serde(default = "unit_grid")]
        lambda_grid: Vec<f64>,
    },
    VerifySuite {
        #[serde(default = "suite_paths")]
        n_paths: usize,
        #[serde(default)]
        euler_dt: Option<f64>,
        #[serde(default)]
        martingale_dt: Option<f64>,
        #[serde(default)]
        z_threshold: Option<f64>,
    },
}

fn half() -> f64 {
    0.5
}
fn default_horizon() -> f64 {
    20.0
}
fn suite_paths() -> usize {
    SuiteConfig::default().n
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn branching(&self) -> CliResult<BranchingMechanism> {
        let m = &self.mechanism;
        Ok(BranchingMechanism::new(m.b, m.c, m.m.clone())?)
    }

    /// The configured immigration mechanism, `ψ ≡ 0` when absent.
    pub fn immigration(&self) -> CliResult<ImmigrationMechanism> {
        match &self.immigration {
            None => Ok(ImmigrationMechanism::none()),
            Some(i) => Ok(ImmigrationMechanism::new(i.beta, i.n.clone())?),
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> CliResult<()> {
        if self.name.is_empty()
            || self.name.contains(['/', '\\'])
            || self.name == "."
            || self.name == ".."
        {
            return Err(CliError::Config(format!(
                "name {:?} is not a plain directory name",
                self.name
            )));
        }
        self.branching()?;
        self.immigration()?;
        let finite_nonneg = |what: &str, v: &[f64]| -> CliResult<()> {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                Err(CliError::Config(format!(
                    "{what} must be a nonempty list of finite nonnegative numbers"
                )))
            } else {
                Ok(())
            }
        };
        let paths = |n: usize| -> CliResult<()> {
            if n < 2 {
                Err(CliError::Config(format!("need at least 2 paths, got {n}")))
            } else {
                Ok(())
            }
        };
        match &self.run {
            RunSpec::Cumulant {
                lambda_grid,
                t_grid,
                ..
            } => {
                finite_nonneg("lambda_grid", lambda_grid)?;
                finite_nonneg("t_grid", t_grid)
            }
            RunSpec::Extinction { t_grid, x0, .. } => {
                finite_nonneg("x0", &[*x0])?;
                finite_nonneg("t_grid", t_grid)
            }
            RunSpec::Stationary { lambda_grid } => finite_nonneg("lambda_grid", lambda_grid),
            RunSpec::Gw {
                offspring, n_paths, ..
            } => {
                offspring.validate()?;
                paths(*n_paths)
            }
            RunSpec::Gwi {
                offspring,
                immigrants,
                n_paths,
                ..
            } => {
                offspring.validate()?;
                immigrants.validate()?;
                paths(*n_paths)
            }
            RunSpec::Scaling {
                family,
                k_list,
                z_grid,
                ..
            } => {
                if let FamilyConfig::Law { law, gamma_factor } = family {
                    law.validate()?;
                    if !(*gamma_factor > 0.0) {
                        return Err(CliError::Config("gamma_factor must be positive".into()));
                    }
                }
                if k_list.is_empty() || k_list.contains(&0) {
                    return Err(CliError::Config(
                        "k_list must be a nonempty list of positive integers".into(),
                    ));
                }
                finite_nonneg("z_grid", z_grid)
            }
            RunSpec::Sde {
                lambda_grid,
                n_paths,
                ..
            }
            | RunSpec::StableSde {
                lambda_grid,
                n_paths,
                ..
            }
            | RunSpec::Levy {
                lambda_grid,
                n_paths,
                ..
            }
            | RunSpec::Lamperti {
                lambda_grid,
                n_paths,
                ..
            } => {
                finite_nonneg("lambda_grid", lambda_grid)?;
                paths(*n_paths)
            }
            RunSpec::Feller {
                lambda_grid,
                t_grid,
                n_paths,
                ..
            }
            | RunSpec::Excursion {
                lambda_grid,
                t_grid,
                n_paths,
                ..
            }
            | RunSpec::ImmigrationReconstruct {
                lambda_grid,
                t_grid,
                n_paths,
                ..
            } => {
                finite_nonneg("lambda_grid", lambda_grid)?;
                finite_nonneg("t_grid", t_grid)?;
                if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(CliError::Config("t_grid must be increasing".into()));
                }
                paths(*n_paths)
            }
            RunSpec::VerifySuite { .. } => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_cumulant_config() {
        let cfg = ExperimentConfig::from_json(r#"{"name":"c","seed":1,"run":{"kind":"cumulant"}}"#)
            .unwrap();
        assert_eq!(cfg.mechanism, MechanismSpec::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_json(r#"{"name":"c","run":{"kind":"cumulant"}}"#).is_err());
        assert!(
            ExperimentConfig::from_json(r#"{"name":"c","seed":1,"run":{"kind":"nope"}}"#).is_err()
        );
        assert!(ExperimentConfig::from_json(
            r#"{"name":"c","seed":1,"run":{"kind":"cumulant","bogus":1}}"#
        )
        .is_err());
        let neg = ExperimentConfig::from_json(
            r#"{"name":"c","seed":1,"mechanism":{"c":-1},"run":{"kind":"cumulant"}}"#,
        )
        .unwrap();
        assert_eq!(neg.validate().unwrap_err().exit_code(), 1);
        let bad_name =
            ExperimentConfig::from_json(r#"{"name":"../x","seed":1,"run":{"kind":"cumulant"}}"#)
                .unwrap();
        assert!(bad_name.validate().is_err());
    }

    #[test]
    fn measures_and_laws_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"name":"g","seed":3,
                "mechanism":{"b":0,"c":0,"m":{"type":"stable_branching","sigma":0.5,"alpha":1.5}},
                "immigration":{"beta":1,"n":{"type":"atoms","atoms":[[1,0.5]]}},
                "run":{"kind":"gwi","offspring":{"type":"binary","p":0.5},
                       "immigrants":{"type":"geometric","p":0.5},"x0":10,"n_steps":5}}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(
            cfg.immigration().unwrap().n,
            LevyMeasure::atoms(vec![(1.0, 0.5)])
        );
    }
}
