//! Experiment configuration: a JSON document mapping onto the core domain
//! types, plus command-line overrides.
//!
//! Complex numbers are `[re, im]` pairs everywhere; matrices are nested
//! row-major arrays of those pairs, with a bare list of reals accepted as
//! diagonal shorthand. Unknown fields are rejected so typos fail loudly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fdrlab_core::equilibrium::gibbs_state;
use fdrlab_core::linalg::{CMatrix, Hermitian, C64};
use fdrlab_core::model::{
    ConfigurationEnsemble, FourierMode, FourierModeFamily, PotentialTrajectory, SamplerFamily,
    ScalarLaw, SystemSpec, WeightedTrajectory,
};
use fdrlab_core::{DensityMatrix, TimeGrid};
use serde::Deserialize;

/// Errors carrying the exit-code distinction: a bad configuration is the
/// user's to fix (exit 1), a numerical failure mid-run is not (exit 2).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    /// At least one invariant in the check suite failed (exit 3).
    SuiteFailed,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Self::Runtime(msg) => write!(f, "runtime failure: {msg}"),
            Self::SuiteFailed => write!(f, "invariant suite failed"),
        }
    }
}

impl From<fdrlab_core::Error> for CliError {
    fn from(e: fdrlab_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("i/o error: {e}"))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::SuiteFailed => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Raw JSON schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub h0: MatrixSpec,
    pub beta: f64,
    pub ensemble: EnsembleSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub operators: OperatorsSpec,
    #[serde(default)]
    pub bath: Option<BathSpec>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

/// Matrix literal: nested `[re, im]` rows, or a bare real list meaning a
/// diagonal matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dt: f64,
    pub n_steps: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsSpec {
    #[serde(rename = "A")]
    pub a: Option<MatrixSpec>,
    #[serde(rename = "B")]
    pub b: Option<MatrixSpec>,
    #[serde(rename = "Q")]
    pub q: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    pub profile: ProfileKind,
    /// Probe strength; defaults to `1e-3 / ‖B‖` when omitted.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub t_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Impulse,
    Step,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default)]
    pub n_configs: usize,
    #[serde(default)]
    pub master_seed: u64,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// The adjusted equilibrium state — the default, and the stationary
    /// choice for deterministic ensembles.
    #[default]
    SigmaPrime,
    /// The bare Gibbs state of `H₀` (ignores the ensemble mean).
    Gibbs,
    MaximallyMixed,
    Pure {
        vector: Vec<[f64; 2]>,
    },
    Matrix {
        matrix: Vec<Vec<[f64; 2]>>,
    },
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSpec {
    #[serde(default)]
    pub directory: Option<String>,
    /// Subset of {"csv", "json"}; both by default.
    #[serde(default)]
    pub formats: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// Explicitly enumerated weighted configurations.
    Finite {
        items: Vec<ItemSpec>,
        #[serde(default)]
        declared_mean: Option<MatrixSpec>,
    },
    /// The single-configuration ensemble `V_ω ≡ V̄`.
    Deterministic { mean: MatrixSpec },
    /// Random constant coupling `λ_ω Q`.
    Coupling {
        operator: MatrixSpec,
        law: LawSpec,
        #[serde(default)]
        declared_mean: Option<MatrixSpec>,
    },
    /// Sinusoidal drive with per-configuration random phases.
    Fourier {
        mean: MatrixSpec,
        modes: Vec<ModeFamilySpec>,
        #[serde(default)]
        declared_mean: Option<MatrixSpec>,
    },
    /// Piecewise-constant offsets `λ_i Q` redrawn on each interval.
    PiecewiseConstant {
        mean: MatrixSpec,
        breakpoints: Vec<f64>,
        operator: MatrixSpec,
        law: LawSpec,
        #[serde(default)]
        declared_mean: Option<MatrixSpec>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub weight: f64,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Coupling {
        strength: f64,
        operator: MatrixSpec,
    },
    Fourier {
        mean: MatrixSpec,
        modes: Vec<ModeSpec>,
    },
    PiecewiseConstant {
        mean: MatrixSpec,
        breakpoints: Vec<f64>,
        offsets: Vec<MatrixSpec>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub operator: MatrixSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFamilySpec {
    pub amplitude: f64,
    pub frequency: f64,
    pub operator: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    TwoPoint { low: f64, high: f64, p_high: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std_dev: f64 },
}

// ---------------------------------------------------------------------------
// Resolution into domain objects
// ---------------------------------------------------------------------------

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone)]
pub struct ResolvedBath {
    pub profile: ProfileKind,
    pub epsilon: Option<f64>,
    pub t_prime: f64,
}

/// A fully validated experiment: domain objects plus run plumbing.
pub struct Experiment {
    pub spec: SystemSpec,
    pub grid: TimeGrid,
    pub a: Option<Hermitian>,
    pub b: Option<Hermitian>,
    pub q: Option<Hermitian>,
    pub bath: Option<ResolvedBath>,
    pub n_configs: usize,
    pub master_seed: u64,
    pub initial_state: DensityMatrix,
    pub out_dir: PathBuf,
    pub formats: Formats,
    pub config_sha256: String,
}

impl MatrixSpec {
    fn to_cmatrix(&self, dim: usize, name: &str) -> CliResult<CMatrix> {
        match self {
            Self::Diagonal(values) => {
                if values.len() != dim {
                    return Err(config_err(format!(
                        "{name}: diagonal has {} entries, expected {dim}",
                        values.len()
                    )));
                }
                let mut m = CMatrix::zeros(dim, dim);
                for (k, &v) in values.iter().enumerate() {
                    m[(k, k)] = C64::new(v, 0.0);
                }
                Ok(m)
            }
            Self::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(config_err(format!("{name}: expected a {dim}×{dim} matrix")));
                }
                let mut m = CMatrix::zeros(dim, dim);
                for (i, row) in rows.iter().enumerate() {
                    for (j, &[re, im]) in row.iter().enumerate() {
                        m[(i, j)] = C64::new(re, im);
                    }
                }
                Ok(m)
            }
        }
    }

    fn to_hermitian(&self, dim: usize, name: &str) -> CliResult<Hermitian> {
        let m = self.to_cmatrix(dim, name)?;
        Hermitian::new(m).map_err(|e| config_err(format!("{name}: {e}")))
    }
}

impl EnsembleSpec {
    fn resolve(&self, dim: usize) -> CliResult<ConfigurationEnsemble> {
        let mean_of = |spec: &Option<MatrixSpec>| -> CliResult<Option<Hermitian>> {
            spec.as_ref()
                .map(|m| m.to_hermitian(dim, "ensemble.declared_mean"))
                .transpose()
        };
        match self {
            Self::Finite {
                items,
                declared_mean,
            } => {
                let items = items
                    .iter()
                    .enumerate()
                    .map(|(k, item)| {
                        Ok(WeightedTrajectory {
                            weight: item.weight,
                            trajectory: item
                                .trajectory
                                .resolve(dim, &format!("ensemble.items[{k}]"))?,
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                ConfigurationEnsemble::finite(items, mean_of(declared_mean)?)
                    .map_err(|e| config_err(format!("ensemble: {e}")))
            }
            Self::Deterministic { mean } => Ok(ConfigurationEnsemble::deterministic(
                mean.to_hermitian(dim, "ensemble.mean")?,
            )),
            Self::Coupling {
                operator,
                law,
                declared_mean,
            } => ConfigurationEnsemble::sampled(
                SamplerFamily::Coupling {
                    operator: operator.to_hermitian(dim, "ensemble.operator")?,
                    law: law.resolve(),
                },
                mean_of(declared_mean)?,
            )
            .map_err(|e| config_err(format!("ensemble: {e}"))),
            Self::Fourier {
                mean,
                modes,
                declared_mean,
            } => {
                let modes = modes
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        Ok(FourierModeFamily {
                            amplitude: m.amplitude,
                            frequency: m.frequency,
                            operator: m
                                .operator
                                .to_hermitian(dim, &format!("ensemble.modes[{k}].operator"))?,
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                ConfigurationEnsemble::sampled(
                    SamplerFamily::Fourier {
                        mean: mean.to_hermitian(dim, "ensemble.mean")?,
                        modes,
                    },
                    mean_of(declared_mean)?,
                )
                .map_err(|e| config_err(format!("ensemble: {e}")))
            }
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                operator,
                law,
                declared_mean,
            } => ConfigurationEnsemble::sampled(
                SamplerFamily::PiecewiseConstant {
                    mean: mean.to_hermitian(dim, "ensemble.mean")?,
                    breakpoints: breakpoints.clone(),
                    operator: operator.to_hermitian(dim, "ensemble.operator")?,
                    law: law.resolve(),
                },
                mean_of(declared_mean)?,
            )
            .map_err(|e| config_err(format!("ensemble: {e}"))),
        }
    }
}

impl TrajectorySpec {
    fn resolve(&self, dim: usize, name: &str) -> CliResult<PotentialTrajectory> {
        match self {
            Self::Coupling { strength, operator } => Ok(PotentialTrajectory::Coupling {
                strength: *strength,
                operator: operator.to_hermitian(dim, &format!("{name}.operator"))?,
            }),
            Self::Fourier { mean, modes } => Ok(PotentialTrajectory::Fourier {
                mean: mean.to_hermitian(dim, &format!("{name}.mean"))?,
                modes: modes
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        Ok(FourierMode {
                            amplitude: m.amplitude,
                            frequency: m.frequency,
                            phase: m.phase,
                            operator: m
                                .operator
                                .to_hermitian(dim, &format!("{name}.modes[{k}].operator"))?,
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?,
            }),
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                offsets,
            } => Ok(PotentialTrajectory::PiecewiseConstant {
                mean: mean.to_hermitian(dim, &format!("{name}.mean"))?,
                breakpoints: breakpoints.clone(),
                offsets: offsets
                    .iter()
                    .enumerate()
                    .map(|(k, o)| o.to_hermitian(dim, &format!("{name}.offsets[{k}]")))
                    .collect::<CliResult<Vec<_>>>()?,
            }),
        }
    }
}

impl LawSpec {
    fn resolve(&self) -> ScalarLaw {
        match *self {
            Self::TwoPoint { low, high, p_high } => ScalarLaw::TwoPoint { low, high, p_high },
            Self::Uniform { low, high } => ScalarLaw::Uniform { low, high },
            Self::Normal { mean, std_dev } => ScalarLaw::Normal { mean, std_dev },
        }
    }
}

impl InitialStateSpec {
    fn resolve(&self, spec: &SystemSpec) -> CliResult<DensityMatrix> {
        match self {
            Self::SigmaPrime => spec
                .adjusted_state()
                .map_err(|e| config_err(format!("initial_state: {e}"))),
            Self::Gibbs => gibbs_state(spec.h0(), spec.beta())
                .map_err(|e| config_err(format!("initial_state: {e}"))),
            Self::MaximallyMixed => Ok(DensityMatrix::maximally_mixed(spec.dim())),
            Self::Pure { vector } => {
                if vector.len() != spec.dim() {
                    return Err(config_err(format!(
                        "initial_state: vector has {} entries, expected {}",
                        vector.len(),
                        spec.dim()
                    )));
                }
                let psi: Vec<C64> = vector.iter().map(|&[re, im]| C64::new(re, im)).collect();
                DensityMatrix::from_pure(&psi)
                    .map_err(|e| config_err(format!("initial_state: {e}")))
            }
            Self::Matrix { matrix } => {
                let m = MatrixSpec::Full(matrix.clone()).to_cmatrix(spec.dim(), "initial_state")?;
                DensityMatrix::new(m).map_err(|e| config_err(format!("initial_state: {e}")))
            }
        }
    }
}

/// Reads and parses the config file; the second element is the SHA-256 of the
/// raw bytes, recorded in the run manifest.
pub fn load_config(path: &Path) -> CliResult<(ExperimentConfig, String)> {
    let bytes = std::fs::read(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let parsed: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let digest = {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex::encode(hasher.finalize())
    };
    Ok((parsed, digest))
}

impl ExperimentConfig {
    pub fn resolve(&self, sha256: String, overrides: &Overrides) -> CliResult<Experiment> {
        if self.dim == 0 {
            return Err(config_err("dim must be positive"));
        }
        let h0 = self.h0.to_hermitian(self.dim, "h0")?;
        let ensemble = self.ensemble.resolve(self.dim)?;
        let spec = SystemSpec::new(h0, ensemble, self.beta)
            .map_err(|e| config_err(format!("system: {e}")))?;

        let dt = overrides.dt.unwrap_or(self.grid.dt);
        let n_steps = overrides.steps.unwrap_or(self.grid.n_steps);
        let grid =
            TimeGrid::new(dt, n_steps).map_err(|e| config_err(format!("grid: {e}")))?;

        let operator = |m: &Option<MatrixSpec>, name: &str| -> CliResult<Option<Hermitian>> {
            m.as_ref().map(|m| m.to_hermitian(self.dim, name)).transpose()
        };
        let a = operator(&self.operators.a, "operators.A")?;
        let b = operator(&self.operators.b, "operators.B")?;
        let q = operator(&self.operators.q, "operators.Q")?;

        let bath = match &self.bath {
            None => None,
            Some(bath) => {
                if let Some(eps) = bath.epsilon {
                    if !(eps.is_finite() && eps > 0.0) {
                        return Err(config_err(format!(
                            "bath.epsilon must be positive, got {eps}"
                        )));
                    }
                }
                if !(bath.t_prime.is_finite() && bath.t_prime >= 0.0) {
                    return Err(config_err(format!(
                        "bath.t_prime must be ≥ 0, got {}",
                        bath.t_prime
                    )));
                }
                Some(ResolvedBath {
                    profile: bath.profile,
                    epsilon: bath.epsilon,
                    t_prime: bath.t_prime,
                })
            }
        };

        let initial_state = self.initial_state.resolve(&spec)?;

        let formats = match &self.outputs.formats {
            None => Formats {
                csv: true,
                json: true,
            },
            Some(list) => {
                let set: BTreeSet<&str> = list.iter().map(String::as_str).collect();
                for f in &set {
                    if !matches!(*f, "csv" | "json") {
                        return Err(config_err(format!("outputs.formats: unknown format {f:?}")));
                    }
                }
                Formats {
                    csv: set.contains("csv"),
                    json: set.contains("json"),
                }
            }
        };

        let out_dir = overrides
            .out
            .clone()
            .or_else(|| self.outputs.directory.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));

        Ok(Experiment {
            spec,
            grid,
            a,
            b,
            q,
            bath,
            n_configs: self.sampling.n_configs,
            master_seed: overrides.seed.unwrap_or(self.sampling.master_seed),
            initial_state,
            out_dir,
            formats,
            config_sha256: sha256,
        })
    }
}

impl Experiment {
    pub fn operator(&self, name: &str) -> CliResult<&Hermitian> {
        let op = match name {
            "A" => self.a.as_ref(),
            "B" => self.b.as_ref(),
            "Q" => self.q.as_ref(),
            _ => None,
        };
        op.ok_or_else(|| config_err(format!("operators.{name} is required by this subcommand")))
    }

    pub fn bath(&self) -> CliResult<&ResolvedBath> {
        self.bath
            .as_ref()
            .ok_or_else(|| config_err("a bath section is required by this subcommand"))
    }

    /// Probe strength: configured value or the `1e-3/‖B‖` default.
    pub fn epsilon(&self) -> CliResult<f64> {
        let bath = self.bath()?;
        match bath.epsilon {
            Some(eps) => Ok(eps),
            None => {
                let b = self.operator("B")?;
                let norm = b.norm();
                if norm == 0.0 {
                    return Err(config_err("cannot default epsilon: ‖B‖ = 0"));
                }
                Ok(1e-3 / norm)
            }
        }
    }
}
