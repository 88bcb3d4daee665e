//! Random potential model.
//!
//! A system is `H_ω(t) = H₀ + V_ω(t)` with the potential drawn from one of
//! three concrete families:
//!
//! * **coupling** — `V_ω = λ_ω Q`, a random time-independent coupling
//!   strength on a fixed operator;
//! * **Fourier** — `V_ω(t) = V̄ + Σ_m c_m sin(ν_m t + φ_m) Q_m`, with random
//!   phases drawn uniformly so every mode averages to zero;
//! * **piecewise constant** — `V̄` plus a per-interval Hermitian offset on a
//!   fixed breakpoint grid.
//!
//! Each family carries an analytically constructed `declared_mean`, so the
//! constant-mean condition `E[V_ω(t)] = V̄` holds by design;
//! [`ConfigurationEnsemble::check_mean_constancy`] verifies it empirically and
//! catches ensembles whose declaration lies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::equilibrium::{adjusted_equilibrium, DensityMatrix};
use crate::error::{Error, Result};
use crate::linalg::Hermitian;
use crate::propagator::TimeGrid;

/// Relative tolerance for validating a user-supplied declared mean against
/// the analytic family mean.
const DECLARED_MEAN_TOL: f64 = 1e-12;
/// A piecewise-constant breakpoint must sit within this fraction of a step
/// from a grid point.
const BREAKPOINT_ALIGNMENT_TOL: f64 = 1e-9;

/// One sinusoidal drive term `c sin(νt + φ) Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMode {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub operator: Hermitian,
}

/// A single configuration's potential as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialTrajectory {
    /// `λ Q`, constant in time.
    Coupling { strength: f64, operator: Hermitian },
    /// `mean + Σ_m c_m sin(ν_m t + φ_m) Q_m`.
    Fourier {
        mean: Hermitian,
        modes: Vec<FourierMode>,
    },
    /// `mean + offsets[i]` on the i-th interval of `[0, b₁), [b₁, b₂), …`;
    /// `offsets` has one more entry than `breakpoints`.
    PiecewiseConstant {
        mean: Hermitian,
        breakpoints: Vec<f64>,
        offsets: Vec<Hermitian>,
    },
}

impl PotentialTrajectory {
    pub fn dim(&self) -> usize {
        match self {
            Self::Coupling { operator, .. } => operator.dim(),
            Self::Fourier { mean, .. } => mean.dim(),
            Self::PiecewiseConstant { mean, .. } => mean.dim(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check_dim = |d: usize, what: &str| {
            if d == dim {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{what} has dimension {d}, system has {dim}"
                )))
            }
        };
        match self {
            Self::Coupling { strength, operator } => {
                if !strength.is_finite() {
                    return Err(Error::InvalidParameter("non-finite coupling".into()));
                }
                check_dim(operator.dim(), "coupling operator")
            }
            Self::Fourier { mean, modes } => {
                check_dim(mean.dim(), "Fourier mean")?;
                for m in modes {
                    check_dim(m.operator.dim(), "Fourier mode operator")?;
                    if ![m.amplitude, m.frequency, m.phase]
                        .iter()
                        .all(|x| x.is_finite())
                    {
                        return Err(Error::InvalidParameter(
                            "non-finite Fourier mode parameter".into(),
                        ));
                    }
                }
                Ok(())
            }
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                offsets,
            } => {
                check_dim(mean.dim(), "piecewise mean")?;
                if offsets.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "piecewise trajectory needs {} offsets for {} breakpoints, got {}",
                        breakpoints.len() + 1,
                        breakpoints.len(),
                        offsets.len()
                    )));
                }
                for o in offsets {
                    check_dim(o.dim(), "piecewise offset")?;
                }
                if !breakpoints.windows(2).all(|w| w[0] < w[1])
                    || breakpoints.iter().any(|b| !b.is_finite() || *b <= 0.0)
                {
                    return Err(Error::InvalidParameter(
                        "breakpoints must be finite, positive and strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `V_ω(t)`. Total for `t ≥ 0`; Hermitian by construction.
    pub fn evaluate(&self, t: f64) -> Hermitian {
        debug_assert!(t >= 0.0 && t.is_finite());
        match self {
            Self::Coupling { strength, operator } => operator.scale(*strength),
            Self::Fourier { mean, modes } => {
                let mut v = mean.clone();
                for m in modes {
                    let weight = m.amplitude * (m.frequency * t + m.phase).sin();
                    v = v
                        .add(&m.operator.scale(weight))
                        .expect("validated dimensions");
                }
                v
            }
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                offsets,
            } => {
                let idx = breakpoints.partition_point(|b| *b <= t);
                mean.add(&offsets[idx]).expect("validated dimensions")
            }
        }
    }

    /// The time-constant part of the trajectory (drive terms stripped); the
    /// default declared mean of a finite ensemble is the weighted sum of
    /// these.
    pub fn constant_part(&self) -> Hermitian {
        match self {
            Self::Coupling { strength, operator } => operator.scale(*strength),
            Self::Fourier { mean, .. } => mean.clone(),
            Self::PiecewiseConstant { mean, .. } => mean.clone(),
        }
    }

    /// Checks that every breakpoint in the propagation window coincides with
    /// a grid point, so no step straddles a discontinuity.
    pub fn check_grid_alignment(&self, grid: &TimeGrid) -> Result<()> {
        if let Self::PiecewiseConstant { breakpoints, .. } = self {
            let dt = grid.dt();
            let horizon = grid.horizon() + 0.5 * dt;
            for &b in breakpoints.iter().filter(|b| **b <= horizon) {
                let nearest = (b / dt).round() * dt;
                if (b - nearest).abs() > BREAKPOINT_ALIGNMENT_TOL * dt {
                    return Err(Error::GridMisaligned(format!(
                        "breakpoint {b} is {:.3e} away from the nearest grid point (dt = {dt})",
                        (b - nearest).abs()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Distribution of a random scalar with an analytically known mean.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarLaw {
    /// `high` with probability `p_high`, otherwise `low`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
    /// Uniform on `[low, high)`.
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std_dev: f64 },
}

impl ScalarLaw {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::TwoPoint { low, high, p_high } => {
                low.is_finite() && high.is_finite() && (0.0..=1.0).contains(p_high)
            }
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Self::Normal { mean, std_dev } => mean.is_finite() && *std_dev >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid scalar law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::TwoPoint { low, high, p_high } => p_high * high + (1.0 - p_high) * low,
            Self::Uniform { low, high } => 0.5 * (low + high),
            Self::Normal { mean, .. } => *mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < *p_high {
                    *high
                } else {
                    *low
                }
            }
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::Normal { mean, std_dev } => Normal::new(*mean, *std_dev)
                .expect("validated law")
                .sample(rng),
        }
    }
}

/// A sinusoidal mode whose phase is randomized per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierModeFamily {
    pub amplitude: f64,
    pub frequency: f64,
    pub operator: Hermitian,
}

/// Parametric sampler for the three ensemble families. Phases are uniform on
/// `[0, 2π)` and scalars follow a [`ScalarLaw`], so the family mean is
/// available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplerFamily {
    Coupling {
        operator: Hermitian,
        law: ScalarLaw,
    },
    Fourier {
        mean: Hermitian,
        modes: Vec<FourierModeFamily>,
    },
    PiecewiseConstant {
        mean: Hermitian,
        breakpoints: Vec<f64>,
        operator: Hermitian,
        law: ScalarLaw,
    },
}

impl SamplerFamily {
    pub fn dim(&self) -> usize {
        match self {
            Self::Coupling { operator, .. } => operator.dim(),
            Self::Fourier { mean, .. } => mean.dim(),
            Self::PiecewiseConstant { mean, .. } => mean.dim(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Coupling { operator, law } => {
                law.validate()?;
                if operator.dim() != dim {
                    return Err(Error::InvalidParameter("coupling operator dimension".into()));
                }
            }
            Self::Fourier { mean, modes } => {
                if mean.dim() != dim || modes.iter().any(|m| m.operator.dim() != dim) {
                    return Err(Error::InvalidParameter("Fourier family dimension".into()));
                }
                if modes
                    .iter()
                    .any(|m| !m.amplitude.is_finite() || !m.frequency.is_finite())
                {
                    return Err(Error::InvalidParameter(
                        "non-finite Fourier family parameter".into(),
                    ));
                }
            }
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                operator,
                law,
            } => {
                law.validate()?;
                if mean.dim() != dim || operator.dim() != dim {
                    return Err(Error::InvalidParameter(
                        "piecewise family dimension".into(),
                    ));
                }
                if !breakpoints.windows(2).all(|w| w[0] < w[1])
                    || breakpoints.iter().any(|b| !b.is_finite() || *b <= 0.0)
                {
                    return Err(Error::InvalidParameter(
                        "breakpoints must be finite, positive and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The exact ensemble mean `E[V_ω(t)]`, constant in time by construction.
    pub fn analytic_mean(&self) -> Hermitian {
        match self {
            Self::Coupling { operator, law } => operator.scale(law.mean()),
            // E[sin(νt + φ)] = 0 for φ uniform on [0, 2π).
            Self::Fourier { mean, .. } => mean.clone(),
            Self::PiecewiseConstant {
                mean,
                operator,
                law,
                ..
            } => mean
                .add(&operator.scale(law.mean()))
                .expect("validated dimensions"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PotentialTrajectory {
        match self {
            Self::Coupling { operator, law } => PotentialTrajectory::Coupling {
                strength: law.sample(rng),
                operator: operator.clone(),
            },
            Self::Fourier { mean, modes } => PotentialTrajectory::Fourier {
                mean: mean.clone(),
                modes: modes
                    .iter()
                    .map(|m| FourierMode {
                        amplitude: m.amplitude,
                        frequency: m.frequency,
                        phase: rng.random::<f64>() * std::f64::consts::TAU,
                        operator: m.operator.clone(),
                    })
                    .collect(),
            },
            Self::PiecewiseConstant {
                mean,
                breakpoints,
                operator,
                law,
            } => PotentialTrajectory::PiecewiseConstant {
                mean: mean.clone(),
                breakpoints: breakpoints.clone(),
                offsets: (0..=breakpoints.len())
                    .map(|_| operator.scale(law.sample(rng)))
                    .collect(),
            },
        }
    }
}

/// One trajectory of a finite ensemble together with its probability weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory {
    pub weight: f64,
    pub trajectory: PotentialTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleVariant {
    /// Explicit configurations with exact weights (no sampling noise).
    Finite(Vec<WeightedTrajectory>),
    /// Configurations drawn on demand from a parametric family.
    Sampled(SamplerFamily),
}

/// A random ensemble of potentials with its declared constant mean `V̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationEnsemble {
    variant: EnsembleVariant,
    declared_mean: Hermitian,
}

impl ConfigurationEnsemble {
    /// Finite ensemble. When `declared_mean` is omitted it defaults to the
    /// weighted sum of the trajectories' constant parts — correct whenever
    /// the drive terms cancel across configurations, which
    /// [`Self::check_mean_constancy`] verifies.
    pub fn finite(
        items: Vec<WeightedTrajectory>,
        declared_mean: Option<Hermitian>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidParameter("empty ensemble".into()));
        }
        let dim = items[0].trajectory.dim();
        let mut total = 0.0;
        for item in &items {
            item.trajectory.validate(dim)?;
            if !item.weight.is_finite() || item.weight <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "weights must be positive, got {}",
                    item.weight
                )));
            }
            total += item.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let default_mean = items.iter().skip(1).fold(
            items[0].trajectory.constant_part().scale(items[0].weight),
            |acc, item| {
                acc.add(&item.trajectory.constant_part().scale(item.weight))
                    .expect("validated dimensions")
            },
        );
        let declared_mean = match declared_mean {
            Some(m) if m.dim() != dim => {
                return Err(Error::InvalidParameter(
                    "declared mean dimension mismatch".into(),
                ))
            }
            Some(m) => m,
            None => default_mean,
        };
        Ok(Self {
            variant: EnsembleVariant::Finite(items),
            declared_mean,
        })
    }

    /// Sampled ensemble. A supplied `declared_mean` must match the family's
    /// analytic mean; omitted, the analytic mean is used.
    pub fn sampled(family: SamplerFamily, declared_mean: Option<Hermitian>) -> Result<Self> {
        let dim = family.dim();
        family.validate(dim)?;
        let analytic = family.analytic_mean();
        if let Some(m) = &declared_mean {
            let scale = analytic.norm().max(1.0);
            if m.dim() != dim || m.sub(&analytic)?.norm() > DECLARED_MEAN_TOL * scale {
                return Err(Error::InvalidParameter(
                    "declared mean disagrees with the family's analytic mean".into(),
                ));
            }
        }
        Ok(Self {
            variant: EnsembleVariant::Sampled(family),
            declared_mean: analytic,
        })
    }

    /// Single deterministic configuration `V_ω ≡ V̄`.
    pub fn deterministic(vbar: Hermitian) -> Self {
        Self::finite(
            vec![WeightedTrajectory {
                weight: 1.0,
                trajectory: PotentialTrajectory::Coupling {
                    strength: 1.0,
                    operator: vbar,
                },
            }],
            None,
        )
        .expect("single unit-weight item is a valid ensemble")
    }

    pub fn dim(&self) -> usize {
        self.declared_mean.dim()
    }

    pub fn declared_mean(&self) -> &Hermitian {
        &self.declared_mean
    }

    pub fn variant(&self) -> &EnsembleVariant {
        &self.variant
    }

    pub fn is_finite_family(&self) -> bool {
        matches!(self.variant, EnsembleVariant::Finite(_))
    }

    /// Draws `n` configurations. Finite ensembles return their items with
    /// exact weights regardless of `n`; sampled ensembles draw `n`
    /// equal-weight configurations, configuration `k` from an independent
    /// child stream of (`master_seed`, `k`), so results are reproducible and
    /// independent of iteration order.
    pub fn sample_configurations(&self, n: usize, master_seed: u64) -> Result<Vec<Configuration>> {
        match &self.variant {
            EnsembleVariant::Finite(items) => Ok(items
                .iter()
                .enumerate()
                .map(|(index, item)| Configuration {
                    index,
                    weight: item.weight,
                    trajectory: item.trajectory.clone(),
                })
                .collect()),
            EnsembleVariant::Sampled(family) => {
                if n == 0 {
                    return Err(Error::InvalidParameter(
                        "sampled ensemble needs n ≥ 1 configurations".into(),
                    ));
                }
                let weight = 1.0 / n as f64;
                Ok((0..n)
                    .map(|k| {
                        let mut rng = child_stream(master_seed, k);
                        Configuration {
                            index: k,
                            weight,
                            trajectory: family.sample(&mut rng),
                        }
                    })
                    .collect())
            }
        }
    }

    /// Empirically verifies that `E[V_ω(t)]` equals the declared mean across
    /// the grid. Finite ensembles are averaged exactly; sampled ensembles use
    /// `n_samples` draws and pass when every grid point satisfies
    /// `‖mean − V̄‖_F ≤ tol + 3·SE`.
    pub fn check_mean_constancy(
        &self,
        grid: &TimeGrid,
        n_samples: usize,
        master_seed: u64,
        tol: f64,
    ) -> Result<MeanConstancyReport> {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be ≥ 0".into()));
        }
        let vbar = &self.declared_mean;
        let mut worst = MeanConstancyReport {
            max_deviation: 0.0,
            threshold: tol,
            worst_time: 0.0,
            pass: true,
        };
        match &self.variant {
            EnsembleVariant::Finite(items) => {
                for t in grid.times() {
                    let mean = items.iter().skip(1).fold(
                        items[0].trajectory.evaluate(t).scale(items[0].weight),
                        |acc, item| {
                            acc.add(&item.trajectory.evaluate(t).scale(item.weight))
                                .expect("validated dimensions")
                        },
                    );
                    let dev = mean.sub(vbar)?.norm();
                    if dev > worst.max_deviation {
                        worst.max_deviation = dev;
                        worst.worst_time = t;
                    }
                    if dev > tol {
                        worst.pass = false;
                    }
                }
            }
            EnsembleVariant::Sampled(family) => {
                if n_samples == 0 {
                    return Err(Error::InvalidParameter(
                        "mean-constancy check needs n_samples ≥ 1".into(),
                    ));
                }
                let times: Vec<f64> = grid.times().collect();
                let dim = self.dim();
                let mut sums = vec![crate::linalg::zeros(dim); times.len()];
                let mut sq_sums = vec![vec![0.0f64; dim * dim]; times.len()];
                for k in 0..n_samples {
                    let mut rng = child_stream(master_seed, k);
                    let traj = family.sample(&mut rng);
                    for (ti, &t) in times.iter().enumerate() {
                        let v = traj.evaluate(t);
                        sums[ti] += v.matrix();
                        for (e, sq) in v.matrix().iter().zip(sq_sums[ti].iter_mut()) {
                            *sq += e.norm_sqr();
                        }
                    }
                }
                let n = n_samples as f64;
                for (ti, &t) in times.iter().enumerate() {
                    let mean = sums[ti].unscale(n);
                    let dev = (&mean - vbar.matrix()).norm();
                    // Per-entry variance of the complex entries, aggregated in
                    // the Frobenius sense; SE of the mean is 1/√n of that.
                    let var: f64 = sq_sums[ti]
                        .iter()
                        .zip(mean.iter())
                        .map(|(sq, m)| (sq / n - m.norm_sqr()).max(0.0))
                        .sum();
                    let se = (var / n).sqrt();
                    let threshold = tol + 3.0 * se;
                    if dev > worst.max_deviation {
                        worst.max_deviation = dev;
                        worst.worst_time = t;
                        worst.threshold = threshold;
                    }
                    if dev > threshold {
                        worst.pass = false;
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Deterministic child RNG for configuration `k`: one ChaCha stream per
/// configuration, all seeded from the master seed.
fn child_stream(master_seed: u64, k: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(k as u64);
    rng
}

/// Result of the empirical constant-mean check.
#[derive(Debug, Clone, Copy)]
pub struct MeanConstancyReport {
    pub max_deviation: f64,
    /// Acceptance threshold at the worst grid point (`tol` plus three
    /// standard errors for sampled ensembles).
    pub threshold: f64,
    pub worst_time: f64,
    pub pass: bool,
}

/// A drawn configuration: index in sampling order, probability weight, and
/// its potential trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub index: usize,
    pub weight: f64,
    pub trajectory: PotentialTrajectory,
}

/// Complete problem statement: base Hamiltonian, potential ensemble, inverse
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    h0: Hermitian,
    ensemble: ConfigurationEnsemble,
    beta: f64,
}

impl SystemSpec {
    pub fn new(h0: Hermitian, ensemble: ConfigurationEnsemble, beta: f64) -> Result<Self> {
        if h0.dim() != ensemble.dim() {
            return Err(Error::DimensionMismatch {
                left: h0.dim(),
                right: ensemble.dim(),
                context: "SystemSpec::new",
            });
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "inverse temperature must be finite and non-negative, got {beta}"
            )));
        }
        Ok(Self { h0, ensemble, beta })
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn h0(&self) -> &Hermitian {
        &self.h0
    }

    pub fn ensemble(&self) -> &ConfigurationEnsemble {
        &self.ensemble
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `H_ω(t) = H₀ + V_ω(t)` for one configuration.
    pub fn hamiltonian_at(&self, config: &Configuration, t: f64) -> Hermitian {
        self.h0
            .add(&config.trajectory.evaluate(t))
            .expect("configuration validated against system dimension")
    }

    /// `H̄ = H₀ + V̄`, the generator of the mean evolution.
    pub fn mean_hamiltonian(&self) -> Hermitian {
        self.h0
            .add(self.ensemble.declared_mean())
            .expect("ensemble validated against system dimension")
    }

    pub fn sample_configurations(&self, n: usize, master_seed: u64) -> Result<Vec<Configuration>> {
        self.ensemble.sample_configurations(n, master_seed)
    }

    /// The adjusted equilibrium `σ'_β ∝ e^{-β(H₀+V̄)}`.
    pub fn adjusted_state(&self) -> Result<DensityMatrix> {
        adjusted_equilibrium(&self.h0, self.ensemble.declared_mean(), self.beta)
    }
}
