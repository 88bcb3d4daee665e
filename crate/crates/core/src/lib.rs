//! Core algorithms for a desk-scale statistical-dynamics laboratory.
//!
//! The physical setting: a finite quantum system with Hamiltonian
//! `H_ω(t) = H₀ + V_ω(t)`, where the potential is drawn from a random ensemble
//! whose mean `E[V_ω(t)] = V̄` is constant in time. The crate provides the
//! pieces needed to study the ensemble-averaged state: equilibrium and
//! adjusted-equilibrium Gibbs states, per-configuration unitary propagation,
//! the mean state and its deviation from closed Liouville dynamics, linear
//! response to a weak bath probe, and exact Bohr-line spectra for
//! fluctuation-dissipation checks.
//!
//! Everything is deterministic: sampling uses per-configuration counter-based
//! RNG streams, reductions run in fixed configuration order regardless of
//! thread count, and the single eigendecomposition backend pins eigenvector
//! phases.

pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod mean_dynamics;
pub mod model;
pub mod propagator;
pub mod response;

pub use equilibrium::{adjusted_equilibrium, gibbs_state, von_neumann_entropy, DensityMatrix};
pub use error::{Error, Result};
pub use linalg::{CMatrix, Hermitian, SpectralDecomposition, C64};
pub use mean_dynamics::{evolve_mean, propagate_configuration, MeanEvolution};
pub use model::{Configuration, ConfigurationEnsemble, PotentialTrajectory, SystemSpec};
pub use propagator::{TimeGrid, UnitaryTrajectory};
pub use response::{
    kms_check, kubo_check, kubo_series, line_ratio_report, line_spectrum, response_function,
    windowed_fourier, windowed_line_crosscheck, BathCoupling, BathProfile, CorrelationEngine,
    KuboSeries, SpectralLine,
};
