//! Gibbs and adjusted equilibrium states.
//!
//! The reference state of the unperturbed system is `σ_β ∝ e^{-βH₀}`. When a
//! random potential with constant mean `V̄` is switched on, the natural
//! stationary reference becomes the adjusted state `σ'_β ∝ e^{-β(H₀+V̄)}`;
//! both are produced by the same code path so they agree exactly when `V̄ = 0`.
//! The mean-coupling scale factor multiplying `V̄` is taken as 1 (any other
//! value can be absorbed into `V̄` itself).

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Hermitian};

/// Trace deviation tolerated by [`DensityMatrix::new`].
pub const TRACE_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated by [`DensityMatrix::new`].
pub const POSITIVITY_TOL: f64 = -1e-12;
/// Eigenvalues below this are treated as hard positivity violations by the
/// entropy, distinguishing bugs from rounding.
pub const ENTROPY_NEGATIVITY_LIMIT: f64 = -1e-10;

/// A validated density matrix: Hermitian, unit trace, positive semidefinite
/// within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: Hermitian,
}

impl DensityMatrix {
    /// Validates hermiticity, `Tr ρ = 1` (within [`TRACE_TOL`]) and
    /// positivity (eigenvalues ≥ [`POSITIVITY_TOL`]).
    pub fn new(m: CMatrix) -> Result<Self> {
        let op = Hermitian::new(m)?;
        let tr = linalg::trace(op.matrix());
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!(
                "trace is {tr} instead of 1"
            )));
        }
        let eig = op.eig()?;
        let min = eig.eigenvalues()[0];
        if min < POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { op })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let norm_sqr: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm_sqr <= 0.0 || !norm_sqr.is_finite() {
            return Err(Error::InvalidParameter(
                "pure state must have finite positive norm".into(),
            ));
        }
        let dim = psi.len();
        let mat = CMatrix::from_fn(dim, dim, |r, c| psi[r] * psi[c].conj() / norm_sqr);
        Self::new(mat)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mat = linalg::identity(dim).unscale(dim as f64);
        Self {
            op: Hermitian::new(mat).expect("identity is Hermitian"),
        }
    }

    /// Wraps a matrix already known to be a density matrix by construction
    /// (convex combinations and unitary conjugations of validated states).
    /// Symmetrizes but skips the spectral check.
    pub(crate) fn from_trusted(m: CMatrix) -> Self {
        let op = Hermitian::new(m).expect("trusted density matrix must be Hermitian");
        debug_assert!((linalg::trace(op.matrix()).re - 1.0).abs() < 1e-9);
        Self { op }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn as_hermitian(&self) -> &Hermitian {
        &self.op
    }

    pub fn into_matrix(self) -> CMatrix {
        self.op.into_matrix()
    }
}

/// Thermal state `e^{-βH₀} / Tr e^{-βH₀}`.
///
/// The spectrum is shifted by its minimum before exponentiating, so large
/// `β‖H₀‖` underflows harmlessly instead of overflowing; `β = 0` yields the
/// maximally mixed state.
pub fn gibbs_state(h0: &Hermitian, beta: f64) -> Result<DensityMatrix> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "inverse temperature must be finite and non-negative, got {beta}"
        )));
    }
    let eig = h0.eig()?;
    let e_min = eig.eigenvalues()[0];
    let z: f64 = eig
        .eigenvalues()
        .iter()
        .map(|e| (-beta * (e - e_min)).exp())
        .sum();
    let mat = eig.apply(|e| C64::new((-beta * (e - e_min)).exp() / z, 0.0));
    Ok(DensityMatrix::from_trusted(mat))
}

/// Adjusted equilibrium `e^{-β(H₀+V̄)} / Tr e^{-β(H₀+V̄)}` — the stationary
/// reference of the mean dynamics. Shares the [`gibbs_state`] code path.
pub fn adjusted_equilibrium(h0: &Hermitian, vbar: &Hermitian, beta: f64) -> Result<DensityMatrix> {
    gibbs_state(&h0.add(vbar)?, beta)
}

/// `⟨H⟩ = Tr(ρH)`, asserted real.
pub fn energy(rho: &DensityMatrix, h: &Hermitian) -> Result<f64> {
    if rho.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: h.dim(),
            context: "energy",
        });
    }
    let tr = linalg::trace(&(rho.matrix() * h.matrix()));
    let scale = 1.0 + rho.matrix().norm() * h.norm();
    assert!(
        tr.im.abs() <= 1e-12 * scale,
        "energy acquired an imaginary part {:.3e}",
        tr.im
    );
    Ok(tr.re)
}

/// `S(ρ) = -Tr ρ ln ρ`, in nats.
///
/// Spectrum eigenvalues are clipped to `[0, 1]` with the `0·ln 0 = 0`
/// convention; eigenvalues below [`ENTROPY_NEGATIVITY_LIMIT`] indicate a bug
/// upstream and panic rather than being clipped silently.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    let eig = rho.as_hermitian().eig()?;
    let mut s = 0.0;
    for &p in eig.eigenvalues() {
        assert!(
            p >= ENTROPY_NEGATIVITY_LIMIT,
            "density matrix eigenvalue {p:.3e} is beyond the rounding tolerance"
        );
        let p = p.clamp(0.0, 1.0);
        if p > 0.0 {
            s -= p * p.ln();
        }
    }
    Ok(s.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    use crate::linalg::{
        expm_hermitian, identity, pauli_z, random_density, random_hermitian, random_unitary, trace,
    };

    #[test]
    fn two_level_gibbs_populations() {
        // H₀ = diag(0, 1), β = 1: ground weight 1/(1+e⁻¹).
        let h = Hermitian::from_real_diagonal(&[0.0, 1.0]);
        let rho = gibbs_state(&h, 1.0).unwrap();
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert_relative_eq!(rho.matrix()[(0, 0)].re, p0, max_relative = 1e-14);
        assert_relative_eq!(rho.matrix()[(1, 1)].re, 1.0 - p0, max_relative = 1e-14);
        assert!(rho.matrix()[(0, 1)].norm() < 1e-15);
        assert_relative_eq!(p0, 0.731059, max_relative = 1e-6);
    }

    #[test]
    fn two_level_energy_and_entropy() {
        let h = Hermitian::from_real_diagonal(&[0.0, 1.0]);
        let rho = gibbs_state(&h, 1.0).unwrap();

        let p1 = (-1.0f64).exp() / (1.0 + (-1.0f64).exp());
        assert_relative_eq!(energy(&rho, &h).unwrap(), p1, max_relative = 1e-13);
        assert_relative_eq!(p1, 0.268941, max_relative = 1e-5);

        // Independent scalar oracle S = ln Z + β⟨E⟩ for the same spectrum.
        let z = 1.0 + (-1.0f64).exp();
        let oracle = z.ln() + p1;
        assert_relative_eq!(
            von_neumann_entropy(&rho).unwrap(),
            oracle,
            max_relative = 1e-12
        );
        // Same number from the binary-entropy route.
        let p0 = 1.0 - p1;
        let binary = -(p0 * p0.ln() + p1 * p1.ln());
        assert_relative_eq!(oracle, binary, max_relative = 1e-13);
    }

    #[test]
    fn infinite_temperature_is_maximally_mixed() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let h = random_hermitian(5, &mut rng);
        let rho = gibbs_state(&h, 0.0).unwrap();
        let target = identity(5).unscale(5.0);
        assert!((rho.matrix() - target).norm() < 1e-13);
    }

    #[test]
    fn low_temperature_projects_onto_ground_state() {
        let h = Hermitian::from_real_diagonal(&[0.0, 1.0]);
        let rho = gibbs_state(&h, 50.0).unwrap();
        // Excited admixture e⁻⁵⁰ ≈ 2e-22.
        assert!(rho.matrix()[(1, 1)].re <= 1e-20);
        assert_relative_eq!(rho.matrix()[(0, 0)].re, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn extreme_beta_shift_prevents_overflow() {
        let h = Hermitian::from_real_diagonal(&[-50.0, 0.0, 45.0]);
        let rho = gibbs_state(&h, 100.0).unwrap();
        assert!(rho.matrix().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_relative_eq!(trace(rho.matrix()).re, 1.0, max_relative = 1e-13);
        assert_relative_eq!(rho.matrix()[(0, 0)].re, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn negative_beta_is_rejected() {
        let h = pauli_z();
        assert!(matches!(
            gibbs_state(&h, -0.1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn adjusted_state_with_zero_mean_equals_gibbs() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h = random_hermitian(4, &mut rng);
        let zero = Hermitian::zero(4);
        let a = adjusted_equilibrium(&h, &zero, 1.3).unwrap();
        let b = gibbs_state(&h, 1.3).unwrap();
        assert_eq!(a.matrix(), b.matrix(), "identical code path must agree exactly");
    }

    #[test]
    fn scalar_mean_shift_is_a_gauge_transformation() {
        // V̄ = cI shifts all levels equally and cancels in the normalization.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let h = random_hermitian(4, &mut rng);
        let shift = Hermitian::from_real_diagonal(&[0.7; 4]);
        let a = adjusted_equilibrium(&h, &shift, 2.0).unwrap();
        let b = gibbs_state(&h, 2.0).unwrap();
        assert!((a.matrix() - b.matrix()).norm() < 1e-12);
    }

    #[test]
    fn adjusted_state_is_stationary_under_mean_evolution() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let h0 = random_hermitian(4, &mut rng);
        let vbar = random_hermitian(4, &mut rng);
        let hbar = h0.add(&vbar).unwrap();
        let sigma = adjusted_equilibrium(&h0, &vbar, 0.8).unwrap();
        for t in [0.3, 2.0, 10.0 / hbar.norm()] {
            let u = expm_hermitian(&hbar, -Complex64::i() * t).unwrap();
            let evolved = crate::linalg::unitary_conjugate(&u, sigma.matrix());
            assert!((evolved - sigma.matrix()).norm() <= 1e-10);
        }
    }

    #[test]
    fn entropy_is_unitarily_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let rho = DensityMatrix::new(random_density(5, &mut rng)).unwrap();
        let u = random_unitary(5, &mut rng);
        let rotated =
            DensityMatrix::new(crate::linalg::unitary_conjugate(&u, rho.matrix())).unwrap();
        assert_relative_eq!(
            von_neumann_entropy(&rho).unwrap(),
            von_neumann_entropy(&rotated).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn pure_state_has_zero_entropy() {
        let psi = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        assert!(von_neumann_entropy(&rho).unwrap() < 1e-12);
        assert_relative_eq!(trace(rho.matrix()).re, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn maximally_mixed_entropy_is_log_dim() {
        let rho = DensityMatrix::maximally_mixed(6);
        assert_relative_eq!(
            von_neumann_entropy(&rho).unwrap(),
            (6.0f64).ln(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn invalid_states_are_rejected() {
        // Wrong trace.
        let m = identity(2);
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::InvalidState(_))
        ));
        // Negative eigenvalue well beyond tolerance.
        let m = Hermitian::from_real_diagonal(&[1.5, -0.5]).into_matrix();
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clipped_in_entropy() {
        let eps = 5e-13; // inside ctor tolerance, negative
        let m = Hermitian::from_real_diagonal(&[1.0 + eps, -eps]).into_matrix();
        let rho = DensityMatrix::new(m).unwrap();
        let s = von_neumann_entropy(&rho).unwrap();
        assert!(s.is_finite() && s >= 0.0 && s < 1e-11);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn prop_gibbs_is_valid_density(seed in 0u64..1u64 << 48, dim in 2usize..7,
                                       beta in 0.0f64..100.0, scale in 0.1f64..50.0) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let h = random_hermitian(dim, &mut rng).scale(scale);
            let rho = gibbs_state(&h, beta).unwrap();
            prop_assert!((trace(rho.matrix()).re - 1.0).abs() < 1e-12);
            let eig = rho.as_hermitian().eig().unwrap();
            prop_assert!(eig.eigenvalues()[0] >= -1e-12);
            prop_assert!(rho.matrix().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
            let s = von_neumann_entropy(&rho).unwrap();
            prop_assert!(s >= 0.0 && s <= (dim as f64).ln() + 1e-12);
        }
    }
}
