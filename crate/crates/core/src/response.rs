//! Linear response, two-time correlations, and fluctuation–dissipation
//! diagnostics.
//!
//! The probe couples as `H_ω(t) → H_ω(t) − h_B(t)·B`, and the response is
//! measured the honest way: a central finite difference of the fully
//! propagated perturbed ensemble, never the first-order formula that is
//! itself under test. Correlations live in the mean-Hamiltonian eigenbasis
//! where Heisenberg evolution — including the imaginary-time continuation
//! behind the KMS identity — is exact.
//!
//! Conventions pinned here and used everywhere downstream:
//!
//! * `C⁻ = ⟨[A(t),B(t')]⟩` and `C⁺ = ⟨{A(t),B(t')}⟩` — full commutator and
//!   anticommutator, no ½;
//! * `θ(0) = 1`;
//! * spectral lines of `C_AB(t) = Σ p_j Ã_jk B̃_kj e^{it(E_j−E_k)}` are
//!   indexed at `λ = E_k − E_j`, the labeling under which the per-line ratio
//!   identities `antisym/plain = 1 − e^{−βλ}` and `response/sym = tanh(βλ/2)`
//!   hold exactly;
//! * the windowed transform is `(1/√2π)∫₀^T e^{−iλt} e^{−γt} g(t) dt`, so a
//!   line labeled `λ` produces its finite-γ peak at evaluation frequency
//!   `−λ`.

use rayon::prelude::*;

use crate::equilibrium::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{commutator, trace, CMatrix, Hermitian, SpectralDecomposition, C64};
use crate::mean_dynamics::MeanEvolution;
use crate::model::SystemSpec;
use crate::propagator::{evolve_unitary, TimeGrid};

/// Degenerate Bohr frequencies closer than this are merged into one line.
const LINE_MERGE_TOL: f64 = 1e-9;

/// Heaviside step with `θ(0) = 1`.
pub fn theta(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Time profile of the probe field `h_B(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BathProfile {
    /// Weight `ε` deposited on the single grid step starting at `t'`
    /// (value `ε/dt` on that step) — the discrete delta kick.
    Impulse { t_prime: f64, epsilon: f64 },
    /// `ε` for `t ≥ t'`.
    Step { t_prime: f64, epsilon: f64 },
    Zero,
}

impl BathProfile {
    pub fn epsilon(&self) -> f64 {
        match self {
            Self::Impulse { epsilon, .. } | Self::Step { epsilon, .. } => *epsilon,
            Self::Zero => 0.0,
        }
    }

    pub fn t_prime(&self) -> Option<f64> {
        match self {
            Self::Impulse { t_prime, .. } | Self::Step { t_prime, .. } => Some(*t_prime),
            Self::Zero => None,
        }
    }
}

/// A weak probe: coupling operator plus drive profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BathCoupling {
    pub operator: Hermitian,
    pub profile: BathProfile,
}

/// Snaps `t'` to the nearest grid point; the snap distance must be strictly
/// below `dt/2` and the result must lie on the grid.
pub fn snap_to_grid(grid: &TimeGrid, t_prime: f64) -> Result<usize> {
    let dt = grid.dt();
    if !t_prime.is_finite() || t_prime < -0.5 * dt {
        return Err(Error::InvalidParameter(format!(
            "probe time must be ≥ 0, got {t_prime}"
        )));
    }
    let k = (t_prime / dt).round();
    let dist = (t_prime - k * dt).abs();
    if dist >= 0.5 * dt * (1.0 - 1e-12) {
        return Err(Error::GridMisaligned(format!(
            "probe time {t_prime} is {dist:.3e} from the nearest grid point; ambiguous at dt = {dt}"
        )));
    }
    let k = k as usize;
    if k > grid.n_steps() {
        return Err(Error::GridMisaligned(format!(
            "probe time {t_prime} lies beyond the horizon {}",
            grid.horizon()
        )));
    }
    Ok(k)
}

impl BathCoupling {
    pub fn validate(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.operator.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: self.operator.dim(),
                right: dim,
                context: "BathCoupling",
            });
        }
        if !self.profile.epsilon().is_finite() {
            return Err(Error::InvalidParameter("non-finite probe strength".into()));
        }
        if let Some(tp) = self.profile.t_prime() {
            snap_to_grid(grid, tp)?;
        }
        Ok(())
    }

    /// `h_B(t)` as sampled by the midpoint propagator. Impulse and step edges
    /// sit on the snapped grid point, so step midpoints are never ambiguous.
    pub fn strength_at(&self, t: f64, grid: &TimeGrid) -> f64 {
        match self.profile {
            BathProfile::Zero => 0.0,
            BathProfile::Impulse { t_prime, epsilon } => {
                let dt = grid.dt();
                let start = snap_to_grid(grid, t_prime).expect("validated profile") as f64 * dt;
                if t >= start && t < start + dt {
                    epsilon / dt
                } else {
                    0.0
                }
            }
            BathProfile::Step { t_prime, epsilon } => {
                let dt = grid.dt();
                let start = snap_to_grid(grid, t_prime).expect("validated profile") as f64 * dt;
                if t >= start {
                    epsilon
                } else {
                    0.0
                }
            }
        }
    }
}

/// `⟨A(t_k)⟩` over the ensemble, each configuration propagated under
/// `H_ω(t) − sign·h_B(t)·B`. Traces are kept complex; for Hermitian `A` the
/// imaginary parts are a roundoff diagnostic. The reduction is ordered by
/// configuration index, so the result is thread-count independent.
pub fn expectation_series(
    spec: &SystemSpec,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    a: &Hermitian,
    coupling: Option<(&BathCoupling, f64)>,
    n_configs: usize,
    master_seed: u64,
) -> Result<Vec<C64>> {
    if rho0.dim() != spec.dim() || a.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            left: rho0.dim().max(a.dim()),
            right: spec.dim(),
            context: "expectation_series",
        });
    }
    if let Some((c, _)) = coupling {
        c.validate(grid, spec.dim())?;
    }
    let configs = spec.sample_configurations(n_configs, master_seed)?;
    let per_config: Vec<Vec<C64>> = configs
        .par_iter()
        .map(|config| -> Result<Vec<C64>> {
            config.trajectory.check_grid_alignment(grid)?;
            let traj = evolve_unitary(grid, |t| match coupling {
                None => spec.hamiltonian_at(config, t),
                Some((c, sign)) => {
                    let h = spec.hamiltonian_at(config, t);
                    let drive = sign * c.strength_at(t, grid);
                    if drive == 0.0 {
                        h
                    } else {
                        h.sub(&c.operator.scale(drive))
                            .expect("validated coupling dimension")
                    }
                }
            })?;
            Ok((0..grid.n_points())
                .map(|k| {
                    trace(&(traj.state_at(rho0, k).matrix() * a.matrix())).scale(config.weight)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut total = vec![C64::new(0.0, 0.0); grid.n_points()];
    for series in per_config {
        for (acc, v) in total.iter_mut().zip(series) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Finite-difference linear response to an impulse at `t'`.
#[derive(Debug, Clone)]
pub struct ResponseSeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub t_prime_index: usize,
}

/// `R_AB(t_k, t') ≈ [⟨A⟩_{+ε} − ⟨A⟩_{−ε}]/(2ε)` with an impulse of integrated
/// weight `±ε` on the grid step at `t'`. Both branches reuse the same
/// configurations (common random numbers), so the difference is noise-free
/// before the kick.
pub fn response_function(
    spec: &SystemSpec,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    a: &Hermitian,
    b: &Hermitian,
    t_prime: f64,
    epsilon: f64,
    n_configs: usize,
    master_seed: u64,
) -> Result<ResponseSeries> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "probe strength must be positive, got {epsilon}"
        )));
    }
    let t_prime_index = snap_to_grid(grid, t_prime)?;
    let coupling = BathCoupling {
        operator: b.clone(),
        profile: BathProfile::Impulse { t_prime, epsilon },
    };
    let plus = expectation_series(spec, rho0, grid, a, Some((&coupling, 1.0)), n_configs, master_seed)?;
    let minus =
        expectation_series(spec, rho0, grid, a, Some((&coupling, -1.0)), n_configs, master_seed)?;
    let values = plus
        .into_iter()
        .zip(minus)
        .map(|(p, m)| (p - m).unscale(2.0 * epsilon))
        .collect();
    Ok(ResponseSeries {
        times: grid.times().collect(),
        values,
        t_prime_index,
    })
}

/// Exact two-time correlations of mean-Heisenberg operators in the adjusted
/// equilibrium state.
///
/// Two independent computational routes coexist deliberately: full matrix
/// products (`e^{itH̄}` built once per time argument) and per-pair eigenbasis
/// double sums that accept complex time. Identities verified between the two
/// routes are then not self-fulfilling.
pub struct CorrelationEngine {
    eig: SpectralDecomposition,
    populations: Vec<f64>,
    sigma: CMatrix,
    a: Hermitian,
    b: Hermitian,
    a_tilde: CMatrix,
    b_tilde: CMatrix,
}

impl CorrelationEngine {
    pub fn new(h_mean: &Hermitian, beta: f64, a: &Hermitian, b: &Hermitian) -> Result<Self> {
        if a.dim() != h_mean.dim() || b.dim() != h_mean.dim() {
            return Err(Error::DimensionMismatch {
                left: a.dim().max(b.dim()),
                right: h_mean.dim(),
                context: "CorrelationEngine",
            });
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "inverse temperature must be ≥ 0, got {beta}"
            )));
        }
        let eig = h_mean.eig()?;
        let e_min = eig.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        let boltzmann: Vec<f64> = eig
            .eigenvalues()
            .iter()
            .map(|e| (-beta * (e - e_min)).exp())
            .collect();
        let z: f64 = boltzmann.iter().sum();
        let populations: Vec<f64> = boltzmann.into_iter().map(|w| w / z).collect();
        let u = eig.eigenvectors();
        let dim = h_mean.dim();
        let mut sigma = CMatrix::zeros(dim, dim);
        for (j, &p) in populations.iter().enumerate() {
            sigma += (u.column(j) * u.column(j).adjoint()).scale(p);
        }
        let a_tilde = u.adjoint() * a.matrix() * u;
        let b_tilde = u.adjoint() * b.matrix() * u;
        Ok(Self {
            eig,
            populations,
            sigma,
            a: a.clone(),
            b: b.clone(),
            a_tilde,
            b_tilde,
        })
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.eig.eigenvalues()
    }

    /// `e^{itH̄} X e^{−itH̄}` by explicit matrix products.
    fn heisenberg(&self, x: &Hermitian, t: f64) -> CMatrix {
        let u = self.eig.apply(|e| (C64::new(0.0, t) * e).exp());
        &u * x.matrix() * u.adjoint()
    }

    /// `C_AB(t,t') = Tr(σ'_β A(t) B(t'))` — matrix route.
    pub fn correlation(&self, t: f64, t_prime: f64) -> C64 {
        trace(&(&self.sigma * self.heisenberg(&self.a, t) * self.heisenberg(&self.b, t_prime)))
    }

    /// `C_BA(t',t) = Tr(σ'_β B(t') A(t))` — matrix route.
    pub fn correlation_swapped(&self, t: f64, t_prime: f64) -> C64 {
        trace(&(&self.sigma * self.heisenberg(&self.b, t_prime) * self.heisenberg(&self.a, t)))
    }

    /// `C⁻ = ⟨[A(t),B(t')]⟩`.
    pub fn antisym(&self, t: f64, t_prime: f64) -> C64 {
        self.correlation(t, t_prime) - self.correlation_swapped(t, t_prime)
    }

    /// `C⁺ = ⟨{A(t),B(t')}⟩`.
    pub fn sym(&self, t: f64, t_prime: f64) -> C64 {
        self.correlation(t, t_prime) + self.correlation_swapped(t, t_prime)
    }

    /// `C_AB(z) = Σ_{jk} p_j Ã_jk B̃_kj e^{iz(E_j−E_k)}` — eigenbasis double
    /// sum at complex time.
    pub fn sum_ab(&self, z: C64) -> C64 {
        self.double_sum(&self.a_tilde, &self.b_tilde, z)
    }

    /// `C_BA(z)`, the operators in swapped order.
    pub fn sum_ba(&self, z: C64) -> C64 {
        self.double_sum(&self.b_tilde, &self.a_tilde, z)
    }

    fn double_sum(&self, first: &CMatrix, second: &CMatrix, z: C64) -> C64 {
        let e = self.eig.eigenvalues();
        let dim = e.len();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..dim {
            for k in 0..dim {
                let phase = (C64::i() * z * (e[j] - e[k])).exp();
                acc += first[(j, k)] * second[(k, j)] * phase * self.populations[j];
            }
        }
        acc
    }
}

/// One side of the KMS comparison `C_AB(t) = C_BA(−t−iβ)`.
#[derive(Debug, Clone, Copy)]
pub struct KmsReport {
    pub t: f64,
    pub beta: f64,
    pub lhs: C64,
    pub rhs: C64,
    pub abs_error: f64,
    /// `‖A‖_F·‖B‖_F`, floored at 1 — the natural magnitude of both sides.
    pub scale: f64,
}

/// Verifies the KMS identity at one time: the left side through matrix
/// products, the right side through the eigenbasis double sum continued to
/// `z = −t − iβ` exactly as written, with no algebraic cancellation between
/// the two routes.
pub fn kms_check(
    a: &Hermitian,
    b: &Hermitian,
    h_mean: &Hermitian,
    beta: f64,
    t: f64,
) -> Result<KmsReport> {
    let engine = CorrelationEngine::new(h_mean, beta, a, b)?;
    let lhs = engine.correlation(t, 0.0);
    let rhs = engine.sum_ba(C64::new(-t, -beta));
    Ok(KmsReport {
        t,
        beta,
        lhs,
        rhs,
        abs_error: (lhs - rhs).norm(),
        scale: (a.norm() * b.norm()).max(1.0),
    })
}

/// The history correction to the Kubo formula:
/// `Δ_AB(t_k,t') = ½·Tr[(∫₀^{t'} e^{−i(t_k−t')L}[B, e^{−i(t'−s)L}C(s)] ds)·A]`
/// with trapezoid quadrature in `s` on the grid points and
/// `e^{−iτL}X = e^{−iτH̄} X e^{iτH̄}`.
///
/// Returns one value per grid point; entries before `t'` are zero (the
/// response they would enter is causally dead there). `t' = 0` yields an
/// identically zero series — the integration range is empty, no quadrature
/// involved.
pub fn delta_series(
    evo: &MeanEvolution,
    a: &Hermitian,
    b: &Hermitian,
    t_prime_index: usize,
) -> Result<Vec<C64>> {
    let grid = *evo.grid();
    let n_points = grid.n_points();
    if t_prime_index >= n_points {
        return Err(Error::InvalidParameter(format!(
            "probe index {t_prime_index} beyond grid ({n_points} points)"
        )));
    }
    if a.dim() != evo.dim() || b.dim() != evo.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim().max(b.dim()),
            right: evo.dim(),
            context: "delta_series",
        });
    }
    let zero = C64::new(0.0, 0.0);
    if t_prime_index == 0 {
        return Ok(vec![zero; n_points]);
    }

    let eig = evo.mean_hamiltonian().eig()?;
    let dt = grid.dt();
    let t_prime = grid.time(t_prime_index);
    let conjugate = |tau: f64, x: &CMatrix| -> CMatrix {
        let u = eig.apply(|e| (C64::new(0.0, -tau) * e).exp());
        &u * x * u.adjoint()
    };

    // Inner integral over the drive history [0, t']; independent of t.
    let dim = evo.dim();
    let mut inner = CMatrix::zeros(dim, dim);
    for s_idx in 0..=t_prime_index {
        let weight = if s_idx == 0 || s_idx == t_prime_index {
            0.5
        } else {
            1.0
        };
        let tau = t_prime - grid.time(s_idx);
        inner += conjugate(tau, evo.deviation_term(s_idx)).scale(weight * dt);
    }
    let kicked = commutator(b.matrix(), &inner)?;

    let mut out = vec![zero; n_points];
    for (k, slot) in out.iter_mut().enumerate().skip(t_prime_index) {
        let propagated = conjugate(grid.time(k) - t_prime, &kicked);
        *slot = trace(&(&propagated * a.matrix())).scale(0.5);
    }
    Ok(out)
}

/// The full Kubo comparison along the grid at fixed probe time.
#[derive(Debug, Clone)]
pub struct KuboSeries {
    pub times: Vec<f64>,
    /// Finite-difference response (the measured side).
    pub lhs: Vec<C64>,
    /// `⟨[A(t),B(t')]⟩`.
    pub c_minus: Vec<C64>,
    pub delta: Vec<C64>,
    /// `2i·θ(t−t')·[C⁻ + Δ]` — the claimed form, assembled verbatim.
    pub rhs: Vec<C64>,
    pub t_prime_index: usize,
    /// `max_k |lhs − rhs|` over `t ≥ t'`.
    pub abs_error: f64,
    /// Real least-squares constant `c` minimizing `‖lhs − c·rhs‖` over
    /// `t ≥ t'`: an honest report of the proportionality actually observed
    /// between the measured response and the claimed form.
    pub fitted_constant: f64,
}

/// Measures the response by finite differences and assembles
/// `2iθ(t−t')[C⁻ + Δ]` next to it. The initial state is pinned to the
/// adjusted equilibrium, as the formula requires. No rescaling is applied to
/// either side; `fitted_constant` reports what the data say.
pub fn kubo_series(
    spec: &SystemSpec,
    grid: &TimeGrid,
    a: &Hermitian,
    b: &Hermitian,
    t_prime: f64,
    epsilon: f64,
    n_configs: usize,
    master_seed: u64,
) -> Result<KuboSeries> {
    let sigma_prime = spec.adjusted_state()?;
    let response = response_function(
        spec,
        &sigma_prime,
        grid,
        a,
        b,
        t_prime,
        epsilon,
        n_configs,
        master_seed,
    )?;
    let tp = response.t_prime_index;
    let t_prime_snapped = grid.time(tp);

    let engine = CorrelationEngine::new(&spec.mean_hamiltonian(), spec.beta(), a, b)?;
    let c_minus: Vec<C64> = grid
        .times()
        .map(|t| engine.antisym(t, t_prime_snapped))
        .collect();

    let evo = crate::mean_dynamics::evolve_mean(spec, &sigma_prime, grid, n_configs, master_seed)?;
    let delta = delta_series(&evo, a, b, tp)?;

    let two_i = C64::new(0.0, 2.0);
    let rhs: Vec<C64> = grid
        .times()
        .zip(c_minus.iter().zip(&delta))
        .map(|(t, (cm, dl))| two_i * theta(t - t_prime_snapped) * (cm + dl))
        .collect();

    // Real least squares over t ≥ t': c = Σ Re(conj(rhs)·lhs) / Σ |rhs|².
    let mut abs_error = 0.0f64;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for k in tp..grid.n_points() {
        let l = response.values[k];
        let r = rhs[k];
        abs_error = abs_error.max((l - r).norm());
        num += (r.conj() * l).re;
        den += r.norm_sqr();
    }
    let fitted_constant = if den > 0.0 { num / den } else { 0.0 };

    Ok(KuboSeries {
        times: response.times,
        lhs: response.values,
        c_minus,
        delta,
        rhs,
        t_prime_index: tp,
        abs_error,
        fitted_constant,
    })
}

/// Point report for one `(t, t')` pair.
#[derive(Debug, Clone, Copy)]
pub struct KuboReport {
    pub t: f64,
    pub t_prime: f64,
    pub lhs: C64,
    pub rhs: C64,
    pub abs_error: f64,
}

pub fn kubo_check(
    spec: &SystemSpec,
    grid: &TimeGrid,
    a: &Hermitian,
    b: &Hermitian,
    t: f64,
    t_prime: f64,
    epsilon: f64,
    n_configs: usize,
    master_seed: u64,
) -> Result<KuboReport> {
    let series = kubo_series(spec, grid, a, b, t_prime, epsilon, n_configs, master_seed)?;
    let k = grid.index_of(t)?;
    Ok(KuboReport {
        t,
        t_prime: grid.time(series.t_prime_index),
        lhs: series.lhs[k],
        rhs: series.rhs[k],
        abs_error: (series.lhs[k] - series.rhs[k]).norm(),
    })
}

/// One Bohr line of the correlation spectrum. All weights carry the √2π
/// distributional normalization; `response` is the antisymmetric weight — the
/// Fourier image of the causal response collapses onto it line by line.
#[derive(Debug, Clone, Copy)]
pub struct SpectralLine {
    pub frequency: f64,
    pub plain: C64,
    pub sym: C64,
    pub antisym: C64,
    pub response: C64,
}

/// Exact line decomposition of the two-time correlations of `A` and `B` under
/// `H̄` at inverse temperature β.
///
/// The plain, symmetric and antisymmetric weights are accumulated from
/// *separate* double sums over the `⟨A(t)B⟩` and `⟨BA(t)⟩` matrix elements —
/// the ratio identities checked downstream are then genuine identities of the
/// spectrum, not algebraic restatements of one sum.
pub fn line_spectrum(
    a: &Hermitian,
    b: &Hermitian,
    h_mean: &Hermitian,
    beta: f64,
) -> Result<Vec<SpectralLine>> {
    let engine = CorrelationEngine::new(h_mean, beta, a, b)?;
    let e = engine.eigenvalues().to_vec();
    let p = engine.populations().to_vec();
    let dim = e.len();
    let root_2pi = (2.0 * std::f64::consts::PI).sqrt();

    // (frequency, plain, antisym, sym) contributions, one per matrix-element
    // pair per sum.
    let mut contributions: Vec<(f64, C64, C64, C64)> = Vec::with_capacity(2 * dim * dim);
    let zero = C64::new(0.0, 0.0);
    // ⟨A(t)B⟩: pair (j,k) evolves as e^{it(E_j−E_k)} — line λ = E_k − E_j.
    for j in 0..dim {
        for k in 0..dim {
            let amp = engine.a_tilde[(j, k)] * engine.b_tilde[(k, j)] * p[j];
            contributions.push((e[k] - e[j], amp, amp, amp));
        }
    }
    // ⟨B(t')A(t)⟩ reflected to t' = 0, −t: pair (j,k) lands on λ = E_j − E_k,
    // entering the commutator with a minus and the anticommutator with a plus.
    for j in 0..dim {
        for k in 0..dim {
            let amp = engine.b_tilde[(j, k)] * engine.a_tilde[(k, j)] * p[j];
            contributions.push((e[j] - e[k], zero, -amp, amp));
        }
    }

    contributions.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite frequencies"));
    let mut lines: Vec<SpectralLine> = Vec::new();
    let mut bucket: Vec<(f64, C64, C64, C64)> = Vec::new();
    let flush = |bucket: &mut Vec<(f64, C64, C64, C64)>, lines: &mut Vec<SpectralLine>| {
        if bucket.is_empty() {
            return;
        }
        let freq = bucket.iter().map(|c| c.0).sum::<f64>() / bucket.len() as f64;
        let sum = |f: fn(&(f64, C64, C64, C64)) -> C64| {
            bucket.iter().map(f).sum::<C64>() * root_2pi
        };
        let antisym = sum(|c| c.2);
        let plain = sum(|c| c.1);
        let sym = sum(|c| c.3);
        // A Bohr frequency with no coupling matrix elements is not a line:
        // the amplitudes below are exact zeros (products of structural zeros),
        // not small numbers.
        if plain.norm() > 0.0 || sym.norm() > 0.0 || antisym.norm() > 0.0 {
            lines.push(SpectralLine {
                frequency: freq,
                plain,
                sym,
                antisym,
                response: antisym,
            });
        }
        bucket.clear();
    };
    for c in contributions {
        if let Some(first) = bucket.first() {
            if c.0 - first.0 > LINE_MERGE_TOL {
                flush(&mut bucket, &mut lines);
            }
        }
        bucket.push(c);
    }
    flush(&mut bucket, &mut lines);
    Ok(lines)
}

/// Per-line verification of the spectral fluctuation–dissipation identities.
#[derive(Debug, Clone, Copy)]
pub struct LineRatioReport {
    /// max over lines of |antisym − (1−e^{−βλ})·plain| / scale.
    pub max_detailed_balance_error: f64,
    /// max over λ ≠ 0 lines of |response − tanh(βλ/2)·sym| / scale.
    pub max_fdr_error: f64,
    /// |response weight| of the λ = 0 line (must vanish: tanh(0) = 0).
    pub zero_frequency_response: f64,
    pub checked_lines: usize,
    pub skipped_lines: usize,
}

/// Checks `antisym = (1−e^{−βλ})·plain` and `response = tanh(βλ/2)·sym` line
/// by line, relative to the largest weight in the spectrum. Lines whose
/// weights are all below `1e−13·scale` carry no information and are skipped.
pub fn line_ratio_report(lines: &[SpectralLine], beta: f64) -> LineRatioReport {
    let scale = lines
        .iter()
        .map(|l| l.plain.norm().max(l.sym.norm()).max(l.antisym.norm()))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut report = LineRatioReport {
        max_detailed_balance_error: 0.0,
        max_fdr_error: 0.0,
        zero_frequency_response: 0.0,
        checked_lines: 0,
        skipped_lines: 0,
    };
    for line in lines {
        let magnitude = line.plain.norm().max(line.sym.norm()).max(line.antisym.norm());
        if magnitude < 1e-13 * scale {
            report.skipped_lines += 1;
            continue;
        }
        let lam = line.frequency;
        if lam.abs() <= LINE_MERGE_TOL {
            report.zero_frequency_response =
                report.zero_frequency_response.max(line.response.norm() / scale);
            report.checked_lines += 1;
            continue;
        }
        let db = (line.antisym - line.plain.scale(1.0 - (-beta * lam).exp())).norm() / scale;
        let fdr = (line.response - line.sym.scale((0.5 * beta * lam).tanh())).norm() / scale;
        report.max_detailed_balance_error = report.max_detailed_balance_error.max(db);
        report.max_fdr_error = report.max_fdr_error.max(fdr);
        report.checked_lines += 1;
    }
    report
}

/// `(1/√2π)·∫₀^T e^{−iλt} e^{−γt} g(t) dt` by trapezoid quadrature on the
/// series' own grid.
pub fn windowed_fourier(series: &[C64], grid: &TimeGrid, gamma: f64, lambda: f64) -> Result<C64> {
    if series.len() != grid.n_points() {
        return Err(Error::SeriesMismatch(format!(
            "series has {} samples, grid has {} points",
            series.len(),
            grid.n_points()
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must be ≥ 0, got {gamma}"
        )));
    }
    let dt = grid.dt();
    let mut acc = C64::new(0.0, 0.0);
    for (k, g) in series.iter().enumerate() {
        let t = grid.time(k);
        let weight = if k == 0 || k == grid.n_steps() { 0.5 } else { 1.0 };
        acc += g * (C64::new(-gamma * t, -lambda * t)).exp().scale(weight * dt);
    }
    Ok(acc.unscale((2.0 * std::f64::consts::PI).sqrt()))
}

/// One line's windowed-transform reconstruction versus its exact weight.
#[derive(Debug, Clone, Copy)]
pub struct WindowedLineCheck {
    pub frequency: f64,
    pub expected: C64,
    pub reconstructed: C64,
    pub rel_error: f64,
}

/// Cross-checks the exact line weights against a damped finite-window
/// transform of the *time-domain* correlation, generated through the matrix
/// route so the two spectral descriptions share no arithmetic.
///
/// A line labeled `λ` appears at evaluation frequency `−λ`; integrating the
/// damped exponential over `[0, T]` and solving for the amplitude gives
/// `ŵ = 2π·γ·Ĝ_γ(−λ)/(1 − e^{−γT})`. Finite γ leaks neighboring lines into
/// each other at relative order `γ/gap`, which bounds the achievable
/// agreement; callers pick γ accordingly.
pub fn windowed_line_crosscheck(
    a: &Hermitian,
    b: &Hermitian,
    h_mean: &Hermitian,
    beta: f64,
    lines: &[SpectralLine],
    gamma: f64,
) -> Result<Vec<WindowedLineCheck>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must be > 0, got {gamma}"
        )));
    }
    let engine = CorrelationEngine::new(h_mean, beta, a, b)?;
    let horizon = 20.0 / gamma;
    let lambda_max = lines
        .iter()
        .map(|l| l.frequency.abs())
        .fold(0.0f64, f64::max)
        .max(gamma);
    // Resolve the fastest oscillation with ~60 points per period, and keep a
    // floor on the sample count so short windows stay converged.
    let dt = (0.1 / lambda_max).min(horizon / 2000.0);
    let n_steps = (horizon / dt).ceil() as usize;
    let grid = TimeGrid::new(horizon / n_steps as f64, n_steps)?;
    let series: Vec<C64> = grid.times().map(|t| engine.correlation(t, 0.0)).collect();

    let t_total = grid.horizon();
    let tail = 1.0 - (-gamma * t_total).exp();
    lines
        .iter()
        .map(|line| {
            let g_hat = windowed_fourier(&series, &grid, gamma, -line.frequency)?;
            let reconstructed = g_hat
                .scale(2.0 * std::f64::consts::PI * gamma)
                .unscale(tail);
            let expected = line.plain;
            let rel_error = (reconstructed - expected).norm() / expected.norm().max(1e-300);
            Ok(WindowedLineCheck {
                frequency: line.frequency,
                expected,
                reconstructed,
                rel_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    use crate::linalg::{
        pauli_x, pauli_y, pauli_z, random_hermitian, random_hermitian_with_gaps,
    };
    use crate::model::{
        ConfigurationEnsemble, PotentialTrajectory, SystemSpec, WeightedTrajectory,
    };

    fn qubit_spec(lambda: f64, beta: f64) -> SystemSpec {
        let ens = ConfigurationEnsemble::finite(
            vec![
                WeightedTrajectory {
                    weight: 0.5,
                    trajectory: PotentialTrajectory::Coupling {
                        strength: lambda,
                        operator: pauli_x(),
                    },
                },
                WeightedTrajectory {
                    weight: 0.5,
                    trajectory: PotentialTrajectory::Coupling {
                        strength: -lambda,
                        operator: pauli_x(),
                    },
                },
            ],
            None,
        )
        .unwrap();
        SystemSpec::new(pauli_z(), ens, beta).unwrap()
    }

    fn deterministic_spec(beta: f64) -> SystemSpec {
        SystemSpec::new(
            pauli_z(),
            ConfigurationEnsemble::deterministic(Hermitian::zero(2)),
            beta,
        )
        .unwrap()
    }

    #[test]
    fn identity_operators_give_trivial_correlations() {
        let engine =
            CorrelationEngine::new(&pauli_z(), 1.3, &Hermitian::identity(2), &Hermitian::identity(2))
                .unwrap();
        for (t, tp) in [(0.0, 0.0), (1.7, 0.4), (-2.0, 1.1)] {
            assert!((engine.correlation(t, tp) - C64::new(1.0, 0.0)).norm() < 1e-14);
            assert!(engine.antisym(t, tp).norm() < 1e-14);
            assert!((engine.sym(t, tp) - C64::new(2.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn correlations_are_time_translation_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let h = random_hermitian(4, &mut rng);
        let a = random_hermitian(4, &mut rng);
        let b = random_hermitian(4, &mut rng);
        let engine = CorrelationEngine::new(&h, 0.9, &a, &b).unwrap();
        for (t, tp) in [(1.3, 0.4), (2.0, 2.0), (0.3, 1.9)] {
            let shifted = engine.correlation(t - tp, 0.0);
            assert!((engine.correlation(t, tp) - shifted).norm() < 1e-12);
            let anti_shifted = engine.antisym(t - tp, 0.0);
            assert!((engine.antisym(t, tp) - anti_shifted).norm() < 1e-12);
        }
    }

    #[test]
    fn equal_time_autocorrelation_is_a_positive_moment() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let h = random_hermitian(3, &mut rng);
        let a = random_hermitian(3, &mut rng);
        let engine = CorrelationEngine::new(&h, 2.0, &a, &a).unwrap();
        let c = engine.correlation(0.7, 0.7);
        assert!(c.im.abs() < 1e-13);
        assert!(c.re >= 0.0);
        // It is Tr(σ' A²), recomputed from scratch.
        let sigma = crate::equilibrium::gibbs_state(&h, 2.0).unwrap();
        let direct = trace(&(sigma.matrix() * a.matrix() * a.matrix()));
        assert!((c - direct).norm() < 1e-12);
    }

    #[test]
    fn matrix_route_and_double_sum_agree_at_real_time() {
        let mut rng = ChaCha12Rng::seed_from_u64(79);
        for _ in 0..20 {
            let h = random_hermitian(5, &mut rng);
            let a = random_hermitian(5, &mut rng);
            let b = random_hermitian(5, &mut rng);
            let engine = CorrelationEngine::new(&h, 1.1, &a, &b).unwrap();
            let t = 4.0 * rng.random::<f64>() - 2.0;
            let gap = (engine.correlation(t, 0.0) - engine.sum_ab(C64::new(t, 0.0))).norm();
            assert!(gap < 1e-11, "routes disagree by {gap:.3e}");
        }
    }

    #[test]
    fn kms_identity_holds_across_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(83);
        for trial in 0..25 {
            let dim = 2 + trial % 7;
            let h = random_hermitian(dim, &mut rng);
            let a = random_hermitian(dim, &mut rng);
            let b = random_hermitian(dim, &mut rng);
            let beta = 0.1 + 9.9 * rng.random::<f64>();
            let t = 10.0 * rng.random::<f64>() - 5.0;
            let report = kms_check(&a, &b, &h, beta, t).unwrap();
            assert!(
                report.abs_error <= 1e-10 * report.scale,
                "KMS violated: {:.3e} at β={beta:.2}, t={t:.2}, d={dim}",
                report.abs_error
            );
        }
    }

    #[test]
    fn kms_at_zero_time_equal_operators_is_cyclicity() {
        let mut rng = ChaCha12Rng::seed_from_u64(89);
        let h = random_hermitian(4, &mut rng);
        let a = random_hermitian(4, &mut rng);
        let report = kms_check(&a, &a, &h, 3.0, 0.0).unwrap();
        assert!(report.abs_error < 1e-12 * report.scale);
        assert!(report.lhs.im.abs() < 1e-12);
    }

    #[test]
    fn response_to_identity_observable_vanishes() {
        let spec = qubit_spec(0.5, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.02, 50).unwrap();
        let r = response_function(
            &spec,
            &rho0,
            &grid,
            &Hermitian::identity(2),
            &pauli_x(),
            0.2,
            1e-3,
            0,
            0,
        )
        .unwrap();
        // ⟨1⟩ ≡ 1 on both branches: the difference is exactly zero.
        assert!(r.values.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn response_is_causal_and_noise_free_before_the_kick() {
        let spec = qubit_spec(0.4, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 100).unwrap();
        let r =
            response_function(&spec, &rho0, &grid, &pauli_x(), &pauli_x(), 0.5, 1e-3, 0, 0).unwrap();
        // Identical propagations before the impulse: bitwise-cancelled.
        for k in 0..r.t_prime_index {
            assert!(r.values[k].norm() < 1e-14, "acausal response at k={k}");
        }
        let after: f64 = r.values[r.t_prime_index..]
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(after > 0.1, "kick produced no response");
    }

    #[test]
    fn commuting_probe_on_diagonal_state_gives_no_response() {
        // B ∝ H̄ with ρ0 diagonal in the same basis: the kick commutes with
        // everything it acts on.
        let spec = deterministic_spec(1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.02, 50).unwrap();
        let r =
            response_function(&spec, &rho0, &grid, &pauli_x(), &pauli_z(), 0.2, 1e-3, 0, 0).unwrap();
        assert!(r.values.iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn deterministic_response_is_the_standard_kubo_commutator() {
        // No randomness: the measured response must equal i⟨[A(t),B(t')]⟩ —
        // the textbook formula. This pins the honest proportionality against
        // which the claimed 2i·[C⁻+Δ] form is later compared.
        let spec = deterministic_spec(0.8);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.002, 750).unwrap();
        let t_prime = 0.25;
        let r = response_function(&spec, &rho0, &grid, &pauli_x(), &pauli_x(), t_prime, 1e-3, 0, 0)
            .unwrap();
        let engine =
            CorrelationEngine::new(&spec.mean_hamiltonian(), spec.beta(), &pauli_x(), &pauli_x())
                .unwrap();
        let mut max_gap = 0.0f64;
        let mut max_c = 0.0f64;
        for (k, t) in grid.times().enumerate().skip(r.t_prime_index) {
            let expected = C64::i() * engine.antisym(t, t_prime);
            max_gap = max_gap.max((r.values[k] - expected).norm());
            max_c = max_c.max(expected.norm());
        }
        assert!(
            max_gap < 6e-3 * max_c.max(1.0),
            "finite-difference response deviates from i·C⁻ by {max_gap:.3e}"
        );
    }

    #[test]
    fn response_halves_of_epsilon_agree_to_second_order() {
        let spec = deterministic_spec(1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 150).unwrap();
        let run = |eps: f64| {
            response_function(&spec, &rho0, &grid, &pauli_y(), &pauli_x(), 0.3, eps, 0, 0)
                .unwrap()
                .values
        };
        let coarse = run(1e-2);
        let fine = run(5e-3);
        let gap: f64 = coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| (c - f).norm())
            .fold(0.0, f64::max);
        // Richardson: the ε and ε/2 estimates differ at O(ε²).
        assert!(gap < 1e-4, "ε-refinement gap {gap:.3e}");
    }

    #[test]
    fn step_drive_matches_first_order_perturbation_theory() {
        // Deterministic qubit, step drive from t' = 0: first-order theory
        // gives δ⟨A(t)⟩ = i·ε·∫₀ᵗ ⟨[A(t),B(s)]⟩ ds. The quadrature below
        // shares nothing with the propagated finite difference.
        let spec = deterministic_spec(1.2);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.001, 2000).unwrap();
        let eps = 1e-3;
        let coupling = BathCoupling {
            operator: pauli_x(),
            profile: BathProfile::Step {
                t_prime: 0.0,
                epsilon: eps,
            },
        };
        let a = pauli_y();
        let perturbed =
            expectation_series(&spec, &rho0, &grid, &a, Some((&coupling, 1.0)), 0, 0).unwrap();
        let unperturbed = expectation_series(&spec, &rho0, &grid, &a, None, 0, 0).unwrap();
        let engine =
            CorrelationEngine::new(&spec.mean_hamiltonian(), spec.beta(), &a, &pauli_x()).unwrap();
        for &t in &[0.5, 1.0, 2.0] {
            let k = grid.index_of(t).unwrap();
            let measured = perturbed[k] - unperturbed[k];
            // Trapezoid quadrature of the Dyson integrand on the same grid.
            let mut integral = C64::new(0.0, 0.0);
            for s_idx in 0..=k {
                let w = if s_idx == 0 || s_idx == k { 0.5 } else { 1.0 };
                integral += engine.antisym(t, grid.time(s_idx)).scale(w * grid.dt());
            }
            let predicted = C64::i() * integral.scale(eps);
            assert!(
                (measured - predicted).norm() < 2e-5,
                "Dyson mismatch {:.3e} at t={t}",
                (measured - predicted).norm()
            );
        }
    }

    #[test]
    fn delta_vanishes_identically_when_the_probe_starts_at_zero() {
        let spec = qubit_spec(0.5, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 100).unwrap();
        let evo = crate::mean_dynamics::evolve_mean(&spec, &rho0, &grid, 0, 0).unwrap();
        let delta = delta_series(&evo, &pauli_x(), &pauli_x(), 0).unwrap();
        assert!(delta.iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn delta_vanishes_for_deterministic_ensembles() {
        let spec = deterministic_spec(1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 100).unwrap();
        let evo = crate::mean_dynamics::evolve_mean(&spec, &rho0, &grid, 0, 0).unwrap();
        let delta = delta_series(&evo, &pauli_x(), &pauli_x(), 30).unwrap();
        // C_s ≡ 0 up to roundoff: the inner integral inherits only that noise.
        assert!(delta.iter().all(|d| d.norm() < 1e-13));
    }

    #[test]
    fn delta_is_nonzero_with_history_under_randomness() {
        let spec = qubit_spec(0.5, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 150).unwrap();
        let evo = crate::mean_dynamics::evolve_mean(&spec, &rho0, &grid, 0, 0).unwrap();
        let tp = grid.index_of(0.5).unwrap();
        let delta = delta_series(&evo, &pauli_x(), &pauli_x(), tp).unwrap();
        let max = delta.iter().map(|d| d.norm()).fold(0.0f64, f64::max);
        assert!(max > 1e-4, "expected a nonzero history correction, got {max:.3e}");
        assert!(delta[..tp].iter().all(|d| d.norm() == 0.0));
    }

    /// The exact first-order decomposition of the measured response in terms
    /// of the mean-dynamics objects, derived by splitting the per-configuration
    /// impulse kernel φ_ω into its mean and fluctuation:
    ///
    /// ```text
    /// R(t,t') = i·C⁻(t,t') + 2·Δ(t,t') + M(t,t'),
    /// M(t,t') = −i ∫_{t'}^t Tr(e^{−i(t−s)L} D_s · A) ds,
    /// D_s     = E[[δH_ω(s), φ_ω(s)]],
    /// φ_ω(s)  = i·U_ω(s)U_ω†(t')[B, ρ_ω(t')]U_ω(t')U_ω†(s).
    /// ```
    ///
    /// `M` is the memory carried by the fluctuation–kick correlation; it is
    /// absent from the claimed `2i[C⁻+Δ]` form, and the i on Δ differs too.
    /// This test closes the true identity to finite-difference accuracy and
    /// confirms the claimed form misses by an O(1) margin on the same data.
    #[test]
    fn measured_response_closes_the_true_decomposition() {
        let lambda = 0.6;
        let ens = ConfigurationEnsemble::finite(
            vec![
                WeightedTrajectory {
                    weight: 0.5,
                    trajectory: PotentialTrajectory::Coupling {
                        strength: lambda,
                        operator: pauli_x(),
                    },
                },
                WeightedTrajectory {
                    weight: 0.5,
                    trajectory: PotentialTrajectory::Coupling {
                        strength: -lambda,
                        operator: pauli_x(),
                    },
                },
            ],
            None,
        )
        .unwrap();
        let spec = SystemSpec::new(
            pauli_z().scale(0.7),
            ens,
            0.8,
        )
        .unwrap();
        // A = σ_z would be blind to the σ_x kick by a σ_z-conjugation
        // symmetry of the balanced ensemble (the ± probe branches mirror onto
        // each other exactly); σ_x sees it.
        let a = pauli_x();
        let b = pauli_x();
        let grid = TimeGrid::new(0.001, 1200).unwrap();
        let t_prime = 0.3;
        let series = kubo_series(&spec, &grid, &a, &b, t_prime, 1e-3, 0, 0).unwrap();
        let tp = series.t_prime_index;

        // Memory term from per-configuration impulse kernels.
        let sigma_prime = spec.adjusted_state().unwrap();
        let configs = spec.sample_configurations(0, 0).unwrap();
        let dim = spec.dim();
        let eig = spec.mean_hamiltonian().eig().unwrap();
        let vbar = spec.ensemble().declared_mean().clone();
        let mut d_series = vec![CMatrix::zeros(dim, dim); grid.n_points()];
        for config in &configs {
            let traj =
                crate::mean_dynamics::propagate_configuration(&spec, config, &grid).unwrap();
            let u_tp = traj.at(tp).clone();
            let rho_tp = &u_tp * sigma_prime.matrix() * u_tp.adjoint();
            let kick = commutator(b.matrix(), &rho_tp).unwrap().map(|x| x * C64::i());
            for k in tp..grid.n_points() {
                let u_s = traj.at(k);
                let prop = u_s * u_tp.adjoint() * &kick * &u_tp * u_s.adjoint();
                let delta_h =
                    config.trajectory.evaluate(grid.time(k)).matrix() - vbar.matrix();
                d_series[k] += commutator(&delta_h, &prop).unwrap().scale(config.weight);
            }
        }
        let conjugate = |tau: f64, x: &CMatrix| -> CMatrix {
            let u = eig.apply(|e| (C64::new(0.0, -tau) * e).exp());
            &u * x * u.adjoint()
        };
        let memory_at = |k: usize| -> C64 {
            if k <= tp {
                return C64::new(0.0, 0.0);
            }
            let mut acc = C64::new(0.0, 0.0);
            for s in tp..=k {
                let w = if s == tp || s == k { 0.5 } else { 1.0 };
                let prop = conjugate(grid.time(k) - grid.time(s), &d_series[s]);
                acc += trace(&(&prop * a.matrix())).scale(w * grid.dt());
            }
            -C64::i() * acc
        };

        let mut max_true_gap = 0.0f64;
        let mut max_claimed_gap = 0.0f64;
        let mut max_lhs = 0.0f64;
        for k in (tp..grid.n_points()).step_by(40) {
            let truth = C64::i() * series.c_minus[k] + series.delta[k].scale(2.0) + memory_at(k);
            max_true_gap = max_true_gap.max((series.lhs[k] - truth).norm());
            max_claimed_gap = max_claimed_gap.max((series.lhs[k] - series.rhs[k]).norm());
            max_lhs = max_lhs.max(series.lhs[k].norm());
        }
        assert!(
            max_true_gap < 8e-3 * max_lhs.max(1.0),
            "true decomposition fails to close: {max_true_gap:.3e} vs response scale {max_lhs:.3e}"
        );
        assert!(
            max_claimed_gap > 20.0 * max_true_gap.max(1e-6),
            "claimed 2i[C⁻+Δ] unexpectedly close: {max_claimed_gap:.3e}"
        );
    }

    #[test]
    fn fitted_constant_is_one_half_for_deterministic_ensembles() {
        // lhs = i·C⁻ against rhs = 2i·C⁻: the least-squares proportionality
        // is ½ — reported, not corrected.
        let spec = deterministic_spec(0.8);
        let grid = TimeGrid::new(0.002, 600).unwrap();
        let series = kubo_series(&spec, &grid, &pauli_x(), &pauli_x(), 0.2, 1e-3, 0, 0).unwrap();
        assert!(
            (series.fitted_constant - 0.5).abs() < 0.02,
            "fitted constant {:.4}",
            series.fitted_constant
        );
        assert!(series.abs_error > 0.1, "claimed identity unexpectedly tight");
    }

    #[test]
    fn kubo_point_report_is_consistent_with_the_series() {
        let spec = qubit_spec(0.4, 1.0);
        let grid = TimeGrid::new(0.01, 100).unwrap();
        let report = kubo_check(&spec, &grid, &pauli_z(), &pauli_x(), 0.8, 0.3, 1e-3, 0, 0).unwrap();
        assert_relative_eq!(report.t_prime, 0.3, max_relative = 1e-12);
        assert_eq!(report.abs_error, (report.lhs - report.rhs).norm());
        // Before the kick both sides vanish.
        let early = kubo_check(&spec, &grid, &pauli_z(), &pauli_x(), 0.1, 0.3, 1e-3, 0, 0).unwrap();
        assert!(early.lhs.norm() < 1e-14);
        assert!(early.rhs.norm() == 0.0);
    }

    #[test]
    fn diagonal_operators_produce_a_single_zero_line() {
        let lines = line_spectrum(&pauli_z(), &pauli_z(), &pauli_z(), 1.0).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].frequency.abs() < 1e-15);
        let root_2pi = (2.0 * std::f64::consts::PI).sqrt();
        // Σ_j p_j (±1)² = 1 in each sum.
        assert!((lines[0].plain - C64::new(root_2pi, 0.0)).norm() < 1e-13);
        assert!(lines[0].response.norm() < 1e-13);
    }

    #[test]
    fn qubit_line_weights_match_the_hand_computation() {
        // H̄ = σ_z, A = B = σ_x, β = 1: lines at λ = ±2 with plain weights
        // √2π·p∓ where p∓ are the thermal populations of the ∓1 levels.
        let beta = 1.0;
        let lines = line_spectrum(&pauli_x(), &pauli_x(), &pauli_z(), beta).unwrap();
        assert_eq!(lines.len(), 2);
        let root_2pi = (2.0 * std::f64::consts::PI).sqrt();
        let p_ground = (beta).exp() / ((beta).exp() + (-beta).exp());
        assert_relative_eq!(p_ground, 0.8807970779778823, max_relative = 1e-12);
        let by_freq = |f: f64| {
            lines
                .iter()
                .find(|l| (l.frequency - f).abs() < 1e-9)
                .expect("line present")
        };
        assert!((by_freq(2.0).plain - C64::new(root_2pi * p_ground, 0.0)).norm() < 1e-12);
        assert!((by_freq(-2.0).plain - C64::new(root_2pi * (1.0 - p_ground), 0.0)).norm() < 1e-12);
        let report = line_ratio_report(&lines, beta);
        assert!(report.max_detailed_balance_error < 1e-12);
        assert!(report.max_fdr_error < 1e-12);
    }

    #[test]
    fn ratio_identities_hold_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        for trial in 0..12 {
            let dim = 2 + trial % 4;
            let h = random_hermitian_with_gaps(dim, 0.4, &mut rng);
            let a = random_hermitian(dim, &mut rng);
            let b = random_hermitian(dim, &mut rng);
            let beta = 0.2 + 3.0 * rng.random::<f64>();
            let lines = line_spectrum(&a, &b, &h, beta).unwrap();
            let report = line_ratio_report(&lines, beta);
            assert!(
                report.max_detailed_balance_error < 1e-10,
                "detailed balance off by {:.3e} (trial {trial})",
                report.max_detailed_balance_error
            );
            assert!(
                report.max_fdr_error < 1e-10,
                "tanh identity off by {:.3e} (trial {trial})",
                report.max_fdr_error
            );
            assert!(report.zero_frequency_response < 1e-12);
        }
    }

    #[test]
    fn degenerate_bohr_frequencies_are_merged() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let h = Hermitian::from_real_diagonal(&[0.0, 1.0, 1.0]);
        let a = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let lines = line_spectrum(&a, &b, &h, 1.0).unwrap();
        // Bohr frequencies collapse to {−1, 0, 1}.
        assert_eq!(lines.len(), 3);
        let freqs: Vec<f64> = lines.iter().map(|l| l.frequency).collect();
        for (got, want) in freqs.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let report = line_ratio_report(&lines, 1.0);
        assert!(report.max_detailed_balance_error < 1e-10);
        assert!(report.zero_frequency_response < 1e-12);
    }

    #[test]
    fn windowed_transform_reproduces_the_lorentzian() {
        // g(t) = e^{iλ₀t}: the γ-damped transform tends to the Lorentzian
        // (1/√2π)/(γ + i(λ−λ₀)); at T = 20/γ the truncation error is e^{−20}.
        let lambda0 = 1.3;
        let gamma = 0.1;
        let horizon = 20.0 / gamma;
        let n = 20_000;
        let grid = TimeGrid::new(horizon / n as f64, n).unwrap();
        let series: Vec<C64> = grid
            .times()
            .map(|t| (C64::new(0.0, lambda0 * t)).exp())
            .collect();
        let root_2pi = (2.0 * std::f64::consts::PI).sqrt();
        for lam in [lambda0, lambda0 + gamma, lambda0 - 3.0 * gamma, 0.0] {
            let got = windowed_fourier(&series, &grid, gamma, lam).unwrap();
            let expected = C64::new(1.0, 0.0) / (C64::new(gamma, lam - lambda0) * root_2pi);
            assert!(
                (got - expected).norm() < 0.02 * expected.norm(),
                "Lorentzian mismatch at λ={lam}"
            );
        }
    }

    #[test]
    fn windowed_crosscheck_recovers_the_qubit_line_weights() {
        // γ = 0.05·(level gap) leaks each line into the other at relative
        // order (γ/4)·(weight ratio); modest β keeps the populations — and
        // hence the two weights — close enough for 5% recovery on both.
        let beta = 0.2;
        let lines = line_spectrum(&pauli_x(), &pauli_x(), &pauli_z(), beta).unwrap();
        let gamma = 0.05 * 2.0;
        let checks =
            windowed_line_crosscheck(&pauli_x(), &pauli_x(), &pauli_z(), beta, &lines, gamma)
                .unwrap();
        for check in &checks {
            assert!(
                check.rel_error < 0.05,
                "line at λ={} off by {:.2}%",
                check.frequency,
                100.0 * check.rel_error
            );
        }
    }

    #[test]
    fn windowed_crosscheck_handles_asymmetric_spectra() {
        // Fixed asymmetric spectrum: Bohr frequencies {0, ±1.3, ±2.5, ±3.8},
        // no closer than 1.2 apart. Leakage between lines scales as
        // γ·(weight ratio)/separation, and the weakest checked line can sit
        // 10× below its neighbors — γ at 0.2% of the level gap keeps the
        // worst-case total under the tolerance.
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let basis = crate::linalg::random_unitary(3, &mut rng);
        let h = Hermitian::new(
            &basis * Hermitian::from_real_diagonal(&[0.0, 1.3, 3.8]).matrix() * basis.adjoint(),
        )
        .unwrap();
        let a = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let beta = 0.2;
        let lines = line_spectrum(&a, &b, &h, beta).unwrap();
        assert_eq!(lines.len(), 7);
        let checks = windowed_line_crosscheck(&a, &b, &h, beta, &lines, 0.002 * 1.3).unwrap();
        let max_weight = lines.iter().map(|l| l.plain.norm()).fold(0.0f64, f64::max);
        for (line, check) in lines.iter().zip(&checks) {
            if line.plain.norm() >= 0.1 * max_weight {
                assert!(
                    check.rel_error < 0.05,
                    "line at λ={:.3} off by {:.2}%",
                    line.frequency,
                    100.0 * check.rel_error
                );
            }
        }
    }

    #[test]
    fn probe_snapping_rejects_ambiguity_and_off_grid_times() {
        let grid = TimeGrid::new(0.1, 100).unwrap();
        assert_eq!(snap_to_grid(&grid, 0.0).unwrap(), 0);
        assert_eq!(snap_to_grid(&grid, 0.5000000001).unwrap(), 5);
        assert_eq!(snap_to_grid(&grid, 9.96).unwrap(), 100);
        assert!(snap_to_grid(&grid, 0.05).is_err(), "exact midpoint is ambiguous");
        assert!(snap_to_grid(&grid, -0.2).is_err());
        assert!(snap_to_grid(&grid, 10.2).is_err());
    }

    #[test]
    fn zero_or_invalid_probe_strength_is_rejected() {
        let spec = qubit_spec(0.5, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.01, 10).unwrap();
        for eps in [0.0, -1.0, f64::NAN] {
            assert!(response_function(
                &spec,
                &rho0,
                &grid,
                &pauli_x(),
                &pauli_x(),
                0.0,
                eps,
                0,
                0
            )
            .is_err());
        }
    }

    #[test]
    fn identity_coupling_leaves_the_evolution_unchanged() {
        let spec = qubit_spec(0.5, 1.0);
        let rho0 = spec.adjusted_state().unwrap();
        let grid = TimeGrid::new(0.02, 50).unwrap();
        let coupling = BathCoupling {
            operator: Hermitian::identity(2),
            profile: BathProfile::Step {
                t_prime: 0.0,
                epsilon: 0.05,
            },
        };
        let driven =
            expectation_series(&spec, &rho0, &grid, &pauli_x(), Some((&coupling, 1.0)), 0, 0)
                .unwrap();
        let free = expectation_series(&spec, &rho0, &grid, &pauli_x(), None, 0, 0).unwrap();
        for (d, f) in driven.iter().zip(&free) {
            assert!((d - f).norm() < 1e-12, "identity coupling moved the state");
        }
    }
}
