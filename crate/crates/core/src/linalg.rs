//! Dense complex linear algebra for small quantum systems.
//!
//! Everything downstream — Gibbs weights, real- and complex-time evolution,
//! Bohr-frequency spectra — is built on one eigendecomposition backend, so a
//! single numerical contract (ascending eigenvalues, deterministic eigenvector
//! phases, reconstruction accuracy) covers every matrix function in the crate.
//! Matrices are dense `nalgebra` storage; dimensions stay desk-scale (d ≤ 32),
//! so clarity wins over asymptotics throughout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Relative Frobenius asymmetry above which a matrix is rejected as
/// non-Hermitian instead of being silently symmetrized.
pub const HERMITICITY_TOL: f64 = 1e-12;

const EIG_MAX_ITERATIONS: usize = 10_000;

fn check_square(m: &CMatrix, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            left: m.nrows(),
            right: m.ncols(),
            context,
        });
    }
    Ok(m.nrows())
}

fn check_same_dim(a: &CMatrix, b: &CMatrix, context: &'static str) -> Result<usize> {
    let da = check_square(a, context)?;
    let db = check_square(b, context)?;
    if da != db {
        return Err(Error::DimensionMismatch {
            left: da,
            right: db,
            context,
        });
    }
    Ok(da)
}

fn check_finite(m: &CMatrix, context: &'static str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> CMatrix {
    CMatrix::zeros(dim, dim)
}

/// Conjugate transpose.
pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().sum()
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.norm()
}

/// `[a, b] = ab - ba`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same_dim(a, b, "commutator")?;
    Ok(a * b - b * a)
}

/// `{a, b} = ab + ba`.
pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same_dim(a, b, "anticommutator")?;
    Ok(a * b + b * a)
}

/// Hilbert-Schmidt inner product `(a, b) = Tr(a† b)`, conjugate-linear in `a`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    check_same_dim(a, b, "hs_inner")?;
    Ok(a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// `u x u†` — the workhorse for Schrödinger-picture evolution.
pub fn unitary_conjugate(u: &CMatrix, x: &CMatrix) -> CMatrix {
    u * x * u.adjoint()
}

/// A matrix guaranteed Hermitian.
///
/// Construction rejects inputs whose relative Frobenius asymmetry exceeds
/// [`HERMITICITY_TOL`] and symmetrizes the rest via `(M + M†)/2`, so rounding
/// drift never accumulates into the spectral machinery while genuinely
/// non-Hermitian input is reported as a bug in the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermitian {
    mat: CMatrix,
}

impl Hermitian {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square(&m, "Hermitian::new")?;
        check_finite(&m, "Hermitian::new")?;
        let norm = m.norm();
        let asymmetry = (&m - m.adjoint()).norm();
        if norm > 0.0 && asymmetry > HERMITICITY_TOL * norm {
            return Err(Error::NotHermitian {
                asymmetry: asymmetry / norm,
                tol: HERMITICITY_TOL,
            });
        }
        let sym = (&m + m.adjoint()).scale(0.5);
        Ok(Self { mat: sym })
    }

    /// Builds `diag(values)` without any tolerance checks.
    pub fn from_real_diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        let mut mat = zeros(dim);
        for (k, &v) in values.iter().enumerate() {
            mat[(k, k)] = C64::new(v, 0.0);
        }
        Self { mat }
    }

    pub fn zero(dim: usize) -> Self {
        Self { mat: zeros(dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: identity(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Real-scalar multiple (preserves hermiticity by construction).
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            mat: self.mat.scale(factor),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim(&self.mat, &other.mat, "Hermitian::add")?;
        Ok(Self {
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_dim(&self.mat, &other.mat, "Hermitian::sub")?;
        Ok(Self {
            mat: &self.mat - &other.mat,
        })
    }

    pub fn eig(&self) -> Result<SpectralDecomposition> {
        SpectralDecomposition::new(self)
    }
}

/// Eigendecomposition `H = U Λ U†` of a Hermitian matrix.
///
/// Eigenvalues are sorted ascending. Each eigenvector's phase is fixed by
/// rotating its largest-modulus component (first index on ties) to the
/// positive real axis, which makes the decomposition — and everything built
/// from it — bitwise reproducible for identical input.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn new(h: &Hermitian) -> Result<Self> {
        let dim = h.dim();
        if dim == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        let eig =
            nalgebra::SymmetricEigen::try_new(h.mat.clone(), f64::EPSILON, EIG_MAX_ITERATIONS)
                .ok_or(Error::EigenNonConvergence {
                    max_iterations: EIG_MAX_ITERATIONS,
                })?;

        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("eigenvalues are finite")
        });

        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = CMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        for col in 0..dim {
            let mut column = eigenvectors.column_mut(col);
            let mut pivot = 0;
            let mut best = column[0].norm_sqr();
            for row in 1..dim {
                let mag = column[row].norm_sqr();
                if mag > best {
                    best = mag;
                    pivot = row;
                }
            }
            let z = column[pivot];
            let modulus = z.norm();
            if modulus > 0.0 {
                // Multiply by conj(z) first and rescale by the real modulus
                // afterwards: z·conj(z) has an exactly-zero imaginary part in
                // IEEE arithmetic, so the pivot lands on the positive real
                // axis bit-for-bit, not merely up to rounding.
                let phase = z.conj();
                for row in 0..dim {
                    column[row] = (column[row] * phase).unscale(modulus);
                }
            }
        }

        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Unitary whose k-th column is the eigenvector of `eigenvalues()[k]`.
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// `U f(Λ) U†` — applies a scalar function to the spectrum.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let dim = self.dim();
        let diag = CMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                f(self.eigenvalues[r])
            } else {
                C64::new(0.0, 0.0)
            }
        });
        &self.eigenvectors * diag * self.eigenvectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply(|e| C64::new(e, 0.0))
    }

    /// Transforms an operator into the eigenbasis: `U† x U`.
    pub fn to_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * x * &self.eigenvectors
    }
}

pub fn hermitian_eig(h: &Hermitian) -> Result<SpectralDecomposition> {
    SpectralDecomposition::new(h)
}

/// `exp(z H)` for Hermitian `H` and arbitrary complex `z`, via the spectral
/// decomposition. One code path covers unitary evolution (`z = -it`), Gibbs
/// weights (`z = -β`) and complex-time KMS continuation (`z = -it - β`).
pub fn expm_hermitian(h: &Hermitian, z: C64) -> Result<CMatrix> {
    Ok(h.eig()?.apply(|e| (z * e).exp()))
}

pub fn pauli_x() -> Hermitian {
    let mut m = zeros(2);
    m[(0, 1)] = C64::new(1.0, 0.0);
    m[(1, 0)] = C64::new(1.0, 0.0);
    Hermitian { mat: m }
}

pub fn pauli_y() -> Hermitian {
    let mut m = zeros(2);
    m[(0, 1)] = C64::new(0.0, -1.0);
    m[(1, 0)] = C64::new(0.0, 1.0);
    Hermitian { mat: m }
}

pub fn pauli_z() -> Hermitian {
    Hermitian::from_real_diagonal(&[1.0, -1.0])
}

/// GUE-style random Hermitian matrix, `H = (G + G†)/2` with standard complex
/// Gaussian entries. Deterministic given the generator state.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Hermitian {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let sym = (&g + g.adjoint()).scale(0.5);
    Hermitian { mat: sym }
}

/// Random Hermitian matrix with a guaranteed minimum spectral gap, for tests
/// that need well-separated Bohr frequencies.
pub fn random_hermitian_with_gaps<R: Rng + ?Sized>(
    dim: usize,
    min_gap: f64,
    rng: &mut R,
) -> Hermitian {
    let mut levels = Vec::with_capacity(dim);
    let mut e: f64 = rng.sample::<f64, _>(StandardNormal);
    levels.push(e);
    for _ in 1..dim {
        let u: f64 = rng.random();
        e += min_gap * (1.0 + u);
        levels.push(e);
    }
    let mean = levels.iter().sum::<f64>() / dim as f64;
    for l in &mut levels {
        *l -= mean;
    }
    let basis = random_unitary(dim, rng);
    let diag = Hermitian::from_real_diagonal(&levels);
    let mat = &basis * diag.matrix() * basis.adjoint();
    let sym = (&mat + mat.adjoint()).scale(0.5);
    Hermitian { mat: sym }
}

/// Random unitary, taken as the eigenbasis of a random Hermitian matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    random_hermitian(dim, rng)
        .eig()
        .expect("random Hermitian eigendecomposition")
        .eigenvectors()
        .clone()
}

/// Random full-rank density matrix `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let w = &g * g.adjoint();
    let t = trace(&w).re;
    w.unscale(t)
}
