//! Dense complex linear algebra for N-photon polarization states.
//!
//! Basis convention: per channel |H⟩ ↦ index 0 and |V⟩ ↦ index 1; channel 1
//! is the leftmost tensor factor, i.e. the most significant bit of the
//! computational-basis index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TomoError};

pub type C64 = Complex64;

const NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Normalized pure state of `num_photons` polarization qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    num_photons: usize,
    amplitudes: DVector<C64>,
}

impl PureState {
    /// Wraps amplitudes that are already normalized to within 1e-12.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let num_photons = photons_for_dim(amplitudes.len())?;
        let amplitudes = DVector::from_vec(amplitudes);
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(TomoError::invalid(format!(
                "state norm is {norm}, expected 1"
            )));
        }
        Ok(PureState {
            num_photons,
            amplitudes,
        })
    }

    /// Rescales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        let num_photons = photons_for_dim(amplitudes.len())?;
        let v = DVector::from_vec(amplitudes);
        Self::from_vector(num_photons, v)
    }

    pub(crate) fn from_vector(num_photons: usize, v: DVector<C64>) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(TomoError::invalid(
                "cannot normalize a zero or non-finite vector",
            ));
        }
        Ok(PureState {
            num_photons,
            amplitudes: v.unscale(norm),
        })
    }

    /// Haar-random state drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(num_photons: usize, rng: &mut R) -> Result<Self> {
        if num_photons == 0 {
            return Err(TomoError::invalid("number of photons must be at least 1"));
        }
        let dim = 1usize << num_photons;
        let v = DVector::from_fn(dim, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Self::from_vector(num_photons, v)
    }

    pub fn num_photons(&self) -> usize {
        self.num_photons
    }

    /// Hilbert-space dimension s = 2^N.
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn with_global_phase(&self, phase: f64) -> Self {
        PureState {
            num_photons: self.num_photons,
            amplitudes: self.amplitudes.map(|a| a * C64::from_polar(1.0, phase)),
        }
    }

    /// ⟨ψ|A|ψ⟩ for an arbitrary square matrix of matching size.
    pub fn expectation(&self, op: &DMatrix<C64>) -> C64 {
        self.amplitudes.dotc(&(op * &self.amplitudes))
    }
}

fn photons_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(TomoError::invalid(format!(
            "state length {dim} is not 2^N with N >= 1"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// (|H…H⟩ + |V…V⟩)/√2.
pub fn ghz_state(num_photons: usize) -> Result<PureState> {
    if num_photons == 0 {
        return Err(TomoError::invalid("GHZ state needs at least one photon"));
    }
    let dim = 1usize << num_photons;
    let mut v = DVector::from_element(dim, C64::new(0.0, 0.0));
    v[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v[dim - 1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Ok(PureState {
        num_photons,
        amplitudes: v,
    })
}

/// |⟨a|b⟩|², clamped to [0, 1].
pub fn fidelity(a: &PureState, b: &PureState) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(TomoError::DimensionMismatch {
            what: "state",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.amplitudes.dotc(&b.amplitudes).norm_sqr().clamp(0.0, 1.0))
}

/// Number of "nines" of fidelity: z = −log₁₀(1 − F).
pub fn fidelity_nines(fidelity_loss: f64) -> f64 {
    -fidelity_loss.log10()
}

/// Hermitian operator on a finite-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    entries: DMatrix<C64>,
}

impl HermitianOperator {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(TomoError::invalid(format!(
                "operator is {}x{}, expected square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let defect = hermitian_defect(&entries);
        if defect > HERMITIAN_TOL {
            return Err(TomoError::invalid(format!(
                "operator is not Hermitian (max |A - A†| = {defect:e})"
            )));
        }
        Ok(HermitianOperator { entries })
    }

    /// Trusted constructor for operators Hermitian by construction.
    pub(crate) fn from_trusted(entries: DMatrix<C64>) -> Self {
        debug_assert!(hermitian_defect(&entries) <= HERMITIAN_TOL);
        HermitianOperator { entries }
    }

    pub fn identity(dim: usize) -> Self {
        HermitianOperator {
            entries: DMatrix::identity(dim, dim),
        }
    }

    /// |ket⟩⟨ket| for a basis vector of a `dim`-dimensional space.
    pub fn basis_projector(dim: usize, index: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(index, index)] = C64::new(1.0, 0.0);
        HermitianOperator { entries: m }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.entries.clone().symmetric_eigenvalues();
        eig.iter().copied().collect()
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.eigenvalues().iter().all(|&e| e >= -PSD_TOL)
    }
}

fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Kronecker product in channel order; the first factor varies slowest.
pub fn tensor_product(factors: &[HermitianOperator]) -> Result<HermitianOperator> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| TomoError::invalid("tensor product of an empty factor list"))?;
    let entries = rest
        .iter()
        .fold(first.entries.clone(), |acc, f| acc.kronecker(&f.entries));
    Ok(HermitianOperator { entries })
}

/// Real 2s×2s embedding [[Re A, −Im A], [Im A, Re A]] of a Hermitian operator.
#[derive(Debug, Clone, PartialEq)]
pub struct RealifiedOperator {
    entries: DMatrix<f64>,
}

impl RealifiedOperator {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// (Re ψ; Im ψ).
#[derive(Debug, Clone, PartialEq)]
pub struct RealifiedState {
    entries: DVector<f64>,
}

impl RealifiedState {
    pub fn entries(&self) -> &DVector<f64> {
        &self.entries
    }
}

pub fn realify_operator(op: &HermitianOperator) -> RealifiedOperator {
    RealifiedOperator {
        entries: realify_matrix(&op.entries),
    }
}

/// Real embedding of an arbitrary complex square matrix. It is an algebra
/// homomorphism: realify(AB) = realify(A)·realify(B).
pub fn realify_matrix(m: &DMatrix<C64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

pub fn realify_state(psi: &PureState) -> RealifiedState {
    RealifiedState {
        entries: realify_vector(&psi.amplitudes),
    }
}

pub(crate) fn realify_vector(v: &DVector<C64>) -> DVector<f64> {
    let s = v.len();
    DVector::from_fn(2 * s, |i, _| if i < s { v[i].re } else { v[i - s].im })
}
