//! Accuracy theory for pure-state tomography.
//!
//! The complete information matrix of a protocol at state ψ is the real
//! 2s×2s matrix
//!
//! ```text
//! H = 2 Σ_j (t_j/λ_j) (Λ̃_j ψ̃)(Λ̃_j ψ̃)ᵀ
//! ```
//!
//! where ˜ denotes the (Re; Im) embedding. Two of its directions, the norm
//! direction ψ̃ and the global-phase direction (−Im ψ; Re ψ), carry no
//! physical information and are projected out. The remaining 2s − 2
//! eigenvalues h_j give the fidelity-loss model
//!
//! ```text
//! 1 − F = Σ_j d_j ξ_j²,   d_j = 1/(2 h_j),   ξ_j ~ N(0, 1)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, TomoError};
use crate::par;
use crate::protocol::{Protocol, ProtocolVariant};
use crate::quantum::{fidelity_nines, realify_vector, PureState};
use crate::simulation::substream;

/// Elements with a smaller rate are skipped.
const ZERO_RATE: f64 = 1e-14;
/// A skipped element must also annihilate the state to this accuracy.
const ZERO_RATE_NULL_TOL: f64 = 1e-7;
/// Relative eigenvalue threshold for informational incompleteness.
const INCOMPLETE_TOL: f64 = 1e-10;
/// Samples drawn per RNG substream by [`sample_fidelity_loss`].
const SAMPLE_CHUNK: usize = 4096;

/// Complete information matrix H of `p` at `psi`.
pub fn information_matrix(p: &Protocol, psi: &PureState) -> Result<DMatrix<f64>> {
    p.check_state(psi)?;
    let s = p.dim();
    let amps = psi.amplitudes();
    let mut h = DMatrix::<f64>::zeros(2 * s, 2 * s);
    for (j, (e, op)) in p.elements().iter().zip(p.operators()).enumerate() {
        if e.exposure == 0.0 {
            continue;
        }
        let applied = op * amps;
        let lam = amps.dotc(&applied).re;
        if lam < ZERO_RATE {
            let leak = applied.norm();
            if leak > ZERO_RATE_NULL_TOL {
                return Err(TomoError::Numerical(format!(
                    "element {j} has rate {lam:e} but |Λψ| = {leak:e}"
                )));
            }
            continue;
        }
        // realify(Λ)·realify(ψ) = realify(Λψ)
        let v = realify_vector(&applied);
        h.ger(2.0 * e.exposure / lam, &v, &v, 1.0);
    }
    Ok(h)
}

/// Orthonormal basis (as columns) of the complement of the two gauge
/// directions of ψ.
fn informative_basis(psi: &PureState) -> DMatrix<f64> {
    let a = realify_vector(psi.amplitudes());
    let s = psi.dim();
    let b = DVector::from_fn(2 * s, |i, _| if i < s { -a[i + s] } else { a[i - s] });
    let q = DMatrix::identity(2 * s, 2 * s) - &a * a.transpose() - &b * b.transpose();
    let eig = SymmetricEigen::new(q);
    let cols: Vec<_> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &ev)| ev > 0.5)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Eigenvalues of H restricted to the 2s − 2 informative directions,
/// sorted in descending order.
pub fn gauge_projected_spectrum(h: &DMatrix<f64>, psi: &PureState) -> Result<Vec<f64>> {
    let s = psi.dim();
    if h.nrows() != 2 * s || h.ncols() != 2 * s {
        return Err(TomoError::DimensionMismatch {
            what: "information matrix",
            expected: 2 * s,
            found: h.nrows(),
        });
    }
    let basis = informative_basis(psi);
    debug_assert_eq!(basis.ncols(), 2 * s - 2);
    let compressed = basis.transpose() * h * &basis;
    let compressed = (&compressed + compressed.transpose()) * 0.5;
    let mut spectrum: Vec<f64> = compressed.symmetric_eigenvalues().iter().copied().collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));

    let scale = h.symmetric_eigenvalues().amax();
    let deficient = spectrum
        .iter()
        .filter(|&&ev| ev.is_nan() || ev <= INCOMPLETE_TOL * scale)
        .count();
    if deficient > 0 || scale == 0.0 {
        return Err(TomoError::InformationallyIncomplete {
            deficient: deficient.max(1),
            required: 2 * s - 2,
        });
    }
    Ok(spectrum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStatistics {
    /// d_j = 1/(2h_j).
    pub coefficients: Vec<f64>,
    /// ⟨1 − F⟩ = Σ d_j.
    pub mean: f64,
}

pub fn loss_statistics(spectrum: &[f64]) -> Result<LossStatistics> {
    if let Some(bad) = spectrum.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
        return Err(TomoError::invalid(format!(
            "spectrum entry {bad} is not a positive finite eigenvalue"
        )));
    }
    if spectrum.is_empty() {
        return Err(TomoError::invalid("empty spectrum"));
    }
    let coefficients: Vec<f64> = spectrum.iter().map(|h| 0.5 / h).collect();
    let mean = coefficients.iter().sum();
    Ok(LossStatistics { coefficients, mean })
}

/// Draws 1 − F = Σ d_j ξ_j². Chunk c of [`SAMPLE_CHUNK`] samples uses
/// substream c of `seed`, so the output is independent of thread count.
pub fn sample_fidelity_loss(coefficients: &[f64], num_samples: usize, seed: u64) -> Vec<f64> {
    let chunks = num_samples.div_ceil(SAMPLE_CHUNK);
    par::map_range(chunks, |c| {
        let mut rng = substream(seed, c as u64);
        let len = SAMPLE_CHUNK.min(num_samples - c * SAMPLE_CHUNK);
        (0..len)
            .map(|_| {
                coefficients
                    .iter()
                    .map(|d| {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        d * xi * xi
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Samples of z = −log₁₀(1 − F) under the loss model.
pub fn sample_loss_distribution(
    coefficients: &[f64],
    num_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if num_samples == 0 {
        return Err(TomoError::invalid("num_samples must be at least 1"));
    }
    Ok(sample_fidelity_loss(coefficients, num_samples, seed)
        .into_iter()
        .map(fidelity_nines)
        .collect())
}

/// h = Tr(H)/(2ns) = (1/ns) Σ_j t_j ⟨ψ|Λ_j²|ψ⟩/λ_j.
pub fn normalized_full_information(p: &Protocol, psi: &PureState) -> Result<f64> {
    p.check_state(psi)?;
    let amps = psi.amplitudes();
    let mut total = 0.0;
    for (e, op) in p.elements().iter().zip(p.operators()) {
        if e.exposure == 0.0 {
            continue;
        }
        let applied = op * amps;
        let lam = amps.dotc(&applied).re;
        if lam < ZERO_RATE {
            continue;
        }
        // ⟨ψ|Λ²|ψ⟩ = ‖Λψ‖² for Hermitian Λ
        total += e.exposure * applied.norm_squared() / lam;
    }
    Ok(total / (p.sample_size() * p.dim() as f64))
}

/// h for the built-in protocols: 1, η^N and ((1+η)/2)^N.
pub fn closed_form_information(variant: ProtocolVariant, num_photons: usize, eta: f64) -> f64 {
    let n = num_photons as i32;
    match variant {
        ProtocolVariant::Ideal => 1.0,
        ProtocolVariant::Coincidence => eta.powi(n),
        ProtocolVariant::Fuzzy => ((1.0 + eta) / 2.0).powi(n),
    }
}

/// h_fuzzy / h_coinc = (1/s)(1 + 1/η)^N.
pub fn fuzzy_information_advantage(num_photons: usize, eta: f64) -> f64 {
    (1.0 + 1.0 / eta).powi(num_photons as i32) / (1u64 << num_photons) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationAnalysis {
    pub variant: ProtocolVariant,
    pub num_photons: usize,
    pub sample_size: f64,
    pub efficiency: f64,
    /// Row-major 2s×2s information matrix.
    pub matrix: Vec<Vec<f64>>,
    pub spectrum: Vec<f64>,
    pub loss_coefficients: Vec<f64>,
    pub mean_loss: f64,
    pub normalized_information: f64,
    pub closed_form_information: f64,
}

impl InformationAnalysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }
}

pub fn analyze(p: &Protocol, psi: &PureState) -> Result<InformationAnalysis> {
    let h = information_matrix(p, psi)?;
    let spectrum = gauge_projected_spectrum(&h, psi)?;
    let loss = loss_statistics(&spectrum)?;
    let normalized_information = normalized_full_information(p, psi)?;
    Ok(InformationAnalysis {
        variant: p.variant(),
        num_photons: p.num_photons(),
        sample_size: p.sample_size(),
        efficiency: p.efficiency(),
        matrix: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
        spectrum,
        loss_coefficients: loss.coefficients,
        mean_loss: loss.mean,
        normalized_information,
        closed_form_information: closed_form_information(
            p.variant(),
            p.num_photons(),
            p.efficiency(),
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `empirical` against the distribution sampled
/// by `theoretical`, using `num_bins` equiprobable bins cut at quantiles of
/// the theoretical sample.
pub fn chi_squared_gof(
    empirical: &[f64],
    theoretical: &[f64],
    num_bins: usize,
) -> Result<ChiSquaredTest> {
    if num_bins < 2 {
        return Err(TomoError::invalid("need at least 2 bins"));
    }
    if theoretical.len() < num_bins || empirical.is_empty() {
        return Err(TomoError::invalid(
            "samples too small for the requested bins",
        ));
    }
    if empirical.iter().chain(theoretical).any(|z| z.is_nan()) {
        return Err(TomoError::invalid("samples contain NaN"));
    }
    let mut sorted = theoretical.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len();
    // interior edges at the theoretical quantiles i/num_bins
    let edges: Vec<f64> = (1..num_bins).map(|i| sorted[i * t / num_bins]).collect();
    let bin_of = |z: f64| edges.partition_point(|&e| e <= z);

    let mut theo_counts = vec![0usize; num_bins];
    for &z in &sorted {
        theo_counts[bin_of(z)] += 1;
    }
    let mut emp_counts = vec![0usize; num_bins];
    for &z in empirical {
        emp_counts[bin_of(z)] += 1;
    }

    let n = empirical.len() as f64;
    let mut statistic = 0.0;
    for (&o, &tc) in emp_counts.iter().zip(&theo_counts) {
        let expected = n * tc as f64 / t as f64;
        if expected < 5.0 {
            return Err(TomoError::invalid(format!(
                "expected bin count {expected:.2} < 5; use fewer bins"
            )));
        }
        statistic += (o as f64 - expected).powi(2) / expected;
    }
    let dof = num_bins - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquaredTest {
        statistic,
        degrees_of_freedom: dof,
        p_value: dist.sf(statistic),
    })
}
