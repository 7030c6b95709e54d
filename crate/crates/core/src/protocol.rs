//! Measurement protocols for N-photon polarization tomography.
//!
//! Each channel is measured by a set of m₁ single-qubit projectors given by
//! Bloch directions. A full protocol element is a tensor product of one
//! operator per channel. In the fuzzy protocol a channel may also contribute
//! the loss operator I₂/2, which stands for an unregistered photon.
//!
//! Elements are enumerated mixed-radix with channel 1 most significant. Per
//! channel the order is projector 0..m₁−1, then (fuzzy only) the loss
//! operator.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TomoError};
use crate::quantum::{tensor_product, HermitianOperator, PureState, C64};

const UNIT_TOL: f64 = 1e-12;
const SET_SUM_TOL: f64 = 1e-10;
/// Relative tolerance when checking a deserialized exposure against the
/// value recomputed from the protocol parameters.
const EXPOSURE_MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolVariant {
    Ideal,
    Fuzzy,
    Coincidence,
}

impl ProtocolVariant {
    pub const ALL: [ProtocolVariant; 3] = [
        ProtocolVariant::Ideal,
        ProtocolVariant::Fuzzy,
        ProtocolVariant::Coincidence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolVariant::Ideal => "ideal",
            ProtocolVariant::Fuzzy => "fuzzy",
            ProtocolVariant::Coincidence => "coincidence",
        }
    }
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolVariant {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(ProtocolVariant::Ideal),
            "fuzzy" => Ok(ProtocolVariant::Fuzzy),
            "coincidence" | "coinc" => Ok(ProtocolVariant::Coincidence),
            other => Err(TomoError::invalid(format!(
                "unknown protocol variant '{other}'"
            ))),
        }
    }
}

/// One factor of a protocol element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelOperator {
    /// (I₂ + u·σ)/2 for the set direction with this index.
    Projector { index: usize, bloch: [f64; 3] },
    /// I₂/2, the photon was not registered.
    Loss,
}

impl ChannelOperator {
    pub fn is_projector(&self) -> bool {
        matches!(self, ChannelOperator::Projector { .. })
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        match *self {
            ChannelOperator::Projector { bloch, .. } => bloch_projector(bloch),
            ChannelOperator::Loss => DMatrix::identity(2, 2) * C64::new(0.5, 0.0),
        }
    }

    pub fn operator(&self) -> HermitianOperator {
        HermitianOperator::from_trusted(self.matrix())
    }
}

/// (I₂ + x σx + y σy + z σz)/2; +z is |H⟩⟨H|.
pub fn bloch_projector(u: [f64; 3]) -> DMatrix<C64> {
    let [x, y, z] = u;
    DMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(0.5 * (1.0 + z), 0.0),
            C64::new(0.5 * x, -0.5 * y),
            C64::new(0.5 * x, 0.5 * y),
            C64::new(0.5 * (1.0 - z), 0.0),
        ],
    )
}

/// Single-qubit projector directions whose projectors sum to (m₁/2)·I₂.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleQubitProjectorSet {
    directions: Vec<[f64; 3]>,
}

impl SingleQubitProjectorSet {
    pub fn new(directions: Vec<[f64; 3]>) -> Result<Self> {
        if directions.is_empty() {
            return Err(TomoError::invalid("projector set is empty"));
        }
        for (i, u) in directions.iter().enumerate() {
            let norm = u.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(TomoError::invalid(format!(
                    "direction {i} has norm {norm}, expected 1"
                )));
            }
        }
        let set = SingleQubitProjectorSet { directions };
        let half_m = 0.5 * set.len() as f64;
        let sum = set.projector_sum();
        let target = DMatrix::<C64>::identity(2, 2) * C64::new(half_m, 0.0);
        let defect = (sum - target).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > SET_SUM_TOL * half_m.max(1.0) {
            return Err(TomoError::invalid(format!(
                "projectors do not sum to (m1/2)*I (defect {defect:e})"
            )));
        }
        Ok(set)
    }

    /// The 8 cube vertices (±1, ±1, ±1)/√3, sign patterns in lexicographic
    /// order with + before −.
    pub fn octahedron() -> Self {
        let a = 1.0 / 3f64.sqrt();
        let mut directions = Vec::with_capacity(8);
        for sx in [a, -a] {
            for sy in [a, -a] {
                for sz in [a, -a] {
                    directions.push([sx, sy, sz]);
                }
            }
        }
        SingleQubitProjectorSet { directions }
    }

    /// Looks up a set by its configuration name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "octahedron8" | "octahedron" => Ok(Self::octahedron()),
            other => Err(TomoError::invalid(format!(
                "unknown projector set '{other}'"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn projector(&self, index: usize) -> DMatrix<C64> {
        bloch_projector(self.directions[index])
    }

    pub fn projector_sum(&self) -> DMatrix<C64> {
        self.directions
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, &u| acc + bloch_projector(u))
    }

    fn channel_op(&self, index: usize) -> ChannelOperator {
        ChannelOperator::Projector {
            index,
            bloch: self.directions[index],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolElement {
    pub channel_ops: Vec<ChannelOperator>,
    /// Allocated state preparations; expected counts are λ_j·t_j.
    pub exposure: f64,
    /// Number of channels in which a photon was registered.
    pub registered_count: usize,
}

/// Dense operator of one element: the tensor product of its channel operators.
pub fn element_operator(e: &ProtocolElement) -> HermitianOperator {
    let factors: Vec<_> = e.channel_ops.iter().map(|op| op.operator()).collect();
    // channel_ops is never empty for a constructed element
    tensor_product(&factors).expect("protocol element has no channels")
}

/// Born-rule rate λ = ⟨ψ|Λ|ψ⟩ of one element.
pub fn element_rate(e: &ProtocolElement, psi: &PureState) -> Result<f64> {
    let op = element_operator(e);
    if op.dim() != psi.dim() {
        return Err(TomoError::DimensionMismatch {
            what: "state",
            expected: op.dim(),
            found: psi.dim(),
        });
    }
    Ok(psi.expectation(op.entries()).re.max(0.0))
}

/// An N-photon protocol with its materialized element operators.
#[derive(Debug, Clone)]
pub struct Protocol {
    variant: ProtocolVariant,
    num_photons: usize,
    sample_size: f64,
    efficiency: f64,
    set: SingleQubitProjectorSet,
    elements: Vec<ProtocolElement>,
    operators: Vec<DMatrix<C64>>,
    fingerprint: String,
}

impl PartialEq for Protocol {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

fn check_common(num_photons: usize, sample_size: f64) -> Result<()> {
    if num_photons == 0 {
        return Err(TomoError::invalid("number of photons must be at least 1"));
    }
    if num_photons > 10 {
        return Err(TomoError::invalid(format!(
            "{num_photons} photons exceeds the dense-matrix limit of 10"
        )));
    }
    if !(sample_size.is_finite() && sample_size > 0.0) {
        return Err(TomoError::invalid(format!(
            "sample size must be positive and finite, got {sample_size}"
        )));
    }
    Ok(())
}

fn check_efficiency(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(TomoError::invalid(format!(
            "detector efficiency must lie in (0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Exposure of a fuzzy element that registers photons in `k` of `n_photons`
/// channels: (n·s/m₁^k)·η^k·(1−η)^(N−k).
pub fn fuzzy_exposure(m1: usize, n_photons: usize, k: usize, n: f64, eta: f64) -> f64 {
    let s = (1u64 << n_photons) as f64;
    n * s / (m1 as f64).powi(k as i32)
        * eta.powi(k as i32)
        * (1.0 - eta).powi((n_photons - k) as i32)
}

/// Mixed-radix enumeration of per-channel choices, channel 1 most significant.
fn enumerate_channels(radix: usize, n_photons: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = radix.pow(n_photons as u32);
    (0..total).map(move |mut idx| {
        let mut digits = vec![0; n_photons];
        for d in digits.iter_mut().rev() {
            *d = idx % radix;
            idx /= radix;
        }
        digits
    })
}

/// Every element measures all channels with projectors; t_j = n·s/m.
pub fn build_ideal_protocol(
    set: &SingleQubitProjectorSet,
    num_photons: usize,
    sample_size: f64,
) -> Result<Protocol> {
    check_common(num_photons, sample_size)?;
    let m1 = set.len();
    let s = (1u64 << num_photons) as f64;
    let m = m1.pow(num_photons as u32) as f64;
    let exposure = sample_size * s / m;
    let elements = enumerate_channels(m1, num_photons)
        .map(|digits| ProtocolElement {
            channel_ops: digits.iter().map(|&d| set.channel_op(d)).collect(),
            exposure,
            registered_count: num_photons,
        })
        .collect();
    Ok(Protocol::assemble(
        ProtocolVariant::Ideal,
        num_photons,
        sample_size,
        1.0,
        set.clone(),
        elements,
    ))
}

/// Every channel either registers one of the m₁ projector outcomes or loses
/// the photon; (m₁+1)^N elements weighted by detector efficiency.
pub fn build_fuzzy_protocol(
    set: &SingleQubitProjectorSet,
    num_photons: usize,
    sample_size: f64,
    eta: f64,
) -> Result<Protocol> {
    check_common(num_photons, sample_size)?;
    check_efficiency(eta)?;
    let m1 = set.len();
    let elements = enumerate_channels(m1 + 1, num_photons)
        .map(|digits| {
            let channel_ops: Vec<_> = digits
                .iter()
                .map(|&d| {
                    if d == m1 {
                        ChannelOperator::Loss
                    } else {
                        set.channel_op(d)
                    }
                })
                .collect();
            let k = channel_ops.iter().filter(|op| op.is_projector()).count();
            ProtocolElement {
                channel_ops,
                exposure: fuzzy_exposure(m1, num_photons, k, sample_size, eta),
                registered_count: k,
            }
        })
        .collect();
    Ok(Protocol::assemble(
        ProtocolVariant::Fuzzy,
        num_photons,
        sample_size,
        eta,
        set.clone(),
        elements,
    ))
}

/// The k = N elements of the fuzzy protocol only; events with lost photons
/// are discarded, so Σ t_jΛ_j = n·η^N·I.
pub fn build_coincidence_protocol(
    set: &SingleQubitProjectorSet,
    num_photons: usize,
    sample_size: f64,
    eta: f64,
) -> Result<Protocol> {
    check_common(num_photons, sample_size)?;
    check_efficiency(eta)?;
    let m1 = set.len();
    let exposure = fuzzy_exposure(m1, num_photons, num_photons, sample_size, eta);
    let elements = enumerate_channels(m1, num_photons)
        .map(|digits| ProtocolElement {
            channel_ops: digits.iter().map(|&d| set.channel_op(d)).collect(),
            exposure,
            registered_count: num_photons,
        })
        .collect();
    Ok(Protocol::assemble(
        ProtocolVariant::Coincidence,
        num_photons,
        sample_size,
        eta,
        set.clone(),
        elements,
    ))
}

/// Builds any variant; `eta` is ignored for the ideal protocol.
pub fn build_protocol(
    variant: ProtocolVariant,
    set: &SingleQubitProjectorSet,
    num_photons: usize,
    sample_size: f64,
    eta: f64,
) -> Result<Protocol> {
    match variant {
        ProtocolVariant::Ideal => build_ideal_protocol(set, num_photons, sample_size),
        ProtocolVariant::Fuzzy => build_fuzzy_protocol(set, num_photons, sample_size, eta),
        ProtocolVariant::Coincidence => {
            build_coincidence_protocol(set, num_photons, sample_size, eta)
        }
    }
}

/// ‖Σ t_jΛ_j − c·I‖_max / c, with c the protocol's normalization constant.
pub fn verify_unity_decomposition(p: &Protocol) -> f64 {
    let s = p.dim();
    let c = p.normalization_constant();
    let sum = p
        .elements
        .iter()
        .zip(&p.operators)
        .fold(DMatrix::<C64>::zeros(s, s), |acc, (e, op)| {
            acc + op * C64::new(e.exposure, 0.0)
        });
    let target = DMatrix::<C64>::identity(s, s) * C64::new(c, 0.0);
    (sum - target).iter().map(|z| z.norm()).fold(0.0, f64::max) / c
}

impl Protocol {
    fn assemble(
        variant: ProtocolVariant,
        num_photons: usize,
        sample_size: f64,
        efficiency: f64,
        set: SingleQubitProjectorSet,
        elements: Vec<ProtocolElement>,
    ) -> Protocol {
        let operators = elements
            .iter()
            .map(|e| element_operator(e).into_entries())
            .collect();
        let mut p = Protocol {
            variant,
            num_photons,
            sample_size,
            efficiency,
            set,
            elements,
            operators,
            fingerprint: String::new(),
        };
        let canonical = serde_json::to_vec(&p.document()).expect("protocol document serializes");
        p.fingerprint = hex::encode(Sha256::digest(&canonical));
        p
    }

    pub fn variant(&self) -> ProtocolVariant {
        self.variant
    }

    pub fn num_photons(&self) -> usize {
        self.num_photons
    }

    /// Hilbert-space dimension s = 2^N.
    pub fn dim(&self) -> usize {
        1 << self.num_photons
    }

    pub fn sample_size(&self) -> f64 {
        self.sample_size
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn projector_set(&self) -> &SingleQubitProjectorSet {
        &self.set
    }

    pub fn elements(&self) -> &[ProtocolElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Dense operator of element `j`.
    pub fn operator(&self, j: usize) -> &DMatrix<C64> {
        &self.operators[j]
    }

    pub fn operators(&self) -> &[DMatrix<C64>] {
        &self.operators
    }

    /// SHA-256 of the canonical serialized protocol, hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// c in Σ t_jΛ_j = c·I: n for ideal and fuzzy, n·η^N for coincidence.
    pub fn normalization_constant(&self) -> f64 {
        match self.variant {
            ProtocolVariant::Ideal | ProtocolVariant::Fuzzy => self.sample_size,
            ProtocolVariant::Coincidence => {
                self.sample_size * self.efficiency.powi(self.num_photons as i32)
            }
        }
    }

    pub fn zero_exposure_count(&self) -> usize {
        self.elements.iter().filter(|e| e.exposure == 0.0).count()
    }

    pub(crate) fn check_state(&self, psi: &PureState) -> Result<()> {
        if psi.dim() != self.dim() {
            return Err(TomoError::DimensionMismatch {
                what: "state",
                expected: self.dim(),
                found: psi.dim(),
            });
        }
        Ok(())
    }

    /// λ_j(ψ) for every element, clamped at zero against rounding.
    pub fn rates(&self, psi: &PureState) -> Result<Vec<f64>> {
        self.check_state(psi)?;
        let amps = psi.amplitudes();
        Ok(self
            .operators
            .iter()
            .map(|op| amps.dotc(&(op * amps)).re.max(0.0))
            .collect())
    }

    fn document(&self) -> ProtocolDocument {
        ProtocolDocument {
            variant: self.variant,
            num_photons: self.num_photons,
            sample_size: self.sample_size,
            eta: self.efficiency,
            m1: self.set.len(),
            directions: self.set.directions.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| ElementDocument {
                    channel_ops: e
                        .channel_ops
                        .iter()
                        .map(|op| match *op {
                            ChannelOperator::Projector { index, .. } => {
                                ChannelOpDocument::Projector(index)
                            }
                            ChannelOperator::Loss => ChannelOpDocument::Loss,
                        })
                        .collect(),
                    exposure: e.exposure,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document()).expect("protocol document serializes")
    }

    /// Parses a protocol document, rebuilds the protocol from its parameters,
    /// and rejects documents whose elements disagree with the rebuild.
    pub fn from_json(text: &str) -> Result<Protocol> {
        let doc: ProtocolDocument = serde_json::from_str(text)?;
        if doc.m1 != doc.directions.len() {
            return Err(TomoError::invalid(format!(
                "m1 = {} but {} directions listed",
                doc.m1,
                doc.directions.len()
            )));
        }
        let set = SingleQubitProjectorSet::new(doc.directions.clone())?;
        let rebuilt = build_protocol(doc.variant, &set, doc.num_photons, doc.sample_size, doc.eta)?;
        let expected = rebuilt.document();
        if doc.elements.len() != expected.elements.len() {
            return Err(TomoError::DimensionMismatch {
                what: "protocol element list",
                expected: expected.elements.len(),
                found: doc.elements.len(),
            });
        }
        for (j, (got, want)) in doc.elements.iter().zip(&expected.elements).enumerate() {
            if got.channel_ops != want.channel_ops {
                return Err(TomoError::invalid(format!(
                    "element {j}: channel operators do not follow the canonical enumeration"
                )));
            }
            let scale = want.exposure.abs().max(f64::MIN_POSITIVE);
            if (got.exposure - want.exposure).abs() > EXPOSURE_MATCH_TOL * scale {
                return Err(TomoError::invalid(format!(
                    "element {j}: exposure {} does not match expected {}",
                    got.exposure, want.exposure
                )));
            }
        }
        Ok(rebuilt)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolDocument {
    variant: ProtocolVariant,
    #[serde(rename = "N")]
    num_photons: usize,
    #[serde(rename = "n")]
    sample_size: f64,
    eta: f64,
    m1: usize,
    directions: Vec<[f64; 3]>,
    elements: Vec<ElementDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementDocument {
    channel_ops: Vec<ChannelOpDocument>,
    exposure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ChannelOpDocument {
    Projector(usize),
    Loss,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::ghz_state;
    use approx::assert_abs_diff_eq;

    fn max_abs(m: &DMatrix<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn octahedron_set() {
        let set = SingleQubitProjectorSet::octahedron();
        assert_eq!(set.len(), 8);
        let target = DMatrix::<C64>::identity(2, 2) * C64::new(4.0, 0.0);
        assert!(max_abs(&(set.projector_sum() - target)) <= 1e-12);
        // sign patterns (+,+,+) ... (−,−,−): index i and 7−i are antipodal
        for i in 0..8 {
            let prod = set.projector(i) * set.projector(7 - i);
            assert!(max_abs(&prod) <= 1e-12, "pair {i}");
        }
        assert_eq!(set.directions()[0].map(f64::signum), [1.0, 1.0, 1.0]);
        assert_eq!(set.directions()[1].map(f64::signum), [1.0, 1.0, -1.0]);
        assert_eq!(SingleQubitProjectorSet::named("octahedron8").unwrap(), set);
        assert!(SingleQubitProjectorSet::named("tetra").is_err());
    }

    #[test]
    fn projector_set_validation() {
        assert!(SingleQubitProjectorSet::new(vec![[0.0, 0.0, 1.0]]).is_err());
        assert!(SingleQubitProjectorSet::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 0.9]]).is_err());
        assert!(SingleQubitProjectorSet::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]).is_ok());
    }

    #[test]
    fn channel_operators_materialize() {
        let set = SingleQubitProjectorSet::octahedron();
        for i in 0..8 {
            let p = set.projector(i);
            assert!(max_abs(&(&p * &p - &p)) <= 1e-12);
            assert_abs_diff_eq!(p.trace().re, 1.0, epsilon = 1e-15);
        }
        let loss = ChannelOperator::Loss.matrix();
        assert_eq!(loss, DMatrix::identity(2, 2) * C64::new(0.5, 0.0));
    }

    #[test]
    fn ideal_protocol_exposures() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_ideal_protocol(&set, 3, 1e5).unwrap();
        assert_eq!(p.len(), 512);
        assert!(p.elements().iter().all(|e| e.exposure == 1562.5));
        assert!(verify_unity_decomposition(&p) <= 1e-8);

        let p1 = build_ideal_protocol(&set, 1, 800.0).unwrap();
        assert_eq!(p1.len(), 8);
        assert!(p1.elements().iter().all(|e| e.exposure == 200.0));

        assert!(build_ideal_protocol(&set, 0, 1.0).is_err());
        assert!(build_ideal_protocol(&set, 2, 0.0).is_err());
        assert!(build_ideal_protocol(&set, 2, f64::NAN).is_err());
    }

    #[test]
    fn fuzzy_protocol_exposures() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_fuzzy_protocol(&set, 3, 1e5, 0.2).unwrap();
        assert_eq!(p.len(), 729);
        let all_proj = &p.elements()[0];
        assert_eq!(all_proj.registered_count, 3);
        assert_abs_diff_eq!(all_proj.exposure, 12.5, epsilon = 1e-9);
        let all_loss = p.elements().last().unwrap();
        assert_eq!(all_loss.registered_count, 0);
        assert!(all_loss
            .channel_ops
            .iter()
            .all(|op| *op == ChannelOperator::Loss));
        assert_abs_diff_eq!(all_loss.exposure, 409600.0, epsilon = 1e-6);
        assert!(verify_unity_decomposition(&p) <= 1e-10);

        for eta in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(build_fuzzy_protocol(&set, 3, 1e5, eta).is_err());
            assert!(build_coincidence_protocol(&set, 3, 1e5, eta).is_err());
        }
    }

    #[test]
    fn fuzzy_at_unit_efficiency_reduces_to_ideal() {
        let set = SingleQubitProjectorSet::octahedron();
        let fuzzy = build_fuzzy_protocol(&set, 2, 1e4, 1.0).unwrap();
        let ideal = build_ideal_protocol(&set, 2, 1e4).unwrap();
        assert_eq!(fuzzy.zero_exposure_count(), 81 - 64);
        let active: Vec<_> = fuzzy
            .elements()
            .iter()
            .filter(|e| e.exposure > 0.0)
            .collect();
        assert_eq!(active.len(), ideal.len());
        for (a, b) in active.iter().zip(ideal.elements()) {
            assert_eq!(a.channel_ops, b.channel_ops);
            assert_abs_diff_eq!(a.exposure, b.exposure, epsilon = 1e-12 * b.exposure);
        }
    }

    #[test]
    fn coincidence_protocol() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_coincidence_protocol(&set, 3, 1e5, 0.2).unwrap();
        assert_eq!(p.len(), 512);
        for e in p.elements() {
            assert_abs_diff_eq!(e.exposure, 12.5, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(p.normalization_constant(), 800.0, epsilon = 1e-9);
        assert!(verify_unity_decomposition(&p) <= 1e-10);

        let at_one = build_coincidence_protocol(&set, 2, 1e4, 1.0).unwrap();
        let ideal = build_ideal_protocol(&set, 2, 1e4).unwrap();
        assert_eq!(at_one.elements(), ideal.elements());
    }

    #[test]
    fn element_operators_and_rates() {
        let set = SingleQubitProjectorSet::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]).unwrap();
        let fuzzy = build_fuzzy_protocol(&set, 2, 1.0, 0.5).unwrap();
        let all_loss = fuzzy.elements().last().unwrap();
        let expected = DMatrix::<C64>::identity(4, 4) * C64::new(0.25, 0.0);
        assert_eq!(element_operator(all_loss).entries(), &expected);
        // element 0 is [P(+z), P(+z)] = |HH><HH|
        assert_eq!(
            element_operator(&fuzzy.elements()[0]),
            HermitianOperator::basis_projector(4, 0)
        );

        let ghz = ghz_state(3).unwrap();
        let fz3 = build_fuzzy_protocol(&set, 3, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(
            element_rate(&fz3.elements()[0], &ghz).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            element_rate(fz3.elements().last().unwrap(), &ghz).unwrap(),
            0.125,
            epsilon = 1e-15
        );
        assert!(element_rate(&fz3.elements()[0], &ghz_state(2).unwrap()).is_err());
    }

    #[test]
    fn element_rate_matches_dense_oracle() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_ideal_protocol(&set, 3, 1.0).unwrap();
        let ghz = ghz_state(3).unwrap();
        // element 0 is P(u)⊗P(u)⊗P(u) with u = (1,1,1)/√3
        let single = set.projector(0);
        let op = single.kronecker(&single).kronecker(&single);
        let a = ghz.amplitudes();
        let mut oracle = C64::new(0.0, 0.0);
        for i in 0..8 {
            for j in 0..8 {
                oracle += a[i].conj() * op[(i, j)] * a[j];
            }
        }
        let lam = element_rate(&p.elements()[0], &ghz).unwrap();
        assert_abs_diff_eq!(lam, oracle.re, epsilon = 1e-14);
        assert_abs_diff_eq!(p.rates(&ghz).unwrap()[0], oracle.re, epsilon = 1e-14);
    }

    #[test]
    fn element_traces_are_one() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_fuzzy_protocol(&set, 2, 1.0, 0.3).unwrap();
        for op in p.operators() {
            assert_abs_diff_eq!(op.trace().re, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn idempotence_structure() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_fuzzy_protocol(&set, 3, 1.0, 0.4).unwrap();
        for (e, op) in p.elements().iter().zip(p.operators()) {
            let scale = 0.5f64.powi((3 - e.registered_count) as i32);
            let defect = max_abs(&(op * op - op * C64::new(scale, 0.0)));
            assert!(defect <= 1e-12);
        }
    }

    #[test]
    fn unity_decomposition_small_protocols() {
        let set = SingleQubitProjectorSet::octahedron();
        for n_ph in 1..=4 {
            let p = build_ideal_protocol(&set, n_ph, 1e5).unwrap();
            assert!(verify_unity_decomposition(&p) <= 1e-10);
        }
        let f = build_fuzzy_protocol(&set, 3, 1e5, 0.37).unwrap();
        assert!(verify_unity_decomposition(&f) <= 1e-10);
        let c = build_coincidence_protocol(&set, 3, 1e5, 0.37).unwrap();
        assert!(verify_unity_decomposition(&c) <= 1e-10);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let set = SingleQubitProjectorSet::octahedron();
        let p = build_fuzzy_protocol(&set, 2, 1e4, 0.3).unwrap();
        let text = p.to_json();
        let back = Protocol::from_json(&text).unwrap();
        assert_eq!(back.fingerprint(), p.fingerprint());
        assert_eq!(back.elements(), p.elements());

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["elements"][3]["exposure"] = serde_json::json!(1.0);
        assert!(Protocol::from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["elements"].as_array_mut().unwrap().pop();
        assert!(matches!(
            Protocol::from_json(&doc.to_string()),
            Err(TomoError::DimensionMismatch { .. })
        ));

        let other = build_fuzzy_protocol(&set, 2, 1e4, 0.31).unwrap();
        assert_ne!(other.fingerprint(), p.fingerprint());
    }

    #[test]
    fn fuzzy_class_exposure_sums() {
        let set = SingleQubitProjectorSet::octahedron();
        for n_ph in 1..=3usize {
            for eta in [0.2, 0.6, 1.0] {
                let n = 1e5;
                let p = build_fuzzy_protocol(&set, n_ph, n, eta).unwrap();
                let s = (1 << n_ph) as f64;
                for k in 0..=n_ph {
                    let got: f64 = p
                        .elements()
                        .iter()
                        .filter(|e| e.registered_count == k)
                        .map(|e| e.exposure)
                        .sum();
                    let binom = (0..k).fold(1.0, |acc, i| acc * (n_ph - i) as f64 / (i + 1) as f64);
                    let want =
                        n * s * binom * eta.powi(k as i32) * (1.0 - eta).powi((n_ph - k) as i32);
                    assert_abs_diff_eq!(got, want, epsilon = 1e-9 * n * s);
                }
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let set = SingleQubitProjectorSet::octahedron();
        let a = build_fuzzy_protocol(&set, 2, 1e3, 0.6).unwrap();
        let b = build_fuzzy_protocol(&set, 2, 1e3, 0.6).unwrap();
        assert_eq!(a.elements(), b.elements());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn variant_parsing() {
        for v in ProtocolVariant::ALL {
            assert_eq!(v.as_str().parse::<ProtocolVariant>().unwrap(), v);
        }
        assert!("other".parse::<ProtocolVariant>().is_err());
    }
}
