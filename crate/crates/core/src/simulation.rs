//! Synthetic measurement outcomes.
//!
//! Counts for element j are Poisson with mean λ_j(ψ)·t_j. Each element draws
//! from its own ChaCha20 stream, keyed by the record seed and the element
//! index, so a record does not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, TomoError};
use crate::par;
use crate::protocol::Protocol;
use crate::quantum::PureState;

/// Largest integer below which every f64 is exactly representable.
const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

/// Per-element event counts with the provenance needed to reproduce them.
///
/// Sampled records hold integer counts. Records built by
/// [`CountsRecord::noiseless`] carry the real-valued expectations instead and
/// have no seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsRecord {
    pub seed: Option<u64>,
    pub protocol_fingerprint: String,
    #[serde(serialize_with = "ser_counts", deserialize_with = "de_counts")]
    counts: Vec<f64>,
}

impl CountsRecord {
    pub fn new(protocol_fingerprint: String, seed: Option<u64>, counts: Vec<f64>) -> Result<Self> {
        if let Some((j, k)) = counts
            .iter()
            .enumerate()
            .find(|(_, k)| !(k.is_finite() && **k >= 0.0))
        {
            return Err(TomoError::invalid(format!(
                "count {j} is {k}, expected >= 0"
            )));
        }
        Ok(CountsRecord {
            seed,
            protocol_fingerprint,
            counts,
        })
    }

    /// Counts equal to the expectations λ_j(ψ)·t_j.
    pub fn noiseless(p: &Protocol, psi: &PureState) -> Result<Self> {
        let counts = expected_counts(p, psi)?;
        Self::new(p.fingerprint().to_owned(), None, counts)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.counts.iter().all(|k| k.fract() == 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counts record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: CountsRecord = serde_json::from_str(text)?;
        Self::new(rec.protocol_fingerprint, rec.seed, rec.counts)
    }

    /// Checks that this record belongs to `p`: same fingerprint (unless
    /// `allow_mismatch`) and one count per element.
    pub fn check_against(&self, p: &Protocol, allow_mismatch: bool) -> Result<()> {
        if !allow_mismatch && self.protocol_fingerprint != p.fingerprint() {
            return Err(TomoError::FingerprintMismatch {
                protocol: p.fingerprint().to_owned(),
                counts: self.protocol_fingerprint.clone(),
            });
        }
        if self.counts.len() != p.len() {
            return Err(TomoError::DimensionMismatch {
                what: "counts",
                expected: p.len(),
                found: self.counts.len(),
            });
        }
        Ok(())
    }
}

fn ser_counts<S: Serializer>(counts: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(counts.len()))?;
    for &k in counts {
        if k.fract() == 0.0 && k < EXACT_INT_LIMIT {
            seq.serialize_element(&(k as u64))?;
        } else {
            seq.serialize_element(&k)?;
        }
    }
    seq.end()
}

fn de_counts<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Vec::<f64>::deserialize(d)
}

/// λ_j(ψ)·t_j for every element.
pub fn expected_counts(p: &Protocol, psi: &PureState) -> Result<Vec<f64>> {
    let rates = p.rates(psi)?;
    Ok(rates
        .iter()
        .zip(p.elements())
        .map(|(lam, e)| lam * e.exposure)
        .collect())
}

/// RNG for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Poisson draw; a zero mean yields exactly zero.
pub fn poisson_draw<R: rand::Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // means here are bounded by n·s, far below the sampler's upper limit
    Poisson::new(mean)
        .expect("finite positive Poisson mean")
        .sample(rng)
}

/// Independent Poisson counts k_j ~ Poisson(λ_j·t_j).
pub fn sample_counts(p: &Protocol, psi: &PureState, seed: u64) -> Result<CountsRecord> {
    let means = expected_counts(p, psi)?;
    let counts = par::map_range(means.len(), |j| {
        let mut rng = substream(seed, j as u64);
        poisson_draw(means[j], &mut rng)
    });
    CountsRecord::new(p.fingerprint().to_owned(), Some(seed), counts)
}
