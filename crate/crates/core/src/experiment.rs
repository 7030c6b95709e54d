//! Batch experiments: theory vs Monte Carlo reconstruction.
//!
//! For every (variant, η) pair in a config the harness computes the
//! information-matrix prediction of ⟨1 − F⟩ and its z distribution, then
//! runs independent simulate → reconstruct cycles and compares the two.
//!
//! Run `i` of pair (variant, η) draws counts with
//! `derive_seed(master, "counts", variant, η, i)` and seeds the solver's
//! starting states with `derive_seed(master, "init", variant, η, i)`. The
//! derivation is the first 8 bytes (little endian) of
//! SHA-256(`"polartomo-seed-v1|{master}|{tag}|{variant}|{η bits as hex}|{i}"`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TomoError};
use crate::information::{self, ChiSquaredTest};
use crate::par;
use crate::protocol::{build_protocol, Protocol, ProtocolVariant, SingleQubitProjectorSet};
use crate::quantum::{fidelity, fidelity_nines, ghz_state, PureState, C64};
use crate::reconstruction::{ml_reconstruct, SolverOptions};
use crate::simulation::sample_counts;

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.1;
/// Largest tolerated fraction of non-converged reconstructions.
pub const MAX_NON_CONVERGED_FRACTION: f64 = 0.05;

fn default_m1_set() -> String {
    "octahedron8".into()
}
fn default_theory_samples() -> usize {
    1_000_000
}
fn default_chi2_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpec {
    Ghz(usize),
    /// (re, im) pairs; normalized on load.
    Amplitudes(Vec<[f64; 2]>),
}

impl StateSpec {
    pub fn build(&self) -> Result<PureState> {
        match self {
            StateSpec::Ghz(n) => ghz_state(*n),
            StateSpec::Amplitudes(a) => {
                PureState::normalized(a.iter().map(|&[re, im]| C64::new(re, im)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub variants: Vec<ProtocolVariant>,
    #[serde(default = "default_m1_set")]
    pub m1_set: String,
    pub n: f64,
    pub eta: Vec<f64>,
    pub num_experiments: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_theory_samples")]
    pub theory_samples: usize,
    #[serde(default = "default_chi2_bins")]
    pub chi2_bins: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(TomoError::invalid("config lists no protocol variants"));
        }
        if self.eta.is_empty() {
            return Err(TomoError::invalid("config lists no efficiencies"));
        }
        if let Some(e) = self.eta.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return Err(TomoError::invalid(format!("eta {e} outside (0, 1]")));
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(TomoError::invalid(format!(
                "sample size {} must be positive",
                self.n
            )));
        }
        if self.theory_samples == 0 {
            return Err(TomoError::invalid("theory_samples must be positive"));
        }
        SingleQubitProjectorSet::named(&self.m1_set)?;
        self.solver.validate()?;
        self.state.build()?;
        Ok(())
    }

    pub fn state(&self) -> Result<PureState> {
        self.state.build()
    }

    pub fn projector_set(&self) -> Result<SingleQubitProjectorSet> {
        SingleQubitProjectorSet::named(&self.m1_set)
    }

    /// Every (variant, η) pair, variants outermost.
    pub fn pairs(&self) -> Vec<(ProtocolVariant, f64)> {
        self.variants
            .iter()
            .flat_map(|&v| self.eta.iter().map(move |&e| (v, e)))
            .collect()
    }

    pub fn build_protocol(&self, variant: ProtocolVariant, eta: f64) -> Result<Protocol> {
        let psi = self.state()?;
        build_protocol(
            variant,
            &self.projector_set()?,
            psi.num_photons(),
            self.n,
            eta,
        )
    }
}

/// Stable per-run seed; see the module docs for the exact recipe.
pub fn derive_seed(master: u64, tag: &str, variant: ProtocolVariant, eta: f64, index: u64) -> u64 {
    let key = format!(
        "polartomo-seed-v1|{master}|{tag}|{variant}|{:016x}|{index}",
        eta.to_bits()
    );
    let digest = Sha256::digest(key.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub counts_seed: u64,
    pub init_seed: u64,
    pub fidelity: f64,
    pub loss: f64,
    pub z: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edges; the last bin ends at `edges.last() + bin_width`.
    pub edges: Vec<f64>,
    /// Fraction of theoretical samples per bin.
    pub theory_fraction: Vec<f64>,
    pub empirical_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub mean_loss: f64,
    pub spectrum: Vec<f64>,
    pub loss_coefficients: Vec<f64>,
    pub normalized_information: f64,
    pub closed_form_information: f64,
    pub unity_residual: f64,
    pub mean_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub num_runs: usize,
    pub non_converged: usize,
    pub mean_loss: f64,
    pub std_error: f64,
    /// (empirical − theoretical mean) / standard error.
    pub z_score: f64,
    pub mean_z: f64,
    pub chi_squared: Option<ChiSquaredTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub variant: ProtocolVariant,
    pub eta: f64,
    pub protocol_fingerprint: String,
    pub theory: TheorySummary,
    pub empirical: Option<EmpiricalSummary>,
    pub histogram: Histogram,
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

impl PairReport {
    pub fn tag(&self) -> String {
        format!("{}_eta{}", self.variant, self.eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub version: String,
    pub parallel: bool,
    /// Unix seconds; the only field that varies between identical runs.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub entries: Vec<PairReport>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    pub fn non_converged_fraction(&self) -> f64 {
        let (bad, total) = self
            .entries
            .iter()
            .filter_map(|e| e.empirical.as_ref())
            .fold((0, 0), |(b, t), e| (b + e.non_converged, t + e.num_runs));
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` plus per-pair histogram and raw-run CSV files.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let report = dir.join("report.json");
        fs::write(&report, self.to_json())?;
        written.push(report);
        for entry in &self.entries {
            let hist = dir.join(format!("histogram_{}.csv", entry.tag()));
            fs::write(&hist, histogram_csv(&entry.histogram))?;
            written.push(hist);
            if entry.empirical.is_some() {
                let runs = dir.join(format!("runs_{}.csv", entry.tag()));
                fs::write(&runs, runs_csv(&entry.runs))?;
                written.push(runs);
            }
        }
        Ok(written)
    }
}

/// Decimal float with 15 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.14e}")
    } else {
        format!("{x}")
    }
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,theory_fraction,empirical_count\n");
    for (i, lo) in h.edges.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_float(*lo),
            fmt_float(lo + h.bin_width),
            fmt_float(h.theory_fraction[i]),
            h.empirical_counts[i]
        );
    }
    out
}

pub fn runs_csv(runs: &[RunRecord]) -> String {
    let mut out =
        String::from("run,counts_seed,init_seed,fidelity,loss,z,iterations,converged,residual\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run,
            r.counts_seed,
            r.init_seed,
            fmt_float(r.fidelity),
            fmt_float(r.loss),
            fmt_float(r.z),
            r.iterations,
            r.converged,
            fmt_float(r.residual)
        );
    }
    out
}

/// Single-column CSV of z samples.
pub fn z_samples_csv(z: &[f64]) -> String {
    let mut out = String::from("z\n");
    for &v in z {
        out.push_str(&fmt_float(v));
        out.push('\n');
    }
    out
}

/// Fixed-width bins over [0, max(z) + 0.5].
pub fn build_histogram(theory_z: &[f64], empirical_z: &[f64]) -> Histogram {
    let max_z = theory_z
        .iter()
        .chain(empirical_z)
        .copied()
        .filter(|z| z.is_finite())
        .fold(0.0f64, f64::max);
    let bins = (((max_z + 0.5) / HISTOGRAM_BIN_WIDTH).ceil() as usize).max(1);
    let index = |z: f64| -> Option<usize> {
        (z.is_finite() && z >= 0.0).then(|| ((z / HISTOGRAM_BIN_WIDTH) as usize).min(bins - 1))
    };
    let mut theory = vec![0usize; bins];
    for &z in theory_z {
        if let Some(i) = index(z) {
            theory[i] += 1;
        }
    }
    let mut empirical = vec![0usize; bins];
    for &z in empirical_z {
        if let Some(i) = index(z) {
            empirical[i] += 1;
        }
    }
    let total = theory_z.len().max(1) as f64;
    Histogram {
        bin_width: HISTOGRAM_BIN_WIDTH,
        edges: (0..bins).map(|i| i as f64 * HISTOGRAM_BIN_WIDTH).collect(),
        theory_fraction: theory.iter().map(|&c| c as f64 / total).collect(),
        empirical_counts: empirical,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One simulate → reconstruct cycle.
pub fn run_once(
    p: &Protocol,
    truth: &PureState,
    solver: &SolverOptions,
    master_seed: u64,
    eta: f64,
    run: usize,
) -> Result<RunRecord> {
    let counts_seed = derive_seed(master_seed, "counts", p.variant(), eta, run as u64);
    let init_seed = derive_seed(master_seed, "init", p.variant(), eta, run as u64);
    let counts = sample_counts(p, truth, counts_seed)?;
    let opts = SolverOptions {
        init_seed,
        ..*solver
    };
    let result = ml_reconstruct(p, &counts, &opts)?;
    let f = fidelity(&result.estimate, truth)?;
    let loss = (1.0 - f).max(f64::MIN_POSITIVE);
    Ok(RunRecord {
        run,
        counts_seed,
        init_seed,
        fidelity: f,
        loss,
        z: fidelity_nines(loss),
        iterations: result.iterations,
        converged: result.converged,
        residual: result.residual,
    })
}

fn run_pair(cfg: &ExperimentConfig, variant: ProtocolVariant, eta: f64) -> Result<PairReport> {
    let truth = cfg.state()?;
    let p = cfg.build_protocol(variant, eta)?;
    let analysis = information::analyze(&p, &truth)?;
    let theory_seed = derive_seed(cfg.master_seed, "theory", variant, eta, 0);
    let theory_z = information::sample_loss_distribution(
        &analysis.loss_coefficients,
        cfg.theory_samples,
        theory_seed,
    )?;
    let theory = TheorySummary {
        mean_loss: analysis.mean_loss,
        spectrum: analysis.spectrum.clone(),
        loss_coefficients: analysis.loss_coefficients.clone(),
        normalized_information: analysis.normalized_information,
        closed_form_information: analysis.closed_form_information,
        unity_residual: crate::protocol::verify_unity_decomposition(&p),
        mean_z: mean(&theory_z),
    };

    let runs = par::map_range(cfg.num_experiments, |i| {
        run_once(&p, &truth, &cfg.solver, cfg.master_seed, eta, i)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let empirical = (!runs.is_empty()).then(|| {
        let losses: Vec<f64> = runs.iter().map(|r| r.loss).collect();
        let zs: Vec<f64> = runs.iter().map(|r| r.z).collect();
        let m = mean(&losses);
        let std_error = if losses.len() > 1 {
            let var =
                losses.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (losses.len() - 1) as f64;
            (var / losses.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        // shrink the bin count until every bin expects at least 5 events
        let bins = cfg.chi2_bins.min(runs.len() / 5);
        let chi_squared = (bins >= 2)
            .then(|| information::chi_squared_gof(&zs, &theory_z, bins).ok())
            .flatten();
        EmpiricalSummary {
            num_runs: runs.len(),
            non_converged: runs.iter().filter(|r| !r.converged).count(),
            mean_loss: m,
            std_error,
            z_score: (m - analysis.mean_loss) / std_error,
            mean_z: mean(&zs),
            chi_squared,
        }
    });

    let empirical_z: Vec<f64> = runs.iter().map(|r| r.z).collect();
    Ok(PairReport {
        variant,
        eta,
        protocol_fingerprint: p.fingerprint().to_owned(),
        histogram: build_histogram(&theory_z, &empirical_z),
        theory,
        empirical,
        runs,
    })
}

/// Runs every (variant, η) pair of the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let entries = cfg
        .pairs()
        .into_iter()
        .map(|(v, e)| run_pair(cfg, v, e))
        .collect::<Result<Vec<_>>>()?;
    let generated_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(ExperimentReport {
        config: cfg.clone(),
        entries,
        metadata: ReportMetadata {
            version: env!("CARGO_PKG_VERSION").into(),
            parallel: par::is_parallel(),
            generated_at,
        },
    })
}
