//! Maximum-likelihood reconstruction of a pure state from Poisson counts.
//!
//! The likelihood is stationary where I|ψ⟩ = J(ψ)|ψ⟩ with I = Σ t_jΛ_j and
//! J(ψ) = Σ (k_j/λ_j(ψ))Λ_j. For a unity-decomposition protocol I = c·I_s.
//! The solution carries the amplitude normalization ⟨ψ|ψ⟩ = K/c, where K = Σ k_j,
//! so on unit-norm states the same condition reads J(ψ)ψ = K·ψ. The solver
//! iterates the damped map
//!
//! ```text
//! ψ ← normalize((1 − α)·ψ + α·J(ψ)ψ / K)
//! ```
//!
//! halving α whenever a step would lower the likelihood.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::par;
use crate::protocol::Protocol;
use crate::quantum::{fidelity, PureState, C64};
use crate::simulation::{substream, CountsRecord};

/// Smallest damping tried before the iteration is declared stalled.
const MIN_STEP: f64 = 1e-8;
/// Allowed likelihood decrease on an accepted step; absorbs rounding in the
/// rate evaluations.
const LIKELIHOOD_SLACK: f64 = 1e-9;
/// Restarts whose likelihoods differ by less than this are tied.
const TIE_TOL: f64 = 1e-12;
const INIT_PERTURBATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial step α of the damped update, in (0, 1].
    pub damping: f64,
    /// Number of independent starts; the first is the perturbed flat state,
    /// the rest are Haar random.
    pub restarts: usize,
    /// Floor applied to λ_j when k_j > 0.
    pub rate_floor: f64,
    pub init_seed: u64,
    pub allow_fingerprint_mismatch: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
            damping: 0.5,
            restarts: 5,
            rate_floor: 1e-12,
            init_seed: 0,
            allow_fingerprint_mismatch: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.max_iterations > 0
            && self.damping > 0.0
            && self.damping <= 1.0
            && self.restarts > 0
            && self.rate_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TomoError::invalid(format!(
                "invalid solver options: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub estimate: PureState,
    /// Accepted updates in the winning run.
    pub iterations: usize,
    pub converged: bool,
    /// ‖ψ − J(ψ)ψ/K‖ at the estimate.
    pub residual: f64,
    pub log_likelihood: f64,
    pub fidelity_vs_reference: Option<f64>,
    /// Which start produced the estimate.
    pub restart: usize,
}

impl ReconstructionResult {
    pub fn with_reference(mut self, reference: &PureState) -> Result<Self> {
        self.fidelity_vs_reference = Some(fidelity(&self.estimate, reference)?);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let doc = ResultDocument {
            num_photons: self.estimate.num_photons(),
            amplitudes: self
                .estimate
                .amplitudes()
                .iter()
                .map(|a| [a.re, a.im])
                .collect(),
            iterations: self.iterations,
            converged: self.converged,
            residual: self.residual,
            log_likelihood: self
                .log_likelihood
                .is_finite()
                .then_some(self.log_likelihood),
            fidelity_vs_reference: self.fidelity_vs_reference,
            restart: self.restart,
        };
        serde_json::to_string_pretty(&doc).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ResultDocument = serde_json::from_str(text)?;
        let estimate = PureState::new(
            doc.amplitudes
                .iter()
                .map(|&[re, im]| C64::new(re, im))
                .collect(),
        )?;
        if estimate.num_photons() != doc.num_photons {
            return Err(TomoError::invalid("amplitude count does not match N"));
        }
        Ok(ReconstructionResult {
            estimate,
            iterations: doc.iterations,
            converged: doc.converged,
            residual: doc.residual,
            log_likelihood: doc.log_likelihood.unwrap_or(f64::NEG_INFINITY),
            fidelity_vs_reference: doc.fidelity_vs_reference,
            restart: doc.restart,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultDocument {
    #[serde(rename = "N")]
    num_photons: usize,
    amplitudes: Vec<[f64; 2]>,
    iterations: usize,
    converged: bool,
    residual: f64,
    log_likelihood: Option<f64>,
    fidelity_vs_reference: Option<f64>,
    restart: usize,
}

/// Poisson log-likelihood Σ_j [k_j·ln(λ_j t_j) − λ_j t_j] with 0·ln 0 = 0.
/// Returns −∞ when an element with counts has zero expected rate.
pub fn log_likelihood(p: &Protocol, counts: &CountsRecord, psi: &PureState) -> Result<f64> {
    if counts.len() != p.len() {
        return Err(TomoError::DimensionMismatch {
            what: "counts",
            expected: p.len(),
            found: counts.len(),
        });
    }
    let rates = p.rates(psi)?;
    let mut total = 0.0;
    for ((lam, e), &k) in rates.iter().zip(p.elements()).zip(counts.counts()) {
        let mu = lam * e.exposure;
        if k > 0.0 {
            if mu <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += k * mu.ln();
        }
        total -= mu;
    }
    Ok(total)
}

/// ‖ψ − J(ψ)ψ/K‖ for a unit-norm ψ. Equals ‖Iψ − J(ψ)ψ‖/c for noiseless
/// counts, where K = c.
pub fn fixed_point_residual(
    p: &Protocol,
    counts: &CountsRecord,
    psi: &PureState,
    rate_floor: f64,
) -> Result<f64> {
    counts.check_against(p, true)?;
    p.check_state(psi)?;
    let problem = Problem::new(p, counts, rate_floor)?;
    let x = psi.amplitudes().clone();
    let (lx, lam) = problem.evaluate(&x);
    Ok((&x - problem.pull(&lx, &lam)).norm())
}

/// Elements with k_j > 0; the others drop out of J and, because Σ t_jλ_j is
/// constant on unit-norm states, out of likelihood comparisons.
struct Problem<'a> {
    ops: Vec<&'a nalgebra::DMatrix<C64>>,
    counts: Vec<f64>,
    total: f64,
    floor: f64,
}

impl<'a> Problem<'a> {
    fn new(p: &'a Protocol, counts: &CountsRecord, floor: f64) -> Result<Self> {
        let mut ops = Vec::new();
        let mut ks = Vec::new();
        for (j, &k) in counts.counts().iter().enumerate() {
            if k > 0.0 {
                ops.push(p.operator(j));
                ks.push(k);
            }
        }
        let total: f64 = ks.iter().sum();
        if total <= 0.0 {
            return Err(TomoError::invalid("counts record contains no events"));
        }
        Ok(Problem {
            ops,
            counts: ks,
            total,
            floor,
        })
    }

    fn evaluate(&self, x: &DVector<C64>) -> (Vec<DVector<C64>>, Vec<f64>) {
        let lx: Vec<_> = self.ops.iter().map(|op| *op * x).collect();
        let lam = lx.iter().map(|v| x.dotc(v).re.max(self.floor)).collect();
        (lx, lam)
    }

    /// J(ψ)ψ / K.
    fn pull(&self, lx: &[DVector<C64>], lam: &[f64]) -> DVector<C64> {
        let mut acc = DVector::zeros(lx[0].len());
        for ((v, &l), &k) in lx.iter().zip(lam).zip(&self.counts) {
            acc.axpy(C64::new(k / l, 0.0), v, C64::new(1.0, 0.0));
        }
        acc.unscale(self.total)
    }

    /// Σ k_j ln(λ_new/λ_old), accurate for nearby states.
    fn likelihood_change(&self, new: &[f64], old: &[f64]) -> f64 {
        new.iter()
            .zip(old)
            .zip(&self.counts)
            .map(|((a, b), k)| k * (a / b).ln())
            .sum()
    }
}

struct Run {
    x: DVector<C64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

fn iterate(problem: &Problem<'_>, init: &DVector<C64>, opts: &SolverOptions) -> Run {
    let mut x = init.unscale(init.norm());
    let (mut lx, mut lam) = problem.evaluate(&x);
    let mut accepted = 0;
    loop {
        let pulled = problem.pull(&lx, &lam);
        let residual = (&x - &pulled).norm();
        if residual <= opts.tolerance {
            return Run {
                x,
                iterations: accepted,
                residual,
                converged: true,
            };
        }
        if accepted >= opts.max_iterations {
            return Run {
                x,
                iterations: accepted,
                residual,
                converged: false,
            };
        }
        let mut alpha = opts.damping;
        loop {
            let mut y = x.scale(1.0 - alpha);
            y.axpy(C64::new(alpha, 0.0), &pulled, C64::new(1.0, 0.0));
            let y = y.unscale(y.norm());
            let (ly, lamy) = problem.evaluate(&y);
            if problem.likelihood_change(&lamy, &lam) >= -LIKELIHOOD_SLACK {
                x = y;
                lx = ly;
                lam = lamy;
                accepted += 1;
                break;
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                return Run {
                    x,
                    iterations: accepted,
                    residual,
                    converged: false,
                };
            }
        }
    }
}

fn initial_state(dim: usize, num_photons: usize, restart: usize, seed: u64) -> DVector<C64> {
    let mut rng = substream(seed, restart as u64);
    if restart == 0 {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let flat = 1.0 / (dim as f64).sqrt();
        DVector::from_fn(dim, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(flat + INIT_PERTURBATION * re, INIT_PERTURBATION * im)
        })
    } else {
        PureState::random(num_photons, &mut rng)
            .expect("num_photons >= 1")
            .amplitudes()
            .clone()
    }
}

fn finish(
    p: &Protocol,
    counts: &CountsRecord,
    run: Run,
    restart: usize,
) -> Result<ReconstructionResult> {
    let estimate = PureState::from_vector(p.num_photons(), run.x)?;
    let log_likelihood = log_likelihood(p, counts, &estimate)?;
    Ok(ReconstructionResult {
        estimate,
        iterations: run.iterations,
        converged: run.converged,
        residual: run.residual,
        log_likelihood,
        fidelity_vs_reference: None,
        restart,
    })
}

/// Runs `opts.restarts` independent starts and keeps the most likely estimate.
/// Exact ties go to the lowest restart index.
pub fn ml_reconstruct(
    p: &Protocol,
    counts: &CountsRecord,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    opts.validate()?;
    counts.check_against(p, opts.allow_fingerprint_mismatch)?;
    let problem = Problem::new(p, counts, opts.rate_floor)?;
    let runs = par::map_range(opts.restarts, |r| {
        let init = initial_state(p.dim(), p.num_photons(), r, opts.init_seed);
        iterate(&problem, &init, opts)
    });
    let mut best: Option<ReconstructionResult> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let candidate = finish(p, counts, run, r)?;
        best = match best {
            Some(b) if candidate.log_likelihood <= b.log_likelihood + TIE_TOL => Some(b),
            _ => Some(candidate),
        };
    }
    Ok(best.expect("at least one restart"))
}

/// Single run from a caller-supplied starting state.
pub fn ml_reconstruct_from(
    p: &Protocol,
    counts: &CountsRecord,
    init: &PureState,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    opts.validate()?;
    counts.check_against(p, opts.allow_fingerprint_mismatch)?;
    p.check_state(init)?;
    let problem = Problem::new(p, counts, opts.rate_floor)?;
    let run = iterate(&problem, init.amplitudes(), opts);
    finish(p, counts, run, 0)
}

/// Likelihood after every accepted update of a single run, for diagnostics.
pub fn likelihood_trace(
    p: &Protocol,
    counts: &CountsRecord,
    init: &PureState,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    let problem = Problem::new(p, counts, opts.rate_floor)?;
    let mut trace = vec![log_likelihood(p, counts, init)?];
    let mut state = init.clone();
    for _ in 0..opts.max_iterations {
        let step = SolverOptions {
            max_iterations: 1,
            ..*opts
        };
        let run = iterate(&problem, state.amplitudes(), &step);
        let done = run.converged || run.iterations == 0;
        state = PureState::from_vector(p.num_photons(), run.x)?;
        if run.iterations > 0 {
            trace.push(log_likelihood(p, counts, &state)?);
        }
        if done {
            break;
        }
    }
    Ok(trace)
}
