use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use polartomo::experiment::{self, ExperimentConfig, StateSpec, MAX_NON_CONVERGED_FRACTION};
use polartomo::information::{self, sample_loss_distribution};
use polartomo::par;
use polartomo::protocol::{build_protocol, verify_unity_decomposition};
use polartomo::{
    ghz_state, ml_reconstruct, sample_counts, CountsRecord, Protocol, ProtocolVariant, PureState,
    SingleQubitProjectorSet, SolverOptions, TomoError,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Multi-photon polarization tomography with imperfect detectors.
#[derive(Parser, Debug)]
#[command(name = "polartomo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling; overrides `master_seed` for `experiment`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build protocols and write them as JSON.
    Protocol(ProtocolArgs),
    /// Draw Poisson counts for a state under a protocol.
    Simulate(SimulateArgs),
    /// Maximum-likelihood reconstruction from counts.
    Reconstruct(ReconstructArgs),
    /// Information matrix, loss statistics and z samples.
    Info(InfoArgs),
    /// Theory vs Monte Carlo comparison over every (variant, eta) pair.
    Experiment,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// Used when no --config is given.
    #[arg(long)]
    variant: Option<ProtocolVariant>,
    /// Number of photons N.
    #[arg(long)]
    photons: Option<usize>,
    /// Sample size n.
    #[arg(long)]
    n: Option<f64>,
    /// Detector efficiency; required for fuzzy and coincidence.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value = "octahedron8")]
    m1_set: String,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    protocol: PathBuf,
    /// `ghz`, `ghz:N`, or a JSON file holding a state spec.
    #[arg(long)]
    state: String,
    /// Write expected counts instead of Poisson draws.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// State to report fidelity against.
    #[arg(long)]
    reference: Option<String>,
    /// Solver options (JSON); ignored when --config supplies them.
    #[arg(long)]
    solver: Option<PathBuf>,
    /// Accept counts whose fingerprint differs from the protocol's.
    #[arg(long)]
    allow_mismatch: bool,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    state: String,
    /// Number of z samples to draw from the loss model.
    #[arg(long, default_value_t = 0)]
    samples: usize,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<TomoError>() {
            Some(e) if !e.is_validation() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Failure { code, error }
    }
}

impl From<TomoError> for Failure {
    fn from(e: TomoError) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let workers = cli.common.workers;
    let outcome = match par::with_workers(workers, || run(&cli)) {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Protocol(a) => cmd_protocol(&cli.common, a),
        Command::Simulate(a) => cmd_simulate(&cli.common, a),
        Command::Reconstruct(a) => cmd_reconstruct(&cli.common, a),
        Command::Info(a) => cmd_info(&cli.common, a),
        Command::Experiment => cmd_experiment(&cli.common),
    }
}

fn out_dir(common: &Common) -> anyhow::Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_config(common: &Common) -> anyhow::Result<Option<ExperimentConfig>> {
    common
        .config
        .as_deref()
        .map(|p| ExperimentConfig::load(p).with_context(|| format!("config {}", p.display())))
        .transpose()
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_protocol(path: &Path) -> anyhow::Result<Protocol> {
    Protocol::from_json(&read(path)?).with_context(|| format!("protocol {}", path.display()))
}

fn parse_state(spec: &str) -> anyhow::Result<PureState> {
    if spec == "ghz" {
        return Ok(ghz_state(3)?);
    }
    if let Some(n) = spec.strip_prefix("ghz:") {
        let n: usize = n
            .parse()
            .with_context(|| format!("bad photon number in {spec:?}"))?;
        return Ok(ghz_state(n)?);
    }
    let text = read(Path::new(spec))?;
    let parsed: StateSpec =
        serde_json::from_str(&text).with_context(|| format!("state spec {spec}"))?;
    Ok(parsed.build()?)
}

fn protocol_file_name(p: &Protocol) -> String {
    match p.variant() {
        ProtocolVariant::Ideal => format!("protocol_{}.json", p.variant()),
        v => format!("protocol_{v}_eta{}.json", p.efficiency()),
    }
}

fn cmd_protocol(common: &Common, a: &ProtocolArgs) -> CmdResult {
    let protocols = match load_config(common)? {
        Some(cfg) => {
            let mut out = Vec::new();
            for (v, eta) in cfg.pairs() {
                // Ideal protocols do not depend on eta.
                if v == ProtocolVariant::Ideal && out.iter().any(|p: &Protocol| p.variant() == v) {
                    continue;
                }
                out.push(cfg.build_protocol(v, eta)?);
            }
            out
        }
        None => {
            let variant = a
                .variant
                .context("--variant is required without --config")?;
            let photons = a
                .photons
                .context("--photons is required without --config")?;
            let n = a.n.context("--n is required without --config")?;
            let eta = match (variant, a.eta) {
                (ProtocolVariant::Ideal, e) => e.unwrap_or(1.0),
                (_, Some(e)) => e,
                (_, None) => return Err(anyhow::anyhow!("--eta is required for {variant}").into()),
            };
            let set = SingleQubitProjectorSet::named(&a.m1_set)?;
            vec![build_protocol(variant, &set, photons, n, eta)?]
        }
    };
    let dir = out_dir(common)?;
    for p in &protocols {
        let path = dir.join(protocol_file_name(p));
        write(&path, &p.to_json())?;
        println!(
            "{} elements, unity-decomposition residual {:.3e}",
            p.len(),
            verify_unity_decomposition(p)
        );
        let zero = p.zero_exposure_count();
        if zero > 0 {
            eprintln!("warning: {zero} elements have zero exposure");
        }
    }
    Ok(())
}

fn cmd_simulate(common: &Common, a: &SimulateArgs) -> CmdResult {
    let p = load_protocol(&a.protocol)?;
    let psi = parse_state(&a.state)?;
    let record = if a.noiseless {
        CountsRecord::noiseless(&p, &psi)?
    } else {
        let seed = common
            .seed
            .context("--seed is required unless --noiseless")?;
        sample_counts(&p, &psi, seed)?
    };
    let dir = out_dir(common)?;
    write(&dir.join("counts.json"), &record.to_json())?;
    println!("total counts {}", record.total());
    Ok(())
}

fn cmd_reconstruct(common: &Common, a: &ReconstructArgs) -> CmdResult {
    let p = load_protocol(&a.protocol)?;
    let counts = CountsRecord::from_json(&read(&a.counts)?)
        .with_context(|| format!("counts {}", a.counts.display()))?;
    let mut opts = match (load_config(common)?, &a.solver) {
        (Some(cfg), _) => cfg.solver,
        (None, Some(path)) => serde_json::from_str::<SolverOptions>(&read(path)?)
            .with_context(|| format!("solver options {}", path.display()))?,
        (None, None) => SolverOptions::default(),
    };
    if let Some(seed) = common.seed {
        opts.init_seed = seed;
    }
    opts.allow_fingerprint_mismatch |= a.allow_mismatch;
    let mut result = ml_reconstruct(&p, &counts, &opts)?;
    if let Some(spec) = &a.reference {
        result = result.with_reference(&parse_state(spec)?)?;
    }
    let dir = out_dir(common)?;
    write(&dir.join("result.json"), &result.to_json())?;
    println!(
        "iterations {}, residual {:.3e}, converged {}",
        result.iterations, result.residual, result.converged
    );
    if let Some(f) = result.fidelity_vs_reference {
        println!("fidelity {f:.12}");
    }
    if !result.converged {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            error: anyhow::anyhow!("reconstruction did not converge"),
        });
    }
    Ok(())
}

fn cmd_info(common: &Common, a: &InfoArgs) -> CmdResult {
    let p = load_protocol(&a.protocol)?;
    let psi = parse_state(&a.state)?;
    let analysis = information::analyze(&p, &psi)?;
    let dir = out_dir(common)?;
    write(&dir.join("analysis.json"), &analysis.to_json())?;
    println!(
        "h = {:.12} (closed form {:.12}), mean loss {:.6e}",
        analysis.normalized_information, analysis.closed_form_information, analysis.mean_loss
    );
    if a.samples > 0 {
        let z = sample_loss_distribution(
            &analysis.loss_coefficients,
            a.samples,
            common.seed.unwrap_or(0),
        )?;
        write(&dir.join("z_samples.csv"), &experiment::z_samples_csv(&z))?;
    }
    Ok(())
}

fn cmd_experiment(common: &Common) -> CmdResult {
    let mut cfg = load_config(common)?.context("experiment needs --config")?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let report = experiment::run_experiment(&cfg)?;
    for path in report.write(&dir)? {
        println!("wrote {}", path.display());
    }
    for e in &report.entries {
        let line = match &e.empirical {
            Some(emp) => format!(
                "{}: theory {:.6e}, empirical {:.6e} +/- {:.2e}, p = {}",
                e.tag(),
                e.theory.mean_loss,
                emp.mean_loss,
                emp.std_error,
                emp.chi_squared
                    .map(|c| format!("{:.4}", c.p_value))
                    .unwrap_or_else(|| "n/a".into()),
            ),
            None => format!("{}: theory {:.6e}", e.tag(), e.theory.mean_loss),
        };
        println!("{line}");
    }
    let frac = report.non_converged_fraction();
    if frac > MAX_NON_CONVERGED_FRACTION {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            error: anyhow::anyhow!(
                "{:.1}% of reconstructions did not converge (limit {:.0}%)",
                100.0 * frac,
                100.0 * MAX_NON_CONVERGED_FRACTION
            ),
        });
    }
    Ok(())
}
