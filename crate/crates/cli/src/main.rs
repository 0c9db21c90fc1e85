//! `srblab`: command-line front end. Each subcommand fills an experiment
//! configuration from an optional TOML file and flags, validates it, runs it
//! and writes its files plus `manifest.json` to the output directory.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags or config, or an
//! invalid certificate from `check`), 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use srblab::config::{parse_config, parse_config_for, parse_t_range, ConfigError, ExperimentConfig, Issue, Kind};
use srblab::experiment::run_experiment;
use srblab::models::{cat_matrix, Family};

const OUTPUTS: &str = "\
Every run writes manifest.json (version, config hash, seed, wall time and the
SHA-256 of each file) next to its outputs. All other files are identical
across runs with the same configuration and seed, whatever --workers is.";

#[derive(Parser, Debug)]
#[command(name = "srblab", version, about = "Numerical laboratory for SRB measures of torus endomorphisms", after_help = OUTPUTS)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify the cone conditions on a grid.
    #[command(long_about = "Certify the cone conditions on a grid and derive the hyperbolicity constant c.\n\n\
Outputs: certificate.json (floors, margins, slack, violations, gamma estimate),\n\
visit_frequency.csv with columns gamma,n,fraction_exceeding, and visit_frequency.dat.\n\
Exits 1 when the certificate is invalid.")]
    Check(Common),
    /// Push a disk tangent to the unstable cone forward and bin its Cesàro average.
    #[command(long_about = "Push a disk tangent to the unstable cone forward and bin its Cesàro average.\n\n\
Outputs: measure.csv (bin-center coordinates x,y[,z] and weight of every nonempty bin),\n\
measure_fourier.json ({dim, k_max, mass, modes: [[k..., re, im]]}), measure.dat and\n\
srb.json (distance to Lebesgue, mass, alpha_hat of the hyperbolic-time restricted measure, c).")]
    Srb(RateArgs),
    /// Detect cone-hyperbolic times along an ensemble of orbits.
    #[command(long_about = "Detect cone-hyperbolic times along an ensemble of orbits.\n\n\
Outputs: hyptimes.csv with columns orbit_id,n_detected,frequency_hat,birkhoff_avg,\n\
hyptimes.json with every detected time per orbit, and hyptimes.dat.\n\
Without --c the rate is a quarter of the negated median Birkhoff average of the cone logs.")]
    Hyptimes(RateArgs),
    /// Lyapunov spectra by the QR method.
    #[command(long_about = "Lyapunov spectra by the QR method over seeded uniform starts.\n\n\
Outputs: lyapunov.csv with columns orbit_id,start_*,lambda_1..lambda_d,drift,mean_log_det,\n\
lyapunov.json (mean exponents, per-orbit spectra with multiplicities) and lyapunov.dat.")]
    Lyapunov(Common),
    /// Entropy by the stable-Jacobian formula, checked against the exponents.
    #[command(long_about = "Entropy of the measure built as in `srb`, by the stable-Jacobian formula,\n\
cross-checked against the summed positive exponents of a measure-distributed ensemble\n\
(--starts orbits of --iters steps).\n\n\
Outputs: entropy.json (h_formula, h_pesin, discrepancy, half-resolution value, identity residual)\n\
and the measure files of `srb`.")]
    Entropy(Common),
    /// Sweep the perturbation parameter and measure continuity.
    #[command(long_about = "Sweep the perturbation parameter t, building the measure (and optionally\n\
certificate and entropy) at each value.\n\n\
Outputs: sweep.csv with columns t,certified,c,entropy,entropy_second_seed,seed_distance,\n\
distance_to_next,error; sweep.json with the moduli and noise floors; sweep.dat (t entropy distance).")]
    Sweep(SweepArgs),
    /// Unstable directions at a point from random pre-orbits.
    #[command(long_about = "Unstable directions at a point from random pre-orbits, with the backward\n\
contraction defect at rate c/2 (0 means the contraction is certified).\n\n\
Outputs: unstable.csv with columns sample,depth,drift,contraction_defect,e1_x,...\n\
and unstable.json. One sample per --starts.")]
    Unstable(PointArgs),
    /// Preimages of a point and one random pre-orbit.
    #[command(long_about = "All preimages of a point and one random pre-orbit of length --depth.\n\n\
Outputs: preimages.csv (branch,x,y[,z]), preorbit.csv (j,symbol,x,y[,z]), preorbit.dat, preimages.json.")]
    Preimages(PointArgs),
    /// Run a configuration file whose top-level `kind` names the experiment.
    #[command(long_about = "Run a configuration file whose top-level `kind` names the experiment.\n\n\
Schema (all keys optional except kind):\n\
  kind = check | srb | hyptimes | lyapunov | entropy | sweep | unstable | preimages\n\
  [model]     family (linear|pitchfork|hopf), matrix, rho, radius, stable_radius, t, center\n\
  [cones]     width, stable_width\n\
  [constants] c, delta, grid, support_grid, resolution, k_max, gamma0, stable_depth, exclude_radius\n\
  [run]       iters, samples, starts, disk_radius, seed, out, workers\n\
  [sweep]     t_start, t_stop, t_step, entropy, certify\n\
  [point]     x, depth")]
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<String>,
        #[arg(long, env = "SRBLAB_WORKERS")]
        workers: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    /// Linear map given by --matrix (the cat map by default).
    Linear,
    Cat,
    /// x -> 2x on the circle.
    Doubling,
    Pitchfork,
    Hopf,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Integer matrix, rows separated by ';' and entries by ',' (e.g. "2,1;1,1").
    #[arg(long)]
    matrix: Option<String>,
    /// Strength of the bump perturbation.
    #[arg(long)]
    rho: Option<f64>,
    /// Perturbation parameter in [0, 1].
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config value, then $SRBLAB_OUT, then ./srblab-out].
    #[arg(long)]
    out: Option<String>,
    /// Worker threads, 0 for one per core. Does not change any output.
    #[arg(long, env = "SRBLAB_WORKERS")]
    workers: Option<usize>,
    /// Orbit length.
    #[arg(long)]
    iters: Option<usize>,
    /// Disk samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct RateArgs {
    #[command(flatten)]
    common: Common,
    /// Hyperbolic-time rate c > 0.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter grid as start:stop:step.
    #[arg(long, value_name = "START:STOP:STEP")]
    t_range: Option<String>,
    /// Skip the entropy at each parameter.
    #[arg(long)]
    no_entropy: bool,
    /// Skip the certificate at each parameter.
    #[arg(long)]
    no_certify: bool,
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    #[command(flatten)]
    common: Common,
    /// Base point, comma-separated coordinates [default: seeded uniform point].
    #[arg(long, allow_hyphen_values = true)]
    point: Option<String>,
    /// Pre-orbit depth.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

fn issue(path: &str, message: impl Into<String>) -> Failure {
    Failure::Validation(ConfigError::Invalid(vec![Issue { path: path.into(), message: message.into() }]).to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<Vec<T>, Failure> {
    s.split(sep)
        .map(|p| p.trim().parse().map_err(|_| issue(what, format!("'{p}' is not a number"))))
        .collect()
}

fn load(kind: Kind, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
            parse_config_for(&text, Some(kind)).map_err(|e| Failure::Validation(e.to_string()))?
        }
        None => ExperimentConfig::defaults(kind, Family::Linear),
    };
    if let Some(f) = common.family {
        let (family, matrix) = match f {
            FamilyArg::Linear | FamilyArg::Cat => (Family::Linear, cat_matrix()),
            FamilyArg::Doubling => (Family::Linear, vec![vec![2]]),
            FamilyArg::Pitchfork => (Family::Pitchfork, ExperimentConfig::defaults(kind, Family::Pitchfork).model.matrix),
            FamilyArg::Hopf => (Family::Hopf, ExperimentConfig::defaults(kind, Family::Hopf).model.matrix),
        };
        cfg.model.family = family;
        cfg.model.matrix = matrix;
    }
    if let Some(m) = &common.matrix {
        cfg.model.matrix = m.split(';').map(|row| parse_list(row, ',', "model.matrix")).collect::<Result<_, _>>()?;
    }
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.model.rho, common.rho);
    set(&mut cfg.model.t, common.t);
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if common.out.is_some() {
        cfg.run.out = common.out.clone();
    }
    for (slot, v) in [
        (&mut cfg.run.workers, common.workers),
        (&mut cfg.run.iters, common.iters),
        (&mut cfg.run.samples, common.samples),
        (&mut cfg.run.starts, common.starts),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    Ok(cfg)
}

fn build(cli: &Command) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match cli {
        Command::Check(c) => load(Kind::Check, c)?,
        Command::Lyapunov(c) => load(Kind::Lyapunov, c)?,
        Command::Entropy(c) => load(Kind::Entropy, c)?,
        Command::Srb(a) | Command::Hyptimes(a) => {
            let kind = if matches!(cli, Command::Srb(_)) { Kind::Srb } else { Kind::Hyptimes };
            let mut cfg = load(kind, &a.common)?;
            cfg.constants.c = a.c.or(cfg.constants.c);
            cfg
        }
        Command::Sweep(a) => {
            let mut cfg = load(Kind::Sweep, &a.common)?;
            if let Some(r) = &a.t_range {
                let (s, e, st) = parse_t_range(r).map_err(|m| issue("sweep", m))?;
                (cfg.sweep.t_start, cfg.sweep.t_stop, cfg.sweep.t_step) = (s, e, st);
            }
            cfg.sweep.entropy &= !a.no_entropy;
            cfg.sweep.certify &= !a.no_certify;
            cfg
        }
        Command::Unstable(a) | Command::Preimages(a) => {
            let kind = if matches!(cli, Command::Unstable(_)) { Kind::Unstable } else { Kind::Preimages };
            let mut cfg = load(kind, &a.common)?;
            if let Some(p) = &a.point {
                cfg.point.x = Some(parse_list(p, ',', "point.x")?);
            }
            if let Some(d) = a.depth {
                cfg.point.depth = d;
            }
            cfg.constants.c = a.c.or(cfg.constants.c);
            cfg
        }
        Command::Run { config, out, workers } => {
            let text = std::fs::read_to_string(config)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = parse_config(&text).map_err(|e| Failure::Validation(e.to_string()))?;
            if out.is_some() {
                cfg.run.out = out.clone();
            }
            if let Some(w) = workers {
                cfg.run.workers = *w;
            }
            cfg
        }
    };
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(Failure::Validation(ConfigError::Invalid(issues).to_string()));
    }
    cfg.run.out = Some(cfg.out_dir());
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let cfg = build(&cli.command)?;
    let manifest = run_experiment(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{} run: {} files in {} ({:.2} s)", cfg.kind.name(), manifest.files.len() + 1, manifest.out_dir, manifest.wall_time_s);
    println!("{}", serde_json::to_string_pretty(&manifest.summary).unwrap_or_default());
    if !manifest.passed {
        eprintln!("error: certificate is invalid; see certificate.json");
    }
    Ok(manifest.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("SRBLAB_LOG").init();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
