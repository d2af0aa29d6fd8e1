use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowlab::config::{DriftChoice, ExperimentConfig, ExperimentKind, SourceProfile};
use flowlab::error::{HarnessError, Result};
use flowlab::exec::RayonExecutor;
use flowlab::experiments::run_experiment;

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Experiments on stochastic transport with irregular drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides FLOWLAB_SEED and the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    drift: Option<DriftChoice>,
    /// End time.
    #[arg(long)]
    t: Option<f64>,
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    n_steps: Option<usize>,
    /// Also copy the trajectory CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ResolventArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    grid_h: Option<f64>,
    /// Half-width of the spatial cube.
    #[arg(long = "box")]
    box_half: Option<f64>,
    #[arg(long)]
    f_profile: Option<SourceProfile>,
    /// Also copy the solution CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Regime diagram over (alpha, 2/q).
    Classify(Common),
    /// One flow trajectory and its Jacobian.
    SimulateFlow {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Resolvent solution of the backward heat equation on a grid.
    Resolvent {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        res: ResolventArgs,
    },
    /// Critical integrability exponent of the counterexample drift.
    RegularitySweep(Common),
    /// Truncated Sobolev norm of the solution as the cutoff shrinks.
    BlowupDemo(Common),
    /// Inverse-flow gradient moments under grid refinement.
    MomentStudy(Common),
    /// Monte Carlo against quadrature for the Gaussian indicator expectation.
    OracleCheck(Common),
}

fn load(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = cfg.experiment {
        if k != kind {
            return Err(HarnessError::config("experiment", format!("config is for {}, not {}", k.name(), kind.name())));
        }
    }
    cfg.experiment = Some(kind);
    if let Ok(s) = std::env::var("FLOWLAB_SEED") {
        cfg.seed = s.trim().parse().map_err(|_| HarnessError::config("FLOWLAB_SEED", "not an unsigned integer"))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, csv) = match cli.command {
        Command::Classify(c) => (load(ExperimentKind::Classify, &c)?, None),
        Command::RegularitySweep(c) => (load(ExperimentKind::RegularitySweep, &c)?, None),
        Command::BlowupDemo(c) => (load(ExperimentKind::BlowupDemo, &c)?, None),
        Command::MomentStudy(c) => (load(ExperimentKind::MomentStudy, &c)?, None),
        Command::OracleCheck(c) => (load(ExperimentKind::OracleCheck, &c)?, None),
        Command::SimulateFlow { common, flow } => {
            let mut cfg = load(ExperimentKind::SimulateFlow, &common)?;
            if let Some(d) = flow.drift {
                cfg.drift.kind = Some(d);
            }
            if flow.t.is_some() {
                cfg.flow.t = flow.t;
            }
            if let Some(x) = flow.x0 {
                cfg.flow.x0 = x;
            }
            if let Some(n) = flow.n_steps {
                cfg.grid.n_steps = n;
            }
            (cfg, flow.csv.map(|p| ("simulate-flow.csv", p)))
        }
        Command::Resolvent { common, res } => {
            let mut cfg = load(ExperimentKind::Resolvent, &common)?;
            let r = &mut cfg.resolvent;
            r.lambda = res.lambda.unwrap_or(r.lambda);
            r.grid_h = res.grid_h.unwrap_or(r.grid_h);
            r.box_half = res.box_half.unwrap_or(r.box_half);
            r.f_profile = res.f_profile.unwrap_or(r.f_profile);
            (cfg, res.csv.map(|p| ("resolvent.csv", p)))
        }
    };
    let exec = RayonExecutor::new(cfg.workers)?;
    let manifest = run_experiment(&cfg, &exec)?;
    if let Some((name, dest)) = csv {
        std::fs::copy(std::path::Path::new(&cfg.out_dir).join(name), dest)?;
    }
    for o in &manifest.outputs {
        println!("{}", std::path::Path::new(&cfg.out_dir).join(o).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
