use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rwtree::extremes::LaplaceBox;
use rwtree::harness::{run, ExperimentKind, RunConfig};

/// Monte Carlo experiments on random-walk local times on b-ary trees.
///
/// Prints the run manifest as JSON on stdout. Exit status: 0 success,
/// 1 usage or configuration error, 2 experiment failure.
#[derive(Parser, Debug)]
#[command(name = "rwtree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact samples of the stopped local-time field.
    FieldSample(RunArgs),
    /// Direct simulation of the walk.
    Walk(RunArgs),
    /// Ray-Knight isomorphism test with its negative control.
    Isomorphism(RunArgs),
    /// Survival curve of the centered maximum and its exponent.
    Tail(RunArgs),
    /// Randomly shifted Gumbel fit of the centered maximum.
    Gumbel(RunArgs),
    /// Laplace functionals of the subtree-maxima point process.
    PointProcess(RunArgs),
    /// Ancestor depths of near-maximal leaf pairs.
    Geometry(RunArgs),
    /// Exactness checks of the squared Bessel transition sampler.
    BesselCheck(RunArgs),
    /// Quadrature estimate of the BRW tail constant.
    GammaStar(RunArgs),
    /// Derivative and additive martingales and cascade masses.
    Cascade(RunArgs),
}

/// Flags mirror the JSON config fields; `--config` replaces all of them.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file; its contents take precedence over every flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    b: Option<usize>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(short, long)]
    t: Option<f64>,
    #[arg(long)]
    t_schedule: Option<f64>,
    #[arg(short, long)]
    m: Option<usize>,
    #[arg(short, long)]
    replicates: Option<u64>,
    #[arg(short, long)]
    seed: Option<u64>,
    #[arg(short, long)]
    workers: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    y_grid: Option<Vec<f64>>,
    /// `loc_lo,loc_hi,y_lo,y_hi,weight`; repeatable.
    #[arg(long = "box", value_parser = parse_box)]
    boxes: Vec<LaplaceBox>,
    #[arg(long)]
    threshold_offset: Option<f64>,
    #[arg(long)]
    d_depth: Option<usize>,
    #[arg(long)]
    d_replicates: Option<u64>,
    #[arg(short, long)]
    c: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long)]
    quadrature_nodes: Option<usize>,
    #[arg(long)]
    gamma_level: Option<usize>,
    #[arg(long)]
    excursion_cap: Option<u64>,
    #[arg(long)]
    edge_duration: Option<f64>,
    #[arg(long)]
    bessel_x: Option<f64>,
    #[arg(long)]
    bessel_t: Option<f64>,
    #[arg(long)]
    dump: bool,
    #[arg(long)]
    compare: bool,
}

fn parse_box(s: &str) -> Result<LaplaceBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [loc_lo, loc_hi, y_lo, y_hi, weight] => Ok(LaplaceBox { loc_lo, loc_hi, y_lo, y_hi, weight }),
        _ => Err("expected five comma-separated numbers".into()),
    }
}

fn config_from(kind: ExperimentKind, a: RunArgs) -> Result<RunConfig, String> {
    if let Some(path) = a.config {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg = RunConfig::from_json(&text).map_err(|e| e.to_string())?;
        if cfg.kind != kind {
            return Err(format!("config file is for `{}`, not `{}`", cfg.kind.name(), kind.name()));
        }
        return Ok(cfg);
    }
    let n = a.n.ok_or("--n is required without --config")?;
    let replicates = a.replicates.ok_or("--replicates is required without --config")?;
    let mut cfg = RunConfig::new(kind, n, replicates);
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    set!(b, t_schedule, m, seed, workers, threshold_offset, d_depth, d_replicates, quadrature_nodes, excursion_cap, edge_duration, bessel_x, bessel_t);
    cfg.t = a.t;
    cfg.output = a.output;
    cfg.y_grid = a.y_grid;
    cfg.boxes = a.boxes;
    cfg.c = a.c;
    cfg.gamma_level = a.gamma_level;
    cfg.levels = a.levels.unwrap_or_default();
    cfg.dump = a.dump;
    cfg.compare = a.compare;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match cli.command {
        Command::FieldSample(a) => (ExperimentKind::FieldSample, a),
        Command::Walk(a) => (ExperimentKind::Walk, a),
        Command::Isomorphism(a) => (ExperimentKind::Isomorphism, a),
        Command::Tail(a) => (ExperimentKind::Tail, a),
        Command::Gumbel(a) => (ExperimentKind::Gumbel, a),
        Command::PointProcess(a) => (ExperimentKind::PointProcess, a),
        Command::Geometry(a) => (ExperimentKind::Geometry, a),
        Command::BesselCheck(a) => (ExperimentKind::BesselCheck, a),
        Command::GammaStar(a) => (ExperimentKind::GammaStar, a),
        Command::Cascade(a) => (ExperimentKind::Cascade, a),
    };
    let cfg = match config_from(kind, args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes"));
            if outcome.failed() {
                eprintln!("experiment failed its check");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(rwtree::Error::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
