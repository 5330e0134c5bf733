use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowmob::harness::output::{write_results, write_run_traces};
use flowmob::harness::runner::{aggregate, run_grid, run_seeds, sweep_specs};
use flowmob::harness::{Capture, ConfigError, ScenarioSpec, SimConfig, SimError};
use flowmob::mobility::TraceFile;

#[derive(Parser)]
#[command(name = "flowmob-sim", version, about = "Per-flow mobility simulator for vehicular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario over several seeds.
    Run(RunArgs),
    /// Run the grid described by the `[sweep]` section of a config.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `sweep.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a mobility trace file.
    ValidateTrace { path: PathBuf },
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    active: Option<usize>,
    #[arg(long)]
    speed: Option<f64>,
    /// `manhattan` or `trace:<path>`.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Write per-seed packet traces.
    #[arg(long)]
    packet_trace: bool,
    /// Write per-seed protocol event logs.
    #[arg(long)]
    event_log: bool,
    /// Write the binding cache at the end of each seed.
    #[arg(long)]
    bce_dump: bool,
}

enum Failure {
    Config(String),
    Invariant(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e.exit_code() {
            2 => Failure::Config(e.to_string()),
            _ => Failure::Invariant(e.to_string()),
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<SimConfig, ConfigError> {
    match path {
        Some(p) => SimConfig::load(p),
        None => Ok(SimConfig::default()),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_ref())?;
    let r = &mut cfg.run;
    if let Some(v) = args.scenario {
        r.scenario = v;
    }
    if let Some(v) = args.active {
        r.active = v;
    }
    if let Some(v) = args.speed {
        r.speed = v;
    }
    if let Some(v) = args.map {
        r.map = v;
    }
    if let Some(v) = args.seeds {
        r.seeds = v;
    }
    if let Some(v) = args.seed_base {
        r.seed_base = v;
    }
    if let Some(v) = args.duration {
        r.duration = v;
    }
    cfg.validate()?;
    let spec = ScenarioSpec::from_config(&cfg)?;
    let capture = Capture { event_log: args.event_log, bce_dump: args.bce_dump };
    let outs = run_seeds(&cfg, &spec, capture)?;
    if args.packet_trace || args.event_log || args.bce_dump {
        for o in &outs {
            let mut o = o.clone();
            if !args.packet_trace {
                o.packets.clear();
            }
            write_run_traces(&args.out.join("traces"), &o)?;
        }
    }
    let seeds = outs.iter().map(|o| o.seed).collect();
    let runs = outs.into_iter().map(|o| o.metrics).collect();
    let cell = aggregate(&spec, seeds, runs, cfg.protocol.confidence);
    for p in write_results(&args.out, std::slice::from_ref(&cell))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn sweep(config: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(config.as_ref())?;
    let specs = sweep_specs(&cfg)?;
    let cells = run_grid(&cfg, &specs)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.sweep.out));
    for p in write_results(&dir, &cells)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn validate_trace(path: PathBuf) -> Result<(), Failure> {
    let trace = TraceFile::load(&path).map_err(|e| Failure::Config(e.to_string()))?;
    let ((x0, y0), (x1, y1)) = trace.extent();
    let vmax = trace.vehicles().filter_map(|v| trace.max_speed(v)).fold(0.0, f64::max);
    println!(
        "{}: {} vehicles, {} records, extent ({x0}, {y0})-({x1}, {y1}), max speed {:.2} m/s",
        path.display(),
        trace.vehicle_count(),
        trace.record_count(),
        vmax
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep { config, out } => sweep(config, out),
        Command::ValidateTrace { path } => validate_trace(path),
        Command::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(3)
        }
    }
}
