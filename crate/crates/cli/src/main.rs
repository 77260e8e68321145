use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gvfl::checkpoint::write_atomic;
use gvfl::eval::aggregate_csv;
use gvfl::graph::convert_citation;
use gvfl::{AttackConfig, AttackMethod, DefenseKind};
use gvfl_cli::report::{reaggregate, render_table};
use gvfl_cli::sweep::parse_values;
use gvfl_cli::{run_and_write, run_sweep, CliError, ExperimentConfig, Result, SweepAxis};

#[derive(Parser)]
#[command(name = "gvfl", version, about = "GNN vertical federated learning attack simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a citation dataset (`.content` + `.cites`) into the simulator's format.
    Convert {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the federation without attacking it.
    Train(RunArgs),
    /// Train, then attack the selected targets.
    Attack(RunArgs),
    /// Train with a defense enabled, attacking if the config has an attack.
    Defend(RunArgs),
    /// Repeat a scenario over values of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// epsilon, d, k (Top-k), beta (DP) or K (participants).
        #[arg(long)]
        axis: String,
        /// Comma-separated list or inclusive range `start:end:step`.
        #[arg(long)]
        values: String,
    },
    /// Re-aggregate the per-seed results in a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Also write the aggregate CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Output directory (defaults to the config's `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    defense: Option<String>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seeds) = &self.seed_override {
            cfg.seeds = seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.clone());
        }
        if let Some(method) = &self.method {
            let method: AttackMethod = method.parse()?;
            cfg.attack.get_or_insert_with(AttackConfig::default).method = method;
        }
        if let Some(defense) = &self.defense {
            cfg.defense.kind = defense.parse::<DefenseKind>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_verb(args: &RunArgs, adjust: impl FnOnce(&mut ExperimentConfig) -> Result<()>) -> Result<()> {
    let mut cfg = args.load()?;
    adjust(&mut cfg)?;
    cfg.validate()?;
    let dir = cfg.output_dir();
    let out = run_and_write(&cfg, args.jobs, &dir)?;
    print!("{}", render_table(&out.aggregate));
    println!("results written to {}", dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { content, cites, out } => {
            let summary = convert_citation(&content, &cites, &out)?;
            println!(
                "{} nodes, {} undirected edges from {} citation records ({} self-loops, {} dangling skipped), {} features, {} classes -> {}",
                summary.nodes,
                summary.edges,
                summary.edge_records,
                summary.self_loops,
                summary.dangling_records,
                summary.features,
                summary.classes,
                summary.output.display()
            );
            Ok(())
        }
        Command::Train(args) => run_verb(&args, |cfg| {
            if args.method.is_some() {
                return Err(CliError::Config("`train` does not take --method; use `attack`".into()));
            }
            cfg.attack = None;
            Ok(())
        }),
        Command::Attack(args) => run_verb(&args, |cfg| {
            cfg.attack.get_or_insert_with(AttackConfig::default);
            Ok(())
        }),
        Command::Defend(args) => run_verb(&args, |cfg| {
            if cfg.defense.kind == DefenseKind::None {
                return Err(CliError::Config("`defend` needs a defense (config [defense] or --defense)".into()));
            }
            Ok(())
        }),
        Command::Sweep { run, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            let cfg = run.load()?;
            let dir = cfg.output_dir();
            let rows = run_sweep(&cfg, axis, &values, run.jobs, &dir)?;
            print!("{}", render_table(&rows));
            println!("sweep written to {}", dir.display());
            Ok(())
        }
        Command::Report { dir, out } => {
            let rows = reaggregate(&dir)?;
            print!("{}", render_table(&rows));
            if let Some(out) = out {
                write_atomic(&out, aggregate_csv(&rows))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
