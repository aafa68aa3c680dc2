use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use treebound::format::load_model;
use treebound::model::{gen_ising_grid, Coupling, ModelFamilySpec, PairwiseModel};
use treebound::mp::MpOptions;
use treebound_cli::{cmd_adapt_trace, cmd_bound, cmd_fig3, cmd_weight_surface, Fig3Config, Method, RunConfig};

const EXIT_UNCERTIFIED: u8 = 2;
const EXIT_ERROR: u8 = 1;

/// Certified upper and lower bounds on the log partition function of
/// pairwise Markov random fields.
#[derive(Parser, Debug)]
#[command(name = "treebound", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (default stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Message-passing convergence tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Message-passing sweep limit.
    #[arg(long, global = true, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, global = true, default_value_t = 0.5)]
    damping: f64,
    /// Exit with status 2 when any reported bound is uncertified.
    #[arg(long, global = true)]
    require_certified: bool,
    /// Print the final tree ensemble (bound command).
    #[arg(long, global = true)]
    dump_ensemble: bool,
    /// 10x10 grids for fig3.
    #[arg(long, global = true)]
    full: bool,
}

impl Shared {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            mp: MpOptions {
                max_iters: self.max_iters,
                tol: self.tol,
                damping: self.damping,
                seed: None,
            },
            seed: self.seed,
            ..RunConfig::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bound the log partition function of a model file.
    Bound {
        model: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Outer optimizer iterations.
        #[arg(long, default_value_t = 50)]
        outer_iters: usize,
    },
    /// Bound error against exact values on random Ising grids.
    Fig3 {
        #[arg(long, default_value = "attractive")]
        mode: Coupling,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        /// Comma-separated coupling strengths.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1,1.25,1.5,1.75,2")]
        c_grid: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Per-c quantile summary (default: next to --out).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Lower-bound trace with a fixed versus Chow-Liu reselected positive tree.
    AdaptTrace {
        /// Model file; a random Ising grid is generated when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        cols: usize,
        #[arg(long, default_value = "attractive")]
        coupling: Coupling,
        #[arg(long, default_value_t = 0.6)]
        strength: f64,
        #[arg(long, default_value_t = 50)]
        outer_iters: usize,
    },
    /// Fixed-point free energy over the weight plane of a three-tree model.
    WeightSurface {
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
    },
}

fn read_model(path: &Path) -> Result<PairwiseModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_summary.csv"))
}

/// Returns whether every reported bound is certified.
fn run(cli: Cli) -> Result<bool> {
    let shared = &cli.shared;
    let out = shared.out.as_deref();
    match cli.command {
        Command::Bound { model, method, outer_iters } => {
            let m = read_model(&model)?;
            let cfg = RunConfig { outer_iters, ..shared.run_config() };
            let (record, ensemble) = cmd_bound(&m, &model.display().to_string(), method, &cfg)?;
            let mut text = record.to_kv();
            if shared.dump_ensemble {
                if let Some(e) = ensemble {
                    text.push_str(&e);
                }
            }
            emit(out, &text)?;
            Ok(record.certified)
        }
        Command::Fig3 { mode, rows, cols, c_grid, trials, summary } => {
            let side = if shared.full { 10 } else { 5 };
            let cfg = Fig3Config {
                coupling: mode,
                rows: rows.unwrap_or(side),
                cols: cols.unwrap_or(side),
                c_grid,
                trials,
                seed: shared.seed,
                run: shared.run_config(),
            };
            let result = cmd_fig3(&cfg)?;
            emit(out, &result.csv())?;
            if let Some(p) = summary.or_else(|| out.map(summary_path)) {
                emit(Some(&p), &result.summary_csv())?;
            }
            Ok(result.rows.iter().all(|r| r.certified))
        }
        Command::AdaptTrace { model, rows, cols, coupling, strength, outer_iters } => {
            let m = match model {
                Some(p) => read_model(&p)?,
                None => gen_ising_grid(&ModelFamilySpec::ising_grid(rows, cols, coupling, strength, shared.seed))?,
            };
            let cfg = RunConfig { outer_iters, ..shared.run_config() };
            emit(out, &cmd_adapt_trace(&m, &cfg)?.csv())?;
            Ok(true)
        }
        Command::WeightSurface { model, resolution } => {
            let m = read_model(&model)?;
            let surface = cmd_weight_surface(&m, resolution, &shared.run_config().mp)?;
            emit(out, &surface.csv())?;
            Ok(surface.points.iter().all(|p| p.converged))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let is_bound = matches!(cli.command, Command::Bound { .. });
    let require = cli.shared.require_certified;
    match run(cli) {
        Ok(all_certified) if !all_certified && (is_bound || require) => ExitCode::from(EXIT_UNCERTIFIED),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
