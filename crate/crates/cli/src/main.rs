mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use blockdict::StructureMode;

use crate::config::Overrides;

const EXP_HELP: &str = "\
Experiments:
  fig5       exact block recovery of CGC (and SAC) on oracle dictionaries
  fig6a      reconstruction error per training iteration
  fig6b      reconstruction error on clean data vs training SNR
  fig6c      reconstruction error vs learned block size
  fig6d      reconstruction error vs blocks per generated signal
  coherence  pairs above the threshold, KSVD initializer vs CGC dictionary

Output <out>/<experiment>.csv, one row per (parameters, method, trial) plus a
`mean` row per (parameters, method), sorted by parameters, method, trial:
  fig5:  experiment_id,trial,intra_corr,block_size,method,recovery
  fig6a: experiment_id,trial,iteration,method,rel_error
  fig6b: experiment_id,trial,snr_db,method,rel_error      (snr_db `inf` = noiseless)
  fig6c: experiment_id,trial,block_size,method,rel_error
  fig6d: experiment_id,trial,blocks_per_signal,method,rel_error
  coherence: experiment_id,run,threshold,ksvd_count,cgc_count";

const CLASSIFY_HELP: &str = "\
Output <out>/classify.csv with columns trial,rule,dictionary_mode,accuracy.
Rules: cds (cosine score against per-class mean code magnitudes, every
dictionary), residual and energy (class-pure dictionaries only). Modes:
supervised_cgc, fixed_supervised, cgc, ksvd. `mean` rows average the trials.";

const ANALYZE_HELP: &str = "\
Output <out>/coherence.csv with columns rank,dict1[,dict2]: pairwise |corr|
sorted in descending order, and <out>/coherence_counts.csv with columns
dictionary,path,pairs,threshold,count_above.";

const GEN_HELP: &str = "\
Writes oracle.bdk (dictionary + block structure), clean.bdk, signals.bdk
(noisy when snr_db is set) and supports.csv (signal,blocks: 1-based block ids
separated by spaces). With \"labeled\": true writes oracle.bdk, signals.bdk and
test.bdk carrying class labels instead.";

const CODE_HELP: &str = "\
Output <out>/codes.csv with columns signal,atom,value (0-based indices,
nonzero entries only). Block-structured dictionaries use BOMP with
block_sparsity; dictionaries without blocks use OMP with atom_sparsity.";

const TRAIN_HELP: &str = "\
Writes <out>/dictionary.bdk and <out>/report.jsonl (one {\"iter\",\"rel_error\",
\"n_blocks\"} object per iteration, also printed). Without --init, sac/cgc
start from a KSVD dictionary (saved as init.bdk) and supervised modes from
per-class training signals.";

const CONFIG_HELP: &str = "\
Config: one flat JSON object; `m` is required, unknown keys are errors. Keys
mirror the experiment settings (max_block_size, block_sparsity, atom_sparsity,
outer_iterations, structure_update_period, shrink_fraction, snr_db, trials,
rng_seed, structure_mode, residual_tolerance, supervised_init_ksvd) plus data,
sweep and benchmark keys; see the README. structure_update_period defaults to
1, except for cgc which keeps its first structure; null never re-estimates.
--seed, --trials and --mode replace rng_seed, trials and structure_mode.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.";

#[derive(Parser)]
#[command(name = "blockdict", version, about = "Block-structured dictionary learning experiments", after_help = CONFIG_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (replaces rng_seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Structure mode (replaces structure_mode)
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<StructureMode>,
    /// Trial count (replaces trials)
    #[arg(long, global = true)]
    trials: Option<usize>,
}

fn parse_mode(s: &str) -> Result<StructureMode, String> {
    s.parse().map_err(|e: blockdict::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate an oracle dictionary and a block-sparse dataset
    #[command(after_help = GEN_HELP)]
    Gen,
    /// Learn a block-structured dictionary
    #[command(after_help = TRAIN_HELP)]
    Train {
        /// Training signals (.bdk or .json)
        #[arg(long)]
        data: PathBuf,
        /// Initial dictionary
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Sparse-code signals over a dictionary
    #[command(after_help = CODE_HELP)]
    Code {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Coherence profile of one dictionary or two side by side
    #[command(after_help = ANALYZE_HELP)]
    Analyze {
        #[arg(required = true, num_args = 1..=2)]
        dicts: Vec<PathBuf>,
        /// |corr| threshold for the counts (default 0.6, or coherence_threshold from --config)
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run a seeded experiment sweep
    #[command(after_help = EXP_HELP)]
    Exp {
        /// fig5, fig6a, fig6b, fig6c, fig6d or coherence
        name: String,
    },
    /// Run the synthetic classification benchmark
    #[command(after_help = CLASSIFY_HELP)]
    Classify,
}

/// An error with the exit code it maps to.
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: e.into() }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: e.into() }
    }

    pub fn data_err(e: blockdict::Error) -> Self {
        Self::data(e)
    }

    /// Numerical failures exit with 4, everything else is blamed on the data.
    pub fn run(e: blockdict::Error) -> Self {
        let numerical = match &e {
            blockdict::Error::Numerical(_) => true,
            blockdict::Error::Column { source, .. } => matches!(**source, blockdict::Error::Numerical(_)),
            _ => false,
        };
        Self {
            code: if numerical { 4 } else { 3 },
            error: e.into(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common;
    let overrides = Overrides {
        seed: common.seed,
        trials: common.trials,
        mode: common.mode,
    };
    let load = || -> Result<config::RunConfig, Failure> {
        let mut cfg = commands::require_config(common.config.as_deref())?;
        cfg.apply(&overrides);
        Ok(cfg)
    };
    let out = common.out.as_path();
    match cli.command {
        Command::Gen => commands::gen(&load()?, out),
        Command::Train { data, init } => commands::train(&load()?, &data, init.as_deref(), out),
        Command::Code { dict, data } => {
            let cfg = match common.config {
                Some(_) => load()?,
                None => config::RunConfig::default(),
            };
            commands::code(&cfg, &dict, &data, out)
        }
        Command::Analyze { dicts, threshold } => {
            let threshold = match (threshold, &common.config) {
                (Some(t), _) => t,
                (None, Some(_)) => load()?.coherence_threshold(),
                (None, None) => blockdict::analysis::COHERENCE_THRESHOLD,
            };
            commands::analyze(&dicts, threshold, out)
        }
        Command::Exp { name } => commands::exp(&load()?, &name, out),
        Command::Classify => commands::classify(&load()?, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
