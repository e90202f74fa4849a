//! Command-line front end: train/eval/ablate/calibrate/export over a TOML
//! config with dotted-path overrides (`--schedule.m 0.8` beats the file,
//! which beats the defaults).

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lsa_core::config::RunConfig;
use lsa_core::env;
use lsa_core::metrics::{self, ExportFormat};
use lsa_core::sched::{QueryingMode, SamplingMode};
use lsa_core::trainer::{self, CONFIG_FILE};

#[derive(Parser, Debug)]
#[command(
    name = "lsa",
    about = "Instruction-conditioned gridworld RL with adaptive sampling and active querying",
    after_help = "Any `--<section>.<key> <value>` pair is applied as a config override, \
                  e.g. `--schedule.m 0.8` or `--trainer.num_workers 1`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run training and write config/metrics/checkpoint under the run dir.
    Train {
        /// Config file (TOML); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Shorthand for --trainer.seed
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint instead of starting fresh
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's greedy policy.
    Eval {
        /// Checkpoint file written by a previous run
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config file; defaults to config.toml beside the checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation episodes
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// Evaluation seed
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train with explicit scheduler modes (ablation arms).
    Ablate {
        #[arg(long, value_enum)]
        sampling: SamplingArg,
        #[arg(long, value_enum)]
        querying: QueryingArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep hard_min_dist until the random agent's Normal:Hard success
    /// ratio reaches the threshold.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episodes per target per sweep step
        #[arg(long, default_value_t = 20_000)]
        episodes: usize,
        /// Required Normal:Hard success ratio
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Convert a metrics file between CSV and JSONL.
    Export {
        /// Source metrics file (.csv or .jsonl)
        input: PathBuf,
        /// Output format
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Output path; defaults to the input with the new extension
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SamplingArg {
    Lsa,
    Uniform,
    Scoregap,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum QueryingArg {
    Lsa,
    Random,
    Scoregap,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Jsonl,
}

/// Splits `--section.key value` (or `--section.key=value`) pairs out of the
/// raw arguments so clap only sees the declared flags.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            plain.push(arg);
            continue;
        };
        let dotted = body.split('=').next().is_some_and(|k| k.contains('.'));
        if !dotted {
            plain.push(arg);
            continue;
        }
        if let Some((key, value)) = body.split_once('=') {
            overrides.push((key.to_string(), value.to_string()));
        } else {
            let value = it
                .next()
                .with_context(|| format!("override --{} needs a value", body))?;
            overrides.push((body.to_string(), value));
        }
    }
    Ok((plain, overrides))
}

fn load_config(path: Option<&PathBuf>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    config.apply_overrides(overrides)?;
    config.validate()?;
    Ok(config)
}

fn print_eval(eval: &lsa_core::metrics::EvalSummary) {
    println!(
        "eval: overall {:.4} over {} episodes",
        eval.overall, eval.episodes
    );
    for (target, (rate, n)) in eval
        .per_target
        .iter()
        .zip(&eval.episodes_per_target)
        .enumerate()
    {
        println!("  target {}: success {:.4} ({} episodes)", target, rate, n);
    }
}

fn run_train(config: &RunConfig, resume: Option<&PathBuf>) -> Result<()> {
    let artifacts = match resume {
        Some(ckpt) => trainer::resume(config, ckpt)?,
        None => trainer::train(config)?,
    };
    println!(
        "run {} finished at T={} in {:.1}s",
        artifacts.run_dir.display(),
        artifacts.final_t,
        artifacts.wallclock_s
    );
    println!("metrics: {}", artifacts.metrics_path.display());
    println!("checkpoint: {}", artifacts.checkpoint_path.display());
    print_eval(&artifacts.final_eval);
    Ok(())
}

fn main() -> Result<()> {
    let (plain, overrides) = split_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(plain);
    match cli.command {
        Command::Train { config, seed, resume } => {
            let mut config = load_config(config.as_ref(), &overrides)?;
            if let Some(seed) = seed {
                config.trainer.seed = seed;
            }
            run_train(&config, resume.as_ref())
        }
        Command::Eval { checkpoint, config, episodes, seed } => {
            let config_path = match config {
                Some(p) => p,
                None => checkpoint
                    .parent()
                    .map(|d| d.join(CONFIG_FILE))
                    .context("checkpoint has no parent directory; pass --config")?,
            };
            let config = load_config(Some(&config_path), &overrides)?;
            let state = trainer::checkpoint::load(&checkpoint, &config.config_hash()?)?;
            println!(
                "checkpoint {} at T={}",
                checkpoint.display(),
                state.counter
            );
            let eval = metrics::evaluate(&state.params, &config.env, episodes, seed)?;
            print_eval(&eval);
            Ok(())
        }
        Command::Ablate { sampling, querying, config, seed } => {
            let mut config = load_config(config.as_ref(), &overrides)?;
            config.schedule.mode_sampling = match sampling {
                SamplingArg::Lsa => SamplingMode::Lsa,
                SamplingArg::Uniform => SamplingMode::Uniform,
                SamplingArg::Scoregap => SamplingMode::Scoregap,
            };
            config.schedule.mode_querying = match querying {
                QueryingArg::Lsa => QueryingMode::Lsa,
                QueryingArg::Random => QueryingMode::Random,
                QueryingArg::Scoregap => QueryingMode::Scoregap,
            };
            if let Some(seed) = seed {
                config.trainer.seed = seed;
            }
            println!(
                "ablation: sampling={:?} querying={:?}",
                config.schedule.mode_sampling, config.schedule.mode_querying
            );
            run_train(&config, None)
        }
        Command::Calibrate { config, episodes, ratio, seed } => {
            let config = load_config(config.as_ref(), &overrides)?;
            let report = env::calibrate(&config.env, episodes, ratio, seed)?;
            for row in &report.rows {
                println!(
                    "hard_min_dist={} normal={:.4} hard={:.4}",
                    row.hard_min_dist, row.normal_rate, row.hard_rate
                );
            }
            println!(
                "calibrated: env.hard_min_dist = {} (normal:hard >= {})",
                report.config.hard_min_dist, ratio
            );
            Ok(())
        }
        Command::Export { input, format, output } => {
            let records = match input.extension().and_then(|e| e.to_str()) {
                Some("csv") => metrics::read_csv(&input)?,
                Some("jsonl") => metrics::read_jsonl(&input)?,
                other => bail!(
                    "cannot infer input format from extension {:?}; expected .csv or .jsonl",
                    other
                ),
            };
            let format = match format {
                FormatArg::Csv => ExportFormat::Csv,
                FormatArg::Jsonl => ExportFormat::Jsonl,
            };
            let output = output.unwrap_or_else(|| {
                input.with_extension(match format {
                    ExportFormat::Csv => "csv",
                    ExportFormat::Jsonl => "jsonl",
                })
            });
            if output == input {
                bail!("output path equals input path; pass --output");
            }
            metrics::export(&records, &output, format)?;
            println!("wrote {} records to {}", records.len(), output.display());
            Ok(())
        }
    }
}
