//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgvae_core::model::{RelaxedDensity, Sampling};
use sgvae_core::objective::{Alpha, ObjectiveConfig, Variant};
use sgvae_core::train::{AdamConfig, TrainConfig};

use crate::error::{Error, Result};
use crate::run::{self, GenerateMode, TrainJob};
use crate::verify::{self, VerifyOptions};
use crate::{mnist, spec_file};

#[derive(Debug, Parser)]
#[command(
    name = "sgvae",
    version,
    about = "Semi-supervised VAEs over partially-specified models"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a manifest, metrics log and checkpoint.
    Train(TrainArgs),
    /// Report the test error of a checkpoint.
    Eval(EvalArgs),
    /// Check the estimators against exact enumeration.
    Verify(VerifyArgs),
    /// Render analogy or style-sweep image grids.
    Generate(GenerateArgs),
    /// Validate a model file and print its evaluation orders.
    Check {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Snis,
    Iwae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DensityArg {
    SoftOneHot,
    Concrete,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory with the IDX files; defaults to $SGVAE_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Number of labelled points M.
    #[arg(long, default_value_t = 100)]
    pub labeled: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// "auto" for 0.1 / rho, or a fixed non-negative value.
    #[arg(long, default_value = "auto", value_parser = parse_alpha)]
    pub alpha: Alpha,
    /// Samples S per data point.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Snis)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_unsup: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_sup: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/latest")]
    pub out_dir: PathBuf,
    /// Concrete relaxation temperature.
    #[arg(long, default_value_t = sgvae_core::dist::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Density assigned to relaxed label samples.
    #[arg(long, value_enum, default_value_t = DensityArg::SoftOneHot)]
    pub relaxed_density: DensityArg,
    /// Pass hard one-hot labels forward, relaxed gradients backward.
    #[arg(long)]
    pub straight_through: bool,
    /// Use the closed-form Gaussian KL in the unsupervised term.
    #[arg(long)]
    pub analytic_kl: bool,
    /// Evaluate test error every this many epochs; 0 disables.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 50_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated sample sizes for the bias sweep, e.g. 1,100,10000.
    #[arg(long, value_delimiter = ',')]
    pub s_sweep: Option<Vec<usize>>,
    /// JSON tabular model with a `given` assignment to check as well.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Where to write the CSV report.
    #[arg(long, default_value = "verify.csv")]
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Analogy,
    StyleSweep,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Test-set indices for analogy rows.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
    pub indices: Vec<usize>,
    /// Label held fixed in a style sweep.
    #[arg(long, default_value_t = 0)]
    pub label: usize,
    /// Points per axis in a style sweep.
    #[arg(long, default_value_t = 7)]
    pub grid: usize,
    /// Style coordinates span [-extent, extent].
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_alpha(s: &str) -> std::result::Result<Alpha, String> {
    if s == "auto" {
        return Ok(Alpha::Auto);
    }
    match s.parse::<f64>() {
        Ok(a) if a >= 0.0 && a.is_finite() => Ok(Alpha::Fixed(a)),
        _ => Err(format!("expected \"auto\" or a non-negative number, got {s:?}")),
    }
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_unsup: self.batch_unsup,
            batch_sup: self.batch_sup,
            objective: ObjectiveConfig {
                samples: self.samples,
                alpha: self.alpha,
                gamma: self.gamma,
                variant: match self.variant {
                    VariantArg::Snis => Variant::SelfNormalized,
                    VariantArg::Iwae => Variant::ImportanceWeighted,
                },
                analytic_kl: self.analytic_kl,
                detach_weights: false,
            },
            sampling: Sampling::Relaxed {
                temperature: self.temperature,
                straight_through: self.straight_through,
                density: match self.relaxed_density {
                    DensityArg::SoftOneHot => RelaxedDensity::SoftOneHot,
                    DensityArg::Concrete => RelaxedDensity::Concrete,
                },
            },
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            eval_every: self.eval_every,
        }
    }
}

/// Runs a parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => {
            let job = TrainJob {
                model_path: args.model.clone(),
                data_dir: mnist::data_dir(args.data_dir.as_deref())?,
                labeled: args.labeled,
                config: args.config(),
                out_dir: args.out_dir.clone(),
            };
            let out = run::train(&job)?;
            println!("rho={}", out.manifest.rho);
            println!("alpha={}", out.manifest.alpha);
            if let Some(e) = out.test_error {
                println!("test_error={e}");
            }
            println!("checkpoint={}", out.manifest.artifacts.checkpoint.display());
            Ok(0)
        }
        Command::Eval(args) => {
            let dir = mnist::data_dir(args.data_dir.as_deref())?;
            let e = run::evaluate(&args.model, &args.checkpoint, &dir, args.seed)?;
            println!(
                "test error {:.4} ± {:.4} over {} images",
                e.test_error, e.stderr, e.points
            );
            println!("test_error={}", e.test_error);
            Ok(0)
        }
        Command::Verify(args) => {
            let opts = VerifyOptions {
                samples: args.samples,
                seeds: args.seeds,
                alpha: args.alpha,
                seed: args.seed,
                s_sweep: args.s_sweep,
                tables: args.tables,
                ..VerifyOptions::default()
            };
            let report = verify::run(&opts)?;
            print!("{}", report.to_text());
            report.write_csv(&args.report)?;
            if report.passed() {
                Ok(0)
            } else {
                let failed: Vec<String> = report
                    .failures()
                    .iter()
                    .map(|c| format!("{}: {}", c.name, c.detail))
                    .collect();
                Err(Error::Verify(failed.join("\n")))
            }
        }
        Command::Generate(args) => {
            let mode = match args.mode {
                ModeArg::Analogy => GenerateMode::Analogy { indices: args.indices },
                ModeArg::StyleSweep => GenerateMode::StyleSweep {
                    label: args.label,
                    grid: args.grid,
                    extent: args.extent,
                },
            };
            let dir = match mode {
                GenerateMode::Analogy { .. } => Some(mnist::data_dir(args.data_dir.as_deref())?),
                GenerateMode::StyleSweep { .. } => None,
            };
            let grid = run::generate(&args.model, &args.checkpoint, dir.as_deref(), &mode)?;
            grid.save(&args.out)?;
            println!("wrote {}×{} grid to {}", grid.rows, grid.cols, args.out.display());
            Ok(0)
        }
        Command::Check { model } => {
            let m = spec_file::load(&model)?;
            let (plan, store) = sgvae_core::model::compile(&m.graph, 0)?;
            println!("digest {}", m.digest);
            println!("recognition order: {}", plan.recognition_order_names().join(", "));
            println!("generative order: {}", plan.generative_order_names().join(", "));
            println!("{} parameters in {} tensors", store.numel(), store.len());
            Ok(0)
        }
    }
}
