//! Command-line driver: dataset generation, training, evaluation, the
//! ablation grid, gradient checking, attention export, and standalone
//! metric scoring.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sctg_core::harness::{
    attend, evaluate_checkpoint, format_table, run_ablation, run_gradcheck, train, RunConfig,
    GRADCHECK_TOLERANCE,
};
use sctg_core::metrics::corpus_report_text;
use sctg_core::volume::generate_synthetic;
use sctg_core::{Result, SctgError};

#[derive(Parser)]
#[command(name = "sctg", version, about = "Stereo-attention CT report generation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Profile/config resolution plus per-field overrides. Flags win over
/// the config file, which wins over the profile defaults.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Base profile: tiny, desk, or paper-dims.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// JSON run-config file; replaces the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    t_min: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_e: Option<usize>,
    #[arg(long)]
    d_prime: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Enable/disable the slice attention: --slice true|false.
    #[arg(long)]
    slice: Option<bool>,
    #[arg(long)]
    window: Option<bool>,
    #[arg(long)]
    region: Option<bool>,
    /// Prompt fusion: stack or sum.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    train_volumes: Option<usize>,
    #[arg(long)]
    dev_volumes: Option<usize>,
    #[arg(long)]
    test_volumes: Option<usize>,
    #[arg(long)]
    max_lesions: Option<usize>,
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    max_radius: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::profile(&self.profile, seed.unwrap_or(0))?,
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            patch, height, width, t_min, t_max, d, d_e, d_prime, enc_layers, dec_layers, heads,
            max_len, lr, weight_decay, batch_size, epochs, eval_every, train_volumes, dev_volumes,
            test_volumes, max_lesions, noise_level, max_radius
        );
        if let Some(v) = self.slice {
            cfg.attn_slice = v;
        }
        if let Some(v) = self.window {
            cfg.attn_window = v;
        }
        if let Some(v) = self.region {
            cfg.attn_region = v;
        }
        if let Some(f) = &self.fusion {
            cfg.fusion = f.parse()?;
        }
        // Geometry overrides shift the patch count.
        cfg.n = (cfg.height / cfg.patch.max(1)) * (cfg.width / cfg.patch.max(1));
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic volume dataset with manifest.
    Datagen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model end to end and write run artifacts.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config.resolved beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Where to write the metric report (JSON); stdout summary
        /// either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the 5-row attention grid plus the stack/sum comparison.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Check every parameter's gradient against central differences on
    /// the tiny profile.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: corrupt one adjoint and expect detection.
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Export attention weights and the generated report for a volume.
    Attend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-slice SVG heatmaps.
        #[arg(long)]
        svg: bool,
    },
    /// Reference-based text metrics.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Score hypothesis lines against reference lines.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_eval_config(config: &Option<PathBuf>, checkpoint: &Path) -> Result<RunConfig> {
    match config {
        Some(path) => RunConfig::load(path),
        None => {
            let sibling = checkpoint
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("config.resolved");
            if sibling.exists() {
                RunConfig::load(&sibling)
            } else {
                Err(SctgError::Config(
                    "no --config given and no config.resolved beside the checkpoint".into(),
                ))
            }
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::to_string)
        .collect())
}

fn print_metric_summary(report: &sctg_core::metrics::MetricReport) {
    println!(
        "BLEU-1 {:.4}  BLEU-2 {:.4}  BLEU-3 {:.4}  BLEU-4 {:.4}  ROUGE-1 {:.4}  METEOR {:.4}  BERT-score n/a",
        report.bleu[0], report.bleu[1], report.bleu[2], report.bleu[3], report.rouge_1_f, report.meteor
    );
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Datagen { config, out, seed } => {
            let cfg = config.resolve(Some(seed))?;
            let manifest = generate_synthetic(&cfg.synth_config(), seed, &out)?;
            println!(
                "wrote {} volumes ({} train / {} dev / {} test) under {}",
                manifest.entries.len(),
                cfg.train_volumes,
                cfg.dev_volumes,
                cfg.test_volumes,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Train { config, data, out, seed } => {
            let cfg = config.resolve(Some(seed))?;
            let outputs = train(&cfg, &data, &out)?;
            let last = outputs.result.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final loss {:.6}, wall time {:.1}s",
                outputs.result.loss_curve.len(),
                last,
                outputs.result.wall_time_secs
            );
            if let Some(dev) = outputs.result.metrics.get("dev") {
                print!("dev: ");
                print_metric_summary(dev);
            }
            println!("artifacts in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval { checkpoint, config, data, split, out } => {
            let cfg = load_eval_config(&config, &checkpoint)?;
            let split = split.parse()?;
            let report = evaluate_checkpoint(&checkpoint, &cfg, &data, split)?;
            print_metric_summary(&report);
            if let Some(path) = out {
                let file = std::fs::File::create(&path)?;
                serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)
                    .map_err(SctgError::from)?;
                println!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Ablate { config, data, out, seed } => {
            let cfg = config.resolve(Some(seed))?;
            let table = run_ablation(&cfg, &data, &out)?;
            print!("{}", format_table(&table));
            println!("table written to {}", out.join("ablation.json").display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Gradcheck { seed, corrupt_adjoint } => {
            let outcome = run_gradcheck(seed, corrupt_adjoint)?;
            for (prefix, err) in &outcome.per_prefix {
                println!("{prefix:<12} max rel err {err:.3e}");
            }
            println!(
                "worst: {} at {:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})",
                outcome.report.worst_param, outcome.report.max_rel_err
            );
            if outcome.passed {
                println!("gradcheck PASS");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("gradcheck FAIL");
                Ok(ExitCode::from(2))
            }
        }

        Command::Attend { checkpoint, config, volume, out, svg } => {
            let cfg = load_eval_config(&config, &checkpoint)?;
            let summary = attend(&checkpoint, &cfg, &volume, &out, svg)?;
            println!("bundle: {}", summary.bundle_path.display());
            println!("report: {}", summary.report_text);
            println!("top-alpha slice: {}", summary.top_alpha_slice);
            if let Some(expected) = summary.expected_slices {
                println!("lesion slices from metadata: {expected:?}");
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Metrics { command } => match command {
            MetricsCommand::Eval { hyp, reference, out } => {
                let hyps = read_lines(&hyp)?;
                let refs = read_lines(&reference)?;
                let report = corpus_report_text(&hyps, &refs)?;
                print_metric_summary(&report);
                let file = std::fs::File::create(&out)?;
                serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)
                    .map_err(SctgError::from)?;
                println!("report written to {}", out.display());
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
