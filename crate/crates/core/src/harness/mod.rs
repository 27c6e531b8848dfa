//! Experiment driver: run configuration with named profiles, seeded
//! training and evaluation, the attention-ablation grid, the end-to-end
//! gradient check, and attention export for single volumes.

mod ablate;
mod attend;
mod gradcheck;
mod run;

pub use ablate::{format_table, run_ablation, AblationRow, AblationTable};
pub use attend::{attend, AttendSummary};
pub use gradcheck::{run_gradcheck, GradcheckOutcome, GRADCHECK_TOLERANCE};
pub use run::{evaluate_checkpoint, train, TrainOutputs};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::FusionMode;
use crate::error::{Result, SctgError};
use crate::metrics::MetricReport;
use crate::model::{AttentionFlags, ModelDims};
use crate::volume::{LesionKind, SynthConfig};

/// Everything a run needs, resolved: dims, attention routing, optimizer
/// settings, dataset shape. One file, every field overridable from the
/// command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,

    // Geometry.
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    /// Patch count; must equal (height/patch) * (width/patch).
    pub n: usize,
    pub t_min: usize,
    pub t_max: usize,

    // Widths and depths.
    pub d: usize,
    pub d_e: usize,
    pub d_prime: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub max_len: usize,

    // Attention routing.
    pub attn_slice: bool,
    pub attn_window: bool,
    pub attn_region: bool,
    pub fusion: FusionMode,

    // Optimizer.
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Dev evaluation cadence in epochs; 0 evaluates only at the end.
    pub eval_every: usize,

    // Synthetic dataset shape.
    pub train_volumes: usize,
    pub dev_volumes: usize,
    pub test_volumes: usize,
    pub max_lesions: usize,
    pub noise_level: f64,
    pub max_radius: usize,
}

impl RunConfig {
    /// Named profile defaults. `tiny` is the gradient-check and overfit
    /// scale, `desk` the everyday scale, `paper-dims` mirrors the
    /// published geometry and hyperparameters (config-valid, far too
    /// large to actually train here).
    pub fn profile(name: &str, seed: u64) -> Result<Self> {
        let base = RunConfig {
            profile: name.to_string(),
            seed,
            patch: 8,
            height: 64,
            width: 64,
            n: 64,
            t_min: 4,
            t_max: 16,
            d: 64,
            d_e: 64,
            d_prime: 64,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            max_len: 40,
            attn_slice: true,
            attn_window: true,
            attn_region: true,
            fusion: FusionMode::Stack,
            lr: 5e-5,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 30,
            eval_every: 1,
            train_volumes: 128,
            dev_volumes: 16,
            test_volumes: 16,
            max_lesions: 2,
            noise_level: 0.25,
            max_radius: 8,
        };
        let cfg = match name {
            "desk" => base,
            "tiny" => RunConfig {
                height: 16,
                width: 16,
                n: 4,
                t_min: 3,
                t_max: 3,
                d: 8,
                d_e: 8,
                d_prime: 8,
                enc_layers: 1,
                dec_layers: 1,
                heads: 2,
                max_len: 24,
                lr: 1e-3,
                batch_size: 8,
                epochs: 2000,
                eval_every: 0,
                train_volumes: 8,
                dev_volumes: 4,
                test_volumes: 4,
                max_lesions: 1,
                noise_level: 0.2,
                max_radius: 4,
                ..base
            },
            "paper-dims" => RunConfig {
                patch: 16,
                height: 224,
                width: 224,
                n: 196,
                d: 1280,
                d_e: 1280,
                d_prime: 1536,
                enc_layers: 32,
                dec_layers: 28,
                heads: 16,
                max_len: 80,
                epochs: 3,
                train_volumes: 8,
                dev_volumes: 2,
                test_volumes: 2,
                max_radius: 24,
                ..base
            },
            other => {
                return Err(SctgError::Config(format!(
                    "unknown profile {other:?}; expected tiny, desk, or paper-dims"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(SctgError::Config(format!(
                "patch {} must divide {}x{}",
                self.patch, self.height, self.width
            )));
        }
        let n = (self.height / self.patch) * (self.width / self.patch);
        if self.n != n {
            return Err(SctgError::Config(format!(
                "declared n={} but (H/P)*(W/P)={n}",
                self.n
            )));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(SctgError::Config(format!(
                "bad slice range [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SctgError::Config("batch_size and epochs must be positive".into()));
        }
        self.model_dims(8).validate()
    }

    /// Dims for a given vocabulary size.
    pub fn model_dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            patch: self.patch,
            height: self.height,
            width: self.width,
            d: self.d,
            d_e: self.d_e,
            d_prime: self.d_prime,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            heads: self.heads,
            vocab,
            max_len: self.max_len,
        }
    }

    pub fn attention_flags(&self) -> AttentionFlags {
        AttentionFlags {
            slice: self.attn_slice,
            window: self.attn_window,
            region: self.attn_region,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            train: self.train_volumes,
            dev: self.dev_volumes,
            test: self.test_volumes,
            t_min: self.t_min,
            t_max: self.t_max,
            size: self.height,
            patch: self.patch,
            max_lesions: self.max_lesions,
            kinds: vec![LesionKind::Disk, LesionKind::Square, LesionKind::Ring],
            noise_level: self.noise_level,
            max_radius: self.max_radius,
        }
    }

    /// Hash of the canonical serialized form; embedded in results so a
    /// row is traceable to the exact configuration that produced it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let cfg: RunConfig = serde_json::from_reader(std::io::BufReader::new(file))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of one training or evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    /// Metric reports keyed by split name.
    pub metrics: BTreeMap<String, MetricReport>,
    /// Mean batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
    pub wall_time_secs: f64,
}
