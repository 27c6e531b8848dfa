//! Full-pipeline composition: encode a volume, pool it with the enabled
//! attentions, assemble the soft prompt, and score or generate reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    region_attention, slice_attention, window_attention, AttentionDims, AttentionWeights,
};
use crate::decoder::{assemble_prompt, sequence_loss, DecoderDims, FusionMode};
use crate::encoder::{encode_volume, preprocess_volume, EncoderDims};
use crate::error::{Result, SctgError};
use crate::tensor::{
    adam_step, AdamConfig, AdamState, BoundParams, ParamStore, Tape, Var,
};
use crate::text::TokenSequence;
use crate::volume::{PatchGrid, Volume};

#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub d: usize,
    pub d_e: usize,
    pub d_prime: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl ModelDims {
    pub fn n(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn encoder(&self) -> EncoderDims {
        EncoderDims {
            patch: self.patch,
            height: self.height,
            width: self.width,
            d: self.d,
            d_e: self.d_e,
            layers: self.enc_layers,
            heads: self.heads,
        }
    }

    pub fn attention(&self) -> AttentionDims {
        AttentionDims { n: self.n(), d_e: self.d_e, d_prime: self.d_prime }
    }

    pub fn decoder(&self) -> DecoderDims {
        DecoderDims {
            d_prime: self.d_prime,
            layers: self.dec_layers,
            heads: self.heads,
            vocab: self.vocab,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.decoder().validate()?;
        if self.d_prime % self.heads != 0 {
            return Err(SctgError::Config(format!(
                "heads {} must divide prompt width {}",
                self.heads, self.d_prime
            )));
        }
        Ok(())
    }
}

/// Which of the three attentions feed the prompt. All off degrades to
/// the baseline prompt of mean-pooled slice rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionFlags {
    pub slice: bool,
    pub window: bool,
    pub region: bool,
}

impl Default for AttentionFlags {
    fn default() -> Self {
        AttentionFlags { slice: true, window: true, region: true }
    }
}

impl AttentionFlags {
    pub fn none() -> Self {
        AttentionFlags { slice: false, window: false, region: false }
    }

    pub fn label(&self) -> String {
        let mark = |b: bool| if b { "on" } else { "off" };
        format!("slice={} window={} region={}", mark(self.slice), mark(self.window), mark(self.region))
    }
}

/// Fresh parameters for the whole pipeline, drawn in a fixed order from
/// one seed.
pub fn init_params(dims: &ModelDims, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::encoder::init_params(&mut store, &dims.encoder(), &mut rng);
    crate::attention::init_params(&mut store, &dims.attention(), &mut rng);
    crate::decoder::init_params(&mut store, &dims.decoder(), &mut rng);
    store
}

/// Handles into one volume's forward graph.
pub struct VolumeForward {
    /// E_t matrices.
    pub slices: Vec<Var>,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
    pub gamma: Option<Var>,
    /// The assembled soft prompt Z.
    pub prompt: Var,
    pub prompt_rows: usize,
}

impl VolumeForward {
    /// Weights for export; requires all three attentions enabled.
    pub fn weights(&self, tape: &Tape) -> Option<AttentionWeights> {
        match (self.alpha, self.beta, self.gamma) {
            (Some(a), Some(b), Some(g)) => Some(AttentionWeights::from_tape(tape, a, b, g)),
            _ => None,
        }
    }
}

/// Encode, pool, and assemble the prompt for one preprocessed volume.
pub fn forward_volume(
    tape: &mut Tape,
    bound: &BoundParams,
    grids: &[PatchGrid],
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
) -> Result<VolumeForward> {
    let encoded = encode_volume(tape, bound, grids, &dims.encoder())?;
    let attn_dims = dims.attention();

    let mut outputs = Vec::new();
    let (mut alpha, mut beta, mut gamma) = (None, None, None);
    if flags.slice {
        let (a, o) = slice_attention(tape, bound, &encoded.slices, &attn_dims)?;
        alpha = Some(a);
        outputs.push(o);
    }
    if flags.window {
        let (b, o) = window_attention(tape, bound, &encoded.slices, &attn_dims)?;
        beta = Some(b);
        outputs.push(o);
    }
    if flags.region {
        let (g, o) = region_attention(tape, bound, &encoded.slices, &attn_dims)?;
        gamma = Some(g);
        outputs.push(o);
    }
    if outputs.is_empty() {
        // Baseline: one mean-pooled row per slice, pushed through the
        // region aligner so the widths line up.
        let mut rows = Vec::with_capacity(encoded.slices.len());
        for &e in &encoded.slices {
            let pooled = tape.mean_rows(e)?;
            let row = tape.matmul(pooled, bound.var("attention.region.proj.w"))?;
            rows.push(tape.add(row, bound.var("attention.region.proj.b"))?);
        }
        outputs.push(tape.concat_rows(&rows)?);
    }

    let prompt = assemble_prompt(tape, bound, &outputs, fusion)?;
    let prompt_rows = tape.shape(prompt)[0];
    Ok(VolumeForward {
        slices: encoded.slices,
        alpha,
        beta,
        gamma,
        prompt,
        prompt_rows,
    })
}

/// Teacher-forced loss for one (volume, report) pair.
pub fn volume_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    grids: &[PatchGrid],
    reference: &TokenSequence,
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
) -> Result<(Var, VolumeForward)> {
    let fwd = forward_volume(tape, bound, grids, dims, flags, fusion)?;
    let loss = sequence_loss(tape, bound, fwd.prompt, reference, &dims.decoder())?;
    Ok((loss, fwd))
}

/// Mean loss over a batch on one tape.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    batch: &[(&[PatchGrid], &TokenSequence)],
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(SctgError::Config("empty training batch".into()));
    }
    let mut acc: Option<Var> = None;
    for (grids, reference) in batch {
        let (loss, _) = volume_loss(tape, bound, grids, reference, dims, flags, fusion)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, loss)?,
            None => loss,
        });
    }
    Ok(tape.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64))
}

/// One optimizer step over a batch: forward, backward, gradient
/// collection, Adam update. Returns the batch loss.
pub fn train_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
    batch: &[(&[PatchGrid], &TokenSequence)],
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
    batch_id: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let loss = batch_loss(&mut tape, &bound, batch, dims, flags, fusion)?;
    let value = tape.value(loss);
    if !value.is_finite() {
        return Err(SctgError::NonFinite { context: format!("loss of batch {batch_id}") });
    }
    tape.backward(loss)?;
    store.collect_grads(&tape, &bound);
    adam_step(store, state, cfg)?;
    store.zero_grads();
    Ok(value)
}

/// Greedy report generation for one volume under frozen parameters.
/// Also returns the attention weights when all three are enabled.
pub fn generate_report(
    store: &ParamStore,
    vol: &Volume,
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
) -> Result<(TokenSequence, Option<AttentionWeights>)> {
    let grids = preprocess_volume(vol, &dims.encoder())?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let fwd = forward_volume(&mut tape, &bound, &grids, dims, flags, fusion)?;
    let weights = fwd.weights(&tape);
    let z_data = tape.data(fwd.prompt).to_vec();
    let seq = crate::decoder::generate(store, &z_data, fwd.prompt_rows, &dims.decoder(), dims.max_len)?;
    Ok((seq, weights))
}
