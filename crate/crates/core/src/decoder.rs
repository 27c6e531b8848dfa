//! Soft-prompt assembly and the autoregressive report decoder.
//!
//! Attention outputs pass through a shared projection and enter the
//! decoder as prefix rows: mutually visible, visible to every token,
//! and excluded from the loss. Tokens attend causally. Generation is
//! greedy with ties broken toward the lowest index.

use crate::error::{Result, SctgError};
use crate::tensor::{BoundParams, ParamStore, Tape, Var};
use crate::text::{TokenSequence, BOS, EOS, PAD};

#[derive(Debug, Clone, Copy)]
pub struct DecoderDims {
    pub d_prime: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl DecoderDims {
    pub fn head_dim(&self) -> usize {
        self.d_prime / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_prime % self.heads != 0 {
            return Err(SctgError::Config(format!(
                "heads {} must divide decoder width {}",
                self.heads, self.d_prime
            )));
        }
        if self.vocab <= PAD {
            return Err(SctgError::Config("vocabulary too small for specials".into()));
        }
        Ok(())
    }
}

/// How the three attention outputs combine into prompt rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Row-wise concatenation; 2N + T rows when all three are enabled.
    Stack,
    /// Mean-pool each projected output to one row and add; 1 row.
    Sum,
}

impl std::str::FromStr for FusionMode {
    type Err = SctgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stack" => Ok(FusionMode::Stack),
            "sum" => Ok(FusionMode::Sum),
            other => Err(SctgError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Create every `decoder.*` parameter in fixed draw order.
pub fn init_params(store: &mut ParamStore, dims: &DecoderDims, rng: &mut rand_chacha::ChaCha8Rng) {
    use crate::init::{ones, uniform, xavier, zeros};
    let d = dims.d_prime;
    store.insert("decoder.prompt.w", xavier(rng, d, d));
    store.insert("decoder.prompt.b", zeros(&[d]));
    store.insert("decoder.tok_emb", uniform(rng, &[dims.vocab, d], 0.02));
    for l in 0..dims.layers {
        let p = format!("decoder.dec{l}");
        store.insert(format!("{p}.ln1.g"), ones(&[d]));
        store.insert(format!("{p}.ln1.b"), zeros(&[d]));
        store.insert(format!("{p}.attn.wq"), xavier(rng, d, d));
        store.insert(format!("{p}.attn.bq"), zeros(&[d]));
        store.insert(format!("{p}.attn.wk"), xavier(rng, d, d));
        store.insert(format!("{p}.attn.wv"), xavier(rng, d, d));
        store.insert(format!("{p}.attn.bv"), zeros(&[d]));
        store.insert(format!("{p}.attn.wo"), xavier(rng, d, d));
        store.insert(format!("{p}.attn.bo"), zeros(&[d]));
        store.insert(format!("{p}.ln2.g"), ones(&[d]));
        store.insert(format!("{p}.ln2.b"), zeros(&[d]));
        store.insert(format!("{p}.ff.w1"), xavier(rng, d, 4 * d));
        store.insert(format!("{p}.ff.b1"), zeros(&[4 * d]));
        store.insert(format!("{p}.ff.w2"), xavier(rng, 4 * d, d));
        store.insert(format!("{p}.ff.b2"), zeros(&[d]));
    }
    store.insert("decoder.ln_out.g", ones(&[d]));
    store.insert("decoder.ln_out.b", zeros(&[d]));
    store.insert("decoder.out.w", xavier(rng, d, dims.vocab));
    store.insert("decoder.out.b", zeros(&[dims.vocab]));
}

/// Shared prompt projection g, applied row-wise after the per-attention
/// projections; the double projection follows the architecture as
/// composed.
fn shared_projection(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
    let h = tape.matmul(x, bound.var("decoder.prompt.w"))?;
    tape.add(h, bound.var("decoder.prompt.b"))
}

/// Combine attention outputs into the prompt matrix Z.
pub fn assemble_prompt(
    tape: &mut Tape,
    bound: &BoundParams,
    outputs: &[Var],
    mode: FusionMode,
) -> Result<Var> {
    if outputs.is_empty() {
        return Err(SctgError::Config("assemble_prompt: no attention outputs".into()));
    }
    match mode {
        FusionMode::Stack => {
            let projected: Vec<Var> = outputs
                .iter()
                .map(|&o| shared_projection(tape, bound, o))
                .collect::<Result<_>>()?;
            tape.concat_rows(&projected)
        }
        FusionMode::Sum => {
            let mut acc: Option<Var> = None;
            for &o in outputs {
                let projected = shared_projection(tape, bound, o)?;
                let pooled = tape.mean_rows(projected)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, pooled)?,
                    None => pooled,
                });
            }
            Ok(acc.expect("non-empty outputs"))
        }
    }
}

/// 0 where position i may attend position j, a large negative number
/// otherwise. Prompt rows see each other; token rows see every prompt
/// row and earlier tokens.
fn attention_mask(prompt_rows: usize, token_rows: usize) -> Vec<f64> {
    let s = prompt_rows + token_rows;
    let mut mask = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let allowed = if i < prompt_rows { j < prompt_rows } else { j < prompt_rows || j <= i };
            if !allowed {
                mask[i * s + j] = -1e30;
            }
        }
    }
    mask
}

fn masked_attention(
    tape: &mut Tape,
    bound: &BoundParams,
    x: Var,
    mask: Var,
    prefix: &str,
    dims: &DecoderDims,
) -> Result<Var> {
    let q = tape.matmul(x, bound.var(&format!("{prefix}.wq")))?;
    let q = tape.add(q, bound.var(&format!("{prefix}.bq")))?;
    // No key bias; see the encoder note.
    let k = tape.matmul(x, bound.var(&format!("{prefix}.wk")))?;
    let v = tape.matmul(x, bound.var(&format!("{prefix}.wv")))?;
    let v = tape.add(v, bound.var(&format!("{prefix}.bv")))?;

    let dh = dims.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, mask)?;
        let weights = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    let out = tape.matmul(ctx, bound.var(&format!("{prefix}.wo")))?;
    tape.add(out, bound.var(&format!("{prefix}.bo")))
}

/// Full decoder pass over `[Z; embedded tokens]`; returns logits for
/// the token positions only, `[tokens.len(), V]`.
pub fn decoder_logits(
    tape: &mut Tape,
    bound: &BoundParams,
    z: Var,
    tokens: &[usize],
    dims: &DecoderDims,
) -> Result<Var> {
    let m = tape.shape(z)[0];
    let l = tokens.len();
    if l == 0 {
        return Err(SctgError::Config("decoder_logits: empty token prefix".into()));
    }
    let emb = tape.embed(bound.var("decoder.tok_emb"), tokens)?;
    let mut x = tape.concat_rows(&[z, emb])?;
    let mask = tape.constant(attention_mask(m, l), &[m + l, m + l])?;
    for layer in 0..dims.layers {
        let p = format!("decoder.dec{layer}");
        let normed = tape.layer_norm(
            x,
            bound.var(&format!("{p}.ln1.g")),
            bound.var(&format!("{p}.ln1.b")),
            1e-5,
        )?;
        let attn = masked_attention(tape, bound, normed, mask, &format!("{p}.attn"), dims)?;
        x = tape.add(x, attn)?;

        let normed = tape.layer_norm(
            x,
            bound.var(&format!("{p}.ln2.g")),
            bound.var(&format!("{p}.ln2.b")),
            1e-5,
        )?;
        let h1 = tape.matmul(normed, bound.var(&format!("{p}.ff.w1")))?;
        let h1 = tape.add(h1, bound.var(&format!("{p}.ff.b1")))?;
        let h1 = tape.gelu(h1);
        let h2 = tape.matmul(h1, bound.var(&format!("{p}.ff.w2")))?;
        let h2 = tape.add(h2, bound.var(&format!("{p}.ff.b2")))?;
        x = tape.add(x, h2)?;
        tape.ensure_finite(x, &format!("decoder layer {layer}"))?;
    }
    let x = tape.layer_norm(x, bound.var("decoder.ln_out.g"), bound.var("decoder.ln_out.b"), 1e-5)?;
    let logits = tape.matmul(x, bound.var("decoder.out.w"))?;
    let logits = tape.add(logits, bound.var("decoder.out.b"))?;
    tape.slice_rows(logits, m, l)
}

/// Next-token logits for a prefix: the last row of the token logits.
pub fn decode_step(
    tape: &mut Tape,
    bound: &BoundParams,
    z: Var,
    prefix: &[usize],
    dims: &DecoderDims,
) -> Result<Var> {
    if prefix.len() >= dims.max_len + 1 {
        return Err(SctgError::Config(format!(
            "prefix length {} exceeds the {}-token cap",
            prefix.len(),
            dims.max_len
        )));
    }
    let logits = decoder_logits(tape, bound, z, prefix, dims)?;
    tape.slice_rows(logits, prefix.len() - 1, 1)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from BOS with a frozen prompt. The returned sequence
/// holds the emitted tokens, ending with EOS unless the cap hits first.
pub fn generate(
    store: &ParamStore,
    z_data: &[f64],
    z_rows: usize,
    dims: &DecoderDims,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(SctgError::Config("generate: max_len must be >= 1".into()));
    }
    let mut prefix = vec![BOS];
    let mut emitted = Vec::new();
    for _ in 0..max_len {
        let mut tape = Tape::new();
        let bound = store.bind_prefix(&mut tape, "decoder.")?;
        let z = tape.constant(z_data.to_vec(), &[z_rows, dims.d_prime])?;
        let logits = decode_step(&mut tape, &bound, z, &prefix, dims)?;
        let next = argmax_lowest(tape.data(logits));
        emitted.push(next);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    Ok(TokenSequence { tokens: emitted })
}

/// Teacher-forced mean cross-entropy of one reference sequence under a
/// prompt: inputs are `[BOS, y_1..y_{k-1}]`, targets `[y_1..y_k]`, PAD
/// targets excluded.
pub fn sequence_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    z: Var,
    reference: &TokenSequence,
    dims: &DecoderDims,
) -> Result<Var> {
    if reference.len() < 2 {
        return Err(SctgError::Config("reference must hold at least BOS and EOS".into()));
    }
    let inputs = &reference.tokens[..reference.len() - 1];
    let targets = &reference.tokens[1..];
    let logits = decoder_logits(tape, bound, z, inputs, dims)?;
    let active: Vec<bool> = targets.iter().map(|&t| t != PAD).collect();
    tape.cross_entropy(logits, targets, &active)
}

#[cfg(test)]
mod tests;
