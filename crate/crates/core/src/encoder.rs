//! Recurrent visual feature extraction.
//!
//! Each slice is patchified, linearly embedded, fused with the previous
//! slice's encoded features and the position table, pushed through a
//! pre-norm vision-transformer unit, and projected to the slice
//! representation matrix. The recurrent carry is the transformer output
//! (not the projection head's), and the first slice starts from a zero
//! carry.

use crate::error::{Result, SctgError};
use crate::tensor::{BoundParams, Tape, Var};
use crate::volume::{patchify, resize_slice, PatchGrid, Volume};

/// Widths and depths of the encoder stack.
#[derive(Debug, Clone, Copy)]
pub struct EncoderDims {
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub d: usize,
    pub d_e: usize,
    pub layers: usize,
    pub heads: usize,
}

impl EncoderDims {
    pub fn grid_h(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.width / self.patch
    }

    pub fn n(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(SctgError::Config(format!(
                "patch {} must divide {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(SctgError::Config(format!(
                "heads {} must divide width {}",
                self.heads, self.d
            )));
        }
        Ok(())
    }
}

/// Create every `encoder.*` parameter in fixed draw order.
pub fn init_params(store: &mut crate::tensor::ParamStore, dims: &EncoderDims, rng: &mut rand_chacha::ChaCha8Rng) {
    use crate::init::{ones, uniform, xavier, zeros};
    let (pp, d, d_e, n) = (dims.patch * dims.patch, dims.d, dims.d_e, dims.n());
    store.insert("encoder.patch.w", xavier(rng, pp, d));
    store.insert("encoder.patch.b", zeros(&[d]));
    store.insert("encoder.pos", uniform(rng, &[n, d], 0.02));
    for l in 0..dims.layers {
        let p = format!("encoder.vit{l}");
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
    store.insert("encoder.vit_out.g", ones(&[d]));
    store.insert("encoder.vit_out.b", zeros(&[d]));
    store.insert("encoder.head.w1", xavier(rng, d, d));
    store.insert("encoder.head.b1", zeros(&[d]));
    store.insert("encoder.head.w2", xavier(rng, d, d_e));
    store.insert("encoder.head.b2", zeros(&[d_e]));
}

/// Affine patch embedding: `[N, P*P] -> [N, d]`, row order preserved.
pub fn embed_patches(tape: &mut Tape, bound: &BoundParams, grid: &PatchGrid, dims: &EncoderDims) -> Result<Var> {
    let pp = dims.patch * dims.patch;
    if grid.patch != dims.patch {
        return Err(SctgError::DimMismatch {
            op: "embed_patches",
            lhs: vec![grid.patch * grid.patch],
            rhs: vec![pp],
        });
    }
    let x = tape.constant(grid.data.clone(), &[grid.n(), pp])?;
    let h = tape.matmul(x, bound.var("encoder.patch.w"))?;
    tape.add(h, bound.var("encoder.patch.b"))
}

/// Three-way fusion of patch embeddings, the previous carry, and the
/// position table. `h_prev = None` is the zero carry of the first
/// position; skipping the add keeps the T=1 path bitwise equal to a
/// plain single-slice encoder.
pub fn fuse(tape: &mut Tape, patches: Var, h_prev: Option<Var>, pos: Var) -> Result<Var> {
    let with_carry = match h_prev {
        Some(h) => tape.add(patches, h)?,
        None => patches,
    };
    tape.add(with_carry, pos)
}

fn attention_sublayer(
    tape: &mut Tape,
    bound: &BoundParams,
    x: Var,
    prefix: &str,
    dims: &EncoderDims,
) -> Result<Var> {
    let q = tape.matmul(x, bound.var(&format!("{prefix}.wq")))?;
    let q = tape.add(q, bound.var(&format!("{prefix}.bq")))?;
    // No key bias: it shifts every score in a row equally, which the
    // softmax cancels, leaving a parameter with no gradient signal.
    let k = tape.matmul(x, bound.var(&format!("{prefix}.wk")))?;
    let v = tape.matmul(x, bound.var(&format!("{prefix}.wv")))?;
    let v = tape.add(v, bound.var(&format!("{prefix}.bv")))?;

    let dh = dims.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores, 1)?;
        head_outputs.push(tape.matmul(weights, vh)?);
    }
    let ctx = tape.concat_cols(&head_outputs)?;
    let out = tape.matmul(ctx, bound.var(&format!("{prefix}.wo")))?;
    tape.add(out, bound.var(&format!("{prefix}.bo")))
}

/// One pass of the vision-transformer unit over N patch tokens.
/// Positions were already added in [`fuse`]; there is no class token.
pub fn encode_slice(tape: &mut Tape, bound: &BoundParams, v: Var, dims: &EncoderDims) -> Result<Var> {
    let mut x = v;
    for l in 0..dims.layers {
        let p = format!("encoder.vit{l}");
        let normed = tape.layer_norm(
            x,
            bound.var(&format!("{p}.ln1.g")),
            bound.var(&format!("{p}.ln1.b")),
            1e-5,
        )?;
        let attn = attention_sublayer(tape, bound, normed, &format!("{p}.attn"), dims)?;
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
        tape.ensure_finite(x, &format!("encoder vit layer {l}"))?;
    }
    tape.layer_norm(
        x,
        bound.var("encoder.vit_out.g"),
        bound.var("encoder.vit_out.b"),
        1e-5,
    )
}

/// Row-wise projection head: one hidden GELU layer, `[N, d] -> [N, d_e]`.
pub fn project(tape: &mut Tape, bound: &BoundParams, h: Var) -> Result<Var> {
    let h1 = tape.matmul(h, bound.var("encoder.head.w1"))?;
    let h1 = tape.add(h1, bound.var("encoder.head.b1"))?;
    let h1 = tape.gelu(h1);
    let h2 = tape.matmul(h1, bound.var("encoder.head.w2"))?;
    tape.add(h2, bound.var("encoder.head.b2"))
}

/// Resize (when needed) and patchify every slice of a volume.
pub fn preprocess_volume(vol: &Volume, dims: &EncoderDims) -> Result<Vec<PatchGrid>> {
    let mut grids = Vec::with_capacity(vol.len());
    for t in 0..vol.len() {
        let slice = vol.slice_f64(t);
        let resized = resize_slice(&slice, vol.height, vol.width, dims.height, dims.width);
        grids.push(patchify(&resized, dims.height, dims.width, dims.patch)?);
    }
    Ok(grids)
}

/// Encoded slice representations plus the raw carries, for callers that
/// want to look at the recurrent state.
pub struct EncodedVolume {
    /// E_t matrices, each `[N, d_e]`.
    pub slices: Vec<Var>,
    /// h_t matrices, each `[N, d]`.
    pub carries: Vec<Var>,
}

/// Run the recurrence over all slices: carry the transformer output of
/// position t-1 into the fusion at position t.
pub fn encode_volume(
    tape: &mut Tape,
    bound: &BoundParams,
    grids: &[PatchGrid],
    dims: &EncoderDims,
) -> Result<EncodedVolume> {
    if grids.is_empty() {
        return Err(SctgError::Config("encode_volume: empty volume".into()));
    }
    let pos = bound.var("encoder.pos");
    let mut carry: Option<Var> = None;
    let mut slices = Vec::with_capacity(grids.len());
    let mut carries = Vec::with_capacity(grids.len());
    for grid in grids {
        let p = embed_patches(tape, bound, grid, dims)?;
        let v = fuse(tape, p, carry, pos)?;
        let h = encode_slice(tape, bound, v, dims)?;
        slices.push(project(tape, bound, h)?);
        carries.push(h);
        carry = Some(h);
    }
    Ok(EncodedVolume { slices, carries })
}

/// The non-recurrent path: a plain single-slice encoder. Shares every
/// kernel with [`encode_volume`], which collapses to this at T=1.
pub fn encode_single_slice(
    tape: &mut Tape,
    bound: &BoundParams,
    grid: &PatchGrid,
    dims: &EncoderDims,
) -> Result<Var> {
    let p = embed_patches(tape, bound, grid, dims)?;
    let v = fuse(tape, p, None, bound.var("encoder.pos"))?;
    let h = encode_slice(tape, bound, v, dims)?;
    project(tape, bound, h)
}
