//! The three attention poolings over encoded slice representations:
//! slice attention across the volume, window attention per patch
//! position across slices, and region attention per slice across
//! patches. Each produces a simplex of weights and a projected output
//! matrix aligned with the decoder width.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SctgError};
use crate::tensor::{BoundParams, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct AttentionDims {
    pub n: usize,
    pub d_e: usize,
    pub d_prime: usize,
}

/// Create every `attention.*` parameter in fixed draw order. The
/// scorers are weight-only: a scorer bias shifts all scores in one
/// softmax lane equally and would never receive gradient signal.
pub fn init_params(store: &mut ParamStore, dims: &AttentionDims, rng: &mut rand_chacha::ChaCha8Rng) {
    use crate::init::{xavier, zeros};
    let (n, d_e, d_p) = (dims.n, dims.d_e, dims.d_prime);
    store.insert("attention.slice.score.w", xavier(rng, n * d_e, 1));
    store.insert("attention.window.score.w", xavier(rng, d_e, 1));
    store.insert("attention.region.score.w", xavier(rng, d_e, 1));
    store.insert("attention.slice.proj.w", xavier(rng, d_e, d_p));
    store.insert("attention.slice.proj.b", zeros(&[d_p]));
    store.insert("attention.window.proj.w", xavier(rng, d_e, d_p));
    store.insert("attention.window.proj.b", zeros(&[d_p]));
    store.insert("attention.region.proj.w", xavier(rng, d_e, d_p));
    store.insert("attention.region.proj.b", zeros(&[d_p]));
}

fn check_slices(tape: &Tape, slices: &[Var], dims: &AttentionDims) -> Result<()> {
    if slices.is_empty() {
        return Err(SctgError::Config("attention over an empty volume".into()));
    }
    for &e in slices {
        let s = tape.shape(e);
        if s != [dims.n, dims.d_e] {
            return Err(SctgError::DimMismatch {
                op: "stereo_attention",
                lhs: s.to_vec(),
                rhs: vec![dims.n, dims.d_e],
            });
        }
    }
    Ok(())
}

/// Whole-volume attention: one weight per slice from a scored row-major
/// flatten of E_t, then a weighted sum of the matrices.
/// Returns `(alpha [T,1], O_s [N,d'])`.
pub fn slice_attention(
    tape: &mut Tape,
    bound: &BoundParams,
    slices: &[Var],
    dims: &AttentionDims,
) -> Result<(Var, Var)> {
    check_slices(tape, slices, dims)?;
    let t = slices.len();
    let cat = tape.concat_rows(slices)?;
    let flat = tape.reshape(cat, &[t, dims.n * dims.d_e])?;
    let scores = tape.matmul(flat, bound.var("attention.slice.score.w"))?;
    let alpha = tape.softmax(scores, 0)?;
    let alpha_t = tape.transpose(alpha)?;
    let pooled = tape.matmul(alpha_t, flat)?;
    let pooled = tape.reshape(pooled, &[dims.n, dims.d_e])?;
    let o = tape.matmul(pooled, bound.var("attention.slice.proj.w"))?;
    let o = tape.add(o, bound.var("attention.slice.proj.b"))?;
    Ok((alpha, o))
}

/// Fixed-position attention: per patch index, weights across slices.
/// Returns `(beta [T,N], O_w [N,d'])`; column n of beta is a simplex.
pub fn window_attention(
    tape: &mut Tape,
    bound: &BoundParams,
    slices: &[Var],
    dims: &AttentionDims,
) -> Result<(Var, Var)> {
    check_slices(tape, slices, dims)?;
    let t = slices.len();
    let cat = tape.concat_rows(slices)?;
    let scores = tape.matmul(cat, bound.var("attention.window.score.w"))?;
    let scores = tape.reshape(scores, &[t, dims.n])?;
    let beta = tape.softmax(scores, 0)?;
    let values = tape.reshape(cat, &[t, dims.n, dims.d_e])?;
    let pooled = tape.weighted_pool(beta, values, 0)?;
    let o = tape.matmul(pooled, bound.var("attention.window.proj.w"))?;
    let o = tape.add(o, bound.var("attention.window.proj.b"))?;
    Ok((beta, o))
}

/// In-slice attention: per slice, weights across patches.
/// Returns `(gamma [T,N], O_r [T,d'])`; row t of gamma is a simplex.
pub fn region_attention(
    tape: &mut Tape,
    bound: &BoundParams,
    slices: &[Var],
    dims: &AttentionDims,
) -> Result<(Var, Var)> {
    check_slices(tape, slices, dims)?;
    let t = slices.len();
    let cat = tape.concat_rows(slices)?;
    let scores = tape.matmul(cat, bound.var("attention.region.score.w"))?;
    let scores = tape.reshape(scores, &[t, dims.n])?;
    let gamma = tape.softmax(scores, 1)?;
    let values = tape.reshape(cat, &[t, dims.n, dims.d_e])?;
    let pooled = tape.weighted_pool(gamma, values, 1)?;
    let o = tape.matmul(pooled, bound.var("attention.region.proj.w"))?;
    let o = tape.add(o, bound.var("attention.region.proj.b"))?;
    Ok((gamma, o))
}

/// Attention weights lifted off the tape in the shapes the export
/// format uses.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    /// One weight per slice.
    pub alpha: Vec<f64>,
    /// `beta[n][t]`: per patch position, a simplex over slices.
    pub beta: Vec<Vec<f64>>,
    /// `gamma[t][n]`: per slice, a simplex over patches.
    pub gamma: Vec<Vec<f64>>,
}

impl AttentionWeights {
    pub fn from_tape(tape: &Tape, alpha: Var, beta: Var, gamma: Var) -> Self {
        let t = tape.shape(alpha)[0];
        let n = tape.shape(beta)[1];
        let a = tape.data(alpha).to_vec();
        let b = (0..n)
            .map(|col| (0..t).map(|row| tape.data(beta)[row * n + col]).collect())
            .collect();
        let g = (0..t)
            .map(|row| tape.data(gamma)[row * n..(row + 1) * n].to_vec())
            .collect();
        AttentionWeights { alpha: a, beta: b, gamma: g }
    }
}

/// Structured dump of the per-slice and per-cell attention weights for
/// one volume, plus the grid geometry needed to draw them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionBundle {
    pub id: String,
    pub t: usize,
    pub grid: [usize; 2],
    pub alpha: Vec<f64>,
    /// `beta[n][t]`, indexed by patch cell then slice.
    pub beta: Vec<Vec<f64>>,
}

impl AttentionBundle {
    pub fn new(id: &str, grid_h: usize, grid_w: usize, weights: &AttentionWeights) -> Self {
        AttentionBundle {
            id: id.to_string(),
            t: weights.alpha.len(),
            grid: [grid_h, grid_w],
            alpha: weights.alpha.clone(),
            beta: weights.beta.clone(),
        }
    }

    /// Slice index with the largest slice-attention weight.
    pub fn top_slice(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.alpha.iter().enumerate() {
            if v > self.alpha[best] {
                best = i;
            }
        }
        best
    }
}

/// Write the structured dump, and optionally one SVG heatmap per slice:
/// border tint from alpha, cell tint from beta.
pub fn export_attention(
    bundle: &AttentionBundle,
    out_dir: &std::path::Path,
    svg: bool,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let json_path = out_dir.join(format!("{}.attn.json", bundle.id));
    let file = std::fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), bundle)?;
    written.push(json_path);
    if svg {
        for t in 0..bundle.t {
            let path = out_dir.join(format!("{}.slice{t:03}.svg", bundle.id));
            std::fs::write(&path, render_slice_svg(bundle, t))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn heat(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn render_slice_svg(bundle: &AttentionBundle, t: usize) -> String {
    let [gh, gw] = bundle.grid;
    let cell = 32usize;
    let (w, h) = (gw * cell, gh * cell);
    let alpha = bundle.alpha[t];
    let beta_max = bundle
        .beta
        .iter()
        .map(|col| col[t])
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    for gy in 0..gh {
        for gx in 0..gw {
            let n = gy * gw + gx;
            let rel = bundle.beta[n][t] / beta_max;
            s.push_str(&format!(
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({},{},{})\" stroke=\"gray\" stroke-width=\"1\"/>\n",
                gx * cell,
                gy * cell,
                heat(rel),
                40,
                heat(1.0 - rel),
            ));
        }
    }
    // Border tint encodes the slice weight.
    s.push_str(&format!(
        "  <rect x=\"1\" y=\"1\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"rgb({},{},0)\" stroke-width=\"3\"/>\n",
        w - 2,
        h - 2,
        heat(alpha),
        heat(1.0 - alpha),
    ));
    s.push_str("</svg>\n");
    s
}
