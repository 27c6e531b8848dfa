//! Volume container io, slice preprocessing, and the synthetic dataset
//! generator.
//!
//! Container layout (little-endian): magic `CTVL`, version u32, T u32,
//! H u32, W u32, then T·H·W f32 intensities row-major per slice.

mod manifest;
mod synth;

pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{
    generate_synthetic, render_report, synthesize_volume, template_vocabulary, LesionKind,
    LesionRecord, SynthConfig,
};

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SctgError};

const MAGIC: &[u8; 4] = b"CTVL";
const VERSION: u32 = 1;

/// An ordered stack of grayscale slices sharing one height and width.
#[derive(Debug, Clone)]
pub struct Volume {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// One row-major intensity buffer per slice, values in [0, 1].
    pub slices: Vec<Vec<f32>>,
}

impl Volume {
    pub fn new(id: impl Into<String>, height: usize, width: usize, slices: Vec<Vec<f32>>) -> Self {
        Volume { id: id.into(), height, width, slices }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Slice t widened to f64 for numeric work.
    pub fn slice_f64(&self, t: usize) -> Vec<f64> {
        self.slices[t].iter().map(|&v| v as f64).collect()
    }
}

pub fn save_volume(vol: &Volume, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(vol.slices.len() as u32).to_le_bytes())?;
    w.write_all(&(vol.height as u32).to_le_bytes())?;
    w.write_all(&(vol.width as u32).to_le_bytes())?;
    for slice in &vol.slices {
        for &v in slice {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;

    let mut read = |buf: &mut [u8], offset: &mut u64| -> Result<()> {
        r.read_exact(buf).map_err(|_| SctgError::Format {
            offset: *offset,
            msg: format!("truncated: wanted {} more bytes", buf.len()),
        })?;
        *offset += buf.len() as u64;
        Ok(())
    };

    let mut magic = [0u8; 4];
    read(&mut magic, &mut offset)?;
    if &magic != MAGIC {
        return Err(SctgError::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let mut b4 = [0u8; 4];
    read(&mut b4, &mut offset)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(SctgError::Format {
            offset: 4,
            msg: format!("unsupported volume version {version}"),
        });
    }
    read(&mut b4, &mut offset)?;
    let t = u32::from_le_bytes(b4) as usize;
    read(&mut b4, &mut offset)?;
    let h = u32::from_le_bytes(b4) as usize;
    read(&mut b4, &mut offset)?;
    let w = u32::from_le_bytes(b4) as usize;
    if t == 0 || h == 0 || w == 0 {
        return Err(SctgError::Format {
            offset: 8,
            msg: format!("degenerate dims T={t} H={h} W={w}"),
        });
    }

    let mut slices = Vec::with_capacity(t);
    for _ in 0..t {
        let mut slice = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            read(&mut b4, &mut offset)?;
            let v = f32::from_le_bytes(b4);
            slice.push(v.clamp(0.0, 1.0));
        }
        slices.push(slice);
    }
    // A well-formed file ends exactly at the declared payload.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(SctgError::Format {
            offset,
            msg: "trailing bytes beyond declared T*H*W payload".into(),
        });
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Volume { id, height: h, width: w, slices })
}

/// Bilinear resize with corner-aligned sampling. Equal dims copy the
/// input; constants are preserved exactly because the interpolation is
/// written in difference form.
pub fn resize_slice(slice: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    assert!(h >= 1 && w >= 1 && th >= 1 && tw >= 1, "resize dims must be >= 1");
    assert_eq!(slice.len(), h * w, "slice length must equal h*w");
    if th == h && tw == w {
        return slice.to_vec();
    }
    let mut out = vec![0.0; th * tw];
    let y_step = if th > 1 { (h - 1) as f64 / (th - 1) as f64 } else { 0.0 };
    let x_step = if tw > 1 { (w - 1) as f64 / (tw - 1) as f64 } else { 0.0 };
    for i in 0..th {
        let y = i as f64 * y_step;
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for j in 0..tw {
            let x = j as f64 * x_step;
            let x0 = (x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let v00 = slice[y0 * w + x0];
            let v01 = slice[y0 * w + x1];
            let v10 = slice[y1 * w + x0];
            let v11 = slice[y1 * w + x1];
            let v = v00 + fx * (v01 - v00) + fy * (v10 - v00) + fx * fy * (v00 + v11 - v01 - v10);
            out[i * tw + j] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// A slice divided into non-overlapping P×P tiles in row-major grid
/// order; tile n is `data[n*P*P .. (n+1)*P*P]`, itself row-major.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub data: Vec<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn n(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_values(&self, n: usize) -> &[f64] {
        let pp = self.patch * self.patch;
        &self.data[n * pp..(n + 1) * pp]
    }
}

pub fn patchify(slice: &[f64], h: usize, w: usize, patch: usize) -> Result<PatchGrid> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(SctgError::Config(format!(
            "patch size {patch} does not divide slice dims {h}x{w}"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for dy in 0..patch {
                for dx in 0..patch {
                    data.push(slice[(gy * patch + dy) * w + gx * patch + dx]);
                }
            }
        }
    }
    Ok(PatchGrid { data, grid_h: gh, grid_w: gw, patch })
}

/// Inverse of [`patchify`]; used as its round-trip oracle.
pub fn depatchify(grid: &PatchGrid) -> Vec<f64> {
    let p = grid.patch;
    let (h, w) = (grid.grid_h * p, grid.grid_w * p);
    let mut out = vec![0.0; h * w];
    for gy in 0..grid.grid_h {
        for gx in 0..grid.grid_w {
            let patch = grid.patch_values(gy * grid.grid_w + gx);
            for dy in 0..p {
                for dx in 0..p {
                    out[(gy * p + dy) * w + gx * p + dx] = patch[dy * p + dx];
                }
            }
        }
    }
    out
}
