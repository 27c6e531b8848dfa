//! Seeded synthetic volumes with geometric lesions and templated
//! reports. The lesion-attribute-to-text map is injective, so a model
//! that reads the right slice and cell can recover the report exactly.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::{save_volume, Volume};
use crate::error::{Result, SctgError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    Disk,
    Square,
    Ring,
}

impl LesionKind {
    pub fn word(self) -> &'static str {
        match self {
            LesionKind::Disk => "disk",
            LesionKind::Square => "square",
            LesionKind::Ring => "ring",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Slices are size×size.
    pub size: usize,
    /// Grid cell used for lesion placement.
    pub patch: usize,
    /// 0 means every report is the no-finding template.
    pub max_lesions: usize,
    pub kinds: Vec<LesionKind>,
    pub noise_level: f64,
    pub max_radius: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(SctgError::Config(format!(
                "bad slice count range [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.size == 0 || self.patch == 0 || self.size % self.patch != 0 {
            return Err(SctgError::Config(format!(
                "patch {} must divide slice size {}",
                self.patch, self.size
            )));
        }
        if 2 * self.max_radius > self.size {
            return Err(SctgError::Config(format!(
                "lesion diameter {} exceeds slice size {}",
                2 * self.max_radius,
                self.size
            )));
        }
        if self.max_lesions > 0 && self.kinds.is_empty() {
            return Err(SctgError::Config("lesion vocabulary is empty".into()));
        }
        Ok(())
    }
}

/// Per-lesion attributes, kept next to the dataset for later
/// attention-vs-lesion inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionRecord {
    pub kind: LesionKind,
    pub cell_row: usize,
    pub cell_col: usize,
    pub start_slice: usize,
    pub span: usize,
    pub quadrant: &'static str,
    pub band: &'static str,
    pub intensity: f32,
}

fn quadrant(cell_row: usize, cell_col: usize, grid: usize) -> &'static str {
    let upper = cell_row < grid.div_ceil(2);
    let left = cell_col < grid.div_ceil(2);
    match (upper, left) {
        (true, true) => "upper left",
        (true, false) => "upper right",
        (false, true) => "lower left",
        (false, false) => "lower right",
    }
}

fn band(start: usize, span: usize, t: usize) -> &'static str {
    let center = start as f64 + span as f64 / 2.0;
    let rel = center / t as f64;
    if rel < 1.0 / 3.0 {
        "early"
    } else if rel < 2.0 / 3.0 {
        "middle"
    } else {
        "late"
    }
}

/// The report is a pure function of the lesion attribute tuples.
pub fn render_report(lesions: &[LesionRecord]) -> String {
    if lesions.is_empty() {
        return "no significant abnormality .".to_string();
    }
    let mut parts = Vec::with_capacity(lesions.len());
    for l in lesions {
        parts.push(format!(
            "a {} is seen in the {} region of the {} slices .",
            l.kind.word(),
            l.quadrant,
            l.band
        ));
    }
    parts.join(" ")
}

/// Every word the report templates can emit, in stable order.
pub fn template_vocabulary() -> Vec<&'static str> {
    vec![
        "a", "abnormality", "disk", "early", "in", "is", "late", "left", "lower", "middle", "no",
        "of", "region", "right", "ring", "seen", "significant", "slices", "square", "the",
        "upper", ".",
    ]
}

fn draw_lesion(slice: &mut [f32], size: usize, l: &LesionRecord, patch: usize, radius: f64) {
    let cy = (l.cell_row * patch + patch / 2) as f64;
    let cx = (l.cell_col * patch + patch / 2) as f64;
    let r = radius;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let inside = match l.kind {
                LesionKind::Disk => dy * dy + dx * dx <= r * r,
                LesionKind::Square => dy.abs() <= r && dx.abs() <= r,
                LesionKind::Ring => {
                    let d2 = dy * dy + dx * dx;
                    let inner = (r - (r / 2.0).max(1.0)).max(0.0);
                    d2 <= r * r && d2 >= inner * inner
                }
            };
            if inside {
                slice[y * size + x] = l.intensity;
            }
        }
    }
}

fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over a combined key; any fixed mixing works, it only
    // has to be stable.
    let mut z = master ^ stream.wrapping_mul(0x9E3779B97F4A7C15) ^ index.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Build one volume in memory: background noise, lesions, report.
pub fn synthesize_volume(
    cfg: &SynthConfig,
    id: &str,
    seed: u64,
) -> (Volume, Vec<LesionRecord>, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(cfg.t_min..=cfg.t_max);
    let size = cfg.size;
    let grid = size / cfg.patch;

    let mut slices: Vec<Vec<f32>> = (0..t)
        .map(|_| {
            (0..size * size)
                .map(|_| rng.gen_range(0.0..cfg.noise_level) as f32)
                .collect()
        })
        .collect();

    let n_lesions = if cfg.max_lesions == 0 { 0 } else { rng.gen_range(1..=cfg.max_lesions) };
    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
        let cell_row = rng.gen_range(0..grid);
        let cell_col = rng.gen_range(0..grid);
        let span = rng.gen_range(2..=4usize).min(t);
        let start = rng.gen_range(0..=t - span);
        let intensity = rng.gen_range(0.6..1.0) as f32;
        let record = LesionRecord {
            kind,
            cell_row,
            cell_col,
            start_slice: start,
            span,
            quadrant: quadrant(cell_row, cell_col, grid),
            band: band(start, span, t),
            intensity,
        };
        let base = rng.gen_range(cfg.max_radius as f64 * 0.4..cfg.max_radius as f64 * 0.6);
        for k in 0..span {
            // Grows with slice index, capped by the configured radius.
            let radius =
                (base + k as f64 * (cfg.max_radius as f64 - base) / span as f64).min(cfg.max_radius as f64);
            draw_lesion(&mut slices[start + k], size, &record, cfg.patch, radius);
        }
        lesions.push(record);
    }
    lesions.sort_by_key(|l| (l.start_slice, l.cell_row, l.cell_col));
    let report = render_report(&lesions);
    (Volume::new(id, size, size, slices), lesions, report)
}

/// Write the volumes, manifest, and lesion metadata for one dataset.
/// Identical `(config, seed)` pairs produce identical bytes.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut entries = Vec::new();
    let mut lesion_log: Vec<(String, Vec<LesionRecord>)> = Vec::new();
    let plan: [(Split, usize, u64); 3] = [
        (Split::Train, cfg.train, 0),
        (Split::Dev, cfg.dev, 1),
        (Split::Test, cfg.test, 2),
    ];
    for (split, count, stream) in plan {
        for i in 0..count {
            let id = format!("{split}_{i:04}");
            let (vol, lesions, report) = synthesize_volume(cfg, &id, derive_seed(seed, stream, i as u64));
            let file = format!("{id}.ctvl");
            save_volume(&vol, &out_dir.join(&file))?;
            entries.push(ManifestEntry { id: id.clone(), path: file, split, report });
            lesion_log.push((id, lesions));
        }
    }

    let manifest = DatasetManifest { entries };
    manifest.save(&out_dir.join("manifest.json"))?;
    let lesions_file = std::fs::File::create(out_dir.join("lesions.json"))?;
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(lesions_file),
        &lesion_log
            .iter()
            .map(|(id, ls)| serde_json::json!({ "id": id, "lesions": ls }))
            .collect::<Vec<_>>(),
    )?;
    Ok(manifest)
}
