//! Attention export for one volume: weight bundle, optional SVG
//! heatmaps, and the generated report side by side.

use std::path::{Path, PathBuf};

use super::RunConfig;
use crate::attention::{export_attention, AttentionBundle};
use crate::error::{Result, SctgError};
use crate::model::generate_report;
use crate::tensor::ParamStore;
use crate::text::{detokenize, Vocabulary};
use crate::volume::load_volume;

pub struct AttendSummary {
    pub bundle_path: PathBuf,
    pub report_path: PathBuf,
    pub report_text: String,
    pub top_alpha_slice: usize,
    /// Lesion slice indices from a `lesions.json` next to the volume,
    /// when present; for eyeballing against the top-alpha slice.
    pub expected_slices: Option<Vec<usize>>,
}

fn lesion_slices(volume_path: &Path, id: &str) -> Option<Vec<usize>> {
    let path = volume_path.parent()?.join("lesions.json");
    let text = std::fs::read_to_string(path).ok()?;
    let entries: Vec<serde_json::Value> = serde_json::from_str(&text).ok()?;
    for e in entries {
        if e.get("id")?.as_str()? == id {
            let lesions = e.get("lesions")?.as_array()?;
            let mut slices = Vec::new();
            for l in lesions {
                let start = l.get("start_slice")?.as_u64()? as usize;
                let span = l.get("span")?.as_u64()? as usize;
                slices.extend(start..start + span);
            }
            return Some(slices);
        }
    }
    None
}

/// Run encode + stereo attentions on one volume from a checkpoint,
/// write the weight bundle (and SVGs when asked), and generate the
/// report next to it.
pub fn attend(
    checkpoint: &Path,
    config: &RunConfig,
    volume_path: &Path,
    out_dir: &Path,
    svg: bool,
) -> Result<AttendSummary> {
    if !(config.attn_slice && config.attn_window && config.attn_region) {
        return Err(SctgError::Config(
            "attention export needs all three attentions enabled in the config".into(),
        ));
    }
    let store = ParamStore::load(checkpoint)?;
    let vocab_path = checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("vocab.txt");
    let vocab = Vocabulary::load(&vocab_path)?;
    let dims = config.model_dims(vocab.len());
    let volume = load_volume(volume_path)?;

    let (seq, weights) =
        generate_report(&store, &volume, &dims, &config.attention_flags(), config.fusion)?;
    let weights = weights.expect("all attentions enabled");
    let report_text = detokenize(&seq, &vocab);

    let enc = dims.encoder();
    let bundle = AttentionBundle::new(&volume.id, enc.grid_h(), enc.grid_w(), &weights);
    let written = export_attention(&bundle, out_dir, svg)?;
    let report_path = out_dir.join(format!("{}.report.txt", volume.id));
    std::fs::write(&report_path, format!("{report_text}\n"))?;

    Ok(AttendSummary {
        bundle_path: written[0].clone(),
        report_path,
        report_text,
        top_alpha_slice: bundle.top_slice(),
        expected_slices: lesion_slices(volume_path, &volume.id),
    })
}
