//! The attention ablation grid plus the stack/sum fusion comparison,
//! all under one shared seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run::train, ExperimentResult, RunConfig};
use crate::decoder::FusionMode;
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub slice: bool,
    pub window: bool,
    pub region: bool,
    pub fusion: FusionMode,
    pub config_hash: String,
    pub final_loss: f64,
    pub dev_bleu: Vec<f64>,
    pub dev_rouge_1: f64,
    pub dev_meteor: f64,
    /// Needs pretrained embeddings; always unavailable here.
    pub dev_bert_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    /// The five-row grid: all attentions, each alone, none.
    pub attention_rows: Vec<AblationRow>,
    /// Stack vs sum with all attentions enabled.
    pub fusion_rows: Vec<AblationRow>,
    /// Dev BLEU-1 of the full stereo row minus the all-off row. The
    /// expectation is positive; single-seed training noise means this
    /// is logged, never asserted.
    pub stereo_minus_baseline_bleu1: f64,
}

fn row_from_result(label: &str, config: &RunConfig, result: &ExperimentResult) -> AblationRow {
    let dev = result.metrics.get("dev");
    AblationRow {
        label: label.to_string(),
        slice: config.attn_slice,
        window: config.attn_window,
        region: config.attn_region,
        fusion: config.fusion,
        config_hash: result.config_hash.clone(),
        final_loss: result.loss_curve.last().copied().unwrap_or(f64::NAN),
        dev_bleu: dev.map(|m| m.bleu.clone()).unwrap_or_default(),
        dev_rouge_1: dev.map(|m| m.rouge_1_f).unwrap_or(f64::NAN),
        dev_meteor: dev.map(|m| m.meteor).unwrap_or(f64::NAN),
        dev_bert_score: None,
    }
}

fn fmt_row(row: &AblationRow) -> String {
    let mark = |b: bool| if b { "x" } else { "-" };
    let bleu: Vec<String> = row.dev_bleu.iter().map(|b| format!("{b:.4}")).collect();
    format!(
        "{:<14} {}{}{}  {:<5}  {}  {:.4}  {:.4}  n/a",
        row.label,
        mark(row.slice),
        mark(row.window),
        mark(row.region),
        match row.fusion {
            FusionMode::Stack => "stack",
            FusionMode::Sum => "sum",
        },
        bleu.join(" "),
        row.dev_rouge_1,
        row.dev_meteor,
    )
}

/// Run the 5-row attention grid and the 2-row fusion comparison. Every
/// row is a full standalone training run with the shared seed, so any
/// row rerun by itself reproduces its numbers exactly.
pub fn run_ablation(base: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<AblationTable> {
    std::fs::create_dir_all(out_dir)?;
    let grid: [(&str, bool, bool, bool); 5] = [
        ("all", true, true, true),
        ("slice-only", true, false, false),
        ("window-only", false, true, false),
        ("region-only", false, false, true),
        ("none", false, false, false),
    ];

    let mut attention_rows = Vec::with_capacity(grid.len());
    for (label, slice, window, region) in grid {
        let cfg = RunConfig {
            attn_slice: slice,
            attn_window: window,
            attn_region: region,
            fusion: FusionMode::Stack,
            ..base.clone()
        };
        let out = train(&cfg, data_dir, &out_dir.join(format!("attn_{label}")))?;
        attention_rows.push(row_from_result(label, &cfg, &out.result));
    }

    let mut fusion_rows = Vec::with_capacity(2);
    for (label, fusion) in [("stack", FusionMode::Stack), ("sum", FusionMode::Sum)] {
        let cfg = RunConfig {
            attn_slice: true,
            attn_window: true,
            attn_region: true,
            fusion,
            ..base.clone()
        };
        let out = train(&cfg, data_dir, &out_dir.join(format!("fusion_{label}")))?;
        fusion_rows.push(row_from_result(label, &cfg, &out.result));
    }

    let bleu1 = |row: &AblationRow| row.dev_bleu.first().copied().unwrap_or(f64::NAN);
    let table = AblationTable {
        stereo_minus_baseline_bleu1: bleu1(&attention_rows[0]) - bleu1(&attention_rows[4]),
        attention_rows,
        fusion_rows,
    };

    let file = std::fs::File::create(out_dir.join("ablation.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &table)?;
    Ok(table)
}

/// Text rendering of the grid for the CLI.
pub fn format_table(table: &AblationTable) -> String {
    let mut out = String::new();
    out.push_str("row            SWR    fusion BL-1   BL-2   BL-3   BL-4   RG      MT      BS\n");
    for row in &table.attention_rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out.push_str("-- fusion comparison (all attentions on) --\n");
    for row in &table.fusion_rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out.push_str(&format!(
        "trend: full-stereo dev BLEU-1 minus all-off = {:+.4} (expected positive; logged, not asserted)\n",
        table.stereo_minus_baseline_bleu1
    ));
    out
}
