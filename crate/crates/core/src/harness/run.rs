//! Seeded end-to-end training and checkpoint evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentResult, RunConfig};
use crate::decoder::FusionMode;
use crate::error::{Result, SctgError};
use crate::metrics::{corpus_report_text, MetricReport};
use crate::model::{generate_report, init_params, train_step, AttentionFlags, ModelDims};
use crate::tensor::{AdamConfig, AdamState, ParamStore};
use crate::text::{detokenize, tokenize, TokenSequence, Vocabulary};
use crate::volume::{load_volume, DatasetManifest, Split, Volume};

struct DataItem {
    volume: Volume,
    grids: Vec<crate::volume::PatchGrid>,
    tokens: TokenSequence,
    report: String,
}

struct Dataset {
    train: Vec<DataItem>,
    dev: Vec<DataItem>,
    test: Vec<DataItem>,
}

fn load_dataset(data_dir: &Path, vocab: &Vocabulary, dims: &ModelDims) -> Result<Dataset> {
    let manifest_path = data_dir.join("manifest.json");
    let manifest = DatasetManifest::load(&manifest_path)?;
    let enc = dims.encoder();
    let mut dataset = Dataset { train: Vec::new(), dev: Vec::new(), test: Vec::new() };
    for entry in &manifest.entries {
        let volume = load_volume(&DatasetManifest::volume_path(&manifest_path, entry))?;
        let grids = crate::encoder::preprocess_volume(&volume, &enc)?;
        let item = DataItem {
            volume,
            grids,
            tokens: tokenize(&entry.report, vocab),
            report: entry.report.clone(),
        };
        match entry.split {
            Split::Train => dataset.train.push(item),
            Split::Dev => dataset.dev.push(item),
            Split::Test => dataset.test.push(item),
        }
    }
    if dataset.train.is_empty() {
        return Err(SctgError::Config(format!(
            "manifest {} has no train entries",
            manifest_path.display()
        )));
    }
    Ok(dataset)
}

fn vocabulary_from_manifest(data_dir: &Path) -> Result<Vocabulary> {
    let manifest = DatasetManifest::load(&data_dir.join("manifest.json"))?;
    Ok(Vocabulary::from_reports(
        manifest.split(Split::Train).map(|e| e.report.as_str()),
    ))
}

fn evaluate_items(
    store: &ParamStore,
    items: &[DataItem],
    vocab: &Vocabulary,
    dims: &ModelDims,
    flags: &AttentionFlags,
    fusion: FusionMode,
) -> Result<MetricReport> {
    let mut candidates = Vec::with_capacity(items.len());
    let mut references = Vec::with_capacity(items.len());
    for item in items {
        let (seq, _) = generate_report(store, &item.volume, dims, flags, fusion)?;
        candidates.push(detokenize(&seq, vocab));
        references.push(item.report.clone());
    }
    corpus_report_text(&candidates, &references)
}

pub struct TrainOutputs {
    pub result: ExperimentResult,
    pub store: ParamStore,
    pub vocab: Vocabulary,
}

/// Train per the config against the dataset under `data_dir`, writing
/// `config.resolved`, `vocab.txt`, `losses.csv`, `checkpoint.bin`, and
/// `metrics.json` into `out_dir`. Fully determined by (config, data).
pub fn train(config: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutputs> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();

    let vocab = vocabulary_from_manifest(data_dir)?;
    let dims = config.model_dims(vocab.len());
    let dataset = load_dataset(data_dir, &vocab, &dims)?;
    let flags = config.attention_flags();
    let fusion = config.fusion;

    let mut store = init_params(&dims, config.seed);
    let mut state = AdamState::new();
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5351_4731);
    let mut loss_curve = Vec::new();
    let mut metrics: BTreeMap<String, MetricReport> = BTreeMap::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[crate::volume::PatchGrid], &TokenSequence)> = chunk
                .iter()
                .map(|&i| (dataset.train[i].grids.as_slice(), &dataset.train[i].tokens))
                .collect();
            let loss = train_step(&mut store, &mut state, &adam, &batch, &dims, &flags, fusion, step)?;
            loss_curve.push(loss);
            step += 1;
        }
        let last_epoch = epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        if (due || last_epoch) && !dataset.dev.is_empty() {
            let report = evaluate_items(&store, &dataset.dev, &vocab, &dims, &flags, fusion)?;
            metrics.insert("dev".to_string(), report);
        }
    }

    // Artifacts.
    config.save(&out_dir.join("config.resolved"))?;
    vocab.save(&out_dir.join("vocab.txt"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in loss_curve.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let mut f = std::fs::File::create(out_dir.join("losses.csv"))?;
    f.write_all(csv.as_bytes())?;
    store.save(&out_dir.join("checkpoint.bin"))?;

    let result = ExperimentResult {
        config_hash: config.hash(),
        metrics,
        loss_curve,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let mf = std::fs::File::create(out_dir.join("metrics.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(mf), &result)?;

    Ok(TrainOutputs { result, store, vocab })
}

/// Reject a checkpoint whose stored shapes disagree with the config or
/// the manifest vocabulary.
fn check_checkpoint(store: &ParamStore, dims: &ModelDims, vocab_len: usize) -> Result<()> {
    let emb = store
        .try_get("decoder.tok_emb")
        .ok_or_else(|| SctgError::Config("checkpoint lacks decoder.tok_emb".into()))?;
    if emb.shape[0] != vocab_len {
        return Err(SctgError::VocabMismatch { checkpoint: emb.shape[0], manifest: vocab_len });
    }
    let checks: [(&str, Vec<usize>); 3] = [
        ("decoder.tok_emb", vec![vocab_len, dims.d_prime]),
        ("encoder.patch.w", vec![dims.patch * dims.patch, dims.d]),
        ("encoder.pos", vec![dims.n(), dims.d]),
    ];
    for (name, want) in checks {
        let t = store
            .try_get(name)
            .ok_or_else(|| SctgError::Config(format!("checkpoint lacks {name}")))?;
        if t.shape != want {
            return Err(SctgError::Config(format!(
                "checkpoint {name} has shape {:?}, config wants {want:?}",
                t.shape
            )));
        }
    }
    let last = dims.enc_layers.saturating_sub(1);
    if store.try_get(&format!("encoder.vit{last}.ln1.g")).is_none()
        || store.try_get(&format!("encoder.vit{}.ln1.g", dims.enc_layers)).is_some()
    {
        return Err(SctgError::Config(format!(
            "checkpoint encoder depth differs from configured {} layers",
            dims.enc_layers
        )));
    }
    Ok(())
}

/// Greedy-decode a whole split from a checkpoint and score it.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    config: &RunConfig,
    data_dir: &Path,
    split: Split,
) -> Result<MetricReport> {
    let store = ParamStore::load(checkpoint)?;
    let vocab_path = checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("vocab.txt");
    let vocab = if vocab_path.exists() {
        Vocabulary::load(&vocab_path)?
    } else {
        vocabulary_from_manifest(data_dir)?
    };
    let dims = config.model_dims(vocab.len());
    check_checkpoint(&store, &dims, vocab.len())?;
    let dataset = load_dataset(data_dir, &vocab, &dims)?;
    let items = match split {
        Split::Train => &dataset.train,
        Split::Dev => &dataset.dev,
        Split::Test => &dataset.test,
    };
    if items.is_empty() {
        return Err(SctgError::Config(format!("split {split} is empty")));
    }
    evaluate_items(&store, items, &vocab, &dims, &config.attention_flags(), config.fusion)
}
