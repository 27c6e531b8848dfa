//! End-to-end gradient verification on the tiny profile: every named
//! parameter of the full pipeline against central finite differences.

use super::RunConfig;
use crate::decoder::FusionMode;
use crate::error::Result;
use crate::model::{init_params, volume_loss, AttentionFlags};
use crate::tensor::{gradient_check, gradient_check_corrupted, GradCheckReport};
use crate::text::{tokenize, Vocabulary};
use crate::volume::{synthesize_volume, template_vocabulary};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub passed: bool,
    /// (prefix, worst rel err) for encoder./attention./decoder.
    pub per_prefix: Vec<(String, f64)>,
}

/// Build the tiny-profile pipeline on one synthetic volume and compare
/// every parameter's backward gradient with central differences at
/// h = 1e-5. `corrupt_adjoint` flips the negative-control fixture.
pub fn run_gradcheck(seed: u64, corrupt_adjoint: bool) -> Result<GradcheckOutcome> {
    let config = RunConfig::profile("tiny", seed)?;
    let vocab = Vocabulary::from_words(&template_vocabulary());
    let dims = config.model_dims(vocab.len());

    let synth = config.synth_config();
    let (volume, _, report_text) = synthesize_volume(&synth, "gradcheck", seed);
    let grids = crate::encoder::preprocess_volume(&volume, &dims.encoder())?;
    let reference = tokenize(&report_text, &vocab);

    let mut store = init_params(&dims, seed);
    let build = move |p: &crate::tensor::ParamStore, tape: &mut crate::tensor::Tape| {
        let bound = p.bind(tape)?;
        let (loss, _) = volume_loss(
            tape,
            &bound,
            &grids,
            &reference,
            &dims,
            &AttentionFlags::default(),
            FusionMode::Stack,
        )?;
        Ok((loss, bound))
    };
    let report = if corrupt_adjoint {
        gradient_check_corrupted(&mut store, 1e-5, build)?
    } else {
        gradient_check(&mut store, 1e-5, build)?
    };

    let per_prefix = ["encoder.", "attention.", "decoder."]
        .iter()
        .map(|p| (p.to_string(), report.prefix_max(p).unwrap_or(0.0)))
        .collect();
    let passed = report.max_rel_err <= GRADCHECK_TOLERANCE;
    Ok(GradcheckOutcome { report, passed, per_prefix })
}
