//! Reference-based generation metrics: corpus BLEU-1..4 with clipped
//! n-gram counts, per-pair ROUGE-1 F1, and a lexicon-free METEOR
//! variant (`meteor_lite`, exact-match alignment only — not numerically
//! comparable to published METEOR scores). Every reported score is
//! reproducible from the tallies carried in the report.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SctgError};

pub const MAX_ORDER: usize = 4;
const EPS: f64 = 1e-9;

/// Clipped n-gram hits and candidate totals for one order, summed over
/// the corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramTally {
    pub matched: u64,
    pub total: u64,
}

/// Unigram and alignment counts for one candidate/reference pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTally {
    pub rouge_overlap: u64,
    pub cand_len: u64,
    pub ref_len: u64,
    pub meteor_matches: u64,
    pub meteor_chunks: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// bleu[k-1] is BLEU-(k) for k = 1..=4.
    pub bleu: Vec<f64>,
    pub rouge_1_f: f64,
    pub meteor: f64,
    /// Corpus n-gram tallies per order, for audit.
    pub bleu_tallies: Vec<NgramTally>,
    pub candidate_tokens: u64,
    pub reference_tokens: u64,
    /// Per-pair tallies, enough to recompute ROUGE and METEOR exactly.
    pub pair_tallies: Vec<PairTally>,
    /// Requires pretrained embeddings; always reported as unavailable.
    pub bert_score: Option<f64>,
}

fn ngram_counts<'a>(tokens: &'a [String], k: usize) -> HashMap<&'a [String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= k && k > 0 {
        for window in tokens.windows(k) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Accumulate clipped n-gram tallies for one pair into `tallies`.
fn accumulate_bleu(tallies: &mut [NgramTally], candidate: &[String], reference: &[String]) {
    for k in 1..=tallies.len() {
        let cand = ngram_counts(candidate, k);
        let refs = ngram_counts(reference, k);
        let mut matched = 0;
        let mut total = 0;
        for (gram, &count) in &cand {
            total += count;
            matched += count.min(refs.get(gram).copied().unwrap_or(0));
        }
        tallies[k - 1].matched += matched;
        tallies[k - 1].total += total;
    }
}

/// Corpus BLEU for orders 1..=max_n from aggregated tallies: geometric
/// mean of clipped precisions times the brevity penalty. Orders with a
/// candidate total but no matches fall back to an epsilon count;
/// orders with no candidate n-grams at all contribute a vacuous 1.
pub fn bleu_from_tallies(
    tallies: &[NgramTally],
    candidate_tokens: u64,
    reference_tokens: u64,
    max_n: usize,
) -> Vec<f64> {
    let precisions: Vec<f64> = tallies
        .iter()
        .map(|t| {
            if t.total == 0 {
                1.0
            } else if t.matched == 0 {
                EPS / t.total as f64
            } else {
                t.matched as f64 / t.total as f64
            }
        })
        .collect();
    let bp = if candidate_tokens == 0 {
        0.0
    } else if candidate_tokens < reference_tokens {
        (1.0 - reference_tokens as f64 / candidate_tokens as f64).exp()
    } else {
        1.0
    };
    (1..=max_n)
        .map(|k| {
            let log_mean: f64 = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
            bp * log_mean.exp()
        })
        .collect()
}

/// Corpus BLEU over tokenized pairs.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(SctgError::Config(format!(
            "bleu: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 || max_n > MAX_ORDER {
        return Err(SctgError::Config(format!("bleu: unsupported order {max_n}")));
    }
    let mut tallies = vec![NgramTally::default(); max_n];
    let mut c = 0;
    let mut r = 0;
    for (cand, reference) in candidates.iter().zip(references) {
        accumulate_bleu(&mut tallies, cand, reference);
        c += cand.len() as u64;
        r += reference.len() as u64;
    }
    Ok(bleu_from_tallies(&tallies, c, r, max_n))
}

fn rouge_overlap(candidate: &[String], reference: &[String]) -> u64 {
    let cand = ngram_counts(candidate, 1);
    let refs = ngram_counts(reference, 1);
    cand.iter()
        .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
        .sum()
}

pub fn rouge1_from_tally(t: &PairTally) -> f64 {
    if t.cand_len == 0 || t.ref_len == 0 {
        return 0.0;
    }
    let p = t.rouge_overlap as f64 / t.cand_len as f64;
    let r = t.rouge_overlap as f64 / t.ref_len as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Unigram F1 with clipped overlap counts.
pub fn rouge1_f(candidate: &[String], reference: &[String]) -> f64 {
    rouge1_from_tally(&pair_tally(candidate, reference))
}

/// Leftmost-greedy exact alignment: each candidate token, in order,
/// takes the first unmatched occurrence of itself in the reference.
/// Returns (matches, chunks) where a chunk is a run contiguous on both
/// sides.
fn align(candidate: &[String], reference: &[String]) -> (u64, u64) {
    let mut taken = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (ci, token) in candidate.iter().enumerate() {
        if let Some(ri) = reference
            .iter()
            .enumerate()
            .position(|(ri, r)| !taken[ri] && r == token)
        {
            taken[ri] = true;
            pairs.push((ci, ri));
        }
    }
    let matches = pairs.len() as u64;
    let mut chunks = 0u64;
    for (i, &(ci, ri)) in pairs.iter().enumerate() {
        if i == 0 || pairs[i - 1].0 + 1 != ci || pairs[i - 1].1 + 1 != ri {
            chunks += 1;
        }
    }
    (matches, chunks)
}

pub fn meteor_from_tally(t: &PairTally) -> f64 {
    if t.meteor_matches == 0 {
        return 0.0;
    }
    let m = t.meteor_matches as f64;
    let p = m / t.cand_len as f64;
    let r = m / t.ref_len as f64;
    let f_mean = p * r / (0.9 * p + 0.1 * r);
    let frag = t.meteor_chunks as f64 / m;
    let penalty = 0.5 * frag * frag * frag;
    f_mean * (1.0 - penalty)
}

/// Exact-match METEOR: harmonic mean weighted toward recall, with the
/// cubed fragmentation penalty.
pub fn meteor_lite(candidate: &[String], reference: &[String]) -> f64 {
    meteor_from_tally(&pair_tally(candidate, reference))
}

pub fn pair_tally(candidate: &[String], reference: &[String]) -> PairTally {
    let (matches, chunks) = align(candidate, reference);
    PairTally {
        rouge_overlap: rouge_overlap(candidate, reference),
        cand_len: candidate.len() as u64,
        ref_len: reference.len() as u64,
        meteor_matches: matches,
        meteor_chunks: chunks,
    }
}

/// Corpus evaluation: aggregated BLEU, mean per-pair ROUGE-1 F1 and
/// meteor_lite, with all tallies attached.
pub fn corpus_report(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<MetricReport> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(SctgError::Config(format!(
            "metrics: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut tallies = vec![NgramTally::default(); MAX_ORDER];
    let mut c = 0;
    let mut r = 0;
    let mut pair_tallies = Vec::with_capacity(candidates.len());
    for (cand, reference) in candidates.iter().zip(references) {
        accumulate_bleu(&mut tallies, cand, reference);
        c += cand.len() as u64;
        r += reference.len() as u64;
        pair_tallies.push(pair_tally(cand, reference));
    }
    let bleu = bleu_from_tallies(&tallies, c, r, MAX_ORDER);
    let n = pair_tallies.len() as f64;
    let rouge = pair_tallies.iter().map(rouge1_from_tally).sum::<f64>() / n;
    let meteor = pair_tallies.iter().map(meteor_from_tally).sum::<f64>() / n;
    Ok(MetricReport {
        bleu,
        rouge_1_f: rouge,
        meteor,
        bleu_tallies: tallies,
        candidate_tokens: c,
        reference_tokens: r,
        pair_tallies,
        bert_score: None,
    })
}

/// Convenience wrapper over raw report strings; both sides pass through
/// the shared normalizer.
pub fn corpus_report_text(candidates: &[String], references: &[String]) -> Result<MetricReport> {
    let cand: Vec<Vec<String>> = candidates.iter().map(|s| crate::text::normalize(s)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|s| crate::text::normalize(s)).collect();
    corpus_report(&cand, &refs)
}
