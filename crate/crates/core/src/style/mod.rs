//! Style classifier, per-style generators, classifier-guided joint training
//! and the end-to-end transfer pipeline.

mod classifier;
mod generator;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Style, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::seq2seq::{backtranslate_batch, MTModel};

pub use classifier::{train_classifier, Classifier, ClassifierConfig, ClassifierReport};
pub use generator::{train_style_generators, SoftSequence, StepRecord, StyleGenerators, TrainingStats, TransferConfig};

/// `τ(step) = max(floor, τ0·exp(−rate·step))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub tau0: f64,
    pub rate: f64,
    pub floor: f64,
}

impl TauSchedule {
    /// Exponential decay that hits `floor` exactly at `steps`.
    pub fn reaching_floor(tau0: f64, floor: f64, steps: usize) -> Self {
        let rate = if steps == 0 { 0.0 } else { (tau0 / floor).ln() / steps as f64 };
        Self { tau0, rate, floor }
    }
}

pub fn anneal_tau(step: usize, schedule: &TauSchedule) -> f64 {
    (schedule.tau0 * (-schedule.rate * step as f64).exp()).max(schedule.floor)
}

/// Replaces each `<unk>` output token with the source token its step attended
/// to most. Ties go to the earliest source position.
pub fn copy_unk(output: &[String], attention: &[Vec<f64>], source: &[String]) -> Result<Sentence> {
    output
        .iter()
        .enumerate()
        .map(|(t, tok)| {
            if tok != UNK_TOKEN {
                return Ok(tok.clone());
            }
            let a = attention
                .get(t)
                .ok_or_else(|| Error::InvalidArgument(format!("no attention recorded for output step {t}")))?;
            let mut best = None::<(usize, f64)>;
            for (j, &w) in a.iter().enumerate() {
                if best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((j, w));
                }
            }
            let (j, _) = best.ok_or_else(|| Error::InvalidArgument(format!("empty attention at output step {t}")))?;
            source.get(j).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("attention position {j} beyond source of {} tokens", source.len()))
            })
        })
        .collect()
}

/// One transferred sentence with its intermediate pivot translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transferred {
    pub source: Sentence,
    pub pivot: Sentence,
    pub output: Sentence,
    pub target: Style,
}

/// Translation pair plus style generators: everything `transfer` needs.
#[derive(Clone, Debug)]
pub struct TransferPipeline {
    pub mt_ef: MTModel,
    pub mt_fe: MTModel,
    pub generators: StyleGenerators,
}

impl TransferPipeline {
    /// Back-translates, decodes with the `target` generator and copies source
    /// words into `<unk>` slots. The generator attends over pivot positions;
    /// those are mapped back to source positions through the e→f decoder's
    /// attention, so step `t` attends to source word `i` with weight
    /// `Σ_j a_t[j]·b_j[i]`.
    pub fn transfer_batch(&self, sentences: &[Sentence], target: Style) -> Result<Vec<Transferred>> {
        let bts = backtranslate_batch(sentences, &self.mt_ef, &self.mt_fe).map_err(|e| e.in_stage("back-translate"))?;
        let zs: Vec<_> = bts.iter().map(|b| &b.z).collect();
        let decoded = self
            .generators
            .decode_batch(target, &zs, crate::corpus::MAX_SENTENCE_LEN)
            .map_err(|e| e.in_stage("generate"))?;
        let mut out = Vec::with_capacity(sentences.len());
        for ((src, bt), dec) in sentences.iter().zip(&bts).zip(decoded) {
            let composed: Vec<Vec<f64>> = dec
                .attention
                .iter()
                .map(|a| {
                    let mut row = vec![0.0; src.len()];
                    for (j, &w) in a.iter().enumerate() {
                        for (r, &b) in row.iter_mut().zip(&bt.forward.attention[j]) {
                            *r += w * b;
                        }
                    }
                    row
                })
                .collect();
            let tokens = self.generators.vocab().decode(&dec.ids);
            let output = copy_unk(&tokens, &composed, src).map_err(|e| e.in_stage("copy"))?;
            out.push(Transferred {
                source: src.clone(),
                pivot: bt.pivot.clone(),
                output,
                target,
            });
        }
        Ok(out)
    }

    /// Rewrites `x` from `source_style` into `target_style`.
    pub fn transfer(&self, x: &[String], source_style: Style, target_style: Style) -> Result<Sentence> {
        if x.is_empty() {
            return Err(Error::EmptySentence);
        }
        log::debug!("transfer {source_style:?} -> {target_style:?}");
        Ok(self.transfer_batch(&[x.to_vec()], target_style)?.remove(0).output)
    }
}
