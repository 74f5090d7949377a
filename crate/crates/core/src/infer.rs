//! Decoding: greedy and length-normalized beam search for generation,
//! constrained label scoring for classification.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode_input, next_token_logprobs, sequence_logprob, ModelConfig, Parameters};
use crate::tokenizer::EOS_ID;
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_length: usize,
    pub strategy: Strategy,
    pub beam_size: usize,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_length: 64,
            strategy: Strategy::Greedy,
            beam_size: 4,
            length_penalty: 0.6,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 || self.beam_size == 0 {
            return Err(Error::InvalidConfig("max_length and beam_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// A decoded token sequence. `tokens` ends with EOS when `finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        self.logprob / length_penalty(self.tokens.len(), alpha)
    }

    /// Tokens without the closing EOS.
    pub fn output(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

/// Read-only view of a trained model for decoding.
#[derive(Debug, Clone, Copy)]
pub struct Decoder<'a> {
    pub params: &'a Parameters,
    pub config: &'a ModelConfig,
}

impl<'a> Decoder<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        Decoder {
            params: &checkpoint.params,
            config: &checkpoint.model,
        }
    }

    fn limit(&self, cfg: &DecodeConfig) -> usize {
        cfg.max_length.min(self.config.max_target_len)
    }

    /// Argmax token per step (lowest id on ties) until EOS or `max_length`.
    pub fn greedy_hypothesis(&self, input: &[u32], cfg: &DecodeConfig) -> Result<Hypothesis> {
        cfg.validate()?;
        let enc = encode_input(self.params, self.config, input)?;
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        };
        while hyp.tokens.len() < self.limit(cfg) {
            let lp = next_token_logprobs(self.params, self.config, &enc, std::slice::from_ref(&hyp.tokens))?
                .pop()
                .expect("one row per prefix");
            let (best, &score) = lp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty vocabulary");
            hyp.tokens.push(best as u32);
            hyp.logprob += score;
            if best as u32 == EOS_ID {
                hyp.finished = true;
                break;
            }
        }
        Ok(hyp)
    }

    pub fn greedy(&self, input: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
        Ok(self.greedy_hypothesis(input, cfg)?.output().to_vec())
    }

    /// Beam search ranked by log-probability divided by the length penalty.
    ///
    /// Each step extends every live beam by its `beam_size` best tokens and
    /// keeps the `beam_size` best extensions overall; extensions ending in
    /// EOS move to the finished set. Search stops once `beam_size`
    /// hypotheses have finished, no beam is live, or `max_length` is hit.
    pub fn beam_hypothesis(&self, input: &[u32], cfg: &DecodeConfig) -> Result<Hypothesis> {
        cfg.validate()?;
        let k = cfg.beam_size;
        let enc = encode_input(self.params, self.config, input)?;
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut len = 0;
        while !live.is_empty() && finished.len() < k && len < self.limit(cfg) {
            let prefixes: Vec<Vec<u32>> = live.iter().map(|h| h.tokens.clone()).collect();
            let rows = next_token_logprobs(self.params, self.config, &enc, &prefixes)?;
            let mut candidates = Vec::with_capacity(live.len() * k);
            for (h, row) in live.iter().zip(&rows) {
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                for &tok in order.iter().take(k) {
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok as u32);
                    candidates.push(Hypothesis {
                        tokens,
                        logprob: h.logprob + row[tok],
                        finished: tok as u32 == EOS_ID,
                    });
                }
            }
            // Stable sort keeps beam order, then token order, among ties.
            candidates.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
            candidates.truncate(k);
            live = Vec::with_capacity(k);
            for c in candidates {
                if c.finished {
                    finished.push(c);
                } else {
                    live.push(c);
                }
            }
            len += 1;
        }
        let pool = if finished.is_empty() { live } else { finished };
        let alpha = cfg.length_penalty;
        pool.into_iter()
            .reduce(|best, h| match h.score(alpha).total_cmp(&best.score(alpha)) {
                Ordering::Greater => h,
                _ => best,
            })
            .ok_or_else(|| Error::InvalidConfig("beam search produced no hypothesis".into()))
    }

    pub fn beam(&self, input: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
        Ok(self.beam_hypothesis(input, cfg)?.output().to_vec())
    }

    pub fn decode(&self, input: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
        match cfg.strategy {
            Strategy::Greedy => self.greedy(input, cfg),
            Strategy::Beam => self.beam(input, cfg),
        }
    }

    /// Teacher-forced log-likelihood of each label followed by EOS.
    pub fn label_scores(&self, input: &[u32], labels: &[Vec<u32>]) -> Result<Vec<f64>> {
        labels
            .iter()
            .map(|label| {
                let mut target = label.clone();
                target.push(EOS_ID);
                sequence_logprob(self.params, self.config, input, &target)
            })
            .collect()
    }

    /// Index of the most likely label; ties go to the lower index.
    pub fn classify(&self, input: &[u32], labels: &[Vec<u32>]) -> Result<usize> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("classification needs at least one label".into()));
        }
        if labels.iter().any(|l| l.len() + 1 > self.config.max_target_len) {
            return Err(Error::InvalidConfig("label longer than the target length".into()));
        }
        if input.len() > self.config.max_input_len {
            return Err(Error::InputTooLong {
                len: input.len(),
                max: self.config.max_input_len,
            });
        }
        Ok(argmax_first(&self.label_scores(input, labels)?))
    }
}

/// Index of the first maximum.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

pub fn write_predictions<W: Write>(mut out: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("prediction line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
