//! Optimization: span-corruption pretraining and prefixed multi-task
//! fine-tuning under a teacher-forcing maximum-likelihood objective.

mod checkpoint;

use std::path::Path;

use log::{debug, info};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PretrainSequence;
use crate::denoise::{corrupt, CorruptionConfig};
use crate::error::{Error, Result};
use crate::model::{loss_and_gradients, Batch, ModelConfig, Parameters};
use crate::tokenizer::{with_eos, Vocabulary};

pub use checkpoint::{decode_array, encode_array, Checkpoint, CHECKPOINT_FORMAT};

/// A tokenized `(input, target)` pair; both sides end with EOS.
pub type Pair = (Vec<u32>, Vec<u32>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Zero keeps the learning rate constant.
    pub warmup_steps: usize,
    /// Zero disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            total_steps: 1000,
            warmup_steps: 0,
            checkpoint_every: 0,
            seed: 0,
            clip_norm: 1.0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for 1-based step `step`: linear warmup, then decay
    /// proportional to the inverse square root of the step.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        let s = step.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.learning_rate * (s / w).min((w / s).sqrt())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        AdamState {
            m: Parameters::zeros_like(params),
            v: Parameters::zeros_like(params),
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, p) in params.arrays.iter_mut() {
            let g = grads.get(name).data();
            let m = self.m.arrays.get_mut(name).expect("moment for every array").data_mut();
            let v = self.v.arrays.get_mut(name).expect("moment for every array").data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.arrays.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Token-weighted mean loss and gradient over `pairs`, one graph per pair.
///
/// Every pair is processed independently (in parallel) and the results are
/// reduced in input order, so the outcome does not depend on thread count.
pub fn batch_gradients(
    params: &Parameters,
    config: &ModelConfig,
    pairs: &[Pair],
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Parameters)> {
    let parts: Vec<(usize, f64, Parameters)> = pairs
        .par_iter()
        .enumerate()
        .map(|(j, pair)| {
            let batch = Batch::from_pairs(std::slice::from_ref(pair))?;
            let tokens = batch.loss_mask.iter().filter(|&&m| m).count();
            let seed = dropout_seeds.map(|s| s[j]);
            let (l, g) = loss_and_gradients(params, config, &batch, seed)?;
            Ok((tokens, l, g))
        })
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.0).sum();
    let mut grads = Parameters::zeros_like(params);
    let mut loss = 0.0;
    for (tokens, l, g) in parts {
        let w = tokens as f64 / total as f64;
        loss += w * l;
        for (name, acc) in grads.arrays.iter_mut() {
            for (a, v) in acc.data_mut().iter_mut().zip(g.get(name).data()) {
                *a += w * v;
            }
        }
    }
    Ok((loss, grads))
}

fn dropout_seed(seed: u64, step: usize, j: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20b);
    rng.set_stream(((step as u64) << 24) | j as u64);
    rng.gen()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
}

/// Runs `train.total_steps` optimizer steps on batches from `next_batch`.
fn run<F>(mut ckpt: Checkpoint, train: &TrainConfig, save_dir: Option<&Path>, mut next_batch: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<Vec<Pair>>,
{
    train.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut losses = Vec::with_capacity(train.total_steps);
    for step in 1..=train.total_steps {
        let pairs = next_batch(step, &mut rng)?;
        let seeds: Vec<u64> = (0..pairs.len()).map(|j| dropout_seed(train.seed, step, j)).collect();
        let (loss, mut grads) = batch_gradients(&ckpt.params, &ckpt.model, &pairs, Some(&seeds))?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { step });
        }
        let norm = clip_global_norm(&mut grads, train.clip_norm);
        let lr = train.learning_rate_at(step);
        ckpt.optimizer.update(&mut ckpt.params, &grads, lr);
        if !ckpt.params.is_finite() {
            return Err(Error::Diverged { step });
        }
        ckpt.step += 1;
        losses.push(loss);
        if train.log_every > 0 && (step % train.log_every == 0 || step == 1) {
            info!("step={step} loss={loss:.6} grad_norm={norm:.4} lr={lr:e}");
        } else {
            debug!("step={step} loss={loss:.6} grad_norm={norm:.4} lr={lr:e}");
        }
        if let Some(dir) = save_dir {
            if train.checkpoint_every > 0 && step % train.checkpoint_every == 0 {
                ckpt.save(&dir.join(format!("step-{step}")))?;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        losses,
    })
}

/// Tokenizes pretraining sequences, keeping room for the appended EOS.
pub fn tokenize_sequences(sequences: &[PretrainSequence], vocab: &Vocabulary, max_len: usize) -> Vec<Vec<u32>> {
    sequences
        .par_iter()
        .map(|s| {
            let mut ids = vocab.encode(&s.text);
            ids.truncate(max_len.saturating_sub(1));
            ids
        })
        .filter(|ids| !ids.is_empty())
        .collect()
}

/// Pretrains a freshly initialized model on span-corrupted sequences.
///
/// Each step draws `batch_size` sequences uniformly; the `i`-th corrupted
/// example overall uses the corruption generator for record `i`.
pub fn pretrain(
    sequences: &[PretrainSequence],
    vocab: &Vocabulary,
    denoise: &CorruptionConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    save_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    denoise.validate()?;
    if model.vocab_size != vocab.size() {
        return Err(Error::InvalidConfig(format!(
            "model vocab_size {} differs from vocabulary size {}",
            model.vocab_size,
            vocab.size()
        )));
    }
    let ids = tokenize_sequences(sequences, vocab, model.max_input_len);
    if ids.is_empty() {
        return Err(Error::InvalidConfig("pretraining corpus is empty".into()));
    }
    let sentinels = vocab.sentinels();
    let ckpt = Checkpoint::fresh(model.clone(), train.seed, &vocab.fingerprint())?;
    let mut counter = 0u64;
    run(ckpt, train, save_dir, |_, rng| {
        (0..train.batch_size)
            .map(|_| {
                let seq = &ids[rng.gen_range(0..ids.len())];
                let ex = corrupt(seq, denoise, sentinels, &mut denoise.record_rng(counter))?;
                counter += 1;
                let (input, _) = with_eos(&ex.input_ids, model.max_input_len);
                // Targets already end with EOS.
                let mut target = ex.target_ids;
                if target.len() > model.max_target_len {
                    target = with_eos(&target[..target.len() - 1], model.max_target_len).0;
                }
                Ok((input, target))
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTask {
    pub name: String,
    pub examples: Vec<Pair>,
}

/// Tasks mixed in proportion to their example counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixtureSpec {
    pub tasks: Vec<MixtureTask>,
}

impl MixtureSpec {
    pub fn single(name: &str, examples: Vec<Pair>) -> Self {
        MixtureSpec {
            tasks: vec![MixtureTask {
                name: name.to_string(),
                examples,
            }],
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.examples.len()).collect()
    }
}

/// Examples-proportional sampler: a task is chosen with probability
/// proportional to its size, then an example uniformly within it.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    sizes: Vec<usize>,
    weights: WeightedIndex<usize>,
}

impl MixtureSampler {
    pub fn new(spec: &MixtureSpec) -> Result<Self> {
        if spec.tasks.is_empty() {
            return Err(Error::EmptyMixture("no tasks".into()));
        }
        if let Some(t) = spec.tasks.iter().find(|t| t.examples.is_empty()) {
            return Err(Error::EmptyMixture(format!("task `{}`", t.name)));
        }
        let sizes = spec.counts();
        let weights = WeightedIndex::new(&sizes).map_err(|e| Error::EmptyMixture(e.to_string()))?;
        Ok(MixtureSampler { sizes, weights })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let task = self.weights.sample(rng);
        (task, rng.gen_range(0..self.sizes[task]))
    }
}

/// Fine-tunes the parameters of `start` on a task mixture with a fresh
/// optimizer state. The step counter continues from the checkpoint.
pub fn finetune(
    start: &Checkpoint,
    mixture: &MixtureSpec,
    train: &TrainConfig,
    save_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let sampler = MixtureSampler::new(mixture)?;
    let model = &start.model;
    for task in &mixture.tasks {
        for (input, target) in &task.examples {
            if input.len() > model.max_input_len || target.len() > model.max_target_len {
                return Err(Error::ShapeMismatch(format!(
                    "task `{}` has an example longer than the model maxima",
                    task.name
                )));
            }
        }
    }
    let ckpt = Checkpoint {
        optimizer: AdamState::new(&start.params),
        ..start.clone()
    };
    run(ckpt, train, save_dir, |_, rng| {
        Ok((0..train.batch_size)
            .map(|_| {
                let (t, i) = sampler.sample(rng);
                mixture.tasks[t].examples[i].clone()
            })
            .collect())
    })
}

/// Means of `chunks` consecutive, equally sized slices of `losses` (the
/// last slice absorbs the remainder).
pub fn smoothed_losses(losses: &[f64], chunks: usize) -> Vec<f64> {
    if losses.is_empty() || chunks == 0 {
        return Vec::new();
    }
    let chunks = chunks.min(losses.len());
    let size = losses.len() / chunks;
    (0..chunks)
        .map(|c| {
            let end = if c + 1 == chunks { losses.len() } else { (c + 1) * size };
            let part = &losses[c * size..end];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect()
}

pub fn is_non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}
