//! Encoder-decoder transformer with teacher-forcing cross-entropy.
//!
//! Everything runs in double precision on a small reverse-mode tape
//! ([`tape`]). Dropout is applied only when a dropout seed is supplied,
//! so plain [`forward`], [`backward`] and the inference helpers are
//! deterministic.

pub mod tape;
pub mod tensor;
mod transformer;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{EOS_ID, PAD_ID};
use tape::Graph;
use tensor::{log_sum_exp, Tensor};
use transformer::{Network, ParamVars};

pub use transformer::{relative_bucket, Batch, ModelConfig, Parameters};

/// Teacher-forcing logits, shape `[batch, dec_len, vocab_size]`.
pub fn forward(params: &Parameters, config: &ModelConfig, batch: &Batch) -> Result<Tensor> {
    config.validate()?;
    params.check_shapes(config)?;
    batch.check(config)?;
    let mut g = Graph::new();
    let net = Network {
        config,
        vars: ParamVars::register(&mut g, params),
    };
    let logits = net.logits(&mut g, batch);
    let out = g.value(logits).clone();
    Ok(out.reshape(&[batch.size, batch.dec_len, config.vocab_size]))
}

/// Mean token cross-entropy over the loss-unmasked positions of `batch`.
pub fn loss(logits: &Tensor, batch: &Batch) -> Result<f64> {
    let shape = logits.shape();
    if shape.len() != 3 || shape[0] != batch.size || shape[1] != batch.dec_len {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} do not match batch [{}, {}]",
            shape, batch.size, batch.dec_len
        )));
    }
    let vocab = shape[2];
    let mut total = 0.0;
    let mut count = 0usize;
    for (pos, (&t, &m)) in batch.decoder_target_ids.iter().zip(&batch.loss_mask).enumerate() {
        if !m {
            continue;
        }
        if t as usize >= vocab {
            return Err(Error::ShapeMismatch(format!("target id {t} outside vocab {vocab}")));
        }
        let row = &logits.data()[pos * vocab..(pos + 1) * vocab];
        total += log_sum_exp(row) - row[t as usize];
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllMasked);
    }
    Ok(total / count as f64)
}

/// Loss and its gradient with respect to every parameter array.
///
/// With `dropout_seed` set, dropout masks are drawn from a generator seeded
/// by it; otherwise the pass is deterministic and dropout-free.
pub fn loss_and_gradients(
    params: &Parameters,
    config: &ModelConfig,
    batch: &Batch,
    dropout_seed: Option<u64>,
) -> Result<(f64, Parameters)> {
    config.validate()?;
    params.check_shapes(config)?;
    batch.check(config)?;
    if !batch.loss_mask.contains(&true) {
        return Err(Error::AllMasked);
    }
    let mut g = match dropout_seed {
        Some(seed) => Graph::with_dropout(ChaCha8Rng::seed_from_u64(seed)),
        None => Graph::new(),
    };
    let net = Network {
        config,
        vars: ParamVars::register(&mut g, params),
    };
    let logits = net.logits(&mut g, batch);
    let root = g.cross_entropy(logits, &batch.decoder_target_ids, &batch.loss_weights());
    let value = g.value(root).data()[0];
    let mut grads = g.backward(root);
    let mut out = Parameters::zeros_like(params);
    for (name, var) in net.vars.iter() {
        if let Some(t) = grads.take(*var) {
            out.arrays.insert(name.clone(), t);
        }
    }
    Ok((value, out))
}

/// Gradient of [`loss`] with respect to every parameter array, dropout off.
pub fn backward(params: &Parameters, config: &ModelConfig, batch: &Batch) -> Result<Parameters> {
    loss_and_gradients(params, config, batch, None).map(|(_, g)| g)
}

pub const GRAD_CHECK_EPSILON: f64 = 1e-4;
pub const GRAD_CHECK_SAMPLES: usize = 50;
/// Denominator floor of the relative error, so that two gradients that are
/// both numerically zero compare as equal.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub samples_per_array: usize,
    pub arrays: Vec<ArrayCheck>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// A small padded batch with both encoder padding and loss masking, used
/// by the gradient check.
pub fn grad_check_batch(config: &ModelConfig, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let v = config.vocab_size as u32;
    let lo = 3.min(v - 1);
    let mut draw = |n: usize| -> Vec<u32> {
        use rand::Rng;
        (0..n).map(|_| rng.gen_range(lo..v)).collect()
    };
    let enc = config.max_input_len.min(8);
    let dec = config.max_target_len.min(6);
    let mut t1 = draw(dec.saturating_sub(1));
    t1.push(EOS_ID);
    let mut t2 = draw(dec.div_ceil(2).saturating_sub(1));
    t2.push(EOS_ID);
    Batch::from_pairs(&[(draw(enc), t1), (draw(enc.div_ceil(2)), t2)])
}

/// Compares [`backward`] against central finite differences of [`loss`] on
/// up to [`GRAD_CHECK_SAMPLES`] sampled coordinates of each array.
pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let config = ModelConfig {
        dropout: 0.0,
        ..config.clone()
    };
    config.validate()?;
    let mut params = Parameters::init(&config, seed)?;
    let batch = grad_check_batch(&config, seed)?;
    let grads = backward(&params, &config, &batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let names: Vec<String> = params.arrays.keys().cloned().collect();
    let mut arrays = Vec::with_capacity(names.len());
    for name in names {
        let n = params.get(&name).len();
        let k = GRAD_CHECK_SAMPLES.min(n);
        let mut coords = sample(&mut rng, n, k).into_vec();
        coords.sort_unstable();
        let mut worst: f64 = 0.0;
        let mut biggest: f64 = 0.0;
        for &c in &coords {
            let original = params.get(&name).data()[c];
            let mut eval = |x: f64| -> Result<f64> {
                params.arrays.get_mut(&name).expect("known name").data_mut()[c] = x;
                loss(&forward(&params, &config, &batch)?, &batch)
            };
            let plus = eval(original + GRAD_CHECK_EPSILON)?;
            let minus = eval(original - GRAD_CHECK_EPSILON)?;
            eval(original)?;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPSILON);
            let analytic = grads.get(&name).data()[c];
            worst = worst.max(relative_error(analytic, numeric));
            biggest = biggest.max(analytic.abs());
        }
        arrays.push(ArrayCheck {
            name,
            coordinates: k,
            max_relative_error: worst,
            max_abs_gradient: biggest,
        });
    }
    let max_relative_error = arrays.iter().map(|a| a.max_relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed,
        epsilon: GRAD_CHECK_EPSILON,
        samples_per_array: GRAD_CHECK_SAMPLES,
        arrays,
        max_relative_error,
    })
}

/// Encoder output for a single input, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedInput {
    memory: Tensor,
    len: usize,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn encode_input(params: &Parameters, config: &ModelConfig, ids: &[u32]) -> Result<EncodedInput> {
    if ids.len() > config.max_input_len {
        return Err(Error::InputTooLong {
            len: ids.len(),
            max: config.max_input_len,
        });
    }
    if ids.is_empty() {
        return Err(Error::ShapeMismatch("empty encoder input".into()));
    }
    if ids.iter().any(|&i| i as usize >= config.vocab_size) {
        return Err(Error::ShapeMismatch("token id exceeds vocab_size".into()));
    }
    let mut g = Graph::new();
    let net = Network {
        config,
        vars: ParamVars::register(&mut g, params),
    };
    let mask = vec![true; ids.len()];
    let memory = net.encode(&mut g, ids, &mask, 1, ids.len());
    Ok(EncodedInput {
        memory: g.value(memory).clone(),
        len: ids.len(),
    })
}

/// Next-token log-probabilities after each of several equal-length
/// decoder prefixes (each without the start token).
pub fn next_token_logprobs(
    params: &Parameters,
    config: &ModelConfig,
    input: &EncodedInput,
    prefixes: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>> {
    let Some(first) = prefixes.first() else {
        return Ok(Vec::new());
    };
    let len = first.len() + 1;
    if prefixes.iter().any(|p| p.len() + 1 != len) {
        return Err(Error::ShapeMismatch("prefixes differ in length".into()));
    }
    if len > config.max_target_len {
        return Err(Error::ShapeMismatch(format!(
            "decoder length {len} exceeds maximum {}",
            config.max_target_len
        )));
    }
    let n = prefixes.len();
    let mut ids = Vec::with_capacity(n * len);
    for p in prefixes {
        ids.push(PAD_ID);
        ids.extend_from_slice(p);
    }
    let mut memory = Vec::with_capacity(n * input.memory.len());
    for _ in 0..n {
        memory.extend_from_slice(input.memory.data());
    }
    let memory = Tensor::from_vec(&[n * input.len, config.d_model], memory);
    let mask = vec![true; n * input.len];
    let mut g = Graph::new();
    let net = Network {
        config,
        vars: ParamVars::register(&mut g, params),
    };
    let mem = g.leaf(memory);
    let hidden = net.decode(&mut g, mem, &mask, input.len, &ids, n, len);
    let last: Vec<usize> = (0..n).map(|b| b * len + len - 1).collect();
    let hidden = g.gather_rows(hidden, &last);
    let logits = net.project(&mut g, hidden);
    let lv = g.value(logits);
    Ok((0..n)
        .map(|r| {
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            row.iter().map(|x| x - lse).collect()
        })
        .collect())
}

/// Teacher-forced log-probability of `target` given `input`: the sum of
/// per-token log-probabilities, one per target token.
pub fn sequence_logprob(params: &Parameters, config: &ModelConfig, input: &[u32], target: &[u32]) -> Result<f64> {
    let batch = Batch::from_pairs(&[(input.to_vec(), target.to_vec())])?;
    let logits = forward(params, config, &batch)?;
    let v = config.vocab_size;
    Ok(target
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            let row = &logits.data()[t * v..(t + 1) * v];
            row[id as usize] - log_sum_exp(row)
        })
        .sum())
}
