//! Encoder-decoder transformer assembled on the tape.
//!
//! Pre-norm residual blocks with RMS normalization, GELU feed-forward
//! layers, and a learned relative-position bias per head (one table for
//! the encoder, one for the decoder, each shared by all layers of its
//! stack). Cross-attention carries no position bias.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{AttentionSpec, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tokenizer::PAD_ID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    pub max_input_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// The small configuration used for gradient checks and toy experiments.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            d_model: 32,
            num_heads: 4,
            d_ff: 64,
            vocab_size,
            rel_buckets: 32,
            rel_max_distance: 128,
            max_input_len: 64,
            max_target_len: 64,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.d_model == 0 || self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.d_ff == 0 || self.vocab_size == 0 {
            return bad("d_ff and vocab_size must be positive".into());
        }
        if self.rel_buckets < 4 || self.rel_max_distance < self.rel_buckets / 2 {
            return bad("need rel_buckets >= 4 and rel_max_distance >= rel_buckets / 2".into());
        }
        if self.max_input_len == 0 || self.max_target_len == 0 {
            return bad("sequence lengths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Name and shape of every parameter array, in canonical order.
    pub fn parameter_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (d, f, v, h) = (self.d_model, self.d_ff, self.vocab_size, self.num_heads);
        let mut m = BTreeMap::new();
        m.insert("shared.embed".to_string(), vec![v, d]);
        m.insert("lm_head".to_string(), vec![d, v]);
        for stack in ["encoder", "decoder"] {
            m.insert(format!("{stack}.rel_bias"), vec![self.rel_buckets, h]);
            m.insert(format!("{stack}.final_norm"), vec![d]);
        }
        for l in 0..self.num_layers {
            let mut attn = |prefix: String| {
                m.insert(format!("{prefix}_norm"), vec![d]);
                for w in ["q", "k", "v", "o"] {
                    m.insert(format!("{prefix}.{w}"), vec![d, d]);
                }
            };
            attn(format!("encoder.layer{l}.attn"));
            attn(format!("decoder.layer{l}.self"));
            attn(format!("decoder.layer{l}.cross"));
            for stack in ["encoder", "decoder"] {
                m.insert(format!("{stack}.layer{l}.ffn_norm"), vec![d]);
                m.insert(format!("{stack}.layer{l}.ffn.in"), vec![d, f]);
                m.insert(format!("{stack}.layer{l}.ffn.out"), vec![f, d]);
            }
        }
        m
    }
}

/// Named parameter arrays. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    pub arrays: BTreeMap<String, Tensor>,
}

impl Parameters {
    /// Seeded initialization: unit gains for norms, N(0, 1) embeddings,
    /// N(0, 1/fan_in) projections and N(0, 0.1²) position biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("_norm") {
                vec![1.0; n]
            } else {
                let std = if name == "shared.embed" {
                    1.0
                } else if name.ends_with("rel_bias") {
                    0.1
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            arrays.insert(name, Tensor::from_vec(&shape, data));
        }
        Ok(Parameters { arrays })
    }

    pub fn zeros_like(other: &Parameters) -> Self {
        Parameters {
            arrays: other
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter array `{name}`"))
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let want = config.parameter_shapes();
        if want.len() != self.arrays.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter arrays, found {}",
                want.len(),
                self.arrays.len()
            )));
        }
        for (name, shape) in want {
            match self.arrays.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::ShapeMismatch(format!("missing `{name}`"))),
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.values().all(Tensor::is_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.values().map(Tensor::len).sum()
    }
}

/// A padded batch of teacher-forcing pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub enc_len: usize,
    pub dec_len: usize,
    pub encoder_ids: Vec<u32>,
    pub encoder_mask: Vec<bool>,
    /// Target shifted right behind a `PAD` start token.
    pub decoder_input_ids: Vec<u32>,
    pub decoder_target_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl Batch {
    /// Pads `(input, target)` pairs. Targets are expected to end with EOS;
    /// positions after a target's end are loss-masked.
    pub fn from_pairs(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if pairs.iter().any(|(i, t)| i.is_empty() || t.is_empty()) {
            return Err(Error::ShapeMismatch("empty input or target".into()));
        }
        let size = pairs.len();
        let enc_len = pairs.iter().map(|(i, _)| i.len()).max().unwrap_or(0);
        let dec_len = pairs.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
        let mut b = Batch {
            size,
            enc_len,
            dec_len,
            encoder_ids: vec![PAD_ID; size * enc_len],
            encoder_mask: vec![false; size * enc_len],
            decoder_input_ids: vec![PAD_ID; size * dec_len],
            decoder_target_ids: vec![PAD_ID; size * dec_len],
            loss_mask: vec![false; size * dec_len],
        };
        for (r, (input, target)) in pairs.iter().enumerate() {
            for (c, &id) in input.iter().enumerate() {
                b.encoder_ids[r * enc_len + c] = id;
                b.encoder_mask[r * enc_len + c] = true;
            }
            for (c, &id) in target.iter().enumerate() {
                b.decoder_target_ids[r * dec_len + c] = id;
                b.loss_mask[r * dec_len + c] = true;
                if c + 1 < dec_len {
                    b.decoder_input_ids[r * dec_len + c + 1] = id;
                }
            }
        }
        Ok(b)
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let n_enc = self.size * self.enc_len;
        let n_dec = self.size * self.dec_len;
        if self.size == 0 || self.enc_len == 0 || self.dec_len == 0 {
            return Err(Error::ShapeMismatch("batch has an empty axis".into()));
        }
        if self.encoder_ids.len() != n_enc || self.encoder_mask.len() != n_enc {
            return Err(Error::ShapeMismatch("encoder arrays disagree with batch shape".into()));
        }
        if self.decoder_input_ids.len() != n_dec
            || self.decoder_target_ids.len() != n_dec
            || self.loss_mask.len() != n_dec
        {
            return Err(Error::ShapeMismatch("decoder arrays disagree with batch shape".into()));
        }
        if self.enc_len > config.max_input_len || self.dec_len > config.max_target_len {
            return Err(Error::ShapeMismatch(format!(
                "batch lengths {}/{} exceed model maxima {}/{}",
                self.enc_len, self.dec_len, config.max_input_len, config.max_target_len
            )));
        }
        let v = config.vocab_size as u32;
        let bad = self
            .encoder_ids
            .iter()
            .chain(&self.decoder_input_ids)
            .chain(&self.decoder_target_ids)
            .any(|&id| id >= v);
        if bad {
            return Err(Error::ShapeMismatch("token id exceeds vocab_size".into()));
        }
        if (0..self.size).any(|r| !self.encoder_mask[r * self.enc_len..(r + 1) * self.enc_len].contains(&true)) {
            return Err(Error::ShapeMismatch("a batch row has no unmasked encoder token".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> Vec<f64> {
        self.loss_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// T5-style relative position bucket for `key_pos - query_pos`.
pub fn relative_bucket(relative: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut buckets = num_buckets;
    let mut base = 0;
    let mut n = -relative;
    if bidirectional {
        buckets /= 2;
        if n < 0 {
            base += buckets;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let n = n as usize;
    let max_exact = buckets / 2;
    if n < max_exact {
        return base + n;
    }
    let scaled = ((n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64) as usize;
    base + (max_exact + scaled).min(buckets - 1)
}

fn bucket_table(q_len: usize, k_len: usize, bidirectional: bool, config: &ModelConfig) -> Vec<usize> {
    let mut out = Vec::with_capacity(q_len * k_len);
    for i in 0..q_len {
        for j in 0..k_len {
            out.push(relative_bucket(
                j as i64 - i as i64,
                bidirectional,
                config.rel_buckets,
                config.rel_max_distance,
            ));
        }
    }
    out
}

/// Parameter arrays registered as graph leaves.
pub(crate) struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    pub(crate) fn register<'a>(g: &mut Graph<'a>, params: &'a Parameters) -> Self {
        ParamVars(
            params
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf_ref(v)))
                .collect(),
        )
    }

    fn get(&self, name: &str) -> Var {
        *self
            .0
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter array `{name}`"))
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }
}

pub(crate) struct Network<'c> {
    pub config: &'c ModelConfig,
    pub vars: ParamVars,
}

impl Network<'_> {
    fn attention_block(
        &self,
        g: &mut Graph,
        prefix: &str,
        x: Var,
        memory: Option<Var>,
        bias: Option<Var>,
        spec: AttentionSpec,
    ) -> Var {
        let normed = g.rms_norm(x, self.vars.get(&format!("{prefix}_norm")));
        let kv_src = memory.unwrap_or(normed);
        let q = g.matmul(normed, self.vars.get(&format!("{prefix}.q")));
        let k = g.matmul(kv_src, self.vars.get(&format!("{prefix}.k")));
        let v = g.matmul(kv_src, self.vars.get(&format!("{prefix}.v")));
        let a = g.attention(q, k, v, bias, spec);
        let o = g.matmul(a, self.vars.get(&format!("{prefix}.o")));
        let o = g.dropout(o, self.config.dropout);
        g.add(x, o)
    }

    fn ffn_block(&self, g: &mut Graph, prefix: &str, x: Var) -> Var {
        let normed = g.rms_norm(x, self.vars.get(&format!("{prefix}.ffn_norm")));
        let h = g.matmul(normed, self.vars.get(&format!("{prefix}.ffn.in")));
        let h = g.gelu(h);
        let o = g.matmul(h, self.vars.get(&format!("{prefix}.ffn.out")));
        let o = g.dropout(o, self.config.dropout);
        g.add(x, o)
    }

    /// Encoder hidden states, `[batch*enc_len, d_model]`.
    pub fn encode(&self, g: &mut Graph, ids: &[u32], mask: &[bool], batch: usize, len: usize) -> Var {
        let cfg = self.config;
        let mut x = g.embed(self.vars.get("shared.embed"), ids);
        x = g.dropout(x, cfg.dropout);
        let buckets = bucket_table(len, len, true, cfg);
        let bias = self.vars.get("encoder.rel_bias");
        for l in 0..cfg.num_layers {
            let spec = AttentionSpec {
                batch,
                q_len: len,
                k_len: len,
                heads: cfg.num_heads,
                causal: false,
                key_mask: Some(mask.to_vec()),
                buckets: Some(buckets.clone()),
            };
            x = self.attention_block(g, &format!("encoder.layer{l}.attn"), x, None, Some(bias), spec);
            x = self.ffn_block(g, &format!("encoder.layer{l}"), x);
        }
        let x = g.rms_norm(x, self.vars.get("encoder.final_norm"));
        g.dropout(x, cfg.dropout)
    }

    /// Decoder hidden states, `[batch*dec_len, d_model]`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        memory: Var,
        memory_mask: &[bool],
        enc_len: usize,
        ids: &[u32],
        batch: usize,
        len: usize,
    ) -> Var {
        let cfg = self.config;
        let mut x = g.embed(self.vars.get("shared.embed"), ids);
        x = g.dropout(x, cfg.dropout);
        let buckets = bucket_table(len, len, false, cfg);
        let bias = self.vars.get("decoder.rel_bias");
        for l in 0..cfg.num_layers {
            let self_spec = AttentionSpec {
                batch,
                q_len: len,
                k_len: len,
                heads: cfg.num_heads,
                causal: true,
                key_mask: None,
                buckets: Some(buckets.clone()),
            };
            x = self.attention_block(g, &format!("decoder.layer{l}.self"), x, None, Some(bias), self_spec);
            let cross_spec = AttentionSpec {
                batch,
                q_len: len,
                k_len: enc_len,
                heads: cfg.num_heads,
                causal: false,
                key_mask: Some(memory_mask.to_vec()),
                buckets: None,
            };
            x = self.attention_block(g, &format!("decoder.layer{l}.cross"), x, Some(memory), None, cross_spec);
            x = self.ffn_block(g, &format!("decoder.layer{l}"), x);
        }
        let x = g.rms_norm(x, self.vars.get("decoder.final_norm"));
        g.dropout(x, cfg.dropout)
    }

    pub fn project(&self, g: &mut Graph, hidden: Var) -> Var {
        g.matmul(hidden, self.vars.get("lm_head"))
    }

    /// Full teacher-forcing pass; logits are `[batch*dec_len, vocab]`.
    pub fn logits(&self, g: &mut Graph, batch: &Batch) -> Var {
        let memory = self.encode(g, &batch.encoder_ids, &batch.encoder_mask, batch.size, batch.enc_len);
        let hidden = self.decode(
            g,
            memory,
            &batch.encoder_mask,
            batch.enc_len,
            &batch.decoder_input_ids,
            batch.size,
            batch.dec_len,
        );
        self.project(g, hidden)
    }
}
