//! Run configuration: a TOML file of typed keys, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use codetext::metrics::CodeBleuWeights;
use codetext::model::ModelConfig;
use codetext::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub log_level: String,
    /// Worker threads; 0 lets the runtime choose.
    pub workers: usize,
    /// Root of the downstream task data.
    pub data_root: String,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: "out".into(),
            log_level: "info".into(),
            workers: 0,
            data_root: "data/tasks".into(),
            corpus: CorpusSection::default(),
            tokenizer: TokenizerSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            predict: PredictSection::default(),
            evaluate: EvaluateSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub combination: String,
    pub codesearchnet: String,
    pub github: String,
    /// Optional plain-text source mixed in ahead of the code sources.
    pub text_source: String,
    pub separator: String,
    /// Codec table file; empty selects the built-in table.
    pub codec_table: String,
    /// Empty means `<output_dir>/corpus.jsonl`.
    pub output: String,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            combination: "2-CC".into(),
            codesearchnet: "data/corpus/sample.jsonl".into(),
            github: "data/corpus/repos.jsonl".into(),
            text_source: String::new(),
            separator: codetext::corpus::DEFAULT_SEPARATOR.into(),
            codec_table: String::new(),
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    /// Learned pieces, excluding the sentinel block.
    pub vocab_size: usize,
    /// Empty means `<output_dir>/vocab.txt`.
    pub vocab: String,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            vocab_size: 1000,
            vocab: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    pub max_input_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = ModelConfig::tiny(0);
        ModelSection {
            num_layers: t.num_layers,
            d_model: t.d_model,
            num_heads: t.num_heads,
            d_ff: t.d_ff,
            rel_buckets: t.rel_buckets,
            rel_max_distance: t.rel_max_distance,
            max_input_len: 128,
            max_target_len: 128,
            dropout: t.dropout,
        }
    }
}

impl ModelSection {
    pub fn to_model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            d_model: self.d_model,
            num_heads: self.num_heads,
            d_ff: self.d_ff,
            vocab_size,
            rel_buckets: self.rel_buckets,
            rel_max_distance: self.rel_max_distance,
            max_input_len: self.max_input_len,
            max_target_len: self.max_target_len,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub checkpoint_every: usize,
    pub clip_norm: f64,
    pub log_every: usize,
    pub corruption_rate: f64,
    pub mean_span_length: usize,
    /// Empty means `<output_dir>/pretrain`.
    pub output: String,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 0,
            checkpoint_every: 0,
            clip_norm: 1.0,
            log_every: 10,
            corruption_rate: 0.15,
            mean_span_length: 3,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub tasks: Vec<String>,
    /// Starting checkpoint; empty means `<output_dir>/pretrain`.
    pub init: String,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub checkpoint_every: usize,
    pub clip_norm: f64,
    pub log_every: usize,
    /// Empty means `<output_dir>/finetune`.
    pub output: String,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            tasks: vec!["summarization-python".into()],
            init: String::new(),
            steps: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 0,
            checkpoint_every: 0,
            clip_norm: 1.0,
            log_every: 10,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub task: String,
    pub split: String,
    /// Empty means `<output_dir>/finetune`.
    pub checkpoint: String,
    pub strategy: String,
    pub beam_size: usize,
    pub max_length: usize,
    pub length_penalty: f64,
    /// Predict only the first `limit` examples; 0 means all.
    pub limit: usize,
    /// Empty means `<output_dir>/predictions.jsonl`.
    pub output: String,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            task: "summarization-python".into(),
            split: "test".into(),
            checkpoint: String::new(),
            strategy: "greedy".into(),
            beam_size: 4,
            max_length: 64,
            length_penalty: 0.6,
            limit: 0,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub task: String,
    pub split: String,
    /// Empty means `<output_dir>/predictions.jsonl`.
    pub predictions: String,
    pub weights: CodeBleuWeights,
    /// Empty means `<output_dir>/report.json`.
    pub output: String,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            task: "summarization-python".into(),
            split: "test".into(),
            predictions: String::new(),
            weights: CodeBleuWeights::default(),
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub vocab_size: usize,
    pub tolerance: f64,
    /// Empty means `<output_dir>/gradcheck.json`.
    pub output: String,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            vocab_size: 40,
            tolerance: 1e-4,
            output: String::new(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies `key=value` overrides, where keys
    /// are dotted paths such as `pretrain.steps`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&RunConfig::default().to_toml()).expect("defaults parse");
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file = text
                .parse::<toml::Table>()
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// SHA-256 of the canonical serialization of the effective config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    /// `explicit` if non-empty, else `name` under the output directory.
    pub fn resolve(&self, explicit: &str, name: &str) -> PathBuf {
        if explicit.is_empty() {
            self.out().join(name)
        } else {
            PathBuf::from(explicit)
        }
    }
}

/// Interprets an override value as a TOML literal, falling back to a bare
/// string (so `task=generation` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Recursively overlays `top` onto `base`; tables merge, other values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::InvalidConfig(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
