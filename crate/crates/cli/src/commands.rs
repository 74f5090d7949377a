//! One function per subcommand. Each returns the primary artifacts it wrote
//! so the caller can record them in the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use codetext::codec::CodecTable;
use codetext::corpus::{self, CombinationName, CorpusCombination, PretrainSequence};
use codetext::denoise::CorruptionConfig;
use codetext::infer::{self, DecodeConfig, Decoder, Prediction, Strategy};
use codetext::metrics::MetricReport;
use codetext::model;
use codetext::tasks::{self, TaskName, TaskSpec};
use codetext::tokenizer::{self, Vocabulary};
use codetext::trainer::{self, Checkpoint, MixtureSpec, MixtureTask, TrainConfig, TrainOutcome};
use codetext::{Error, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

/// Paths written by a subcommand, keyed by artifact role.
pub type Artifacts = BTreeMap<String, PathBuf>;

/// Extra entries for the run manifest.
pub type Versions = BTreeMap<String, String>;

pub struct Outcome {
    pub artifacts: Artifacts,
    pub versions: Versions,
}

fn codec_table(cfg: &RunConfig) -> Result<CodecTable> {
    if cfg.corpus.codec_table.is_empty() {
        return Ok(CodecTable::default());
    }
    let path = Path::new(&cfg.corpus.codec_table);
    CodecTable::from_file_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn load_vocab(cfg: &RunConfig) -> Result<(Vocabulary, PathBuf)> {
    let path = cfg.resolve(&cfg.tokenizer.vocab, "vocab.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((Vocabulary::from_file_str(&text)?, path))
}

fn ingest_file(path: &Path, table: &CodecTable) -> Result<Vec<corpus::FunctionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ingested = corpus::ingest(BufReader::new(file), table)?;
    info!(
        "event=ingest path={} records={} malformed={} rejected={}",
        path.display(),
        ingested.records.len(),
        ingested.malformed,
        ingested.rejected
    );
    Ok(ingested.records)
}

pub fn build_corpus(cfg: &RunConfig) -> Result<Outcome> {
    let table = codec_table(cfg)?;
    let name: CombinationName = cfg.corpus.combination.parse()?;
    let mut combination = CorpusCombination::standard(name);
    let mut files = vec![
        (corpus::CODE_SEARCH_SOURCE, cfg.corpus.codesearchnet.as_str()),
        (corpus::REPOSITORY_SOURCE, cfg.corpus.github.as_str()),
    ];
    if !cfg.corpus.text_source.is_empty() {
        combination = combination.with_text_source("text");
        files.push(("text", cfg.corpus.text_source.as_str()));
    }
    let mut sources = BTreeMap::new();
    for (source, path) in files {
        if combination.sources.iter().any(|s| s == source) {
            sources.insert(source.to_string(), ingest_file(Path::new(path), &table)?);
        }
    }
    let built = corpus::build(&combination, &sources, &cfg.corpus.separator, &table)?;
    for (source, c) in &built.counts {
        info!("event=source name={source} emitted={} skipped={}", c.emitted, c.skipped);
    }
    let out = cfg.resolve(&cfg.corpus.output, "corpus.jsonl");
    create_parent(&out)?;
    let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    let mut w = BufWriter::new(file);
    for s in &built.sequences {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(&out, e))?;
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    info!("event=corpus sequences={} path={}", built.sequences.len(), out.display());
    Ok(Outcome {
        artifacts: BTreeMap::from([("corpus".to_string(), out)]),
        versions: BTreeMap::from([("codec_table".to_string(), table.version().to_string())]),
    })
}

pub fn train_tokenizer(cfg: &RunConfig) -> Result<Outcome> {
    let corpus_path = cfg.resolve(&cfg.corpus.output, "corpus.jsonl");
    let sequences: Vec<PretrainSequence> = read_jsonl(&corpus_path)?;
    let vocab = tokenizer::train_vocab(sequences.iter().map(|s| s.text.as_str()), cfg.tokenizer.vocab_size)?;
    let out = cfg.resolve(&cfg.tokenizer.vocab, "vocab.txt");
    write_file(&out, vocab.to_file_string().as_bytes())?;
    info!(
        "event=vocabulary pieces={} size={} fingerprint={}",
        vocab.piece_count(),
        vocab.size(),
        vocab.fingerprint()
    );
    Ok(Outcome {
        artifacts: BTreeMap::from([("vocabulary".to_string(), out)]),
        versions: BTreeMap::from([("vocab_fingerprint".to_string(), vocab.fingerprint())]),
    })
}

#[derive(Serialize)]
struct LossCurve<'a> {
    losses: &'a [f64],
    smoothed: Vec<f64>,
}

const SMOOTHING_CHUNKS: usize = 5;

fn finish_training(outcome: &TrainOutcome, dir: &Path, curve: &Path) -> Result<Outcome> {
    outcome.checkpoint.save(dir)?;
    let smoothed = trainer::smoothed_losses(&outcome.losses, SMOOTHING_CHUNKS);
    let shown: Vec<String> = smoothed.iter().map(|v| format!("{v:.4}")).collect();
    info!(
        "event=trained steps={} smoothed_loss={} non_increasing={}",
        outcome.losses.len(),
        shown.join(","),
        trainer::is_non_increasing(&smoothed)
    );
    write_json(
        curve,
        &LossCurve {
            losses: &outcome.losses,
            smoothed,
        },
    )?;
    Ok(Outcome {
        artifacts: BTreeMap::from([
            ("checkpoint".to_string(), dir.to_path_buf()),
            ("loss_curve".to_string(), curve.to_path_buf()),
        ]),
        versions: BTreeMap::from([
            ("checkpoint_format".to_string(), trainer::CHECKPOINT_FORMAT.to_string()),
            ("vocab_fingerprint".to_string(), outcome.checkpoint.vocab_fingerprint.clone()),
        ]),
    })
}

pub fn pretrain(cfg: &RunConfig) -> Result<Outcome> {
    let (vocab, _) = load_vocab(cfg)?;
    let corpus_path = cfg.resolve(&cfg.corpus.output, "corpus.jsonl");
    let sequences: Vec<PretrainSequence> = read_jsonl(&corpus_path)?;
    let p = &cfg.pretrain;
    let denoise = CorruptionConfig {
        rate: p.corruption_rate,
        mean_span_length: p.mean_span_length,
        seed: cfg.seed,
    };
    let train = TrainConfig {
        learning_rate: p.learning_rate,
        batch_size: p.batch_size,
        total_steps: p.steps,
        warmup_steps: p.warmup_steps,
        checkpoint_every: p.checkpoint_every,
        seed: cfg.seed,
        clip_norm: p.clip_norm,
        log_every: p.log_every,
    };
    let model = cfg.model.to_model(vocab.size());
    let dir = cfg.resolve(&p.output, "pretrain");
    let outcome = trainer::pretrain(&sequences, &vocab, &denoise, &model, &train, Some(&dir))?;
    finish_training(&outcome, &dir, &cfg.out().join("pretrain-loss.json"))
}

/// Loads a task split, tokenized for `model` under the desk-scale length
/// budget (capped by the model's own maxima).
fn task_pairs(cfg: &RunConfig, name: &TaskName, split: &str, vocab: &Vocabulary, max_in: usize, max_out: usize) -> Result<(TaskSpec, Vec<tasks::TaskExample>, Vec<tasks::TokenizedExample>)> {
    let mut spec = TaskSpec::desk(name.clone());
    spec.input_len = spec.input_len.min(max_in);
    spec.target_len = spec.target_len.min(max_out);
    let root = Path::new(&cfg.data_root);
    let loaded = tasks::load_file(name, &spec.data_path(root, split), &codec_table(cfg)?)?;
    let manifest = spec.data_dir(root).join("manifest");
    if manifest.exists() {
        tasks::check_manifest(&tasks::read_manifest(&manifest)?, split, &loaded)?;
    }
    let tokenized: Vec<_> = loaded.examples.par_iter().map(|e| tasks::tokenize(e, vocab, &spec)).collect();
    let cut_in = tokenized.iter().filter(|t| t.input_truncated).count();
    let cut_out = tokenized.iter().filter(|t| t.target_truncated).count();
    info!(
        "event=task name={name} split={split} examples={} skipped={} truncated_inputs={cut_in} truncated_targets={cut_out}",
        loaded.examples.len(),
        loaded.skipped
    );
    Ok((spec, loaded.examples, tokenized))
}

pub fn finetune(cfg: &RunConfig) -> Result<Outcome> {
    let (vocab, _) = load_vocab(cfg)?;
    let init = cfg.resolve(&cfg.finetune.init, "pretrain");
    let start = Checkpoint::load(&init, Some(&vocab.fingerprint()))?;
    let mut mixture = MixtureSpec::default();
    for task in &cfg.finetune.tasks {
        let name: TaskName = task.parse()?;
        let (_, _, tokenized) = task_pairs(cfg, &name, "train", &vocab, start.model.max_input_len, start.model.max_target_len)?;
        mixture.tasks.push(MixtureTask {
            name: name.to_string(),
            examples: tokenized.into_iter().map(|t| (t.input_ids, t.target_ids)).collect(),
        });
    }
    let f = &cfg.finetune;
    let train = TrainConfig {
        learning_rate: f.learning_rate,
        batch_size: f.batch_size,
        total_steps: f.steps,
        warmup_steps: f.warmup_steps,
        checkpoint_every: f.checkpoint_every,
        seed: cfg.seed,
        clip_norm: f.clip_norm,
        log_every: f.log_every,
    };
    let dir = cfg.resolve(&f.output, "finetune");
    let outcome = trainer::finetune(&start, &mixture, &train, Some(&dir))?;
    finish_training(&outcome, &dir, &cfg.out().join("finetune-loss.json"))
}

/// Text a generated output is compared in: code targets are shown with
/// their original symbols restored.
fn surface(spec: &TaskSpec, table: &CodecTable, text: &str) -> String {
    match spec.name {
        TaskName::Generation | TaskName::Refinement(_) => table.denormalize(text),
        _ => text.to_string(),
    }
}

pub fn predict(cfg: &RunConfig) -> Result<Outcome> {
    let (vocab, _) = load_vocab(cfg)?;
    let ckpt_dir = cfg.resolve(&cfg.predict.checkpoint, "finetune");
    let ckpt = Checkpoint::load(&ckpt_dir, Some(&vocab.fingerprint()))?;
    let p = &cfg.predict;
    let strategy = match p.strategy.as_str() {
        "greedy" => Strategy::Greedy,
        "beam" => Strategy::Beam,
        other => return Err(Error::InvalidConfig(format!("unknown decoding strategy `{other}`"))),
    };
    let decode = DecodeConfig {
        max_length: p.max_length,
        strategy,
        beam_size: p.beam_size,
        length_penalty: p.length_penalty,
    };
    decode.validate()?;
    let table = codec_table(cfg)?;
    let name: TaskName = p.task.parse()?;
    let (spec, _, mut tokenized) = task_pairs(cfg, &name, &p.split, &vocab, ckpt.model.max_input_len, ckpt.model.max_target_len)?;
    if p.limit > 0 {
        tokenized.truncate(p.limit);
    }
    let decoder = Decoder::new(&ckpt);
    let labels: Option<Vec<Vec<u32>>> = spec
        .labels()
        .map(|ls| ls.iter().map(|l| tokenizer::with_eos(&vocab.encode(l), spec.target_len).0).collect());
    let predictions: Vec<Prediction> = tokenized
        .par_iter()
        .map(|t| {
            let text = match (&labels, spec.labels()) {
                (Some(ids), Some(names)) => names[decoder.classify(&t.input_ids, ids)?].to_string(),
                _ => {
                    let out = decoder.decode(&t.input_ids, &decode)?;
                    surface(&spec, &table, &vocab.decode(&out)?)
                }
            };
            Ok(Prediction {
                id: t.id.clone(),
                prediction: text,
            })
        })
        .collect::<Result<_>>()?;
    let out = cfg.resolve(&p.output, "predictions.jsonl");
    create_parent(&out)?;
    let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    let mut w = BufWriter::new(file);
    infer::write_predictions(&mut w, &predictions).map_err(|e| Error::io(&out, e))?;
    w.flush().map_err(|e| Error::io(&out, e))?;
    info!("event=predicted task={name} count={} path={}", predictions.len(), out.display());
    Ok(Outcome {
        artifacts: BTreeMap::from([("predictions".to_string(), out)]),
        versions: BTreeMap::from([("vocab_fingerprint".to_string(), vocab.fingerprint())]),
    })
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    task: String,
    split: &'a str,
    reports: Vec<MetricReport>,
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let e = &cfg.evaluate;
    let table = codec_table(cfg)?;
    let name: TaskName = e.task.parse()?;
    let spec = TaskSpec::desk(name.clone());
    let root = Path::new(&cfg.data_root);
    let loaded = tasks::load_file(&name, &spec.data_path(root, &e.split), &table)?;
    let references: BTreeMap<&str, &str> = loaded.examples.iter().map(|x| (x.id.as_str(), x.target.as_str())).collect();
    let pred_path = cfg.resolve(&e.predictions, "predictions.jsonl");
    let file = fs::File::open(&pred_path).map_err(|err| Error::io(&pred_path, err))?;
    let predictions = infer::read_predictions(BufReader::new(file))?;
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let mut cands = Vec::with_capacity(predictions.len());
    let mut refs = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let r = references
            .get(p.id.as_str())
            .ok_or_else(|| Error::Format(format!("prediction id `{}` has no reference in split `{}`", p.id, e.split)))?;
        cands.push(p.prediction.clone());
        refs.push(surface(&spec, &table, r));
    }
    if predictions.len() < references.len() {
        warn!("event=partial predictions={} references={}", predictions.len(), references.len());
    }
    let reports = tasks::evaluate(&spec, &cands, &refs, e.weights)?;
    for r in &reports {
        info!("{r}");
    }
    let out = cfg.resolve(&e.output, "report.json");
    write_json(
        &out,
        &EvaluationReport {
            task: name.to_string(),
            split: &e.split,
            reports,
        },
    )?;
    Ok(Outcome {
        artifacts: BTreeMap::from([("report".to_string(), out)]),
        versions: BTreeMap::new(),
    })
}

pub fn gradcheck(cfg: &RunConfig) -> Result<Outcome> {
    let g = &cfg.gradcheck;
    let config = cfg.model.to_model(g.vocab_size);
    let report = model::grad_check(&config, cfg.seed)?;
    for a in &report.arrays {
        info!("array={} max_relative_error={:e}", a.name, a.max_relative_error);
    }
    let out = cfg.resolve(&g.output, "gradcheck.json");
    write_json(&out, &report)?;
    info!(
        "event=gradcheck arrays={} max_relative_error={:e} tolerance={:e}",
        report.arrays.len(),
        report.max_relative_error,
        g.tolerance
    );
    if !report.passes(g.tolerance) {
        return Err(Error::GradCheckFailed {
            max_relative_error: report.max_relative_error,
            tolerance: g.tolerance,
        });
    }
    Ok(Outcome {
        artifacts: BTreeMap::from([("report".to_string(), out)]),
        versions: BTreeMap::new(),
    })
}
