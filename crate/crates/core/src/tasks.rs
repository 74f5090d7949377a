//! Downstream task adapters: prefixed, codec-normalized, length-limited
//! examples for summarization, generation, refinement and defect detection.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::CodecTable;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, bleu_corpus, bleu_smooth4, codebleu, exact_match, CodeBleuWeights, MetricReport};
use crate::tokenizer::{with_eos, Vocabulary};

/// Separates a generation description from its class-environment context.
pub const CONTEXT_MARKER: &str = "<CTX>";
pub const POSITIVE_LABEL: &str = "positive";
pub const NEGATIVE_LABEL: &str = "negative";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineSize {
    Small,
    Medium,
}

impl RefineSize {
    pub fn as_str(self) -> &'static str {
        match self {
            RefineSize::Small => "small",
            RefineSize::Medium => "medium",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskName {
    Summarization(String),
    Generation,
    Refinement(RefineSize),
    Defect,
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskName::Summarization(lang) => write!(f, "summarization-{lang}"),
            TaskName::Generation => f.write_str("generation"),
            TaskName::Refinement(size) => write!(f, "refinement-{}", size.as_str()),
            TaskName::Defect => f.write_str("defect"),
        }
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generation" => Ok(TaskName::Generation),
            "defect" => Ok(TaskName::Defect),
            "refinement-small" => Ok(TaskName::Refinement(RefineSize::Small)),
            "refinement-medium" => Ok(TaskName::Refinement(RefineSize::Medium)),
            _ => match s.strip_prefix("summarization-") {
                Some(lang) if !lang.is_empty() => Ok(TaskName::Summarization(lang.to_string())),
                _ => Err(Error::InvalidConfig(format!("unknown task `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    SmoothBleu4,
    Bleu,
    ExactMatch,
    CodeBleu,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: TaskName,
    pub prefix: String,
    pub input_len: usize,
    pub target_len: usize,
    pub metrics: Vec<MetricKind>,
}

impl TaskSpec {
    /// Reference sequence lengths of the full-size setup.
    pub fn full_scale(name: TaskName) -> Self {
        let (prefix, input_len, target_len, metrics) = match &name {
            TaskName::Summarization(lang) => (format!("{lang}: "), 512, 512, vec![MetricKind::SmoothBleu4]),
            TaskName::Generation => (
                "generate java: ".to_string(),
                256,
                256,
                vec![MetricKind::ExactMatch, MetricKind::Bleu, MetricKind::CodeBleu],
            ),
            TaskName::Refinement(size) => (
                format!("refine {}: ", size.as_str()),
                512,
                512,
                vec![MetricKind::Accuracy, MetricKind::Bleu],
            ),
            TaskName::Defect => ("defect: ".to_string(), 1024, 5, vec![MetricKind::Accuracy]),
        };
        TaskSpec {
            name,
            prefix,
            input_len,
            target_len,
            metrics,
        }
    }

    /// Desk-scale lengths: a quarter of the full-size input length. The
    /// target length shrinks likewise, except for the defect task whose
    /// five-token label budget is already minimal.
    pub fn desk(name: TaskName) -> Self {
        let mut spec = Self::full_scale(name);
        spec.input_len /= 4;
        if spec.name != TaskName::Defect {
            spec.target_len /= 4;
        }
        spec
    }

    /// Location of a split's JSON Lines file under a task data root.
    pub fn data_path(&self, root: &Path, split: &str) -> PathBuf {
        self.data_dir(root).join(format!("{split}.jsonl"))
    }

    pub fn data_dir(&self, root: &Path) -> PathBuf {
        match &self.name {
            TaskName::Summarization(_) => root.join("summarization"),
            TaskName::Generation => root.join("generation"),
            TaskName::Refinement(size) => root.join("refinement").join(size.as_str()),
            TaskName::Defect => root.join("defect"),
        }
    }

    /// Candidate label strings for classification tasks.
    pub fn labels(&self) -> Option<[&'static str; 2]> {
        (self.name == TaskName::Defect).then_some([POSITIVE_LABEL, NEGATIVE_LABEL])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub input: String,
    pub target: String,
    pub task: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Loaded {
    pub examples: Vec<TaskExample>,
    pub skipped: usize,
}

impl Loaded {
    pub fn ingested(&self) -> usize {
        self.examples.len() + self.skipped
    }
}

#[derive(Deserialize)]
struct SummarizationRecord {
    id: String,
    code: String,
    doc: Option<String>,
}

#[derive(Deserialize)]
struct GenerationRecord {
    id: String,
    nl: String,
    #[serde(default)]
    env: Option<String>,
    code: String,
}

#[derive(Deserialize)]
struct RefinementRecord {
    id: String,
    buggy: String,
    fixed: String,
}

#[derive(Deserialize)]
struct DefectRecord {
    id: String,
    code: String,
    label: i64,
}

fn records<R: BufRead, T: serde::de::DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<task stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// `"<language>: " + normalize(code)` → doc; records without a doc are
/// skipped and counted.
pub fn load_summarization<R: BufRead>(reader: R, language: &str, table: &CodecTable) -> Result<Loaded> {
    let spec = TaskSpec::desk(TaskName::Summarization(language.to_string()));
    let mut out = Loaded::default();
    for r in records::<_, SummarizationRecord>(reader)? {
        match r.doc.filter(|d| !d.trim().is_empty()) {
            Some(doc) => out.examples.push(TaskExample {
                input: format!("{}{}", spec.prefix, table.normalize(&r.code)?),
                target: doc,
                id: r.id,
                task: spec.name.to_string(),
            }),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// `"generate java: " + nl [+ " <CTX> " + env]` → normalize(code).
pub fn load_generation<R: BufRead>(reader: R, table: &CodecTable) -> Result<Loaded> {
    let spec = TaskSpec::desk(TaskName::Generation);
    let mut out = Loaded::default();
    for r in records::<_, GenerationRecord>(reader)? {
        let mut input = format!("{}{}", spec.prefix, r.nl);
        if let Some(env) = r.env.filter(|e| !e.trim().is_empty()) {
            input.push_str(&format!(" {CONTEXT_MARKER} {env}"));
        }
        out.examples.push(TaskExample {
            id: r.id,
            input,
            target: table.normalize(&r.code)?,
            task: spec.name.to_string(),
        });
    }
    Ok(out)
}

/// `"refine <size>: " + normalize(buggy)` → normalize(fixed).
pub fn load_refinement<R: BufRead>(reader: R, size: RefineSize, table: &CodecTable) -> Result<Loaded> {
    let spec = TaskSpec::desk(TaskName::Refinement(size));
    let mut out = Loaded::default();
    for r in records::<_, RefinementRecord>(reader)? {
        out.examples.push(TaskExample {
            id: r.id,
            input: format!("{}{}", spec.prefix, table.normalize(&r.buggy)?),
            target: table.normalize(&r.fixed)?,
            task: spec.name.to_string(),
        });
    }
    Ok(out)
}

/// `"defect: " + normalize(code)` → `positive` for label 1, `negative` for 0.
pub fn load_defect<R: BufRead>(reader: R, table: &CodecTable) -> Result<Loaded> {
    let spec = TaskSpec::desk(TaskName::Defect);
    let mut out = Loaded::default();
    for r in records::<_, DefectRecord>(reader)? {
        let target = match r.label {
            1 => POSITIVE_LABEL,
            0 => NEGATIVE_LABEL,
            other => return Err(Error::BadLabel(other)),
        };
        out.examples.push(TaskExample {
            id: r.id,
            input: format!("{}{}", spec.prefix, table.normalize(&r.code)?),
            target: target.to_string(),
            task: spec.name.to_string(),
        });
    }
    Ok(out)
}

/// Dispatches to the loader for `name`.
pub fn load<R: BufRead>(name: &TaskName, reader: R, table: &CodecTable) -> Result<Loaded> {
    match name {
        TaskName::Summarization(lang) => load_summarization(reader, lang, table),
        TaskName::Generation => load_generation(reader, table),
        TaskName::Refinement(size) => load_refinement(reader, *size, table),
        TaskName::Defect => load_defect(reader, table),
    }
}

pub fn load_file(name: &TaskName, path: &Path, table: &CodecTable) -> Result<Loaded> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load(name, std::io::BufReader::new(file), table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub input_truncated: bool,
    pub target_truncated: bool,
}

/// Encodes both sides, cutting each to its length budget (EOS included).
/// Cutting from the end drops generation context before the description.
pub fn tokenize(example: &TaskExample, vocab: &Vocabulary, spec: &TaskSpec) -> TokenizedExample {
    let (input_ids, input_truncated) = with_eos(&vocab.encode(&example.input), spec.input_len);
    let (target_ids, target_truncated) = with_eos(&vocab.encode(&example.target), spec.target_len);
    TokenizedExample {
        id: example.id.clone(),
        input_ids,
        target_ids,
        input_truncated,
        target_truncated,
    }
}

/// Reads a `key=value` manifest of expected example counts.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line `{l}`")))?;
            let n = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("manifest count `{v}`")))?;
            Ok((k.trim().to_string(), n))
        })
        .collect()
}

/// Verifies emitted and skipped counts of `split` against a manifest.
/// A missing `<split>.skipped` entry means zero.
pub fn check_manifest(manifest: &BTreeMap<String, usize>, split: &str, loaded: &Loaded) -> Result<()> {
    let expected = manifest
        .get(split)
        .ok_or_else(|| Error::Format(format!("manifest has no `{split}` count")))?;
    let skipped = manifest.get(&format!("{split}.skipped")).copied().unwrap_or(0);
    if *expected != loaded.examples.len() || skipped != loaded.skipped {
        return Err(Error::Format(format!(
            "split `{split}`: manifest expects {expected} examples and {skipped} skipped, found {} and {}",
            loaded.examples.len(),
            loaded.skipped
        )));
    }
    Ok(())
}

/// Scores denormalized predictions against references with the task's
/// metric set.
pub fn evaluate(spec: &TaskSpec, candidates: &[String], references: &[String], weights: CodeBleuWeights) -> Result<Vec<MetricReport>> {
    let task = spec.name.to_string();
    let n = candidates.len();
    spec.metrics
        .iter()
        .map(|m| {
            Ok(match m {
                MetricKind::SmoothBleu4 => MetricReport::simple(&task, "smooth_bleu4", bleu_smooth4(candidates, references)?, n),
                MetricKind::Bleu => MetricReport::simple(&task, "bleu", bleu_corpus(candidates, references, 4)?, n),
                MetricKind::ExactMatch => MetricReport::simple(&task, "exact_match", exact_match(candidates, references)?, n),
                MetricKind::CodeBleu => codebleu(&task, candidates, references, weights)?,
                MetricKind::Accuracy => {
                    let norm = |v: &[String]| -> Vec<String> {
                        v.iter().map(|s| s.split_whitespace().collect::<Vec<_>>().join(" ")).collect()
                    };
                    MetricReport::simple(&task, "accuracy", accuracy(&norm(candidates), &norm(references))?, n)
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> CodecTable {
        CodecTable::default()
    }

    #[test]
    fn summarization_prefix_and_skips() {
        let data = r#"{"id":"a","language":"java","code":"int f() { return 1; }","doc":"Returns one."}
{"id":"b","language":"java","code":"int g() {}","doc":null}
"#;
        let l = load_summarization(data.as_bytes(), "java", &table()).unwrap();
        assert_eq!(l.examples.len(), 1);
        assert_eq!(l.skipped, 1);
        assert_eq!(l.ingested(), 2);
        assert!(l.examples[0].input.starts_with("java: "));
        assert_eq!(l.examples[0].target, "Returns one.");
        assert_eq!(table().denormalize(&l.examples[0].input["java: ".len()..]), "int f() { return 1; }");
    }

    #[test]
    fn generation_context_is_optional() {
        let data = r#"{"id":"a","nl":"adds x","code":"int f ( int x ) { return x + 1 ; }"}
{"id":"b","nl":"gets h","code":"int h ( ) { return this . h ; }","env":"int h"}
"#;
        let l = load_generation(data.as_bytes(), &table()).unwrap();
        assert_eq!(l.examples[0].input, "generate java: adds x");
        assert_eq!(l.examples[1].input, "generate java: gets h <CTX> int h");
        assert_eq!(table().denormalize(&l.examples[0].target), "int f ( int x ) { return x + 1 ; }");
    }

    #[test]
    fn refinement_prefixes_by_size() {
        let data = r#"{"id":"a","buggy":"x = y ;","fixed":"x = y ;"}"#;
        let s = load_refinement(data.as_bytes(), RefineSize::Small, &table()).unwrap();
        let m = load_refinement(data.as_bytes(), RefineSize::Medium, &table()).unwrap();
        assert!(s.examples[0].input.starts_with("refine small: "));
        assert!(m.examples[0].input.starts_with("refine medium: "));
        let ex = &s.examples[0];
        assert_eq!(ex.target, &ex.input["refine small: ".len()..]);
    }

    #[test]
    fn defect_labels() {
        let ok = r#"{"id":"a","code":"f ( ) ;","label":1}
{"id":"b","code":"g ( ) ;","label":0}"#;
        let l = load_defect(ok.as_bytes(), &table()).unwrap();
        assert_eq!(l.examples[0].target, "positive");
        assert_eq!(l.examples[1].target, "negative");
        let bad = r#"{"id":"a","code":"f ( ) ;","label":7}"#;
        assert!(matches!(load_defect(bad.as_bytes(), &table()), Err(Error::BadLabel(7))));
        assert!(matches!(load_defect("{not json".as_bytes(), &table()), Err(Error::Format(_))));
    }

    #[test]
    fn desk_lengths_are_a_quarter() {
        let s = TaskSpec::desk(TaskName::Summarization("python".into()));
        assert_eq!((s.input_len, s.target_len), (128, 128));
        let g = TaskSpec::desk(TaskName::Generation);
        assert_eq!((g.input_len, g.target_len), (64, 64));
        let d = TaskSpec::desk(TaskName::Defect);
        assert_eq!((d.input_len, d.target_len), (256, 5));
        let f = TaskSpec::full_scale(TaskName::Refinement(RefineSize::Medium));
        assert_eq!((f.input_len, f.target_len), (512, 512));
    }

    #[test]
    fn task_names_round_trip() {
        for name in [
            TaskName::Summarization("java".into()),
            TaskName::Generation,
            TaskName::Refinement(RefineSize::Small),
            TaskName::Refinement(RefineSize::Medium),
            TaskName::Defect,
        ] {
            assert_eq!(name.to_string().parse::<TaskName>().unwrap(), name);
        }
        assert!("translation".parse::<TaskName>().is_err());
    }

    #[test]
    fn manifest_mismatch_is_reported() {
        let loaded = Loaded {
            examples: Vec::new(),
            skipped: 2,
        };
        let m = BTreeMap::from([("test".to_string(), 0), ("test.skipped".to_string(), 2)]);
        check_manifest(&m, "test", &loaded).unwrap();
        let m = BTreeMap::from([("test".to_string(), 1)]);
        assert!(check_manifest(&m, "test", &loaded).is_err());
    }
}
