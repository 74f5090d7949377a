//! Function-record ingestion and pretraining-sequence assembly.

use std::collections::BTreeMap;
use std::io::BufRead;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::CodecTable;
use crate::error::{Error, Result};

/// Literal separator placed between documentation and code in bimodal text.
pub const DEFAULT_SEPARATOR: &str = " <SEP> ";

/// Source names used by the standard corpus combinations.
pub const CODE_SEARCH_SOURCE: &str = "codesearchnet";
pub const REPOSITORY_SOURCE: &str = "github";

/// One source function, optionally paired with its documentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub language: String,
    pub code: String,
    pub doc: Option<String>,
}

impl FunctionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.code.is_empty() {
            return Err(format!("record `{}` has empty code", self.id));
        }
        if self.language.is_empty()
            || !self
                .language
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
        {
            return Err(format!(
                "record `{}` has a non-lowercase language tag `{}`",
                self.id, self.language
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Bimodal,
    Unimodal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSequence {
    pub text: String,
    pub modality: Modality,
    pub source_id: String,
}

/// Records read from one corpus file plus the skip counters.
#[derive(Debug, Default, Clone)]
pub struct Ingested {
    pub records: Vec<FunctionRecord>,
    pub malformed: usize,
    pub rejected: usize,
}

impl Ingested {
    pub fn total(&self) -> usize {
        self.records.len() + self.malformed + self.rejected
    }
}

/// Reads JSON Lines function records, skipping malformed lines and records
/// whose code or documentation already contains a codec marker word.
///
/// Fails with a format error only when the first record cannot be read.
pub fn ingest<R: BufRead>(reader: R, table: &CodecTable) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen_first = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<corpus line {}>", lineno + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<FunctionRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.check().map(|_| r));
        let record = match parsed {
            Ok(r) => r,
            Err(msg) if !seen_first => {
                return Err(Error::Format(format!("first record unreadable: {msg}")));
            }
            Err(msg) => {
                warn!("event=skip reason=malformed line={} detail={msg:?}", lineno + 1);
                out.malformed += 1;
                continue;
            }
        };
        seen_first = true;
        let doc_ok = record.doc.as_deref().map_or(true, |d| table.validate(d));
        if !table.validate(&record.code) || !doc_ok {
            warn!("event=skip reason=reserved_marker id={}", record.id);
            out.rejected += 1;
            continue;
        }
        out.records.push(record);
    }
    Ok(out)
}

pub fn make_bimodal(
    record: &FunctionRecord,
    separator: &str,
    table: &CodecTable,
) -> Result<PretrainSequence> {
    let doc = match record.doc.as_deref() {
        Some(d) if !d.is_empty() => d,
        _ => {
            return Err(Error::MissingDoc {
                id: record.id.clone(),
            })
        }
    };
    let mut text = table.normalize(doc)?;
    text.push_str(separator);
    text.push_str(&table.normalize(&record.code)?);
    Ok(PretrainSequence {
        text,
        modality: Modality::Bimodal,
        source_id: record.id.clone(),
    })
}

pub fn make_unimodal(record: &FunctionRecord, table: &CodecTable) -> Result<PretrainSequence> {
    Ok(PretrainSequence {
        text: table.normalize(&record.code)?,
        modality: Modality::Unimodal,
        source_id: record.id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombinationName {
    #[serde(rename = "1-CC")]
    OneCc,
    #[serde(rename = "2-CC")]
    TwoCc,
    #[serde(rename = "1-CCG")]
    OneCcg,
}

impl std::str::FromStr for CombinationName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "1-CC" | "ONE-CC" => Ok(CombinationName::OneCc),
            "2-CC" | "TWO-CC" => Ok(CombinationName::TwoCc),
            "1-CCG" | "ONE-CCG" => Ok(CombinationName::OneCcg),
            other => Err(Error::InvalidConfig(format!(
                "unknown corpus combination `{other}`"
            ))),
        }
    }
}

/// A named selection of sources and the modality they are assembled with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusCombination {
    pub name: CombinationName,
    pub modality: Modality,
    pub sources: Vec<String>,
}

impl CorpusCombination {
    pub fn standard(name: CombinationName) -> Self {
        let (modality, sources) = match name {
            CombinationName::OneCc => (Modality::Unimodal, vec![CODE_SEARCH_SOURCE]),
            CombinationName::TwoCc => (Modality::Bimodal, vec![CODE_SEARCH_SOURCE]),
            CombinationName::OneCcg => (
                Modality::Unimodal,
                vec![CODE_SEARCH_SOURCE, REPOSITORY_SOURCE],
            ),
        };
        CorpusCombination {
            name,
            modality,
            sources: sources.into_iter().map(String::from).collect(),
        }
    }

    /// Mixes a plain natural-language source in ahead of the code sources.
    pub fn with_text_source(mut self, name: &str) -> Self {
        self.sources.insert(0, name.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SourceCounts {
    pub emitted: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BuiltCorpus {
    pub sequences: Vec<PretrainSequence>,
    pub counts: BTreeMap<String, SourceCounts>,
}

/// Assembles the sequences of `combination` from named record sets, in
/// source order and record order.
pub fn build(
    combination: &CorpusCombination,
    sources: &BTreeMap<String, Vec<FunctionRecord>>,
    separator: &str,
    table: &CodecTable,
) -> Result<BuiltCorpus> {
    for name in &combination.sources {
        if !sources.contains_key(name) {
            return Err(Error::MissingSource(name.clone()));
        }
    }
    let mut out = BuiltCorpus::default();
    for name in &combination.sources {
        let records = &sources[name];
        let mapped: Vec<Result<PretrainSequence>> = records
            .par_iter()
            .map(|r| match combination.modality {
                Modality::Bimodal => make_bimodal(r, separator, table),
                Modality::Unimodal => make_unimodal(r, table),
            })
            .collect();
        let counts = out.counts.entry(name.clone()).or_default();
        for (record, seq) in records.iter().zip(mapped) {
            match seq {
                Ok(s) => {
                    out.sequences.push(s);
                    counts.emitted += 1;
                }
                Err(e) => {
                    warn!("event=skip source={name} id={} reason={}", record.id, e.code());
                    counts.skipped += 1;
                }
            }
        }
    }
    Ok(out)
}
