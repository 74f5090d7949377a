use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use codetext::codec::CodecTable;
use codetext::corpus::{self, FunctionRecord, DEFAULT_SEPARATOR};
use codetext::minilang::{lex, parse_code};
use codetext::tasks::{self, RefineSize, TaskName, TaskSpec};
use codetext::tokenizer::{train_vocab, BYTE_BASE};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn sample_records() -> Vec<FunctionRecord> {
    let text = fs::read_to_string(data_dir().join("corpus/sample.jsonl")).unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn codec_round_trips_the_sample() {
    let table = CodecTable::default();
    let records = sample_records();
    assert_eq!(records.len(), 1000);
    let mut rejected = 0;
    for r in &records {
        if !table.validate(&r.code) {
            rejected += 1;
            continue;
        }
        let n = table.normalize(&r.code).unwrap();
        assert_eq!(table.denormalize(&n), r.code, "{}", r.id);
    }
    assert!((rejected as f64) < 0.001 * records.len() as f64, "{rejected} rejected");
}

#[test]
fn ingest_keeps_every_valid_record() {
    let table = CodecTable::default();
    let file = fs::File::open(data_dir().join("corpus/sample.jsonl")).unwrap();
    let got = corpus::ingest(BufReader::new(file), &table).unwrap();
    let valid = sample_records()
        .iter()
        .filter(|r| table.validate(&r.code) && r.doc.as_deref().map_or(true, |d| table.validate(d)))
        .count();
    assert_eq!(got.records.len(), valid);
    assert_eq!(got.total(), 1000);
}

#[test]
fn bimodal_length_is_the_sum_of_parts() {
    let table = CodecTable::default();
    for r in sample_records().iter().filter(|r| r.doc.is_some()).take(100) {
        let seq = corpus::make_bimodal(r, DEFAULT_SEPARATOR, &table).unwrap();
        let doc = table.normalize(r.doc.as_deref().unwrap()).unwrap();
        let code = table.normalize(&r.code).unwrap();
        assert_eq!(seq.text.len(), doc.len() + DEFAULT_SEPARATOR.len() + code.len());
        let uni = corpus::make_unimodal(r, &table).unwrap();
        assert_eq!(table.denormalize(&uni.text), r.code);
    }
}

#[test]
fn vocabulary_of_8000_pieces_round_trips_the_sample() {
    let table = CodecTable::default();
    let texts: Vec<String> = sample_records()
        .iter()
        .map(|r| table.normalize(&r.code).unwrap())
        .collect();
    let vocab = train_vocab(&texts, 8000).unwrap();
    assert_eq!(vocab.piece_count(), 8000);
    for b in 0..=255u8 {
        assert_eq!(vocab.id_of(&[b]), Some(BYTE_BASE + b as u32));
    }
    for t in &texts {
        assert_eq!(&vocab.decode(&vocab.encode(t)).unwrap(), t);
    }
}

#[test]
fn task_samples_match_their_manifests() {
    let table = CodecTable::default();
    let root = data_dir().join("tasks");
    let names = [
        TaskName::Summarization("python".into()),
        TaskName::Generation,
        TaskName::Refinement(RefineSize::Small),
        TaskName::Refinement(RefineSize::Medium),
        TaskName::Defect,
    ];
    for name in names {
        let spec = TaskSpec::desk(name.clone());
        let manifest = tasks::read_manifest(&spec.data_dir(&root).join("manifest")).unwrap();
        for split in ["train", "test"] {
            let loaded = tasks::load_file(&name, &spec.data_path(&root, split), &table).unwrap();
            tasks::check_manifest(&manifest, split, &loaded).unwrap();
            assert!(loaded.examples.iter().all(|e| e.input.starts_with(&spec.prefix)));
        }
    }
}

#[test]
fn generation_code_lexes_and_parses() {
    let text = fs::read_to_string(data_dir().join("tasks/generation/train.jsonl")).unwrap();
    for line in text.lines().take(100) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let code = v["code"].as_str().unwrap();
        let toks = lex(code).unwrap();
        let joined = toks.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        let again = lex(&joined).unwrap();
        assert_eq!(
            toks.iter().map(|t| (t.kind, &t.text)).collect::<Vec<_>>(),
            again.iter().map(|t| (t.kind, &t.text)).collect::<Vec<_>>()
        );
        parse_code(code).unwrap();
    }
}
