use std::fs;

use codetext::error::Error;
use codetext::model::ModelConfig;
use codetext::trainer::{finetune, Checkpoint, MixtureSpec, TrainConfig};
use codetext::tokenizer::EOS_ID;

fn trained() -> Checkpoint {
    let start = Checkpoint::fresh(ModelConfig::tiny(30), 4, "abc123").unwrap();
    let pairs = vec![(vec![5, 6, EOS_ID], vec![6, 5, EOS_ID]), (vec![7, EOS_ID], vec![8, EOS_ID])];
    let cfg = TrainConfig {
        total_steps: 3,
        batch_size: 2,
        log_every: 0,
        ..TrainConfig::default()
    };
    finetune(&start, &MixtureSpec::single("t", pairs), &cfg, None).unwrap().checkpoint
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "params", "adam_m", "adam_v"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names.into_iter().filter(|p| p.is_file()) {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn save_then_load_is_bit_identical() {
    let ckpt = trained();
    let tmp = tempfile::tempdir().unwrap();
    ckpt.save(&tmp.path().join("a")).unwrap();
    let back = Checkpoint::load(&tmp.path().join("a"), Some("abc123")).unwrap();
    assert_eq!(back.model, ckpt.model);
    assert_eq!(back.step, ckpt.step);
    assert_eq!(back.optimizer.t, ckpt.optimizer.t);
    for (name, t) in &ckpt.params.arrays {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params.get(name).data()), bits(t.data()), "{name}");
    }
    assert_eq!(back, ckpt);
    back.save(&tmp.path().join("b")).unwrap();
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
}

#[test]
fn edited_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    trained().save(tmp.path()).unwrap();
    let manifest = tmp.path().join("manifest");
    let text = fs::read_to_string(&manifest).unwrap().replace("checkpoint-v1", "checkpoint-v0");
    fs::write(&manifest, text).unwrap();
    assert!(matches!(Checkpoint::load(tmp.path(), None), Err(Error::VersionMismatch { .. })));
}

#[test]
fn other_vocabulary_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    trained().save(tmp.path()).unwrap();
    assert!(matches!(
        Checkpoint::load(tmp.path(), Some("fff")),
        Err(Error::VocabMismatch { .. })
    ));
    assert!(Checkpoint::load(tmp.path(), None).is_ok());
}

#[test]
fn missing_directory_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let err = Checkpoint::load(&tmp.path().join("nope"), None).unwrap_err();
    assert_eq!(err.code(), "IO_FAILURE");
}
