//! Acceptance suite: one numbered criterion per check, each printed as a
//! PASS/FAIL line with its elapsed time against its time budget.
//!
//! Run all: `cargo test --release -p codetext-cli --test acceptance`
//! Run some: append `-- 5 6` to select criteria by number.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use codetext::codec::CodecTable;
use codetext::corpus::FunctionRecord;
use codetext::denoise::{corrupt, splice, CorruptionConfig};
use codetext::infer::{DecodeConfig, Decoder};
use codetext::metrics::{accuracy, bleu_corpus, codebleu, exact_match, structural_match, CodeBleuWeights};
use codetext::minilang::{def_use_edges, lex, parse, pretty_print, random_program, AstNode, GenConfig, NodeKind};
use codetext::model::{forward, grad_check, Batch, ModelConfig, Parameters, GRAD_CHECK_EPSILON};
use codetext::tokenizer::{train_vocab, Vocabulary, EOS_ID, MIN_PIECES};
use codetext::trainer::{finetune, smoothed_losses, Checkpoint, MixtureSpec, MixtureTask, Pair, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn sample_records() -> Vec<FunctionRecord> {
    let text = fs::read_to_string(root().join("data/corpus/sample.jsonl")).expect("bundled sample");
    text.lines().map(|l| serde_json::from_str(l).expect("record")).collect()
}

fn codec_round_trip() -> Check {
    let table = CodecTable::default();
    let records = sample_records();
    ensure(records.len() == 1000, || format!("expected 1000 records, found {}", records.len()))?;
    for r in &records {
        let n = table.normalize(&r.code).map_err(|e| format!("{}: {e}", r.id))?;
        ensure(table.denormalize(&n) == r.code, || format!("{} differs after round trip", r.id))?;
    }
    Ok(format!("{}/{} exact", records.len(), records.len()))
}

/// Random text without the sentinel literal: ASCII, punctuation runs,
/// angle-bracket fragments, whitespace and multi-byte characters.
fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "<", ">", "extra", "_id", "<extra", "id_", "_", "0", "42", "é", "λ", "中", "🙂", " ", "  ", "\t", "\n",
        "def", "return", "{", "}", "OBRACE", "x", "self", ".", "(", ")",
    ];
    let n = rng.gen_range(0..30);
    let mut s = String::new();
    for _ in 0..n {
        if rng.gen_bool(0.5) {
            s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
        } else {
            s.push(char::from_u32(rng.gen_range(0x20..0x7f)).unwrap());
        }
    }
    s
}

fn tokenizer_round_trip() -> Check {
    let table = CodecTable::default();
    let texts: Vec<String> = sample_records()
        .iter()
        .map(|r| table.normalize(&r.code).expect("normalizable"))
        .collect();
    let vocab = train_vocab(texts.iter(), 8000).map_err(|e| e.to_string())?;
    for t in &texts {
        let back = vocab.decode(&vocab.encode(t)).map_err(|e| e.to_string())?;
        ensure(&back == t, || format!("round trip failed on {t:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 10_000 {
        let s = random_text(&mut rng);
        if s.contains("<extra_id_") {
            continue;
        }
        let ids = vocab.encode(&s);
        ensure(ids.iter().all(|&i| !vocab.is_sentinel(i)), || format!("sentinel id from {s:?}"))?;
        ensure(vocab.decode(&ids).map_err(|e| e.to_string())? == s, || format!("round trip failed on {s:?}"))?;
        checked += 1;
    }
    let ids = vocab.encode("a <extra_id_7> b");
    ensure(ids.contains(&vocab.sentinel(7)), || "literal sentinel not recognized".into())?;
    Ok(format!(
        "{} corpus texts exact, {checked} sentinel-free strings clean, {} pieces",
        texts.len(),
        vocab.piece_count()
    ))
}

fn small_vocab() -> Vocabulary {
    train_vocab(["abc abd"], MIN_PIECES).expect("byte vocabulary")
}

fn span_corruption() -> Check {
    let vocab = small_vocab();
    let sentinels = vocab.sentinels();
    let hi = vocab.sentinel_base();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rates = [0.0, 0.15, 0.5, 1.0];
    let mut lines = Vec::new();
    let mut record = 0u64;
    for &rate in &rates {
        let cfg = CorruptionConfig {
            rate,
            mean_span_length: 3,
            seed: 17,
        };
        let (mut masked, mut total) = (0usize, 0usize);
        for _ in 0..2500 {
            let len = rng.gen_range(1..200);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(3..hi)).collect();
            let ex = corrupt(&ids, &cfg, sentinels, &mut cfg.record_rng(record)).map_err(|e| e.to_string())?;
            let again = corrupt(&ids, &cfg, sentinels, &mut cfg.record_rng(record)).map_err(|e| e.to_string())?;
            ensure(ex == again, || "corruption not deterministic".into())?;
            record += 1;
            ensure(splice(&ex, sentinels).map_err(|e| e.to_string())? == ids, || "splice mismatch".into())?;
            let in_s: Vec<u32> = ex.input_ids.iter().copied().filter(|&i| vocab.is_sentinel(i)).collect();
            let out_s: Vec<u32> = ex.target_ids.iter().copied().filter(|&i| vocab.is_sentinel(i)).collect();
            ensure(in_s == out_s, || "input and target sentinels differ".into())?;
            ensure(in_s.iter().enumerate().all(|(k, &s)| s == sentinels.get(k)), || "sentinels out of order".into())?;
            masked += ex.target_ids.len() - out_s.len() - 1;
            total += len;
        }
        let observed = masked as f64 / total as f64;
        ensure((observed - rate).abs() <= 0.02 && total >= 10_000, || {
            format!("rate {rate}: observed mask rate {observed:.4} over {total} tokens")
        })?;
        lines.push(format!("r={rate}:{observed:.4}"));
    }
    Ok(format!("{record} examples spliced exactly; mask rates {}", lines.join(" ")))
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<Pair> {
    (0..n)
        .map(|_| {
            let a = (0..rng.gen_range(1..9)).map(|_| rng.gen_range(3..vocab)).collect();
            let b = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(3..vocab)).collect();
            (a, b)
        })
        .collect()
}

fn gradient_check() -> Check {
    let cfg = ModelConfig::tiny(40);
    let report = grad_check(&cfg, 0).map_err(|e| e.to_string())?;
    let worst = report
        .arrays
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .expect("arrays");
    ensure(report.passes(1e-4), || format!("{} has relative error {:e}", worst.name, worst.max_relative_error))?;

    let cfg = ModelConfig {
        dropout: 0.0,
        ..cfg
    };
    let v = cfg.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let params = Parameters::init(&cfg, seed).map_err(|e| e.to_string())?;
        let batch = Batch::from_pairs(&random_pairs(&mut rng, 4, v as u32)).map_err(|e| e.to_string())?;
        let base = forward(&params, &cfg, &batch).map_err(|e| e.to_string())?;
        let mut padded = batch.clone();
        for (id, &real) in padded.encoder_ids.iter_mut().zip(&batch.encoder_mask) {
            if !real {
                *id = rng.gen_range(3..v as u32);
            }
        }
        let out = forward(&params, &cfg, &padded).map_err(|e| e.to_string())?;
        ensure(out == base, || "encoder padding changed logits".into())?;

        let ld = batch.dec_len;
        for t in 1..ld {
            let mut changed = batch.clone();
            for b in 0..batch.size {
                changed.decoder_input_ids[b * ld + t] = rng.gen_range(3..v as u32);
            }
            let out = forward(&params, &cfg, &changed).map_err(|e| e.to_string())?;
            for b in 0..batch.size {
                let lo = b * ld * v;
                ensure(out.data()[lo..lo + t * v] == base.data()[lo..lo + t * v], || {
                    format!("future decoder token {t} changed earlier logits")
                })?;
            }
        }
    }
    Ok(format!(
        "{} arrays, max relative error {:.2e} (eps {GRAD_CHECK_EPSILON:e}); causality and padding exact on 5 models",
        report.arrays.len(),
        report.max_relative_error
    ))
}

fn with_eos(mut ids: Vec<u32>) -> Vec<u32> {
    ids.push(EOS_ID);
    ids
}

fn exact_matches(ckpt: &Checkpoint, pairs: &[Pair]) -> usize {
    let decoder = Decoder::new(ckpt);
    let cfg = DecodeConfig {
        max_length: 20,
        ..Default::default()
    };
    pairs
        .iter()
        .filter(|(a, b)| decoder.greedy(a, &cfg).expect("decodes") == b[..b.len() - 1])
        .count()
}

fn tiny_overfit() -> Check {
    let vocab = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<Pair> = (0..32)
        .map(|_| {
            let a = (0..rng.gen_range(4..=10)).map(|_| rng.gen_range(10..vocab)).collect();
            let b = (0..rng.gen_range(3..=8)).map(|_| rng.gen_range(10..vocab)).collect();
            (with_eos(a), with_eos(b))
        })
        .collect();
    let mut ckpt = Checkpoint::fresh(ModelConfig::tiny(vocab as usize), 1, "overfit").map_err(|e| e.to_string())?;
    let train = TrainConfig {
        total_steps: 500,
        batch_size: 16,
        learning_rate: 1e-3,
        log_every: 0,
        ..Default::default()
    };
    let mixture = MixtureSpec::single("overfit", pairs.clone());
    while ckpt.step < 3000 {
        ckpt = finetune(&ckpt, &mixture, &train, None).map_err(|e| e.to_string())?.checkpoint;
        let hits = exact_matches(&ckpt, &pairs);
        if hits * 100 >= 95 * pairs.len() {
            return Ok(format!("{hits}/32 exact after {} steps", ckpt.step));
        }
    }
    Err(format!("only {}/32 exact after 3000 steps", exact_matches(&ckpt, &pairs)))
}

const COPY_PREFIX: u32 = 3;
const REVERSE_PREFIX: u32 = 4;

fn task_example(content: &[u32], reverse: bool) -> Pair {
    let mut input = vec![if reverse { REVERSE_PREFIX } else { COPY_PREFIX }];
    input.extend(content);
    let mut target = content.to_vec();
    if reverse {
        target.reverse();
    }
    (with_eos(input), with_eos(target))
}

fn contents(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| (0..rng.gen_range(3..=8)).map(|_| rng.gen_range(10..40)).collect())
        .collect()
}

fn train_mixture(tasks: Vec<MixtureTask>, steps: usize, batch_size: usize) -> Result<Checkpoint, String> {
    let start = Checkpoint::fresh(ModelConfig::tiny(40), 1, "prefix").map_err(|e| e.to_string())?;
    let train = TrainConfig {
        total_steps: steps,
        batch_size,
        learning_rate: 3e-3,
        log_every: 0,
        ..Default::default()
    };
    Ok(finetune(&start, &MixtureSpec { tasks }, &train, None).map_err(|e| e.to_string())?.checkpoint)
}

fn percent(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

fn prefix_mechanism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let copy: Vec<Pair> = contents(&mut rng, 2000).iter().map(|c| task_example(c, false)).collect();
    let reverse: Vec<Pair> = contents(&mut rng, 2000).iter().map(|c| task_example(c, true)).collect();
    let held = contents(&mut rng, 200);
    let held_copy: Vec<Pair> = held.iter().map(|c| task_example(c, false)).collect();
    let held_reverse: Vec<Pair> = held.iter().map(|c| task_example(c, true)).collect();
    let task = |name: &str, examples: &[Pair]| MixtureTask {
        name: name.into(),
        examples: examples.to_vec(),
    };

    let joint = train_mixture(vec![task("copy", &copy), task("reverse", &reverse)], 2000, 64)?;
    let jc = percent(exact_matches(&joint, &held_copy), held.len());
    let jr = percent(exact_matches(&joint, &held_reverse), held.len());

    // Same content under both prefixes: the output has to follow the prefix.
    let decoder = Decoder::new(&joint);
    let dc = DecodeConfig {
        max_length: 20,
        ..Default::default()
    };
    let follows = held
        .iter()
        .filter(|c| {
            let (ci, ct) = task_example(c, false);
            let (ri, rt) = task_example(c, true);
            decoder.greedy(&ci, &dc).expect("decodes") == ct[..ct.len() - 1]
                && decoder.greedy(&ri, &dc).expect("decodes") == rt[..rt.len() - 1]
        })
        .count();
    let follows = percent(follows, held.len());

    // Single-task controls: a model that only ever saw one task does not
    // perform the other when given the other prefix.
    let copy_only = train_mixture(vec![task("copy", &copy)], 1000, 32)?;
    let reverse_only = train_mixture(vec![task("reverse", &reverse)], 1000, 32)?;
    let cc = percent(exact_matches(&copy_only, &held_copy), held.len());
    let cr = percent(exact_matches(&copy_only, &held_reverse), held.len());
    let rr = percent(exact_matches(&reverse_only, &held_reverse), held.len());
    let rc = percent(exact_matches(&reverse_only, &held_copy), held.len());

    let summary = format!(
        "joint copy {jc:.1}% reverse {jr:.1}% both-by-prefix {follows:.1}%; copy-only: copy {cc:.1}% reverse {cr:.1}%; reverse-only: reverse {rr:.1}% copy {rc:.1}%"
    );
    ensure(jc >= 90.0 && jr >= 90.0, || format!("joint model below 90%: {summary}"))?;
    ensure(follows >= 90.0, || format!("outputs do not follow the prefix: {summary}"))?;
    ensure(cc >= 90.0 && rr >= 90.0, || format!("single-task controls did not learn their task: {summary}"))?;
    ensure(cr <= 10.0 && rc <= 10.0, || format!("single-task controls perform the unseen task: {summary}"))?;
    Ok(summary)
}

/// Corpus BLEU by direct enumeration: each distinct candidate n-gram is
/// counted by scanning both token lists.
fn bleu_oracle(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let count = |toks: &[String], gram: &[String]| toks.windows(gram.len()).filter(|w| *w == gram).count();
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in pairs {
            if c.len() < n {
                continue;
            }
            total += c.len() - n + 1;
            for i in 0..=c.len() - n {
                let gram = &c[i..i + n];
                if (0..i).any(|j| &c[j..j + n] == gram) {
                    continue;
                }
                matched += count(c, gram).min(count(r, gram));
            }
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / 4.0;
    }
    let c: usize = pairs.iter().map(|p| p.0.len()).sum();
    let r: usize = pairs.iter().map(|p| p.1.len()).sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * log_sum.exp()
}

fn rename_all(ast: &AstNode, rng: &mut ChaCha8Rng) -> AstNode {
    let mut perm: Vec<usize> = (0..64).collect();
    perm.shuffle(rng);
    let mut out = ast.clone();
    out.rename(&mut |name: &str| match name.strip_prefix('v').and_then(|k| k.parse::<usize>().ok()) {
        Some(k) => format!("w{}", perm[k]),
        None => format!("z_{name}"),
    });
    out
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = ["a", "b", "c", "d", "e", "f"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(4..16)).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    let pairs: Vec<(Vec<String>, Vec<String>)> = (0..100).map(|_| (sentence(&mut rng), sentence(&mut rng))).collect();
    let cands: Vec<String> = pairs.iter().map(|p| p.0.join(" ")).collect();
    let refs: Vec<String> = pairs.iter().map(|p| p.1.join(" ")).collect();
    let got = bleu_corpus(&cands, &refs, 4).map_err(|e| e.to_string())?;
    let want = bleu_oracle(&pairs);
    ensure((got - want).abs() < 1e-9, || format!("corpus BLEU {got} vs oracle {want}"))?;
    let mut worst: f64 = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let got = bleu_corpus(&cands[i..=i], &refs[i..=i], 4).map_err(|e| e.to_string())?;
        let want = bleu_oracle(std::slice::from_ref(p));
        worst = worst.max((got - want).abs());
    }
    ensure(worst < 1e-9, || format!("sentence-level BLEU deviates by {worst:e}"))?;

    let refs: Vec<String> = (0..50).map(|i| format!("tok{i} x")).collect();
    let cands: Vec<String> = (0..50)
        .map(|i| if i % 4 == 0 { format!("other{i}") } else { format!("  tok{i}   x ") })
        .collect();
    let em = exact_match(&cands, &refs).map_err(|e| e.to_string())?;
    ensure(em == 74.0, || format!("exact match {em}, expected 74"))?;
    let gold: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let pred: Vec<u8> = (0..40).map(|i| if i < 10 { 1 - (i % 2) as u8 } else { (i % 2) as u8 }).collect();
    let acc = accuracy(&pred, &gold).map_err(|e| e.to_string())?;
    ensure(acc == 75.0, || format!("accuracy {acc}, expected 75"))?;

    let gen = GenConfig::default();
    let programs: Vec<AstNode> = (0..50).map(|_| random_program(&mut rng, &gen)).collect();
    let code: Vec<String> = programs.iter().map(pretty_print).collect();
    let report = codebleu("check", &code, &code, CodeBleuWeights::default()).map_err(|e| e.to_string())?;
    ensure((report.value - 100.0).abs() < 1e-9, || format!("CodeBLEU on identical code {}", report.value))?;
    ensure(report.components.values().all(|&v| (v - 1.0).abs() < 1e-12), || {
        format!("components on identical code {:?}", report.components)
    })?;
    ensure(report.counts.parse_failures == 0, || "generated programs failed to parse".into())?;

    for (i, p) in programs.iter().enumerate() {
        let renamed = pretty_print(&rename_all(p, &mut rng));
        let other = &code[(i + 1) % code.len()];
        let same = structural_match(&renamed, &code[i]);
        ensure(same == Some((1.0, 1.0)), || format!("renamed program {i} scores {same:?} against itself"))?;
        let before = structural_match(&code[i], other);
        let after = structural_match(&renamed, other);
        ensure(before == after, || format!("renaming program {i} moved its scores {before:?} -> {after:?}"))?;
    }
    Ok(format!(
        "BLEU matches oracle on 100 pairs (corpus {got:.6}); EM {em}, accuracy {acc}; CodeBLEU identical = {:.1}; rename invariance on 50 programs",
        report.value
    ))
}

/// Def-use edges by enumerating every path through `if` statements and
/// tracking the last definition of each name along the path.
fn path_oracle(ast: &AstNode) -> BTreeSet<(usize, usize, String)> {
    struct Event {
        idx: usize,
        uses: Vec<String>,
        def: Option<String>,
    }
    fn names(e: &AstNode, out: &mut Vec<String>) {
        if e.kind == NodeKind::Name {
            out.push(e.text.clone());
        }
        e.children.iter().for_each(|c| names(c, out));
    }
    fn event(s: &AstNode, idx: usize) -> Event {
        let mut uses = Vec::new();
        let def = match s.kind {
            NodeKind::Decl => s.children.get(2).map(|init| {
                names(init, &mut uses);
                s.children[1].text.clone()
            }),
            NodeKind::Assign => {
                names(&s.children[1], &mut uses);
                Some(s.children[0].text.clone())
            }
            NodeKind::If => {
                names(&s.children[0], &mut uses);
                None
            }
            _ => {
                s.children.iter().for_each(|c| names(c, &mut uses));
                None
            }
        };
        Event { idx, uses, def }
    }
    /// Every path as a list of (statement index) in execution order.
    fn paths(stmts: &[AstNode], counter: &mut usize, events: &mut Vec<Event>) -> Vec<Vec<usize>> {
        let mut acc = vec![Vec::new()];
        for s in stmts {
            let idx = *counter;
            *counter += 1;
            events.push(event(s, idx));
            let alternatives = if s.kind == NodeKind::If {
                let mut alts = paths(&s.children[1].children, counter, events);
                match s.children.get(2) {
                    Some(e) => alts.extend(paths(&e.children, counter, events)),
                    None => alts.push(Vec::new()),
                }
                alts.into_iter().map(|p| [vec![idx], p].concat()).collect()
            } else {
                vec![vec![idx]]
            };
            acc = acc
                .iter()
                .flat_map(|prefix| alternatives.iter().map(move |alt| [prefix.clone(), alt.clone()].concat()))
                .collect();
        }
        acc
    }
    let mut events = Vec::new();
    let all = paths(&ast.children, &mut 0, &mut events);
    let by_idx: HashMap<usize, &Event> = events.iter().map(|e| (e.idx, e)).collect();
    let mut edges = BTreeSet::new();
    for path in all {
        let mut last: HashMap<&str, usize> = HashMap::new();
        for idx in path {
            let ev = by_idx[&idx];
            for u in &ev.uses {
                if let Some(&d) = last.get(u.as_str()) {
                    edges.insert((d, ev.idx, u.clone()));
                }
            }
            if let Some(d) = &ev.def {
                last.insert(d, ev.idx);
            }
        }
    }
    edges
}

fn minilang_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gen = GenConfig::default();
    for i in 0..500 {
        let ast = random_program(&mut rng, &gen);
        let text = pretty_print(&ast);
        let back = lex(&text).and_then(|t| parse(&t)).map_err(|e| format!("tree {i}: {e}: {text}"))?;
        ensure(back == ast, || format!("tree {i} differs after round trip: {text}"))?;
    }
    let mut edges = 0;
    for (i, allow_if) in (0..400).map(|i| (i, i % 2 == 1)) {
        let cfg = GenConfig {
            functions: 0,
            statements: 8,
            expr_depth: 2,
            variables: 4,
            allow_if,
            allow_while: false,
            simple_expressions: true,
        };
        let ast = random_program(&mut rng, &cfg);
        let got = def_use_edges(&ast);
        let want = path_oracle(&ast);
        ensure(got == want, || format!("program {i}: edges {got:?} vs oracle {want:?}\n{}", pretty_print(&ast)))?;
        edges += got.len();
    }
    Ok(format!("500 round trips; 400 programs ({edges} edges) match the path oracle"))
}

fn codetext(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_codetext"))
        .current_dir(root())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.code() == Some(0) {
        Ok(())
    } else {
        Err(format!(
            "`codetext {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default()
        ))
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn smoothed_curve(path: &Path) -> Result<Vec<f64>, String> {
    let v = read_json(path)?;
    let losses: Vec<f64> = v["losses"]
        .as_array()
        .ok_or("missing losses")?
        .iter()
        .filter_map(|x| x.as_f64())
        .collect();
    Ok(smoothed_losses(&losses, 5))
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().ok_or("temp path")?;
    for cmd in ["build-corpus", "train-tokenizer", "pretrain", "finetune", "predict", "evaluate"] {
        codetext(&[cmd, "--output-dir", out, "--seed", "0"])?;
        ensure(dir.path().join(format!("run-manifest-{cmd}.json")).exists(), || format!("{cmd} wrote no run manifest"))?;
    }
    let mut curves = Vec::new();
    for stage in ["pretrain", "finetune"] {
        let s = smoothed_curve(&dir.path().join(format!("{stage}-loss.json")))?;
        ensure(s.windows(2).all(|w| w[1] < w[0]), || format!("{stage} smoothed loss not decreasing: {s:?}"))?;
        curves.push(format!(
            "{stage} {}",
            s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(">")
        ));
    }
    let report = read_json(&dir.path().join("report.json"))?;
    let metric = &report["reports"][0];
    let value = metric["value"].as_f64().ok_or("report value missing")?;
    ensure(report["task"] == "summarization-python", || format!("unexpected report {report}"))?;
    ensure(metric["metric"] == "smooth_bleu4", || format!("unexpected metric {metric}"))?;
    ensure((0.0..=100.0).contains(&value), || format!("value {value} outside [0, 100]"))?;
    ensure(metric["counts"]["evaluated"] == 50, || format!("unexpected counts {metric}"))?;
    Ok(format!("{}; smooth BLEU-4 {value:.2} on 50 examples", curves.join("; ")))
}

fn checkpoint_round_trip() -> Check {
    let vocab = small_vocab();
    let fingerprint = vocab.fingerprint();
    let start = Checkpoint::fresh(ModelConfig::tiny(vocab.size()), 9, &fingerprint).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pairs: Vec<Pair> = random_pairs(&mut rng, 8, 300).into_iter().map(|(a, b)| (with_eos(a), with_eos(b))).collect();
    let train = TrainConfig {
        total_steps: 3,
        batch_size: 4,
        log_every: 0,
        ..Default::default()
    };
    let ckpt = finetune(&start, &MixtureSpec::single("t", pairs), &train, None).map_err(|e| e.to_string())?.checkpoint;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ckpt.save(&a).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&a, Some(&fingerprint)).map_err(|e| e.to_string())?;
    for (name, t) in &ckpt.params.arrays {
        let u = loaded.params.get(name);
        ensure(t.shape() == u.shape(), || format!("{name} shape changed"))?;
        ensure(t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("{name} not bit-identical")
        })?;
    }
    ensure(loaded.params == ckpt.params && loaded.optimizer == ckpt.optimizer && loaded.step == ckpt.step, || {
        "checkpoint state changed".into()
    })?;
    loaded.save(&b).map_err(|e| e.to_string())?;
    let mut files = 0;
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).expect("under a");
        ensure(fs::read(&entry).ok() == fs::read(b.join(rel)).ok(), || format!("{} differs on re-save", rel.display()))?;
        files += 1;
    }
    let err = Checkpoint::load(&a, Some(&"0".repeat(64))).err().ok_or("mismatched fingerprint accepted")?;
    ensure(err.code() == "VOCAB_MISMATCH", || format!("got {}", err.code()))?;
    Ok(format!("{files} files byte-identical after reload and re-save; fingerprint mismatch rejected"))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).expect("readable").flatten() {
        let p = entry.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

struct Criterion {
    number: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria = [
        Criterion { number: 1, name: "codec round trip", budget: Duration::from_secs(5), run: codec_round_trip },
        Criterion { number: 2, name: "tokenizer round trip", budget: Duration::from_secs(30), run: tokenizer_round_trip },
        Criterion { number: 3, name: "span corruption", budget: Duration::from_secs(30), run: span_corruption },
        Criterion { number: 4, name: "gradient check", budget: minutes(2), run: gradient_check },
        Criterion { number: 5, name: "tiny overfit", budget: minutes(10), run: tiny_overfit },
        Criterion { number: 6, name: "multi-task prefix", budget: minutes(15), run: prefix_mechanism },
        Criterion { number: 7, name: "metric oracles", budget: minutes(1), run: metric_oracles },
        Criterion { number: 8, name: "minilang", budget: minutes(1), run: minilang_checks },
        Criterion { number: 9, name: "end-to-end smoke", budget: minutes(30), run: end_to_end },
        Criterion { number: 10, name: "checkpoint round trip", budget: Duration::from_secs(10), run: checkpoint_round_trip },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.number)) {
        let t0 = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t0.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("over time budget {:?}: {detail}", c.budget)),
            other => other,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} [{:.1}s] {}: {detail}", c.number, elapsed.as_secs_f64(), c.name);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
