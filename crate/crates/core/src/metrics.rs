//! Evaluation metrics: corpus BLEU, smoothed sentence BLEU-4, exact match,
//! accuracy and CodeBLEU. Text is tokenized on whitespace.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minilang::{dataflow, parse_code, subtrees, KEYWORDS};

fn check_lengths(candidates: usize, references: usize) -> Result<()> {
    if candidates != references {
        return Err(Error::LengthMismatch { candidates, references });
    }
    if candidates == 0 {
        return Err(Error::Empty);
    }
    Ok(())
}

pub fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'a>(toks: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn clipped(cand: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Corpus BLEU in `[0, 100]` with uniform weights over orders `1..=max_n`.
pub fn bleu_corpus<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[T], max_n: usize) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    let pairs: Vec<(Vec<&str>, Vec<&str>)> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| (tokens(c.as_ref()), tokens(r.as_ref())))
        .collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = pairs
            .iter()
            .map(|(c, r)| clipped(c, r, n))
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.0.len()).sum();
    let r: usize = pairs.iter().map(|p| p.1.len()).sum();
    Ok(100.0 * brevity_penalty(c, r) * (log_sum / max_n as f64).exp())
}

/// Sentence BLEU-4 with add-one smoothing of orders 2..4, in `[0, 1]`.
pub fn sentence_bleu_smooth4(candidate: &str, reference: &str) -> f64 {
    let c = tokens(candidate);
    let r = tokens(reference);
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = clipped(&c, &r, n);
        let p = if n == 1 {
            m as f64 / t as f64
        } else {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    brevity_penalty(c.len(), r.len()) * (log_sum / 4.0).exp()
}

/// Mean smoothed sentence BLEU-4, times 100.
pub fn bleu_smooth4<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[T]) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| sentence_bleu_smooth4(c.as_ref(), r.as_ref()))
        .sum();
    Ok(100.0 * total / candidates.len() as f64)
}

/// Percentage of candidates equal to their reference after collapsing
/// whitespace.
pub fn exact_match<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[T]) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    let hits = candidates
        .iter()
        .zip(references)
        .filter(|(c, r)| tokens(c.as_ref()) == tokens(r.as_ref()))
        .count();
    Ok(100.0 * hits as f64 / candidates.len() as f64)
}

pub fn accuracy<T: PartialEq>(predicted: &[T], gold: &[T]) -> Result<f64> {
    check_lengths(predicted.len(), gold.len())?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
    /// Weight of keyword unigrams relative to other tokens.
    pub keyword_factor: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights {
            ngram: 0.25,
            weighted_ngram: 0.25,
            syntax: 0.25,
            dataflow: 0.25,
            keyword_factor: 5.0,
        }
    }
}

impl CodeBleuWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.ngram, self.weighted_ngram, self.syntax, self.dataflow];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.keyword_factor <= 0.0 {
            return Err(Error::InvalidWeights(format!("{w:?}")));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("{w:?} do not sum to 1")));
        }
        Ok(())
    }
}

/// Corpus BLEU-4 whose unigram precision weights keyword tokens by
/// `keyword_factor`. Returns a fraction in `[0, 1]`.
pub fn weighted_ngram_match(cands: &[Vec<&str>], refs: &[Vec<&str>], keyword_factor: f64) -> f64 {
    let weight = |t: &str| if KEYWORDS.contains(&t) { keyword_factor } else { 1.0 };
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut m, mut t) = (0.0, 0.0);
        for (c, r) in cands.iter().zip(refs) {
            if n == 1 {
                let cc = ngram_counts(c, 1);
                let rc = ngram_counts(r, 1);
                for (g, &k) in &cc {
                    let w = weight(g[0]);
                    m += w * k.min(rc.get(g).copied().unwrap_or(0)) as f64;
                    t += w * k as f64;
                }
            } else {
                let (mm, tt) = clipped(c, r, n);
                m += mm as f64;
                t += tt as f64;
            }
        }
        if m == 0.0 {
            return 0.0;
        }
        log_sum += (m / t).ln();
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    brevity_penalty(c, r) * (log_sum / 4.0).exp()
}

/// Syntax and dataflow match of one pair, or `None` if either side fails
/// to parse.
pub fn structural_match(candidate: &str, reference: &str) -> Option<(f64, f64)> {
    let cand = parse_code(candidate).ok()?;
    let reference = parse_code(reference).ok()?;
    let mut pool: HashMap<String, usize> = HashMap::new();
    for s in subtrees(&cand) {
        *pool.entry(s).or_insert(0) += 1;
    }
    let ref_trees = subtrees(&reference);
    let mut hits = 0;
    for s in &ref_trees {
        if let Some(k) = pool.get_mut(s) {
            if *k > 0 {
                *k -= 1;
                hits += 1;
            }
        }
    }
    let syntax = hits as f64 / ref_trees.len().max(1) as f64;
    let ref_flow = dataflow(&reference);
    let cand_flow = dataflow(&cand);
    let flow = if ref_flow.edges.is_empty() {
        1.0
    } else {
        ref_flow.edges.intersection(&cand_flow.edges).count() as f64 / ref_flow.edges.len() as f64
    };
    Some((syntax, flow))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub evaluated: usize,
    pub parse_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    /// In `[0, 100]`.
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<CodeBleuWeights>,
    pub counts: MetricCounts,
}

impl MetricReport {
    pub fn simple(task: &str, metric: &str, value: f64, evaluated: usize) -> Self {
        MetricReport {
            task: task.to_string(),
            metric: metric.to_string(),
            value,
            components: BTreeMap::new(),
            weights: None,
            counts: MetricCounts {
                evaluated,
                parse_failures: 0,
            },
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task={} metric={} value={:.2}", self.task, self.metric, self.value)?;
        for (k, v) in &self.components {
            write!(f, " {k}={v:.2}")?;
        }
        write!(f, " evaluated={}", self.counts.evaluated)?;
        if self.counts.parse_failures > 0 {
            write!(f, " parse_failures={}", self.counts.parse_failures)?;
        }
        Ok(())
    }
}

/// CodeBLEU: a weighted sum of n-gram, keyword-weighted n-gram, syntax
/// subtree and dataflow edge matches. Syntax and dataflow are averaged
/// over pairs; a pair where either side fails to parse scores 0 on both.
pub fn codebleu<S: AsRef<str> + Sync, T: AsRef<str> + Sync>(
    task: &str,
    candidates: &[S],
    references: &[T],
    weights: CodeBleuWeights,
) -> Result<MetricReport> {
    check_lengths(candidates.len(), references.len())?;
    weights.validate()?;
    let ngram = bleu_corpus(candidates, references, 4)? / 100.0;
    let ct: Vec<Vec<&str>> = candidates.iter().map(|c| tokens(c.as_ref())).collect();
    let rt: Vec<Vec<&str>> = references.iter().map(|r| tokens(r.as_ref())).collect();
    let weighted = weighted_ngram_match(&ct, &rt, weights.keyword_factor);
    let structural: Vec<Option<(f64, f64)>> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| structural_match(c.as_ref(), r.as_ref()))
        .collect();
    let n = structural.len() as f64;
    let failures = structural.iter().filter(|s| s.is_none()).count();
    let syntax = structural.iter().map(|s| s.map_or(0.0, |v| v.0)).sum::<f64>() / n;
    let flow = structural.iter().map(|s| s.map_or(0.0, |v| v.1)).sum::<f64>() / n;
    let composite = weights.ngram * ngram
        + weights.weighted_ngram * weighted
        + weights.syntax * syntax
        + weights.dataflow * flow;
    let components = BTreeMap::from([
        ("ngram".to_string(), ngram),
        ("weighted_ngram".to_string(), weighted),
        ("syntax".to_string(), syntax),
        ("dataflow".to_string(), flow),
    ]);
    Ok(MetricReport {
        task: task.to_string(),
        metric: "codebleu".to_string(),
        value: 100.0 * composite,
        components,
        weights: Some(weights),
        counts: MetricCounts {
            evaluated: candidates.len(),
            parse_failures: failures,
        },
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Clipped n-gram counts by exhaustive comparison, no hashing.
    fn oracle_clip(c: &[&str], r: &[&str], n: usize) -> (usize, usize) {
        if c.len() < n {
            return (0, 0);
        }
        let cg: Vec<&[&str]> = (0..=c.len() - n).map(|i| &c[i..i + n]).collect();
        let rg: Vec<&[&str]> = if r.len() >= n {
            (0..=r.len() - n).map(|i| &r[i..i + n]).collect()
        } else {
            Vec::new()
        };
        let mut used = vec![false; rg.len()];
        let mut m = 0;
        for g in &cg {
            if let Some(j) = (0..rg.len()).find(|&j| !used[j] && rg[j] == *g) {
                used[j] = true;
                m += 1;
            }
        }
        (m, cg.len())
    }

    fn oracle_bleu(cands: &[String], refs: &[String]) -> f64 {
        let mut logp = 0.0;
        let (mut cl, mut rl) = (0.0, 0.0);
        for (c, r) in cands.iter().zip(refs) {
            cl += c.split_whitespace().count() as f64;
            rl += r.split_whitespace().count() as f64;
        }
        for n in 1..=4 {
            let (mut m, mut t) = (0, 0);
            for (c, r) in cands.iter().zip(refs) {
                let cv: Vec<&str> = c.split_whitespace().collect();
                let rv: Vec<&str> = r.split_whitespace().collect();
                let (a, b) = oracle_clip(&cv, &rv, n);
                m += a;
                t += b;
            }
            if m == 0 {
                return 0.0;
            }
            logp += 0.25 * (m as f64 / t as f64).ln();
        }
        let bp = if cl >= rl { 1.0 } else { (1.0 - rl / cl).exp() };
        100.0 * bp * logp.exp()
    }

    #[test]
    fn identical_text_scores_100() {
        let s = ["a b c d e", "x y z w"];
        assert!((bleu_corpus(&s, &s, 4).unwrap() - 100.0).abs() < 1e-12);
        assert!((bleu_smooth4(&s, &s).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        assert_eq!(bleu_corpus(&["a b c d"], &["d c b a"], 4).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_brevity_example() {
        let got = bleu_corpus(&["a b c d"], &["a b c d e"], 4).unwrap();
        let want = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn smoothing_on_single_tokens() {
        assert!((bleu_smooth4(&["x"], &["x"]).unwrap() - 100.0).abs() < 1e-12);
        // p1 = 1/2, p2 = (0+1)/(1+1), p3 = p4 = 1, no brevity penalty.
        let got = sentence_bleu_smooth4("a b", "a c");
        assert!((got - (0.5f64 * 0.5).powf(0.25)).abs() < 1e-12);
        // Short candidate: every precision is 1, BP = exp(1 - 3/2).
        let got = sentence_bleu_smooth4("a b", "a b c");
        let want = (1.0f64 - 1.5).exp();
        assert!((got - want).abs() < 1e-12, "{got} {want}");
    }

    #[test]
    fn smoothed_bleu_ignores_pair_order() {
        let c = ["a b c", "d e", "f g h i"];
        let r = ["a b d", "d e f", "f g h i"];
        let a = bleu_smooth4(&c, &r).unwrap();
        let b = bleu_smooth4(&[c[2], c[0], c[1]], &[r[2], r[0], r[1]]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn exact_match_and_accuracy_counts() {
        assert_eq!(exact_match(&["a  b", "c"], &["a b", "c"]).unwrap(), 100.0);
        assert_eq!(exact_match(&["a", "c"], &["a", "d"]).unwrap(), 50.0);
        assert_eq!(exact_match(&["x"], &["y"]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 0, 1]).unwrap(), 50.0);
        assert_eq!(accuracy(&[1, 0], &[1, 0]).unwrap(), 100.0);
        assert!(matches!(accuracy::<u8>(&[], &[]), Err(Error::Empty)));
        assert!(matches!(
            exact_match(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { candidates: 1, references: 2 })
        ));
    }

    #[test]
    fn codebleu_identical_code() {
        let code = ["int f ( int x ) { int y = x + 1 ; return y ; }", "void g ( ) { a = 1 ; }"];
        let r = codebleu("t", &code, &code, CodeBleuWeights::default()).unwrap();
        assert!((r.value - 100.0).abs() < 1e-9);
        for v in r.components.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn codebleu_rename_keeps_structure() {
        let a = ["int f ( int x ) { int y = x * 2 ; while ( y > x ) { y = y - 1 ; } return y ; }"];
        let b = ["int f ( int p ) { int q = p * 2 ; while ( q > p ) { q = q - 1 ; } return q ; }"];
        let r = codebleu("t", &b, &a, CodeBleuWeights::default()).unwrap();
        assert_eq!(r.components["syntax"], 1.0);
        assert_eq!(r.components["dataflow"], 1.0);
        assert!(r.components["ngram"] < 1.0);
    }

    #[test]
    fn codebleu_composite_by_hand() {
        // Pair 1 parses on both sides; pair 2 has an unparseable candidate.
        let cands = ["a = 1 ; b = a ;", "a = = ;"];
        let refs = ["a = 1 ; b = a ;", "x = 2 ;"];
        let w = CodeBleuWeights {
            ngram: 0.1,
            weighted_ngram: 0.2,
            syntax: 0.3,
            dataflow: 0.4,
            keyword_factor: 5.0,
        };
        let r = codebleu("t", &cands, &refs, w).unwrap();
        assert_eq!(r.counts.parse_failures, 1);
        assert_eq!(r.components["syntax"], 0.5);
        assert_eq!(r.components["dataflow"], 0.5);
        let ngram = bleu_corpus(&cands, &refs, 4).unwrap() / 100.0;
        assert!((r.components["ngram"] - ngram).abs() < 1e-12);
        let want = 100.0 * (0.1 * ngram + 0.2 * r.components["weighted_ngram"] + 0.3 * 0.5 + 0.4 * 0.5);
        assert!((r.value - want).abs() < 1e-9);
    }

    #[test]
    fn keyword_weighting_changes_unigram_precision() {
        // Unigrams: keyword `return` counts 5, so 8 of 9 weighted hits.
        let c = vec![vec!["return", "x", "y", "z", "w"]];
        let r = vec![vec!["return", "x", "y", "z", "q"]];
        let p: [f64; 4] = [8.0 / 9.0, 3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0];
        let want = (p.iter().map(|v| v.ln()).sum::<f64>() / 4.0).exp();
        assert!((weighted_ngram_match(&c, &r, 5.0) - want).abs() < 1e-12);
        let plain = bleu_corpus(&["return x y z w"], &["return x y z q"], 4).unwrap() / 100.0;
        assert!((weighted_ngram_match(&c, &r, 1.0) - plain).abs() < 1e-12);
    }

    #[test]
    fn bad_weights_rejected() {
        let w = CodeBleuWeights {
            ngram: 0.5,
            ..CodeBleuWeights::default()
        };
        assert!(matches!(codebleu("t", &["a"], &["a"], w), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn report_json_keeps_full_precision() {
        let r = MetricReport::simple("t", "bleu", 1.0 / 3.0, 3);
        let s = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.value.to_bits(), r.value.to_bits());
        assert!(r.to_string().contains("value=0.33"));
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..9).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn corpus_bleu_matches_counting_oracle(
            pairs in prop::collection::vec((sentence(), sentence()), 1..6)
        ) {
            let (c, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            let got = bleu_corpus(&c, &r, 4).unwrap();
            prop_assert!((got - oracle_bleu(&c, &r)).abs() < 1e-9);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
        }

        #[test]
        fn wrong_extra_pair_never_raises_exact_match(
            pairs in prop::collection::vec((sentence(), sentence()), 1..6)
        ) {
            let (mut c, mut r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            let before = exact_match(&c, &r).unwrap();
            c.push("p".into());
            r.push("q".into());
            prop_assert!(exact_match(&c, &r).unwrap() <= before);
        }
    }
}
