//! Span corruption: mask random spans, replace each by the next sentinel,
//! and emit the sentinels followed by the masked tokens as the target.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::SentinelIds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub rate: f64,
    pub mean_span_length: usize,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            rate: 0.15,
            mean_span_length: 3,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!(
                "corruption rate {} outside [0, 1]",
                self.rate
            )));
        }
        if self.mean_span_length == 0 {
            return Err(Error::InvalidConfig("mean span length must be >= 1".into()));
        }
        Ok(())
    }

    /// Generator for record `index`, derived as `seed ^ index`.
    pub fn record_rng(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisingExample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub origin_len: usize,
}

/// Lengths of the masked spans and of the unmasked gaps around them.
#[derive(Debug)]
struct Layout {
    spans: Vec<usize>,
    gaps: Vec<usize>,
}

fn plan<R: Rng + ?Sized>(len: usize, cfg: &CorruptionConfig, budget: usize, rng: &mut R) -> Layout {
    let masked = ((len as f64 * cfg.rate).round() as usize).clamp(1, len);
    let wanted = ((len as f64 * cfg.rate / cfg.mean_span_length as f64).round() as usize).max(1);
    let unmasked = len - masked;
    // Interior gaps need at least one token so neighbouring spans stay apart.
    let n_spans = wanted.min(masked).min(unmasked + 1).min(budget).max(1);

    let max_len = 2 * cfg.mean_span_length - 1;
    let mut spans: Vec<usize> = (0..n_spans).map(|_| rng.gen_range(1..=max_len)).collect();
    let mut total: usize = spans.iter().sum();
    while total > masked {
        let i = rng.gen_range(0..n_spans);
        if spans[i] > 1 {
            spans[i] -= 1;
            total -= 1;
        }
    }
    while total < masked {
        let i = rng.gen_range(0..n_spans);
        spans[i] += 1;
        total += 1;
    }

    // Distribute the free unmasked tokens over n_spans + 1 gaps by choosing
    // n_spans cut points without replacement (stars and bars).
    let free = unmasked - (n_spans - 1);
    let mut cuts: Vec<usize> = sample(rng, free + n_spans, n_spans).into_vec();
    cuts.sort_unstable();
    let mut gaps = Vec::with_capacity(n_spans + 1);
    let mut prev: Option<usize> = None;
    for &c in &cuts {
        gaps.push(match prev {
            None => c,
            // free share c - p - 1, plus the mandatory separator token
            Some(p) => c - p,
        });
        prev = Some(c);
    }
    gaps.push(free + n_spans - 1 - cuts[n_spans - 1]);
    Layout { spans, gaps }
}

/// Corrupts `ids` with spans drawn from `rng`.
pub fn corrupt<R: Rng + ?Sized>(
    ids: &[u32],
    cfg: &CorruptionConfig,
    sentinels: SentinelIds,
    rng: &mut R,
) -> Result<DenoisingExample> {
    cfg.validate()?;
    if ids.is_empty() {
        return Err(Error::MalformedExample("cannot corrupt an empty sequence".into()));
    }
    if let Some(&s) = ids.iter().find(|&&i| sentinels.index_of(i).is_some()) {
        return Err(Error::SentinelInInput(s));
    }
    if cfg.rate == 0.0 {
        return Ok(DenoisingExample {
            input_ids: ids.to_vec(),
            target_ids: vec![sentinels.eos],
            origin_len: ids.len(),
        });
    }
    let layout = plan(ids.len(), cfg, sentinels.count, rng);
    let mut input = Vec::with_capacity(ids.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, &span) in layout.spans.iter().enumerate() {
        let gap = layout.gaps[k];
        input.extend_from_slice(&ids[pos..pos + gap]);
        pos += gap;
        let s = sentinels.get(k);
        input.push(s);
        target.push(s);
        target.extend_from_slice(&ids[pos..pos + span]);
        pos += span;
    }
    input.extend_from_slice(&ids[pos..]);
    target.push(sentinels.eos);
    Ok(DenoisingExample {
        input_ids: input,
        target_ids: target,
        origin_len: ids.len(),
    })
}

/// Reconstructs the uncorrupted sequence by splicing target spans back in.
pub fn splice(example: &DenoisingExample, sentinels: SentinelIds) -> Result<Vec<u32>> {
    let malformed = |m: &str| Error::MalformedExample(m.to_string());
    let (&last, body) = example
        .target_ids
        .split_last()
        .ok_or_else(|| malformed("empty target"))?;
    if last != sentinels.eos {
        return Err(malformed("target does not end with EOS"));
    }
    let mut spans: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        match sentinels.index_of(body[i]) {
            Some(k) if k == spans.len() => {
                let start = i + 1;
                let mut end = start;
                while end < body.len() && sentinels.index_of(body[end]).is_none() {
                    end += 1;
                }
                spans.push(&body[start..end]);
                i = end;
            }
            Some(_) => return Err(malformed("target sentinels out of order")),
            None => return Err(malformed("target does not start with a sentinel")),
        }
    }
    let mut out = Vec::with_capacity(example.origin_len);
    let mut next = 0;
    for &id in &example.input_ids {
        match sentinels.index_of(id) {
            Some(k) if k == next && k < spans.len() => {
                out.extend_from_slice(spans[k]);
                next += 1;
            }
            Some(_) => return Err(malformed("input and target sentinels disagree")),
            None => out.push(id),
        }
    }
    if next != spans.len() {
        return Err(malformed("target has spans absent from the input"));
    }
    if out.len() != example.origin_len {
        return Err(malformed("reconstructed length differs from origin_len"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: SentinelIds = SentinelIds {
        base: 100_000,
        count: 100,
        eos: 1,
    };

    fn cfg(rate: f64, mean: usize, seed: u64) -> CorruptionConfig {
        CorruptionConfig {
            rate,
            mean_span_length: mean,
            seed,
        }
    }

    /// Independent reconstruction: substitute each input sentinel by the
    /// tokens that follow the same sentinel in the target.
    fn oracle_splice(ex: &DenoisingExample) -> Vec<u32> {
        let mut out = Vec::new();
        for &id in &ex.input_ids {
            if id >= S.base {
                let at = ex.target_ids.iter().position(|&t| t == id).unwrap();
                out.extend(
                    ex.target_ids[at + 1..]
                        .iter()
                        .take_while(|&&t| t < S.base && t != S.eos),
                );
            } else {
                out.push(id);
            }
        }
        out
    }

    fn ids(n: usize) -> Vec<u32> {
        (0..n as u32).map(|i| 10 + i).collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let x = ids(10);
        let ex = corrupt(&x, &cfg(0.0, 3, 1), S, &mut cfg(0.0, 3, 1).record_rng(0)).unwrap();
        assert_eq!(ex.input_ids, x);
        assert_eq!(ex.target_ids, vec![S.eos]);
        assert_eq!(splice(&ex, S).unwrap(), x);
    }

    #[test]
    fn full_rate_single_span() {
        let c = cfg(1.0, 3, 5);
        let ex = corrupt(&[7, 8, 9], &c, S, &mut c.record_rng(0)).unwrap();
        assert_eq!(ex.input_ids, vec![S.get(0)]);
        assert_eq!(ex.target_ids, vec![S.get(0), 7, 8, 9, S.eos]);
    }

    #[test]
    fn seed_42_len_10() {
        let c = cfg(0.3, 3, 42);
        let x = ids(10);
        let ex = corrupt(&x, &c, S, &mut c.record_rng(0)).unwrap();
        let sentinels = ex.input_ids.iter().filter(|&&i| i >= S.base).count();
        assert_eq!(sentinels, 1);
        assert_eq!(ex.target_ids.len(), 1 + 3 + 1);
        assert_eq!(oracle_splice(&ex), x);
        assert_eq!(splice(&ex, S).unwrap(), x);
    }

    #[test]
    fn rejects_sentinel_input() {
        let c = CorruptionConfig::default();
        let err = corrupt(&[1, S.get(3)], &c, S, &mut c.record_rng(0)).unwrap_err();
        assert_eq!(err.code(), "SENTINEL_IN_INPUT");
    }

    #[test]
    fn swapped_sentinels_are_malformed() {
        let ex = DenoisingExample {
            input_ids: vec![5, S.get(0), 6, S.get(1)],
            target_ids: vec![S.get(1), 7, S.get(0), 8, S.eos],
            origin_len: 4,
        };
        assert_eq!(splice(&ex, S).unwrap_err().code(), "MALFORMED_EXAMPLE");
    }

    #[test]
    fn sentinel_budget_respected() {
        let c = cfg(0.5, 1, 3);
        let x = ids(1000);
        let ex = corrupt(&x, &c, S, &mut c.record_rng(0)).unwrap();
        let n = ex.input_ids.iter().filter(|&&i| i >= S.base).count();
        assert_eq!(n, 100);
        assert_eq!(splice(&ex, S).unwrap(), x);
    }

    #[test]
    fn deterministic() {
        let c = cfg(0.15, 3, 9);
        let x = ids(200);
        let a = corrupt(&x, &c, S, &mut c.record_rng(4)).unwrap();
        let b = corrupt(&x, &c, S, &mut c.record_rng(4)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn reconstruction_and_ordering(
            len in 1usize..120,
            rate in prop_oneof![Just(0.0), Just(0.15), Just(0.5), Just(1.0), 0.0f64..1.0],
            mean in 1usize..6,
            seed in any::<u64>(),
        ) {
            let c = cfg(rate, mean, seed);
            let x = ids(len);
            let ex = corrupt(&x, &c, S, &mut c.record_rng(0)).unwrap();
            prop_assert_eq!(splice(&ex, S).unwrap(), x.clone());
            prop_assert_eq!(oracle_splice(&ex), x);
            let in_s: Vec<u32> = ex.input_ids.iter().copied().filter(|&i| i >= S.base).collect();
            let tg_s: Vec<u32> = ex.target_ids.iter().copied().filter(|&i| i >= S.base).collect();
            prop_assert_eq!(&in_s, &tg_s);
            prop_assert!(in_s.windows(2).all(|w| w[1] == w[0] + 1));
            if rate > 0.0 {
                let masked = ex.target_ids.len() - in_s.len() - 1;
                let expected = ((len as f64 * rate).round() as usize).clamp(1, len);
                prop_assert_eq!(masked, expected);
                // adjacent spans are separated whenever enough tokens remain
                let no_adjacent = ex.input_ids.windows(2).all(|w| !(w[0] >= S.base && w[1] >= S.base));
                prop_assert!(no_adjacent);
            }
        }
    }
}
