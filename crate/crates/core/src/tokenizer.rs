//! Byte-pair-encoding subword vocabulary with byte fallback and T5-style
//! sentinel tokens.
//!
//! Layout of the id space:
//!
//! | ids                         | pieces                               |
//! |-----------------------------|--------------------------------------|
//! | 0, 1, 2                     | `<pad>`, `</s>`, `<unk>`             |
//! | 3 ..= 258                   | the 256 single bytes                 |
//! | 259 .. piece_count          | learned merges, in merge order       |
//! | piece_count .. size         | `<extra_id_0>` ..= `<extra_id_99>`   |
//!
//! Text is pre-tokenized into words that begin at a whitespace run, so the
//! leading whitespace acts as the word-boundary marker. It is rendered as
//! `▁` in the vocabulary file.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const BYTE_BASE: u32 = 3;
pub const SENTINEL_COUNT: usize = 100;
/// Smallest admissible `target_size`: the three control tokens plus all bytes.
pub const MIN_PIECES: usize = BYTE_BASE as usize + 256;

const SPECIAL_NAMES: [&str; 3] = ["<pad>", "</s>", "<unk>"];
const BOUNDARY_GLYPH: char = '\u{2581}';
pub const VOCAB_HEADER: &str = "#vocab-v1";

/// Truncates `ids` to `max_len - 1` tokens and appends EOS. The flag
/// reports whether anything was cut.
pub fn with_eos(ids: &[u32], max_len: usize) -> (Vec<u32>, bool) {
    let keep = ids.len().min(max_len.saturating_sub(1));
    let mut out = Vec::with_capacity(keep + 1);
    out.extend_from_slice(&ids[..keep]);
    out.push(EOS_ID);
    (out, keep < ids.len())
}

pub fn sentinel_literal(k: usize) -> String {
    format!("<extra_id_{k}>")
}

/// Immutable subword inventory. Cheap to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// Byte content of every non-sentinel piece; empty for control tokens.
    pieces: Vec<Vec<u8>>,
    piece_to_id: HashMap<Vec<u8>, u32>,
    merges: HashMap<(u32, u32), u32>,
}

impl Vocabulary {
    fn from_pieces(pieces: Vec<Vec<u8>>) -> Result<Self> {
        if pieces.len() < MIN_PIECES {
            return Err(Error::Format(format!(
                "vocabulary has {} pieces, fewer than {MIN_PIECES}",
                pieces.len()
            )));
        }
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        for (id, p) in pieces.iter().enumerate().skip(BYTE_BASE as usize) {
            if id < MIN_PIECES && p.len() != 1 {
                return Err(Error::Format(format!("id {id} must be a single byte")));
            }
            if piece_to_id.insert(p.clone(), id as u32).is_some() {
                return Err(Error::Format(format!("duplicate piece at id {id}")));
            }
        }
        let mut merges = HashMap::new();
        for (id, p) in pieces.iter().enumerate().skip(MIN_PIECES) {
            for split in 1..p.len() {
                if let (Some(&l), Some(&r)) =
                    (piece_to_id.get(&p[..split]), piece_to_id.get(&p[split..]))
                {
                    merges.insert((l, r), id as u32);
                }
            }
        }
        Ok(Vocabulary {
            pieces,
            piece_to_id,
            merges,
        })
    }

    /// Total number of ids including sentinels.
    pub fn size(&self) -> usize {
        self.pieces.len() + SENTINEL_COUNT
    }

    /// Number of non-sentinel pieces (control tokens, bytes and merges).
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn sentinel_base(&self) -> u32 {
        self.pieces.len() as u32
    }

    pub fn sentinel(&self, k: usize) -> u32 {
        assert!(k < SENTINEL_COUNT, "sentinel index {k} out of range");
        self.sentinel_base() + k as u32
    }

    pub fn is_sentinel(&self, id: u32) -> bool {
        id >= self.sentinel_base() && (id as usize) < self.size()
    }

    pub fn sentinels(&self) -> SentinelIds {
        SentinelIds {
            base: self.sentinel_base(),
            count: SENTINEL_COUNT,
            eos: EOS_ID,
        }
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.piece_to_id.get(bytes).copied()
    }

    /// Byte content of a learned or byte piece.
    pub fn piece_bytes(&self, id: u32) -> Option<&[u8]> {
        if id >= BYTE_BASE && (id as usize) < self.pieces.len() {
            Some(&self.pieces[id as usize])
        } else {
            None
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            match find_sentinel(rest) {
                Some((start, end, k)) => {
                    self.encode_plain(&rest[..start], &mut out);
                    out.push(self.sentinel(k));
                    rest = &rest[end..];
                }
                None => {
                    self.encode_plain(rest, &mut out);
                    break;
                }
            }
        }
        out
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<u32>) {
        for word in split_words(text.as_bytes()) {
            self.encode_word(word, out);
        }
    }

    fn encode_word(&self, word: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = word.iter().map(|&b| BYTE_BASE + b as u32).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&m| (m, w[0], w[1])))
                .min();
            let Some((merged, l, r)) = best else { break };
            symbols = merge_pair(&symbols, l, r, merged);
        }
        out.extend(symbols);
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                PAD_ID | EOS_ID => {}
                UNK_ID => bytes.extend_from_slice(SPECIAL_NAMES[2].as_bytes()),
                _ if (id as usize) < self.pieces.len() => {
                    bytes.extend_from_slice(&self.pieces[id as usize])
                }
                _ if (id as usize) < self.size() => bytes.extend_from_slice(
                    sentinel_literal((id - self.sentinel_base()) as usize).as_bytes(),
                ),
                _ => {
                    return Err(Error::IdOutOfRange {
                        id,
                        size: self.size(),
                    })
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Human-readable rendering of a single id, used in logs and the file.
    pub fn display_piece(&self, id: u32) -> String {
        let i = id as usize;
        if i < SPECIAL_NAMES.len() {
            SPECIAL_NAMES[i].to_string()
        } else if i < self.pieces.len() {
            escape_piece(&self.pieces[i])
        } else {
            sentinel_literal(i - self.pieces.len())
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("{VOCAB_HEADER} size={}\n", self.size());
        for id in 0..self.size() {
            let _ = writeln!(s, "{}", self.display_piece(id as u32));
        }
        s
    }

    pub fn from_file_str(content: &str) -> Result<Self> {
        let mut lines = content.split('\n');
        let header = lines.next().unwrap_or_default();
        let size: usize = header
            .strip_prefix(VOCAB_HEADER)
            .and_then(|r| r.trim().strip_prefix("size="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad vocabulary header `{header}`")))?;
        let body: Vec<&str> = lines.collect();
        if body.len() < size || body[size..].iter().any(|l| !l.is_empty()) {
            return Err(Error::Format(format!(
                "vocabulary declares {size} pieces but has {} lines",
                body.len()
            )));
        }
        if size < MIN_PIECES + SENTINEL_COUNT {
            return Err(Error::Format(format!("vocabulary size {size} too small")));
        }
        let piece_count = size - SENTINEL_COUNT;
        let mut pieces = Vec::with_capacity(piece_count);
        for (id, line) in body[..size].iter().enumerate() {
            if id < SPECIAL_NAMES.len() {
                if *line != SPECIAL_NAMES[id] {
                    return Err(Error::Format(format!("id {id} must be `{}`", SPECIAL_NAMES[id])));
                }
                pieces.push(Vec::new());
            } else if id < piece_count {
                pieces.push(unescape_piece(line)?);
            } else if *line != sentinel_literal(id - piece_count) {
                return Err(Error::Format(format!("id {id} must be a sentinel")));
            }
        }
        Vocabulary::from_pieces(pieces)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

/// Ids a denoiser needs to know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentinelIds {
    pub base: u32,
    pub count: usize,
    pub eos: u32,
}

impl SentinelIds {
    pub fn get(&self, k: usize) -> u32 {
        self.base + k as u32
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        (id >= self.base && ((id - self.base) as usize) < self.count).then(|| (id - self.base) as usize)
    }
}

fn find_sentinel(text: &str) -> Option<(usize, usize, usize)> {
    let mut from = 0;
    while let Some(off) = text[from..].find("<extra_id_") {
        let start = from + off;
        let digits_start = start + "<extra_id_".len();
        let digits: &str = &text[digits_start..];
        let n_digits = digits.bytes().take_while(u8::is_ascii_digit).count();
        let valid_digits = n_digits == 1 || (n_digits == 2 && !digits.starts_with('0'));
        if valid_digits && digits[n_digits..].starts_with('>') {
            let k: usize = digits[..n_digits].parse().expect("ascii digits");
            return Some((start, digits_start + n_digits + 1, k));
        }
        from = start + 1;
    }
    None
}

/// Splits into words that start at each maximal whitespace run.
fn split_words(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let mut i = start;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let word = &bytes[start..i];
        start = i;
        Some(word)
    })
}

fn merge_pair(symbols: &[u32], l: u32, r: u32, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

fn escape_piece(bytes: &[u8]) -> String {
    let mut s = String::new();
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            match c {
                ' ' => s.push(BOUNDARY_GLYPH),
                '\\' => s.push_str("\\\\"),
                BOUNDARY_GLYPH => s.push_str("\\xE2\\x96\\x81"),
                c if c.is_control() => {
                    let mut buf = [0u8; 4];
                    for b in c.encode_utf8(&mut buf).bytes() {
                        let _ = write!(s, "\\x{b:02X}");
                    }
                }
                c => s.push(c),
            }
        }
        for b in chunk.invalid() {
            let _ = write!(s, "\\x{b:02X}");
        }
    }
    s
}

fn unescape_piece(line: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            BOUNDARY_GLYPH => out.push(b' '),
            '\\' => match chars.next() {
                Some('\\') => out.push(b'\\'),
                Some('x') => {
                    let hex: String = chars.by_ref().take(2).collect();
                    let b = u8::from_str_radix(&hex, 16)
                        .map_err(|_| Error::Format(format!("bad escape in piece `{line}`")))?;
                    out.push(b);
                }
                _ => return Err(Error::Format(format!("bad escape in piece `{line}`"))),
            },
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Format("empty piece".into()));
    }
    Ok(out)
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: usize,
    tie: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.tie.cmp(&other.tie))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Trains a vocabulary of `target_size` non-sentinel pieces.
///
/// Merges the most frequent adjacent pair (ties broken by the byte content
/// of the left then right piece) until the target is reached or no pair
/// occurs at least twice.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let empty = || Error::CorpusEmpty {
        target: target_size,
        minimum: MIN_PIECES,
    };
    if target_size < MIN_PIECES {
        return Err(empty());
    }
    let mut word_freq: HashMap<Vec<u8>, usize> = HashMap::new();
    for text in corpus {
        let text = text.as_ref();
        let mut rest = text;
        // sentinel literals never take part in merges
        while let Some((start, end, _)) = find_sentinel(rest) {
            for w in split_words(rest[..start].as_bytes()) {
                *word_freq.entry(w.to_vec()).or_default() += 1;
            }
            rest = &rest[end..];
        }
        for w in split_words(rest.as_bytes()) {
            *word_freq.entry(w.to_vec()).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(empty());
    }
    let mut sorted: Vec<(Vec<u8>, usize)> = word_freq.into_iter().collect();
    sorted.sort_unstable();
    let freqs: Vec<usize> = sorted.iter().map(|(_, f)| *f).collect();
    let mut words: Vec<Vec<u32>> = sorted
        .into_iter()
        .map(|(w, _)| w.iter().map(|&b| BYTE_BASE + b as u32).collect())
        .collect();

    let mut pieces: Vec<Vec<u8>> = vec![Vec::new(); BYTE_BASE as usize];
    pieces.extend((0..=255u8).map(|b| vec![b]));
    let mut piece_ids: HashMap<Vec<u8>, u32> = pieces
        .iter()
        .enumerate()
        .skip(BYTE_BASE as usize)
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
    let mut occurrences: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += freqs[wi];
            occurrences.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let candidate = |pieces: &[Vec<u8>], pair: (u32, u32), count: usize| Candidate {
        count,
        tie: Reverse((pieces[pair.0 as usize].clone(), pieces[pair.1 as usize].clone())),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(&pieces, pair, count))
        .collect();

    while pieces.len() < target_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            if current > 0 {
                heap.push(candidate(&pieces, top.pair, current));
            }
            continue;
        }
        if current < 2 {
            break;
        }
        let (l, r) = top.pair;
        let mut bytes = pieces[l as usize].clone();
        bytes.extend_from_slice(&pieces[r as usize]);
        let merged = match piece_ids.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                piece_ids.insert(bytes.clone(), id);
                pieces.push(bytes);
                id
            }
        };
        let mut touched: Vec<usize> = occurrences.remove(&top.pair).unwrap_or_default().into_iter().collect();
        touched.sort_unstable();
        let mut changed: HashSet<(u32, u32)> = HashSet::new();
        for wi in touched {
            let old = &words[wi];
            if !old.windows(2).any(|p| p[0] == l && p[1] == r) {
                continue;
            }
            let new = merge_pair(old, l, r, merged);
            let f = freqs[wi];
            for p in old.windows(2) {
                let key = (p[0], p[1]);
                if let Some(c) = pair_counts.get_mut(&key) {
                    *c -= f;
                }
                changed.insert(key);
            }
            for p in new.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += f;
                occurrences.entry(key).or_default().insert(wi);
                changed.insert(key);
            }
            words[wi] = new;
        }
        pair_counts.retain(|_, c| *c > 0);
        for key in changed {
            if let Some(&c) = pair_counts.get(&key) {
                heap.push(candidate(&pieces, key, c));
            }
        }
    }
    Vocabulary::from_pieces(pieces)
}
