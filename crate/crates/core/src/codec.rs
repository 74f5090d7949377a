//! Reversible rewriting of code glyphs into space-padded marker words.
//!
//! General-text subword vocabularies tend to lack symbols such as `{` or `$`.
//! [`CodecTable::normalize`] replaces each such glyph with ` MARKER ` and
//! [`CodecTable::denormalize`] removes exactly the padding it introduced, so
//! the round trip is character-exact for any text accepted by
//! [`CodecTable::validate`].

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

const HEADER_PREFIX: &str = "#codec-v";

/// Bijective glyph to marker-word table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecTable {
    entries: Vec<(char, String)>,
    version: u32,
    by_glyph: HashMap<char, usize>,
    by_marker: HashMap<String, usize>,
}

impl Default for CodecTable {
    fn default() -> Self {
        let entries = [
            ('{', "OBRACE"),
            ('}', "CBRACE"),
            ('[', "OBRACK"),
            (']', "CBRACK"),
            ('$', "DOLLARTOK"),
            ('^', "CARETTOK"),
            ('~', "TILDETOK"),
            ('`', "BTICKTOK"),
            ('\\', "BSLASHTOK"),
            ('|', "VBARTOK"),
            ('<', "LANGLETOK"),
            ('>', "RANGLETOK"),
        ]
        .into_iter()
        .map(|(g, m)| (g, m.to_string()))
        .collect();
        CodecTable::new(entries, 1).expect("default codec table is valid")
    }
}

impl CodecTable {
    pub fn new(entries: Vec<(char, String)>, version: u32) -> Result<Self> {
        let mut by_glyph = HashMap::new();
        let mut by_marker = HashMap::new();
        for (i, (glyph, marker)) in entries.iter().enumerate() {
            if marker.is_empty() || !marker.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                return Err(Error::InvalidConfig(format!(
                    "marker `{marker}` must be non-empty uppercase ASCII letters or underscores"
                )));
            }
            if glyph.is_whitespace() || glyph.is_ascii_uppercase() || *glyph == '_' {
                return Err(Error::InvalidConfig(format!(
                    "glyph {glyph:?} may not be whitespace or a marker character"
                )));
            }
            if by_glyph.insert(*glyph, i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate glyph {glyph:?}")));
            }
            if by_marker.insert(marker.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate marker `{marker}`")));
            }
        }
        for (_, a) in &entries {
            for (_, b) in &entries {
                if a != b && b.contains(a.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "marker `{a}` is a substring of `{b}`"
                    )));
                }
            }
        }
        Ok(CodecTable {
            entries,
            version,
            by_glyph,
            by_marker,
        })
    }

    pub fn entries(&self) -> &[(char, String)] {
        &self.entries
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn is_glyph(&self, c: char) -> bool {
        self.by_glyph.contains_key(&c)
    }

    pub fn marker_for(&self, glyph: char) -> Option<&str> {
        self.by_glyph.get(&glyph).map(|&i| self.entries[i].1.as_str())
    }

    pub fn glyph_for(&self, marker: &str) -> Option<char> {
        self.by_marker.get(marker).map(|&i| self.entries[i].0)
    }

    /// Returns true iff `text` contains no standalone marker word.
    ///
    /// A marker is standalone when both of its neighbours are whitespace,
    /// a table glyph, or the edge of the string. Those are exactly the
    /// occurrences that `denormalize` could mistake for inserted markers.
    pub fn validate(&self, text: &str) -> bool {
        self.find_standalone_marker(text).is_none()
    }

    fn find_standalone_marker<'a>(&self, text: &'a str) -> Option<&'a str> {
        text.split(|c: char| c.is_whitespace() || self.is_glyph(c))
            .find(|run| self.by_marker.contains_key(*run))
    }

    /// Replaces every glyph with its space-padded marker.
    pub fn normalize(&self, text: &str) -> Result<String> {
        if let Some(marker) = self.find_standalone_marker(text) {
            return Err(Error::ReservedMarkerPresent {
                marker: marker.to_string(),
            });
        }
        let mut out = String::with_capacity(text.len() + text.len() / 4);
        for c in text.chars() {
            match self.marker_for(c) {
                Some(marker) => {
                    out.push(' ');
                    out.push_str(marker);
                    out.push(' ');
                }
                None => out.push(c),
            }
        }
        Ok(out)
    }

    /// Inverse of [`normalize`](Self::normalize). Unknown words pass through.
    pub fn denormalize(&self, text: &str) -> String {
        let bytes = text.as_bytes();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        // Whether the space immediately before `i` was eaten as trailing padding.
        let mut prev_consumed = false;
        while i < bytes.len() {
            if bytes[i] == b' ' {
                out.push(' ');
                prev_consumed = false;
                i += 1;
                continue;
            }
            let end = text[i..].find(' ').map_or(text.len(), |off| i + off);
            let run = &text[i..end];
            let left_ok = i == 0 || !prev_consumed;
            match self.glyph_for(run) {
                Some(glyph) if left_ok => {
                    if i > 0 {
                        out.pop();
                    }
                    out.push(glyph);
                    if end < text.len() {
                        i = end + 1;
                        prev_consumed = true;
                    } else {
                        i = end;
                    }
                }
                _ => {
                    out.push_str(run);
                    prev_consumed = false;
                    i = end;
                }
            }
        }
        out
    }

    /// Serializes as `#codec-v<version>` followed by `<glyph>\t<marker>` lines.
    pub fn to_file_string(&self) -> String {
        let mut s = format!("{HEADER_PREFIX}{}\n", self.version);
        for (glyph, marker) in &self.entries {
            let _ = writeln!(s, "{glyph}\t{marker}");
        }
        s
    }

    pub fn from_file_str(content: &str) -> Result<Self> {
        let mut lines = content.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty codec table".into()))?;
        let version = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::Format(format!("bad codec header `{header}`")))?;
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (glyph, marker) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("codec line {} lacks a tab", n + 2)))?;
            let mut chars = glyph.chars();
            let g = match (chars.next(), chars.next()) {
                (Some(g), None) => g,
                _ => {
                    return Err(Error::Format(format!(
                        "codec line {}: glyph must be one character",
                        n + 2
                    )))
                }
            };
            entries.push((g, marker.to_string()));
        }
        CodecTable::new(entries, version)
    }
}
