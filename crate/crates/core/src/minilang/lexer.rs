use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Integer,
    String,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexToken {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset of the first character.
    pub position: usize,
}

pub const KEYWORDS: &[&str] = &[
    "if", "else", "while", "return", "new", "this", "true", "false", "null", "void", "int", "long", "short", "byte",
    "char", "float", "double", "boolean", "public", "private", "protected", "static", "final",
];

/// Longest first, so the scan below implements maximal munch.
const OPERATORS: &[&str] = &[
    "&&", "||", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "++", "--", "=", "<", ">", "+", "-", "*", "/",
    "%", "!", "&", "|", "^",
];

const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ',', ';', '.'];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Splits `code` into tokens; whitespace and `//`/`/* */` comments are
/// skipped.
pub fn lex(code: &str) -> Result<Vec<LexToken>> {
    let bytes = code.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if code[i..].starts_with("//") {
            i = code[i..].find('\n').map_or(bytes.len(), |n| i + n);
            continue;
        }
        if code[i..].starts_with("/*") {
            i = code[i + 2..].find("*/").map_or(bytes.len(), |n| i + 2 + n + 2);
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            if is_keyword(&code[start..i]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            TokenKind::Integer
        } else if c == b'"' || c == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != c {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            if i >= bytes.len() {
                return Err(Error::Lex { pos: start, ch: c as char });
            }
            i += 1;
            TokenKind::String
        } else if let Some(op) = OPERATORS.iter().find(|op| code[i..].starts_with(*op)) {
            i += op.len();
            TokenKind::Operator
        } else if PUNCTUATION.contains(&(c as char)) {
            i += 1;
            TokenKind::Punctuation
        } else {
            let ch = code[i..].chars().next().expect("non-empty remainder");
            return Err(Error::Lex { pos: i, ch });
        };
        out.push(LexToken {
            kind,
            text: code[start..i].to_string(),
            position: start,
        });
    }
    Ok(out)
}
