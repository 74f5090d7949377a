//! A small C/Java-like language: lexer, recursive-descent parser, pretty
//! printer and reaching-definition dataflow, used by the code-aware metrics.

mod ast;
mod dataflow;
mod generate;
mod lexer;
mod parser;

pub use ast::{subtrees, AstNode, NodeKind};
pub use dataflow::{dataflow, def_use_edges, DataflowEdge, DataflowGraph};
pub use generate::{random_program, GenConfig};
pub use lexer::{is_keyword, lex, LexToken, TokenKind, KEYWORDS};
pub use parser::{parse, pretty_print};

use crate::error::Result;

pub fn parse_code(code: &str) -> Result<AstNode> {
    parse(&lex(code)?)
}
