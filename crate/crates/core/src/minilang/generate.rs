//! Random syntax trees drawn from the grammar, for property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use super::ast::{AstNode, NodeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub functions: usize,
    pub statements: usize,
    pub expr_depth: usize,
    pub variables: usize,
    pub allow_if: bool,
    pub allow_while: bool,
    /// Restricts expressions to names, literals and binary operators.
    pub simple_expressions: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            functions: 2,
            statements: 5,
            expr_depth: 3,
            variables: 5,
            allow_if: true,
            allow_while: true,
            simple_expressions: false,
        }
    }
}

const TYPES: &[&str] = &["int", "boolean", "double", "String", "int [ ]", "Node"];
const BIN_OPS: &[&str] = &[
    "||", "&&", "==", "!=", "<", "<=", ">", ">=", "+", "-", "*", "/", "%",
];

fn name(k: usize) -> AstNode {
    AstNode::leaf(NodeKind::Name, format!("v{k}"))
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    cfg: &'r GenConfig,
}

impl<R: Rng> Gen<'_, R> {
    fn var(&mut self) -> AstNode {
        name(self.rng.gen_range(0..self.cfg.variables.max(1)))
    }

    fn ty(&mut self) -> AstNode {
        AstNode::leaf(NodeKind::Type, *TYPES.choose(self.rng).expect("non-empty"))
    }

    fn literal(&mut self) -> AstNode {
        let text = match self.rng.gen_range(0..4) {
            0 => format!("\"s{}\"", self.rng.gen_range(0..10)),
            1 => ["true", "false", "null"].choose(self.rng).expect("non-empty").to_string(),
            _ => self.rng.gen_range(0..100).to_string(),
        };
        AstNode::leaf(NodeKind::Literal, text)
    }

    fn expr(&mut self, depth: usize) -> AstNode {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return if self.rng.gen_bool(0.6) { self.var() } else { self.literal() };
        }
        let choice = if self.cfg.simple_expressions { 0 } else { self.rng.gen_range(0..7) };
        match choice {
            0 | 1 => {
                let op = *BIN_OPS.choose(self.rng).expect("non-empty");
                AstNode::new(NodeKind::BinOp, op, vec![self.expr(depth - 1), self.expr(depth - 1)])
            }
            2 => {
                let op = if self.rng.gen_bool(0.5) { "!" } else { "-" };
                AstNode::new(NodeKind::Unary, op, vec![self.expr(depth - 1)])
            }
            3 => {
                let callee = if self.rng.gen_bool(0.5) {
                    AstNode::leaf(NodeKind::Name, format!("f{}", self.rng.gen_range(0..3)))
                } else {
                    AstNode::new(
                        NodeKind::Field,
                        "",
                        vec![self.var(), AstNode::leaf(NodeKind::Name, "m")],
                    )
                };
                let mut children = vec![callee];
                for _ in 0..self.rng.gen_range(0..3) {
                    children.push(self.expr(depth - 1));
                }
                AstNode::new(NodeKind::Call, "", children)
            }
            4 => {
                let object = if self.rng.gen_bool(0.5) {
                    AstNode::leaf(NodeKind::This, "this")
                } else {
                    self.var()
                };
                AstNode::new(NodeKind::Field, "", vec![object, AstNode::leaf(NodeKind::Name, "fld")])
            }
            5 => AstNode::new(NodeKind::Index, "", vec![self.var(), self.expr(depth - 1)]),
            _ => {
                let mut children = vec![AstNode::leaf(NodeKind::Type, "Node")];
                for _ in 0..self.rng.gen_range(0..2) {
                    children.push(self.expr(depth - 1));
                }
                AstNode::new(NodeKind::New, "", children)
            }
        }
    }

    fn block(&mut self, n: usize, depth: usize) -> AstNode {
        let stmts = (0..n).map(|_| self.statement(depth)).collect();
        AstNode::new(NodeKind::Block, "", stmts)
    }

    fn small_block(&mut self, depth: usize) -> AstNode {
        let n = self.rng.gen_range(1..3);
        self.block(n, depth)
    }

    fn statement(&mut self, depth: usize) -> AstNode {
        let d = self.cfg.expr_depth;
        let roll = self.rng.gen_range(0..10);
        match roll {
            0 if self.cfg.allow_if && depth > 0 => {
                let mut children = vec![self.expr(d), self.small_block(depth - 1)];
                if self.rng.gen_bool(0.5) {
                    children.push(self.small_block(depth - 1));
                }
                AstNode::new(NodeKind::If, "", children)
            }
            1 if self.cfg.allow_while && depth > 0 => {
                let body = self.small_block(depth - 1);
                AstNode::new(NodeKind::While, "", vec![self.expr(d), body])
            }
            2 => {
                let mut children = vec![self.ty(), self.var()];
                if self.rng.gen_bool(0.7) {
                    children.push(self.expr(d));
                }
                AstNode::new(NodeKind::Decl, "", children)
            }
            3 if !self.cfg.simple_expressions => {
                let op = if self.rng.gen_bool(0.5) { "++" } else { "--" };
                AstNode::new(NodeKind::Assign, op, vec![self.var()])
            }
            4 if !self.cfg.simple_expressions => {
                let target = if self.rng.gen_bool(0.5) {
                    AstNode::new(
                        NodeKind::Field,
                        "",
                        vec![AstNode::leaf(NodeKind::This, "this"), self.var()],
                    )
                } else {
                    AstNode::new(NodeKind::Index, "", vec![self.var(), self.expr(1)])
                };
                AstNode::new(NodeKind::Assign, "=", vec![target, self.expr(d)])
            }
            5 => {
                let children = if self.rng.gen_bool(0.8) { vec![self.expr(d)] } else { Vec::new() };
                AstNode::new(NodeKind::Return, "", children)
            }
            6 => AstNode::new(NodeKind::ExprStmt, "", vec![self.expr(d)]),
            _ => {
                let op = if self.cfg.simple_expressions || self.rng.gen_bool(0.7) {
                    "="
                } else {
                    *["+=", "-=", "*="].choose(self.rng).expect("non-empty")
                };
                AstNode::new(NodeKind::Assign, op, vec![self.var(), self.expr(d)])
            }
        }
    }

    fn function(&mut self, k: usize) -> AstNode {
        let params = (0..self.rng.gen_range(0..3))
            .map(|_| AstNode::new(NodeKind::Param, "", vec![self.ty(), self.var()]))
            .collect();
        AstNode::new(
            NodeKind::Function,
            "",
            vec![
                self.ty(),
                AstNode::leaf(NodeKind::Name, format!("fn{k}")),
                AstNode::new(NodeKind::Params, "", params),
                self.block(self.cfg.statements, 2),
            ],
        )
    }
}

/// A random program: `cfg.functions` functions followed by, when there are
/// none, `cfg.statements` top-level statements.
pub fn random_program<R: Rng>(rng: &mut R, cfg: &GenConfig) -> AstNode {
    let mut g = Gen { rng, cfg };
    let items = if cfg.functions == 0 {
        g.block(cfg.statements, 1).children
    } else {
        (0..cfg.functions).map(|k| g.function(k)).collect()
    };
    AstNode::new(NodeKind::Block, "", items)
}
