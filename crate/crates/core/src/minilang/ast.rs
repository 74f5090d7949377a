use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    /// `[Type, Name, Params, Block]`
    Function,
    /// `[Param*]`
    Params,
    /// `[Type, Name]`
    Param,
    /// Leaf; text is the space-separated type tokens, e.g. `int [ ]`.
    Type,
    /// `[statement*]`; also the root of every parsed program.
    Block,
    /// `[Type, Name]` or `[Type, Name, init]`
    Decl,
    /// Text is the operator; `[target, value]`, or `[target]` for `++`/`--`.
    Assign,
    /// `[cond, then]` or `[cond, then, else]`
    If,
    /// `[cond, body]`
    While,
    /// `[]` or `[value]`
    Return,
    /// `[expr]`
    ExprStmt,
    /// `[callee, arg*]`
    Call,
    /// `[object, Name]`
    Field,
    /// `[array, index]`
    Index,
    /// `[Type, arg*]`
    New,
    /// Text is the operator; `[lhs, rhs]`
    BinOp,
    /// Text is the operator; `[operand]`
    Unary,
    Name,
    Literal,
    This,
}

impl NodeKind {
    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Function => "Function",
            NodeKind::Params => "Params",
            NodeKind::Param => "Param",
            NodeKind::Type => "Type",
            NodeKind::Block => "Block",
            NodeKind::Decl => "Decl",
            NodeKind::Assign => "Assign",
            NodeKind::If => "If",
            NodeKind::While => "While",
            NodeKind::Return => "Return",
            NodeKind::ExprStmt => "ExprStmt",
            NodeKind::Call => "Call",
            NodeKind::Field => "Field",
            NodeKind::Index => "Index",
            NodeKind::New => "New",
            NodeKind::BinOp => "BinOp",
            NodeKind::Unary => "Unary",
            NodeKind::Name => "Name",
            NodeKind::Literal => "Literal",
            NodeKind::This => "This",
        }
    }

    pub fn is_statement(self) -> bool {
        matches!(
            self,
            NodeKind::Function
                | NodeKind::Decl
                | NodeKind::Assign
                | NodeKind::If
                | NodeKind::While
                | NodeKind::Return
                | NodeKind::ExprStmt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: NodeKind,
    /// Identifier, literal, type or operator text; empty otherwise.
    pub text: String,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind, text: impl Into<String>, children: Vec<AstNode>) -> Self {
        AstNode {
            kind,
            text: text.into(),
            children,
        }
    }

    pub fn leaf(kind: NodeKind, text: impl Into<String>) -> Self {
        Self::new(kind, text, Vec::new())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Applies `f` to every identifier (`Name` text).
    pub fn rename(&mut self, f: &mut impl FnMut(&str) -> String) {
        if self.kind == NodeKind::Name {
            self.text = f(&self.text);
        }
        for c in &mut self.children {
            c.rename(f);
        }
    }

    /// Canonical form with identifiers replaced by `var` and literal values
    /// by `lit`. Operators and type names are kept.
    pub fn serialize(&self) -> String {
        match self.kind {
            NodeKind::Name => "var".to_string(),
            NodeKind::Literal => "lit".to_string(),
            NodeKind::This => "this".to_string(),
            NodeKind::Type => format!("(Type {})", self.text),
            _ => {
                let mut s = format!("({}", self.kind.label());
                if !self.text.is_empty() {
                    s.push(' ');
                    s.push_str(&self.text);
                }
                for c in &self.children {
                    s.push(' ');
                    s.push_str(&c.serialize());
                }
                s.push(')');
                s
            }
        }
    }
}

/// One normalized serialization per node of the tree, in preorder.
pub fn subtrees(ast: &AstNode) -> Vec<String> {
    let mut out = Vec::with_capacity(ast.node_count());
    fn walk(n: &AstNode, out: &mut Vec<String>) {
        out.push(n.serialize());
        for c in &n.children {
            walk(c, out);
        }
    }
    walk(ast, &mut out);
    out
}
