use super::ast::{AstNode, NodeKind};
use super::lexer::{LexToken, TokenKind};
use crate::error::{Error, Result};

const PRIMITIVE_TYPES: &[&str] = &["void", "int", "long", "short", "byte", "char", "float", "double", "boolean"];
const MODIFIERS: &[&str] = &["public", "private", "protected", "static", "final"];
const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%="];

/// Binary operator levels, loosest first.
const LEVELS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["|"],
    &["^"],
    &["&"],
    &["==", "!="],
    &["<", "<=", ">", ">="],
    &["+", "-"],
    &["*", "/", "%"],
];

/// Parses a token stream into a tree rooted at a `Block` holding the
/// program's functions and top-level statements.
pub fn parse(tokens: &[LexToken]) -> Result<AstNode> {
    let mut p = Parser { tokens, pos: 0 };
    let mut items = Vec::new();
    while !p.at_end() {
        if p.function_ahead() {
            items.push(p.function()?);
        } else {
            items.push(p.statement()?);
        }
    }
    Ok(AstNode::new(NodeKind::Block, "", items))
}

struct Parser<'t> {
    tokens: &'t [LexToken],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek_at(&self, offset: usize) -> Option<&LexToken> {
        self.tokens.get(self.pos + offset)
    }

    fn text_at(&self, offset: usize) -> &str {
        self.peek_at(offset).map_or("", |t| t.text.as_str())
    }

    fn is(&self, text: &str) -> bool {
        self.peek_at(0).is_some_and(|t| t.text == text && t.kind != TokenKind::String)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let found = self.peek_at(0).map_or("end of input".to_string(), |t| format!("`{}`", t.text));
        Err(Error::Parse {
            pos: self.pos,
            message: format!("{}, found {found}", message.into()),
        })
    }

    fn bump(&mut self) -> LexToken {
        let t = self.tokens[self.pos].clone();
        self.pos += 1;
        t
    }

    fn expect(&mut self, text: &str) -> Result<()> {
        if self.is(text) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected `{text}`"))
        }
    }

    fn kind_at(&self, offset: usize) -> Option<TokenKind> {
        self.peek_at(offset).map(|t| t.kind)
    }

    fn identifier(&mut self) -> Result<AstNode> {
        if self.kind_at(0) == Some(TokenKind::Identifier) {
            Ok(AstNode::leaf(NodeKind::Name, self.bump().text))
        } else {
            self.error("expected identifier")
        }
    }

    /// Length of a type starting at `offset`, if one is there.
    fn type_len(&self, offset: usize) -> Option<usize> {
        let base = self.peek_at(offset)?;
        let primitive = base.kind == TokenKind::Keyword && PRIMITIVE_TYPES.contains(&base.text.as_str());
        if !primitive && base.kind != TokenKind::Identifier {
            return None;
        }
        let mut n = 1;
        loop {
            if self.text_at(offset + n) == "[" && self.text_at(offset + n + 1) == "]" {
                n += 2;
            } else if primitive && self.text_at(offset + n) == "*" {
                n += 1;
            } else {
                return Some(n);
            }
        }
    }

    fn parse_type(&mut self) -> Result<AstNode> {
        let Some(n) = self.type_len(0) else {
            return self.error("expected type");
        };
        let text: Vec<String> = (0..n).map(|_| self.bump().text).collect();
        Ok(AstNode::leaf(NodeKind::Type, text.join(" ")))
    }

    /// A declaration starts with a type followed by an identifier.
    fn declaration_ahead(&self) -> bool {
        self.type_len(0)
            .is_some_and(|n| self.kind_at(n) == Some(TokenKind::Identifier))
    }

    fn function_ahead(&self) -> bool {
        if MODIFIERS.contains(&self.text_at(0)) && self.kind_at(0) == Some(TokenKind::Keyword) {
            return true;
        }
        self.type_len(0)
            .is_some_and(|n| self.kind_at(n) == Some(TokenKind::Identifier) && self.text_at(n + 1) == "(")
    }

    fn function(&mut self) -> Result<AstNode> {
        while self.kind_at(0) == Some(TokenKind::Keyword) && MODIFIERS.contains(&self.text_at(0)) {
            self.pos += 1;
        }
        let ret = self.parse_type()?;
        let name = self.identifier()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.is(")") {
            loop {
                let ty = self.parse_type()?;
                let pname = self.identifier()?;
                params.push(AstNode::new(NodeKind::Param, "", vec![ty, pname]));
                if self.is(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        let body = self.block()?;
        Ok(AstNode::new(
            NodeKind::Function,
            "",
            vec![ret, name, AstNode::new(NodeKind::Params, "", params), body],
        ))
    }

    fn block(&mut self) -> Result<AstNode> {
        self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.is("}") {
            if self.at_end() {
                return self.error("expected `}`");
            }
            stmts.push(self.statement()?);
        }
        self.pos += 1;
        Ok(AstNode::new(NodeKind::Block, "", stmts))
    }

    fn statement(&mut self) -> Result<AstNode> {
        if self.is("{") {
            return self.block();
        }
        let keyword = self.kind_at(0) == Some(TokenKind::Keyword);
        if keyword && self.is("if") {
            self.pos += 1;
            self.expect("(")?;
            let cond = self.expression()?;
            self.expect(")")?;
            let mut children = vec![cond, self.statement()?];
            if self.is("else") {
                self.pos += 1;
                children.push(self.statement()?);
            }
            return Ok(AstNode::new(NodeKind::If, "", children));
        }
        if keyword && self.is("while") {
            self.pos += 1;
            self.expect("(")?;
            let cond = self.expression()?;
            self.expect(")")?;
            let body = self.statement()?;
            return Ok(AstNode::new(NodeKind::While, "", vec![cond, body]));
        }
        if keyword && self.is("return") {
            self.pos += 1;
            let mut children = Vec::new();
            if !self.is(";") {
                children.push(self.expression()?);
            }
            self.expect(";")?;
            return Ok(AstNode::new(NodeKind::Return, "", children));
        }
        if self.declaration_ahead() {
            let ty = self.parse_type()?;
            let name = self.identifier()?;
            let mut children = vec![ty, name];
            if self.is("=") {
                self.pos += 1;
                children.push(self.expression()?);
            }
            self.expect(";")?;
            return Ok(AstNode::new(NodeKind::Decl, "", children));
        }
        let target = self.expression()?;
        let op = self.text_at(0).to_string();
        let stmt = if self.kind_at(0) == Some(TokenKind::Operator) && ASSIGN_OPS.contains(&op.as_str()) {
            self.check_target(&target)?;
            self.pos += 1;
            let value = self.expression()?;
            AstNode::new(NodeKind::Assign, op, vec![target, value])
        } else if self.kind_at(0) == Some(TokenKind::Operator) && (op == "++" || op == "--") {
            self.check_target(&target)?;
            self.pos += 1;
            AstNode::new(NodeKind::Assign, op, vec![target])
        } else {
            AstNode::new(NodeKind::ExprStmt, "", vec![target])
        };
        self.expect(";")?;
        Ok(stmt)
    }

    fn check_target(&self, target: &AstNode) -> Result<()> {
        match target.kind {
            NodeKind::Name | NodeKind::Field | NodeKind::Index => Ok(()),
            _ => self.error("invalid assignment target"),
        }
    }

    fn expression(&mut self) -> Result<AstNode> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<AstNode> {
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        while self.kind_at(0) == Some(TokenKind::Operator) && LEVELS[level].contains(&self.text_at(0)) {
            let op = self.bump().text;
            let rhs = self.binary(level + 1)?;
            lhs = AstNode::new(NodeKind::BinOp, op, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<AstNode> {
        if self.kind_at(0) == Some(TokenKind::Operator) && matches!(self.text_at(0), "!" | "-" | "+") {
            let op = self.bump().text;
            let operand = self.unary()?;
            return Ok(AstNode::new(NodeKind::Unary, op, vec![operand]));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<AstNode> {
        let mut e = self.primary()?;
        loop {
            if self.is("(") {
                self.pos += 1;
                let mut children = vec![e];
                children.extend(self.arguments()?);
                e = AstNode::new(NodeKind::Call, "", children);
            } else if self.is(".") {
                self.pos += 1;
                let field = self.identifier()?;
                e = AstNode::new(NodeKind::Field, "", vec![e, field]);
            } else if self.is("[") {
                self.pos += 1;
                let index = self.expression()?;
                self.expect("]")?;
                e = AstNode::new(NodeKind::Index, "", vec![e, index]);
            } else {
                return Ok(e);
            }
        }
    }

    /// Comma-separated expressions up to and including `)`.
    fn arguments(&mut self) -> Result<Vec<AstNode>> {
        let mut args = Vec::new();
        if self.is(")") {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.expression()?);
            if self.is(",") {
                self.pos += 1;
            } else {
                self.expect(")")?;
                return Ok(args);
            }
        }
    }

    fn primary(&mut self) -> Result<AstNode> {
        let Some(tok) = self.peek_at(0) else {
            return self.error("expected expression");
        };
        match tok.kind {
            TokenKind::Identifier => self.identifier(),
            TokenKind::Integer | TokenKind::String => Ok(AstNode::leaf(NodeKind::Literal, self.bump().text)),
            TokenKind::Keyword => match tok.text.as_str() {
                "true" | "false" | "null" => Ok(AstNode::leaf(NodeKind::Literal, self.bump().text)),
                "this" => Ok(AstNode::leaf(NodeKind::This, self.bump().text)),
                "new" => {
                    self.pos += 1;
                    let ty = self.parse_type()?;
                    self.expect("(")?;
                    let mut children = vec![ty];
                    children.extend(self.arguments()?);
                    Ok(AstNode::new(NodeKind::New, "", children))
                }
                _ => self.error("expected expression"),
            },
            TokenKind::Punctuation if tok.text == "(" => {
                self.pos += 1;
                let e = self.expression()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => self.error("expected expression"),
        }
    }
}

/// Renders `ast` as space-separated tokens that parse back to the same
/// tree. Nested binary expressions are always parenthesized.
pub fn pretty_print(ast: &AstNode) -> String {
    let mut out = Vec::new();
    for item in &ast.children {
        print_item(item, &mut out);
    }
    out.join(" ")
}

fn print_item(n: &AstNode, out: &mut Vec<String>) {
    if n.kind == NodeKind::Function {
        out.push(n.children[0].text.clone());
        out.push(n.children[1].text.clone());
        out.push("(".into());
        for (i, p) in n.children[2].children.iter().enumerate() {
            if i > 0 {
                out.push(",".into());
            }
            out.push(p.children[0].text.clone());
            out.push(p.children[1].text.clone());
        }
        out.push(")".into());
        print_stmt(&n.children[3], out);
    } else {
        print_stmt(n, out);
    }
}

fn print_stmt(n: &AstNode, out: &mut Vec<String>) {
    let c = &n.children;
    match n.kind {
        NodeKind::Block => {
            out.push("{".into());
            for s in c {
                print_stmt(s, out);
            }
            out.push("}".into());
        }
        NodeKind::Decl => {
            out.push(c[0].text.clone());
            out.push(c[1].text.clone());
            if let Some(init) = c.get(2) {
                out.push("=".into());
                print_expr(init, out);
            }
            out.push(";".into());
        }
        NodeKind::Assign => {
            print_expr(&c[0], out);
            out.push(n.text.clone());
            if let Some(v) = c.get(1) {
                print_expr(v, out);
            }
            out.push(";".into());
        }
        NodeKind::If | NodeKind::While => {
            out.push(if n.kind == NodeKind::If { "if" } else { "while" }.into());
            out.push("(".into());
            print_expr(&c[0], out);
            out.push(")".into());
            print_stmt(&c[1], out);
            if let Some(e) = c.get(2) {
                out.push("else".into());
                print_stmt(e, out);
            }
        }
        NodeKind::Return => {
            out.push("return".into());
            if let Some(v) = c.first() {
                print_expr(v, out);
            }
            out.push(";".into());
        }
        NodeKind::ExprStmt => {
            print_expr(&c[0], out);
            out.push(";".into());
        }
        _ => print_item(n, out),
    }
}

fn print_wrapped(n: &AstNode, wrap: bool, out: &mut Vec<String>) {
    if wrap {
        out.push("(".into());
        print_expr(n, out);
        out.push(")".into());
    } else {
        print_expr(n, out);
    }
}

fn print_args(args: &[AstNode], out: &mut Vec<String>) {
    out.push("(".into());
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push(",".into());
        }
        print_expr(a, out);
    }
    out.push(")".into());
}

fn print_expr(n: &AstNode, out: &mut Vec<String>) {
    let c = &n.children;
    match n.kind {
        NodeKind::Name | NodeKind::Literal | NodeKind::This => out.push(n.text.clone()),
        NodeKind::BinOp => {
            print_wrapped(&c[0], c[0].kind == NodeKind::BinOp, out);
            out.push(n.text.clone());
            print_wrapped(&c[1], c[1].kind == NodeKind::BinOp, out);
        }
        NodeKind::Unary => {
            out.push(n.text.clone());
            print_wrapped(&c[0], c[0].kind == NodeKind::BinOp, out);
        }
        NodeKind::Call => {
            print_wrapped(&c[0], matches!(c[0].kind, NodeKind::BinOp | NodeKind::Unary), out);
            print_args(&c[1..], out);
        }
        NodeKind::Field => {
            print_wrapped(&c[0], matches!(c[0].kind, NodeKind::BinOp | NodeKind::Unary), out);
            out.push(".".into());
            out.push(c[1].text.clone());
        }
        NodeKind::Index => {
            print_wrapped(&c[0], matches!(c[0].kind, NodeKind::BinOp | NodeKind::Unary), out);
            out.push("[".into());
            print_expr(&c[1], out);
            out.push("]".into());
        }
        NodeKind::New => {
            out.push("new".into());
            out.push(c[0].text.clone());
            print_args(&c[1..], out);
        }
        _ => print_stmt(n, out),
    }
}
