use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ast::{AstNode, NodeKind};

/// A def-use edge between statement indices (preorder over statement
/// nodes). Variable names are normalized to `var0`, `var1`, ... in order of
/// first appearance among the tree's `Name` leaves, so the graph is
/// invariant under consistent renaming.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataflowEdge {
    pub def: usize,
    pub use_site: usize,
    pub var: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub edges: BTreeSet<DataflowEdge>,
}

type Reaching = BTreeMap<String, BTreeSet<usize>>;

/// Reaching-definition def-use edges.
///
/// Each function is analysed on its own, with its parameters defined at
/// the function's index; top-level statements share one scope. An `if`
/// joins the definitions of both arms; a `while` body is analysed as run
/// at most once, so every edge points backward in statement order.
pub fn dataflow(ast: &AstNode) -> DataflowGraph {
    let mut order = HashMap::new();
    name_order(ast, &mut order);
    let edges = def_use_edges(ast)
        .into_iter()
        .map(|(def, use_site, name)| DataflowEdge {
            def,
            use_site,
            var: format!("var{}", order[&name]),
        })
        .collect();
    DataflowGraph { edges }
}

fn name_order(n: &AstNode, order: &mut HashMap<String, usize>) {
    if n.kind == NodeKind::Name {
        let k = order.len();
        order.entry(n.text.clone()).or_insert(k);
    }
    for c in &n.children {
        name_order(c, order);
    }
}

/// Edges `(def index, use index, variable name)` before normalization.
pub fn def_use_edges(ast: &AstNode) -> BTreeSet<(usize, usize, String)> {
    let mut a = Analysis::default();
    let mut top = Reaching::new();
    for item in &ast.children {
        if item.kind == NodeKind::Function {
            let idx = a.next_index();
            let mut scope = Reaching::new();
            for p in &item.children[2].children {
                a.define(&mut scope, &p.children[1].text, idx);
            }
            a.block_items(&item.children[3].children, &mut scope);
        } else {
            a.statement(item, &mut top);
        }
    }
    a.edges
}

#[derive(Default)]
struct Analysis {
    counter: usize,
    edges: BTreeSet<(usize, usize, String)>,
}

impl Analysis {
    fn next_index(&mut self) -> usize {
        self.counter += 1;
        self.counter - 1
    }

    fn define(&self, state: &mut Reaching, name: &str, idx: usize) {
        state.insert(name.to_string(), BTreeSet::from([idx]));
    }

    fn uses(&mut self, expr: &AstNode, state: &Reaching, idx: usize) {
        let mut names = Vec::new();
        collect_uses(expr, &mut names);
        for name in names {
            if let Some(defs) = state.get(&name) {
                for &d in defs {
                    self.edges.insert((d, idx, name.clone()));
                }
            }
        }
    }

    fn block_items(&mut self, items: &[AstNode], state: &mut Reaching) {
        for s in items {
            self.statement(s, state);
        }
    }

    fn statement(&mut self, s: &AstNode, state: &mut Reaching) {
        let c = &s.children;
        match s.kind {
            NodeKind::Block => self.block_items(c, state),
            NodeKind::Decl => {
                let idx = self.next_index();
                if let Some(init) = c.get(2) {
                    self.uses(init, state, idx);
                    self.define(state, &c[1].text, idx);
                }
            }
            NodeKind::Assign => {
                let idx = self.next_index();
                if let Some(v) = c.get(1) {
                    self.uses(v, state, idx);
                }
                let target = &c[0];
                if target.kind == NodeKind::Name {
                    if s.text != "=" {
                        self.uses(target, state, idx);
                    }
                    self.define(state, &target.text, idx);
                } else {
                    self.uses(target, state, idx);
                }
            }
            NodeKind::If => {
                let idx = self.next_index();
                self.uses(&c[0], state, idx);
                let mut then_state = state.clone();
                self.statement(&c[1], &mut then_state);
                let mut else_state = state.clone();
                if let Some(e) = c.get(2) {
                    self.statement(e, &mut else_state);
                }
                *state = join(then_state, else_state);
            }
            NodeKind::While => {
                let idx = self.next_index();
                self.uses(&c[0], state, idx);
                let mut body = state.clone();
                self.statement(&c[1], &mut body);
                *state = join(std::mem::take(state), body);
            }
            NodeKind::Return | NodeKind::ExprStmt => {
                let idx = self.next_index();
                if let Some(e) = c.first() {
                    self.uses(e, state, idx);
                }
            }
            NodeKind::Function => {
                // Nested functions are outside the grammar; count the index
                // so numbering stays aligned with the preorder.
                self.next_index();
            }
            _ => {}
        }
    }
}

fn join(mut a: Reaching, b: Reaching) -> Reaching {
    for (k, v) in b {
        a.entry(k).or_default().extend(v);
    }
    a
}

/// Variable names read by an expression. Called function names and field
/// names are not variables.
fn collect_uses(e: &AstNode, out: &mut Vec<String>) {
    match e.kind {
        NodeKind::Name => out.push(e.text.clone()),
        NodeKind::Call => {
            let callee = &e.children[0];
            if callee.kind != NodeKind::Name {
                collect_uses(callee, out);
            }
            for a in &e.children[1..] {
                collect_uses(a, out);
            }
        }
        NodeKind::Field => collect_uses(&e.children[0], out),
        _ => {
            for c in &e.children {
                collect_uses(c, out);
            }
        }
    }
}
