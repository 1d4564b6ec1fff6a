//! Single-block conjunctive queries and their text form.
//!
//! ```text
//! Q(count) :- edge(a,b), edge(b,c), edge(a,c), a < b, b < c, edge.src >= 2
//! ```
//!
//! Variables with the same name in different atoms are one join attribute.
//! Attribute ids are assigned in order of first mention.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::catalog::{Catalog, ColumnTable, CompareOp, UnaryPredicate, Value};

pub type AttrId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("attribute `{0}` is not bound by any atom")]
    UnboundAttribute(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("atom over `{table}` binds {got} columns but the table has {expected}")]
    Arity {
        table: String,
        expected: usize,
        got: usize,
    },
    #[error("inequality compares `{0}` with itself")]
    SelfComparison(String),
    #[error("query has no atoms")]
    NoAtoms,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub table: String,
    /// Attribute bound by each table column, positionally.
    pub vars: Vec<AttrId>,
}

impl Atom {
    /// Distinct attributes bound by this atom.
    pub fn attributes(&self) -> BTreeSet<AttrId> {
        self.vars.iter().copied().collect()
    }

    pub fn binds(&self, attr: AttrId) -> bool {
        self.vars.contains(&attr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinAttribute {
    pub id: AttrId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InequalityPredicate {
    pub left: AttrId,
    pub op: CompareOp,
    pub right: AttrId,
}

impl InequalityPredicate {
    pub fn eval(&self, assignment: &[Value]) -> bool {
        self.op.eval(assignment[self.left], assignment[self.right])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Tuples,
    Count,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Tuples => "tuples",
            Aggregate::Count => "count",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub atoms: Vec<Atom>,
    pub attributes: Vec<JoinAttribute>,
    pub unary_preds: Vec<UnaryPredicate>,
    pub ineq_preds: Vec<InequalityPredicate>,
    pub aggregate: Aggregate,
}

/// A permutation of all attribute ids; position `i` holds the `i`-th
/// attribute processed by the join.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeOrder(Vec<AttrId>);

impl AttributeOrder {
    pub fn new(order: Vec<AttrId>) -> Option<Self> {
        let mut seen = vec![false; order.len()];
        for &a in &order {
            if a >= order.len() || std::mem::replace(&mut seen[a], true) {
                return None;
            }
        }
        Some(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn as_slice(&self) -> &[AttrId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of every attribute within the order.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (i, &a) in self.0.iter().enumerate() {
            pos[a] = i;
        }
        pos
    }

    pub fn display<'a>(&'a self, q: &'a Query) -> impl fmt::Display + 'a {
        OrderDisplay { order: self, q }
    }
}

struct OrderDisplay<'a> {
    order: &'a AttributeOrder,
    q: &'a Query,
}

impl fmt::Display for OrderDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &a) in self.order.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(&self.q.attributes[a].name)?;
        }
        Ok(())
    }
}

/// Per-attribute closed value ranges, or `Empty` when some relation is empty
/// and the join result is therefore empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domains {
    Empty,
    Ranges(Vec<(Value, Value)>),
}

impl Query {
    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_id(&self, name: &str) -> Option<AttrId> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Attributes that share an atom with some attribute in `prefix`.
    ///
    /// An empty prefix admits every attribute. When nothing connected is left
    /// but attributes remain unordered, all remaining ones are admitted.
    pub fn connected_candidates(&self, prefix: &[AttrId]) -> BTreeSet<AttrId> {
        let remaining: BTreeSet<AttrId> = (0..self.num_attributes())
            .filter(|a| !prefix.contains(a))
            .collect();
        if prefix.is_empty() {
            return remaining;
        }
        let connected: BTreeSet<AttrId> = self
            .atoms
            .iter()
            .filter(|atom| prefix.iter().any(|&p| atom.binds(p)))
            .flat_map(|atom| atom.vars.iter().copied())
            .filter(|a| remaining.contains(a))
            .collect();
        if connected.is_empty() {
            remaining
        } else {
            connected
        }
    }

    /// Whether the attribute co-occurrence graph is connected.
    pub fn is_connected(&self) -> bool {
        let n = self.num_attributes();
        if n == 0 {
            return true;
        }
        let mut reached = vec![false; n];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(a) = stack.pop() {
            for atom in self.atoms.iter().filter(|atom| atom.binds(a)) {
                for &b in &atom.vars {
                    if !reached[b] {
                        reached[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        reached.into_iter().all(|r| r)
    }

    /// Checks tables, arities and unary predicate columns against a catalog.
    pub fn validate(&self, catalog: &Catalog) -> Result<(), QueryError> {
        for atom in &self.atoms {
            let table = catalog
                .get(&atom.table)
                .map_err(|_| QueryError::UnknownTable(atom.table.clone()))?;
            if table.arity() != atom.vars.len() {
                return Err(QueryError::Arity {
                    table: atom.table.clone(),
                    expected: table.arity(),
                    got: atom.vars.len(),
                });
            }
        }
        for pred in &self.unary_preds {
            let table = catalog
                .get(&pred.table)
                .map_err(|_| QueryError::UnknownTable(pred.table.clone()))?;
            table
                .column_index(&pred.column)
                .map_err(|_| QueryError::UnknownColumn {
                    table: pred.table.clone(),
                    column: pred.column.clone(),
                })?;
        }
        Ok(())
    }
}

/// Min/max of every attribute over all columns binding it, taken over the
/// (already filtered) relation of each atom. `tables[i]` belongs to atom `i`.
pub fn attribute_domains(q: &Query, tables: &[Arc<ColumnTable>]) -> Domains {
    assert_eq!(tables.len(), q.atoms.len());
    if tables.iter().any(|t| t.is_empty()) {
        return Domains::Empty;
    }
    let mut ranges: Vec<Option<(Value, Value)>> = vec![None; q.num_attributes()];
    for (atom, table) in q.atoms.iter().zip(tables) {
        for (col, &attr) in atom.vars.iter().enumerate() {
            let values = table.column(col);
            let lo = *values.iter().min().expect("non-empty");
            let hi = *values.iter().max().expect("non-empty");
            let r = ranges[attr].get_or_insert((lo, hi));
            r.0 = r.0.min(lo);
            r.1 = r.1.max(hi);
        }
    }
    Domains::Ranges(
        ranges
            .into_iter()
            .map(|r| r.expect("every attribute is bound"))
            .collect(),
    )
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}) :- ", self.aggregate)?;
        let name = |a: AttrId| self.attributes[a].name.as_str();
        let mut items: Vec<String> = self
            .atoms
            .iter()
            .map(|atom| {
                let vars: Vec<&str> = atom.vars.iter().map(|&v| name(v)).collect();
                format!("{}({})", atom.table, vars.join(","))
            })
            .collect();
        items.extend(
            self.ineq_preds
                .iter()
                .map(|p| format!("{} {} {}", name(p.left), p.op, name(p.right))),
        );
        items.extend(self.unary_preds.iter().map(ToString::to_string));
        f.write_str(&items.join(", "))
    }
}

/// Parses and validates a query against the tables in `catalog`.
pub fn parse_query(text: &str, catalog: &Catalog) -> Result<Query, QueryError> {
    let q = parse_query_text(text)?;
    q.validate(catalog)?;
    Ok(q)
}

/// Parses query text without consulting a catalog.
pub fn parse_query_text(text: &str) -> Result<Query, QueryError> {
    Parser::new(text)?.query()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(Value),
    LParen,
    RParen,
    Comma,
    Dot,
    Turnstile,
    Op(CompareOp),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

fn syntax(pos: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        pos,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let two = |s: &[u8]| bytes[i..].starts_with(s);
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'.' => Tok::Dot,
            b':' if two(b":-") => {
                i += 1;
                Tok::Turnstile
            }
            b'<' if two(b"<=") => {
                i += 1;
                Tok::Op(CompareOp::Le)
            }
            b'>' if two(b">=") => {
                i += 1;
                Tok::Op(CompareOp::Ge)
            }
            b'!' if two(b"!=") => {
                i += 1;
                Tok::Op(CompareOp::Ne)
            }
            b'<' => Tok::Op(CompareOp::Lt),
            b'>' => Tok::Op(CompareOp::Gt),
            b'=' => Tok::Op(CompareOp::Eq),
            b'-' | b'0'..=b'9' => {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let lit = &text[start..i];
                let v = lit
                    .parse()
                    .map_err(|_| syntax(start, format!("bad integer literal `{lit}`")))?;
                toks.push((start, Tok::Int(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        i += 1;
        toks.push((start, tok));
    }
    Ok(toks)
}

enum Item {
    Atom(String, Vec<String>),
    Ineq(String, CompareOp, String, usize),
    Unary(UnaryPredicate),
}

impl Parser {
    fn new(text: &str) -> Result<Self, QueryError> {
        Ok(Self {
            toks: tokenize(text)?,
            pos: 0,
            end: text.len(),
        })
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.1)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), QueryError> {
        let at = self.offset();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        self.ident("query head")?;
        self.expect(Tok::LParen, "`(`")?;
        let at = self.offset();
        let aggregate = match self.ident("`tuples` or `count`")?.as_str() {
            "tuples" => Aggregate::Tuples,
            "count" => Aggregate::Count,
            other => return Err(syntax(at, format!("unknown aggregate `{other}`"))),
        };
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::Turnstile, "`:-`")?;

        let mut items = vec![self.item()?];
        while self.peek().is_some() {
            self.expect(Tok::Comma, "`,`")?;
            items.push(self.item()?);
        }

        let mut attributes: Vec<JoinAttribute> = Vec::new();
        let mut atoms = Vec::new();
        let mut pending_ineqs = Vec::new();
        let mut unary_preds = Vec::new();
        for item in items {
            match item {
                Item::Atom(table, vars) => {
                    let vars = vars
                        .into_iter()
                        .map(|v| match attributes.iter().position(|a| a.name == v) {
                            Some(id) => id,
                            None => {
                                attributes.push(JoinAttribute {
                                    id: attributes.len(),
                                    name: v,
                                });
                                attributes.len() - 1
                            }
                        })
                        .collect();
                    atoms.push(Atom { table, vars });
                }
                Item::Ineq(l, op, r, at) => pending_ineqs.push((l, op, r, at)),
                Item::Unary(p) => unary_preds.push(p),
            }
        }
        if atoms.is_empty() {
            return Err(QueryError::NoAtoms);
        }
        let lookup = |name: &str| {
            attributes
                .iter()
                .position(|a| a.name == name)
                .ok_or_else(|| QueryError::UnboundAttribute(name.to_string()))
        };
        let ineq_preds = pending_ineqs
            .into_iter()
            .map(|(l, op, r, _)| {
                if l == r {
                    return Err(QueryError::SelfComparison(l));
                }
                Ok(InequalityPredicate {
                    left: lookup(&l)?,
                    op,
                    right: lookup(&r)?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Query {
            atoms,
            attributes,
            unary_preds,
            ineq_preds,
            aggregate,
        })
    }

    fn item(&mut self) -> Result<Item, QueryError> {
        let at = self.offset();
        let name = self.ident("atom or predicate")?;
        match self.peek() {
            Some(Tok::LParen) => {
                self.bump();
                let mut vars = vec![self.ident("variable")?];
                while self.peek() == Some(&Tok::Comma) {
                    self.bump();
                    vars.push(self.ident("variable")?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Item::Atom(name, vars))
            }
            Some(Tok::Dot) => {
                self.bump();
                let column = self.ident("column name")?;
                let op_at = self.offset();
                let op = match self.bump() {
                    Some(Tok::Op(op)) => op,
                    _ => return Err(syntax(op_at, "expected comparison operator")),
                };
                let lit_at = self.offset();
                let constant = match self.bump() {
                    Some(Tok::Int(v)) => v,
                    _ => return Err(syntax(lit_at, "expected integer literal")),
                };
                Ok(Item::Unary(UnaryPredicate {
                    table: name,
                    column,
                    op,
                    constant,
                }))
            }
            Some(Tok::Op(op)) => {
                let op = *op;
                if op == CompareOp::Eq {
                    return Err(syntax(
                        self.offset(),
                        "equality between variables is expressed by reusing the variable name",
                    ));
                }
                self.bump();
                // `a < b < c` is not part of the grammar
                if let (Some(Tok::Ident(_)), Some(Tok::Op(_))) = (self.peek(), self.peek2()) {
                    return Err(syntax(self.toks[self.pos + 1].0, "chained comparison"));
                }
                let right = self.ident("variable")?;
                Ok(Item::Ineq(name, op, right, at))
            }
            _ => Err(syntax(
                self.offset(),
                "expected `(`, `.` or comparison operator",
            )),
        }
    }
}
