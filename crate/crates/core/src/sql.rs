//! A small SQL subset: SELECT / FROM / WHERE (conjunctions) / GROUP BY,
//! arithmetic, aggregates and equi-joins.
//!
//! Joins are planned as a chain of hash joins probed by the last table of the
//! FROM list. Every earlier table becomes a build side; the first table is
//! probed first. A table is keyed by the first WHERE equality linking it to
//! the probe table or to an earlier table; a table without such a key is
//! attached with a cross join.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::logical::{
    AggCall, AggFunc, AggOutput, ArithOp, Attr, Catalog, CmpOp, Comparison, LogicalPlan, ScalarExpr,
};
use crate::storage::ColumnKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("ambiguous attribute `{0}`")]
    AmbiguousAttribute(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

fn syntax(pos: usize, msg: impl Into<String>) -> SqlError {
    SqlError::Syntax {
        pos,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Sym(&'static str),
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut float = false;
            if i < bytes.len() && bytes[i] == b'.' {
                float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                float = true;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s = &text[start..i];
            let tok = if float {
                Tok::Float(s.parse().map_err(|_| syntax(start, "bad number"))?)
            } else {
                Tok::Int(
                    s.parse()
                        .map_err(|_| syntax(start, "integer out of range"))?,
                )
            };
            out.push((tok, start));
        } else if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match text[i..].chars().next() {
                    None => return Err(syntax(start, "unterminated string")),
                    Some('\'') => {
                        if bytes.get(i + 1) == Some(&b'\'') {
                            s.push('\'');
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(ch) => {
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push((Tok::Str(s), start));
        } else {
            let two = text.get(i..i + 2).unwrap_or("");
            let sym = match two {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "<>" | "!=" => Some("<>"),
                _ => None,
            };
            if let Some(s) = sym {
                out.push((Tok::Sym(s), start));
                i += 2;
                continue;
            }
            let s = match c {
                b',' => ",",
                b'(' => "(",
                b')' => ")",
                b'.' => ".",
                b'*' => "*",
                b'+' => "+",
                b'-' => "-",
                b'/' => "/",
                b'<' => "<",
                b'>' => ">",
                b'=' => "=",
                b';' => ";",
                _ => {
                    let ch = text[i..].chars().next().unwrap_or('?');
                    return Err(syntax(start, alloc::format!("unexpected character `{ch}`")));
                }
            };
            out.push((Tok::Sym(s), start));
            i += 1;
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Column {
        table: Option<String>,
        name: String,
        pos: usize,
    },
    Int(i64),
    Float(f64),
    Str(String),
    Binary(ArithOp, Box<Ast>, Box<Ast>),
    Agg {
        func: AggFunc,
        arg: Option<Box<Ast>>,
        pos: usize,
    },
}

struct SelectItem {
    expr: Ast,
    alias: Option<String>,
}

struct AstCmp {
    op: CmpOp,
    left: Ast,
    right: Ast,
    pos: usize,
}

struct Query {
    select: Vec<SelectItem>,
    from: Vec<(String, usize)>,
    conjuncts: Vec<AstCmp>,
    group_by: Vec<Ast>,
}

const RESERVED: [&str; 7] = ["select", "from", "where", "group", "by", "and", "as"];

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), alloc::format!("expected `{kw}`")))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), SqlError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), alloc::format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)) => {
                self.bump();
                Ok(s)
            }
            _ => Err(syntax(self.pos(), "expected identifier")),
        }
    }

    fn query(&mut self) -> Result<Query, SqlError> {
        self.expect_kw("select")?;
        let mut select = Vec::new();
        loop {
            let expr = self.expr()?;
            let alias = if self.is_kw("as") {
                self.bump();
                Some(self.ident()?)
            } else {
                None
            };
            select.push(SelectItem { expr, alias });
            if self.is_sym(",") {
                self.bump();
            } else {
                break;
            }
        }
        self.expect_kw("from")?;
        let mut from = Vec::new();
        loop {
            let pos = self.pos();
            from.push((self.ident()?, pos));
            if self.is_sym(",") {
                self.bump();
            } else {
                break;
            }
        }
        let mut conjuncts = Vec::new();
        if self.is_kw("where") {
            self.bump();
            loop {
                conjuncts.push(self.comparison()?);
                if self.is_kw("and") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let mut group_by = Vec::new();
        if self.is_kw("group") {
            self.bump();
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if self.is_sym(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if self.is_sym(";") {
            self.bump();
        }
        if *self.peek() != Tok::End {
            return Err(syntax(self.pos(), "unexpected trailing input"));
        }
        Ok(Query {
            select,
            from,
            conjuncts,
            group_by,
        })
    }

    fn comparison(&mut self) -> Result<AstCmp, SqlError> {
        let pos = self.pos();
        let left = self.expr()?;
        let op = match self.peek() {
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym("<>") => CmpOp::Ne,
            _ => return Err(syntax(self.pos(), "expected comparison operator")),
        };
        self.bump();
        let right = self.expr()?;
        Ok(AstCmp {
            op,
            left,
            right,
            pos,
        })
    }

    fn expr(&mut self) -> Result<Ast, SqlError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_sym("+") {
                ArithOp::Add
            } else if self.is_sym("-") {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Ast, SqlError> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.is_sym("*") {
                ArithOp::Mul
            } else if self.is_sym("/") {
                ArithOp::Div
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Ast, SqlError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Int(v) => Ok(Ast::Int(v)),
            Tok::Float(v) => Ok(Ast::Float(v)),
            Tok::Str(s) => Ok(Ast::Str(s)),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("-") => match self.factor()? {
                Ast::Int(v) => Ok(Ast::Int(v.wrapping_neg())),
                Ast::Float(v) => Ok(Ast::Float(-v)),
                e => Ok(Ast::Binary(
                    ArithOp::Sub,
                    Box::new(Ast::Int(0)),
                    Box::new(e),
                )),
            },
            Tok::Ident(name) => {
                let lower = name.to_ascii_lowercase();
                let func = match lower.as_str() {
                    "sum" => Some(AggFunc::Sum),
                    "count" => Some(AggFunc::Count),
                    "min" => Some(AggFunc::Min),
                    "max" => Some(AggFunc::Max),
                    "avg" => Some(AggFunc::Avg),
                    _ => None,
                };
                if let (Some(func), true) = (func, self.is_sym("(")) {
                    self.bump();
                    let arg = if func == AggFunc::Count && self.is_sym("*") {
                        self.bump();
                        None
                    } else {
                        Some(Box::new(self.expr()?))
                    };
                    self.expect_sym(")")?;
                    return Ok(Ast::Agg { func, arg, pos });
                }
                if RESERVED.iter().any(|r| lower == *r) {
                    return Err(syntax(pos, alloc::format!("unexpected keyword `{name}`")));
                }
                if self.is_sym(".") {
                    self.bump();
                    let col = self.ident()?;
                    Ok(Ast::Column {
                        table: Some(name),
                        name: col,
                        pos,
                    })
                } else {
                    Ok(Ast::Column {
                        table: None,
                        name,
                        pos,
                    })
                }
            }
            _ => Err(syntax(pos, "expected expression")),
        }
    }
}

struct Scope<'a> {
    tables: &'a [(String, Vec<(String, ColumnKind)>)],
}

impl Scope<'_> {
    fn resolve(&self, table: Option<&str>, name: &str) -> Result<Attr, SqlError> {
        match table {
            Some(t) => {
                let (_, schema) = self
                    .tables
                    .iter()
                    .find(|(n, _)| n == t)
                    .ok_or_else(|| SqlError::UnknownTable(t.to_string()))?;
                let (_, kind) = schema
                    .iter()
                    .find(|(c, _)| c == name)
                    .ok_or_else(|| SqlError::UnknownAttribute(alloc::format!("{t}.{name}")))?;
                Ok(Attr::new(t, name, *kind))
            }
            None => {
                let mut found = None;
                for (t, schema) in self.tables {
                    if let Some((_, kind)) = schema.iter().find(|(c, _)| c == name) {
                        if found.is_some() {
                            return Err(SqlError::AmbiguousAttribute(name.to_string()));
                        }
                        found = Some(Attr::new(t, name, *kind));
                    }
                }
                found.ok_or_else(|| SqlError::UnknownAttribute(name.to_string()))
            }
        }
    }

    fn scalar(&self, ast: &Ast) -> Result<ScalarExpr, SqlError> {
        Ok(match ast {
            Ast::Column { table, name, .. } => {
                ScalarExpr::Column(self.resolve(table.as_deref(), name)?)
            }
            Ast::Int(v) => ScalarExpr::Int(*v),
            Ast::Float(v) => ScalarExpr::Float(*v),
            Ast::Str(s) => ScalarExpr::Str(s.clone()),
            Ast::Binary(op, l, r) => {
                let l = self.scalar(l)?;
                let r = self.scalar(r)?;
                if l.kind() == ColumnKind::String || r.kind() == ColumnKind::String {
                    return Err(SqlError::Type(alloc::format!(
                        "arithmetic on string operand in `{l} {} {r}`",
                        op.symbol()
                    )));
                }
                ScalarExpr::Binary(*op, Box::new(l), Box::new(r))
            }
            Ast::Agg { pos, .. } => {
                return Err(syntax(*pos, "aggregate not allowed here"));
            }
        })
    }
}

fn comparison(scope: &Scope, c: &AstCmp) -> Result<Comparison, SqlError> {
    let left = scope.scalar(&c.left)?;
    let right = scope.scalar(&c.right)?;
    let ls = left.kind() == ColumnKind::String;
    let rs = right.kind() == ColumnKind::String;
    if ls || rs {
        let ok = ls
            && rs
            && matches!(c.op, CmpOp::Eq | CmpOp::Ne)
            && (matches!((&left, &right), (ScalarExpr::Column(_), ScalarExpr::Str(_)))
                || matches!((&left, &right), (ScalarExpr::Str(_), ScalarExpr::Column(_))));
        if !ok {
            return Err(SqlError::Type(alloc::format!(
                "strings support only `=` and `<>` against a literal (at byte {})",
                c.pos
            )));
        }
    }
    Ok(Comparison {
        op: c.op,
        left,
        right,
    })
}

/// Output name used when a select item has no alias.
pub fn default_name(expr: &ScalarExpr) -> String {
    match expr {
        ScalarExpr::Column(a) => a.column.clone(),
        other => short(other),
    }
}

fn default_agg_name(func: AggFunc, arg: Option<&ScalarExpr>) -> String {
    match arg {
        None => alloc::format!("{}(*)", func.name()),
        Some(e) => alloc::format!("{}({})", func.name(), short(e)),
    }
}

fn short(e: &ScalarExpr) -> String {
    match e {
        ScalarExpr::Column(a) => a.column.clone(),
        ScalarExpr::Binary(op, l, r) => alloc::format!("{}{}{}", short(l), op.symbol(), short(r)),
        other => other.to_string(),
    }
}

/// Parses and resolves `text` against `catalog`.
pub fn parse_query(text: &str, catalog: &Catalog) -> Result<LogicalPlan, SqlError> {
    let toks = lex(text)?;
    let q = Parser { toks, i: 0 }.query()?;

    let mut tables: Vec<(String, Vec<(String, ColumnKind)>)> = Vec::new();
    for (name, pos) in &q.from {
        let schema = catalog
            .get(name)
            .ok_or_else(|| SqlError::UnknownTable(name.clone()))?;
        if tables.iter().any(|(t, _)| t == name) {
            return Err(syntax(*pos, alloc::format!("table `{name}` listed twice")));
        }
        tables.push((name.clone(), schema.clone()));
    }
    let scope = Scope { tables: &tables };
    let scan = |t: &str| -> LogicalPlan {
        let schema = &tables.iter().find(|(n, _)| n == t).expect("resolved").1;
        LogicalPlan::Scan {
            table: t.to_string(),
            schema: schema.iter().map(|(c, k)| Attr::new(t, c, *k)).collect(),
        }
    };

    let mut conjuncts = Vec::with_capacity(q.conjuncts.len());
    for c in &q.conjuncts {
        conjuncts.push(comparison(&scope, c)?);
    }

    let names: Vec<&str> = tables.iter().map(|(n, _)| n.as_str()).collect();
    let driver = names[names.len() - 1];
    let mut used = alloc::vec![false; conjuncts.len()];

    let mut local: Vec<Vec<Comparison>> = alloc::vec![Vec::new(); names.len()];
    for (i, c) in conjuncts.iter().enumerate() {
        let ts = c.tables();
        if ts.len() <= 1 {
            let t = ts.first().map(String::as_str).unwrap_or(driver);
            let idx = names.iter().position(|n| *n == t).expect("resolved table");
            local[idx].push(c.clone());
            used[i] = true;
        }
    }
    let with_filter = |plan: LogicalPlan, preds: &Vec<Comparison>| -> LogicalPlan {
        if preds.is_empty() {
            plan
        } else {
            LogicalPlan::Select {
                input: Box::new(plan),
                predicate: preds.clone(),
            }
        }
    };

    let k = names.len() - 1;
    let mut plan = with_filter(scan(driver), &local[k]);
    let mut available: Vec<&str> = alloc::vec![driver];
    for (ti, name) in names.iter().take(k).enumerate() {
        let key = conjuncts.iter().enumerate().find_map(|(i, c)| {
            if used[i] || c.op != CmpOp::Eq {
                return None;
            }
            let (l, r) = (c.left.as_column()?, c.right.as_column()?);
            if l.table == *name && available.contains(&r.table.as_str()) {
                Some((i, l.clone(), r.clone()))
            } else if r.table == *name && available.contains(&l.table.as_str()) {
                Some((i, r.clone(), l.clone()))
            } else {
                None
            }
        });
        let build = with_filter(scan(name), &local[ti]);
        plan = match key {
            Some((i, build_key, probe_key)) => {
                if build_key.kind == ColumnKind::Float64 || build_key.kind != probe_key.kind {
                    return Err(SqlError::Type(alloc::format!(
                        "join key `{build_key}` = `{probe_key}` needs matching integer columns"
                    )));
                }
                used[i] = true;
                LogicalPlan::Join {
                    left: Box::new(build),
                    right: Box::new(plan),
                    left_key: build_key,
                    right_key: probe_key,
                }
            }
            None => LogicalPlan::CrossJoin {
                left: Box::new(build),
                right: Box::new(plan),
            },
        };
        available.push(name);
        let ready: Vec<Comparison> = conjuncts
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                !used[*i] && c.tables().iter().all(|t| available.contains(&t.as_str()))
            })
            .map(|(_, c)| c.clone())
            .collect();
        for (i, c) in conjuncts.iter().enumerate() {
            if !used[i] && c.tables().iter().all(|t| available.contains(&t.as_str())) {
                used[i] = true;
            }
        }
        plan = with_filter(plan, &ready);
    }

    let aggregated = !q.group_by.is_empty() || q.select.iter().any(|s| contains_agg(&s.expr));
    if aggregated {
        let mut group_keys = Vec::new();
        for g in &q.group_by {
            match scope.scalar(g)? {
                ScalarExpr::Column(a) => {
                    if a.kind == ColumnKind::Float64 {
                        return Err(SqlError::Unsupported(alloc::format!(
                            "grouping on floating-point attribute `{a}`"
                        )));
                    }
                    if !group_keys.contains(&a) {
                        group_keys.push(a)
                    }
                }
                other => {
                    return Err(SqlError::Unsupported(alloc::format!(
                        "GROUP BY expression `{other}`"
                    )))
                }
            }
        }
        let mut aggs: Vec<AggCall> = Vec::new();
        let mut output = Vec::new();
        for item in &q.select {
            match &item.expr {
                Ast::Agg { func, arg, .. } => {
                    let arg = match arg {
                        Some(a) => {
                            if contains_agg(a) {
                                return Err(SqlError::Unsupported("nested aggregate".into()));
                            }
                            let e = scope.scalar(a)?;
                            if e.kind() == ColumnKind::String && *func != AggFunc::Count {
                                return Err(SqlError::Type(alloc::format!(
                                    "{}() over string `{e}`",
                                    func.name()
                                )));
                            }
                            Some(e)
                        }
                        None => None,
                    };
                    let name = item
                        .alias
                        .clone()
                        .unwrap_or_else(|| default_agg_name(*func, arg.as_ref()));
                    output.push(AggOutput::Agg(aggs.len()));
                    aggs.push(AggCall {
                        func: *func,
                        arg,
                        name,
                    });
                }
                e if contains_agg(e) => {
                    return Err(SqlError::Unsupported("expressions over aggregates".into()))
                }
                e => {
                    let resolved = scope.scalar(e)?;
                    let pos = match resolved.as_column() {
                        Some(a) => group_keys.iter().position(|g| g == a),
                        None => None,
                    };
                    match pos {
                        Some(p) if item.alias.is_none() => output.push(AggOutput::Group(p)),
                        Some(_) => {
                            return Err(SqlError::Unsupported(
                                "aliases on grouping attributes".into(),
                            ))
                        }
                        None => {
                            return Err(SqlError::Type(alloc::format!(
                                "`{resolved}` is neither aggregated nor grouped"
                            )))
                        }
                    }
                }
            }
        }
        return Ok(LogicalPlan::Aggregate {
            input: Box::new(plan),
            group_keys,
            aggs,
            output,
        });
    }

    let mut attrs = Vec::new();
    for item in &q.select {
        let e = scope.scalar(&item.expr)?;
        match (&e, &item.alias) {
            (ScalarExpr::Column(a), None) => attrs.push(a.clone()),
            _ => {
                let name = item.alias.clone().unwrap_or_else(|| default_name(&e));
                let kind = e.kind();
                plan = LogicalPlan::Map {
                    input: Box::new(plan),
                    expr: e,
                    name: name.clone(),
                };
                attrs.push(Attr::new("", &name, kind));
            }
        }
    }
    Ok(LogicalPlan::Project {
        input: Box::new(plan),
        attrs,
    })
}

fn contains_agg(a: &Ast) -> bool {
    match a {
        Ast::Agg { .. } => true,
        Ast::Binary(_, l, r) => contains_agg(l) || contains_agg(r),
        _ => false,
    }
}

/// Renders a plan back to SQL text that parses to an equal plan.
pub fn unparse(plan: &LogicalPlan) -> String {
    let mut select = Vec::new();
    let mut group = Vec::new();
    let mut maps: Vec<(String, ScalarExpr)> = Vec::new();
    let mut body = plan;
    match plan {
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
            output,
        } => {
            for o in output {
                match *o {
                    AggOutput::Group(i) => select.push(group_keys[i].to_string()),
                    AggOutput::Agg(i) => {
                        let a = &aggs[i];
                        let arg = match &a.arg {
                            Some(e) => e.to_string(),
                            None => "*".into(),
                        };
                        let mut s = alloc::format!("{}({arg})", a.func.name());
                        if a.name != default_agg_name(a.func, a.arg.as_ref()) {
                            let _ = write!(s, " as {}", a.name);
                        }
                        select.push(s);
                    }
                }
            }
            group = group_keys.iter().map(|g| g.to_string()).collect();
            body = input;
        }
        LogicalPlan::Project { input, attrs } => {
            let mut cur: &LogicalPlan = input;
            while let LogicalPlan::Map { input, expr, name } = cur {
                maps.push((name.clone(), expr.clone()));
                cur = input;
            }
            for a in attrs {
                if a.is_derived() {
                    let e = maps
                        .iter()
                        .find(|(n, _)| *n == a.column)
                        .map(|(_, e)| e.clone())
                        .unwrap_or_else(|| ScalarExpr::Column(a.clone()));
                    let mut s = e.to_string();
                    if a.column != default_name(&e) || e.as_column().is_some() {
                        let _ = write!(s, " as {}", a.column);
                    }
                    select.push(s);
                } else {
                    select.push(a.to_string());
                }
            }
            body = cur;
        }
        _ => select.push("*".into()),
    }

    let tables = body.base_tables();
    let mut keys = Vec::new();
    let mut preds = Vec::new();
    collect_where(body, &mut keys, &mut preds);
    let mut out = alloc::format!("select {} from {}", select.join(", "), tables.join(", "));
    let mut conj: Vec<String> = keys;
    conj.extend(preds);
    if !conj.is_empty() {
        let _ = write!(out, " where {}", conj.join(" and "));
    }
    if !group.is_empty() {
        let _ = write!(out, " group by {}", group.join(", "));
    }
    out
}

fn collect_where(plan: &LogicalPlan, keys: &mut Vec<String>, preds: &mut Vec<String>) {
    match plan {
        LogicalPlan::Scan { .. } => {}
        LogicalPlan::Select { input, predicate } => {
            collect_where(input, keys, preds);
            preds.extend(predicate.iter().map(|c| c.to_string()));
        }
        LogicalPlan::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            collect_where(right, keys, preds);
            keys.push(alloc::format!("{left_key} = {right_key}"));
            collect_where(left, keys, preds);
        }
        LogicalPlan::CrossJoin { left, right } => {
            collect_where(right, keys, preds);
            collect_where(left, keys, preds);
        }
        LogicalPlan::Map { input, .. }
        | LogicalPlan::Aggregate { input, .. }
        | LogicalPlan::Project { input, .. } => collect_where(input, keys, preds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{gen_star_schema, ColumnKind};

    fn catalog() -> Catalog {
        let mut c = crate::logical::catalog_of(&gen_star_schema(10, 1, 10));
        c.insert(
            "t".into(),
            alloc::vec![
                ("a".into(), ColumnKind::Int64),
                ("b".into(), ColumnKind::Float64)
            ],
        );
        c.insert(
            "t1".into(),
            alloc::vec![
                ("a".into(), ColumnKind::Int64),
                ("x".into(), ColumnKind::Int64)
            ],
        );
        c.insert(
            "t2".into(),
            alloc::vec![
                ("b".into(), ColumnKind::Int64),
                ("y".into(), ColumnKind::Int64)
            ],
        );
        c.insert(
            "t3".into(),
            alloc::vec![
                ("c".into(), ColumnKind::Int64),
                ("d".into(), ColumnKind::Int64),
                ("z".into(), ColumnKind::Int64),
                ("q".into(), ColumnKind::Int64),
            ],
        );
        c
    }

    #[test]
    fn projection_query_shape() {
        let p = parse_query(
            "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity<25;",
            &catalog(),
        )
        .unwrap();
        let LogicalPlan::Project { input, attrs } = p else {
            panic!()
        };
        assert_eq!(attrs.len(), 3);
        let LogicalPlan::Select { input, predicate } = *input else {
            panic!()
        };
        assert_eq!(predicate.len(), 1);
        assert_eq!(predicate[0].op, CmpOp::Lt);
        assert_eq!(predicate[0].right, ScalarExpr::Int(25));
        assert!(matches!(*input, LogicalPlan::Scan { ref table, .. } if table == "lineorder"));
    }

    #[test]
    fn grouped_aggregate_shape() {
        let p = parse_query(
            "select lo_shipmode, sum(lo_quantity) from lineorder group by lo_shipmode;",
            &catalog(),
        )
        .unwrap();
        let LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
            ..
        } = p
        else {
            panic!()
        };
        assert_eq!(group_keys[0].column, "lo_shipmode");
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].func, AggFunc::Sum);
        assert_eq!(aggs[0].name, "sum(lo_quantity)");
        assert!(matches!(*input, LogicalPlan::Scan { .. }));
    }

    #[test]
    fn non_grouping_aggregate() {
        let p = parse_query("select sum(a) from t", &catalog()).unwrap();
        let LogicalPlan::Aggregate { group_keys, .. } = p else {
            panic!()
        };
        assert!(group_keys.is_empty());
    }

    #[test]
    fn join_chain_probes_first_table_first() {
        let p = parse_query(
            "select x, sum(q) from t1, t2, t3 where a = c and b = d and z < 3 group by x",
            &catalog(),
        )
        .unwrap();
        assert_eq!(p.join_count(), 2);
        assert_eq!(p.cross_join_count(), 0);
        let LogicalPlan::Aggregate { input, .. } = &p else {
            panic!()
        };
        let LogicalPlan::Join {
            left,
            right,
            left_key,
            ..
        } = &**input
        else {
            panic!()
        };
        assert_eq!(left_key.table, "t2");
        assert!(matches!(&**left, LogicalPlan::Scan { table, .. } if table == "t2"));
        let LogicalPlan::Join { left_key, .. } = &**right else {
            panic!()
        };
        assert_eq!(left_key.table, "t1");
        assert_eq!(p.base_tables(), alloc::vec!["t1", "t2", "t3"]);
    }

    #[test]
    fn unkeyed_table_is_cross_joined() {
        let p = parse_query("select x, z from t1, t3 where z < 3", &catalog()).unwrap();
        assert_eq!(p.join_count(), 0);
        assert_eq!(p.cross_join_count(), 1);
    }

    #[test]
    fn errors() {
        let c = catalog();
        assert!(matches!(
            parse_query("select a from nope", &c),
            Err(SqlError::UnknownTable(_))
        ));
        assert!(matches!(
            parse_query("select nope from t", &c),
            Err(SqlError::UnknownAttribute(_))
        ));
        assert!(matches!(
            parse_query("select a from t where", &c),
            Err(SqlError::Syntax { .. })
        ));
        assert!(matches!(
            parse_query(
                "select lo_shipmode from lineorder where lo_shipmode < 'AIR'",
                &c
            ),
            Err(SqlError::Type(_))
        ));
        assert!(matches!(
            parse_query("select a from t1, t2 where a = b and a + 1 = 'x'", &c),
            Err(SqlError::Type(_))
        ));
        assert!(matches!(
            parse_query("select a, sum(x) from t1", &c),
            Err(SqlError::Type(_))
        ));
        let Err(SqlError::Syntax { pos, .. }) = parse_query("select a from t where a # 1", &c)
        else {
            panic!()
        };
        assert_eq!(pos, 24);
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let c = catalog();
        assert_eq!(
            parse_query("SELECT a FROM t WHERE a >= 2", &c).unwrap(),
            parse_query("select a from t where a>=2", &c).unwrap()
        );
    }

    #[test]
    fn unparse_round_trips() {
        let c = catalog();
        for q in [
            "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity<25",
            "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity<25 and lo_discount<=3 and lo_discount>=1 and lo_revenue>4900000",
            "select lo_shipmode, sum(lo_quantity) from lineorder group by lo_shipmode",
            "select count(*), avg(b), min(a) as lo from t",
            "select a * 2 + 1, b / 2.5 as half from t where b <> 0.5",
            "select x, sum(q) from t1, t2, t3 where a = c and b = d and z < 3 and x < y group by x",
            "select d_year, sum(lo_revenue) from date, supplier, lineorder where lo_orderdate = d_datekey and lo_suppkey = s_suppkey and s_region = 'ASIA' group by d_year",
            "select x, z from t1, t3 where z < 3 and x = q",
        ] {
            let p = parse_query(q, &c).unwrap();
            let text = unparse(&p);
            let again = parse_query(&text, &c).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(p, again, "{text}");
        }
    }
}
