//! Resolved logical plans shared by the SQL front end, the planner and the
//! reference executor.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::storage::{ColumnKind, ColumnTable};

/// Table name to ordered schema.
pub type Catalog = BTreeMap<String, Vec<(String, ColumnKind)>>;

pub fn catalog_of(tables: &[ColumnTable]) -> Catalog {
    tables
        .iter()
        .map(|t| (String::from(t.name()), t.schema()))
        .collect()
}

/// A resolved attribute. Derived attributes (from `Map`) have an empty table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Attr {
    pub table: String,
    pub column: String,
    pub kind: ColumnKind,
}

impl Attr {
    pub fn new(table: &str, column: &str, kind: ColumnKind) -> Self {
        Attr {
            table: table.into(),
            column: column.into(),
            kind,
        }
    }

    pub fn is_derived(&self) -> bool {
        self.table.is_empty()
    }

    /// Fully qualified name, used as the attribute identity inside pipelines.
    pub fn qualified(&self) -> String {
        if self.is_derived() {
            alloc::format!("${}", self.column)
        } else {
            alloc::format!("{}.{}", self.table, self.column)
        }
    }
}

impl fmt::Display for Attr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_derived() {
            f.write_str(&self.column)
        } else {
            write!(f, "{}.{}", self.table, self.column)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    pub fn apply_int(self, a: i64, b: i64) -> i64 {
        match self {
            ArithOp::Add => a.wrapping_add(b),
            ArithOp::Sub => a.wrapping_sub(b),
            ArithOp::Mul => a.wrapping_mul(b),
            ArithOp::Div => {
                if b == 0 {
                    0
                } else {
                    a.wrapping_div(b)
                }
            }
        }
    }

    pub fn apply_float(self, a: f64, b: f64) -> f64 {
        match self {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
            ArithOp::Mul => a * b,
            ArithOp::Div => {
                if b == 0.0 {
                    0.0
                } else {
                    a / b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Ne => "<>",
        }
    }

    /// The same comparison with operands swapped.
    pub fn flip(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Gt => CmpOp::Lt,
            other => other,
        }
    }

    pub fn eval<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarExpr {
    Column(Attr),
    Int(i64),
    Float(f64),
    Str(String),
    Binary(ArithOp, Box<ScalarExpr>, Box<ScalarExpr>),
}

impl ScalarExpr {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ScalarExpr::Column(a) => a.kind,
            ScalarExpr::Int(_) => ColumnKind::Int64,
            ScalarExpr::Float(_) => ColumnKind::Float64,
            ScalarExpr::Str(_) => ColumnKind::String,
            ScalarExpr::Binary(_, l, r) => {
                if l.kind() == ColumnKind::Float64 || r.kind() == ColumnKind::Float64 {
                    ColumnKind::Float64
                } else {
                    ColumnKind::Int64
                }
            }
        }
    }

    pub fn attrs(&self, out: &mut Vec<Attr>) {
        match self {
            ScalarExpr::Column(a) => {
                if !out.contains(a) {
                    out.push(a.clone())
                }
            }
            ScalarExpr::Binary(_, l, r) => {
                l.attrs(out);
                r.attrs(out);
            }
            _ => {}
        }
    }

    pub fn as_column(&self) -> Option<&Attr> {
        match self {
            ScalarExpr::Column(a) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Column(a) => write!(f, "{a}"),
            ScalarExpr::Int(v) => write!(f, "{v}"),
            ScalarExpr::Float(v) => {
                if v.is_finite() && v.abs() < 1e15 && *v == (*v as i64) as f64 {
                    write!(f, "{v:.1}")
                } else {
                    write!(f, "{v}")
                }
            }
            ScalarExpr::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            ScalarExpr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub op: CmpOp,
    pub left: ScalarExpr,
    pub right: ScalarExpr,
}

impl Comparison {
    pub fn attrs(&self, out: &mut Vec<Attr>) {
        self.left.attrs(out);
        self.right.attrs(out);
    }

    /// Tables referenced by either side.
    pub fn tables(&self) -> Vec<String> {
        let mut attrs = Vec::new();
        self.attrs(&mut attrs);
        let mut t: Vec<String> = attrs
            .into_iter()
            .filter(|a| !a.is_derived())
            .map(|a| a.table)
            .collect();
        t.sort();
        t.dedup();
        t
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.left, self.op.symbol(), self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFunc {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Count => "count",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Avg => "avg",
        }
    }

    pub fn result_kind(self, arg: Option<ColumnKind>) -> ColumnKind {
        match self {
            AggFunc::Count => ColumnKind::Int64,
            AggFunc::Avg => ColumnKind::Float64,
            _ => arg.unwrap_or(ColumnKind::Int64),
        }
    }
}

/// One aggregate in an `Aggregate` node. `arg` is `None` for `count(*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggCall {
    pub func: AggFunc,
    pub arg: Option<ScalarExpr>,
    pub name: String,
}

impl AggCall {
    pub fn result_kind(&self) -> ColumnKind {
        self.func.result_kind(self.arg.as_ref().map(|a| a.kind()))
    }
}

/// Position of an output column of an `Aggregate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOutput {
    Group(usize),
    Agg(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogicalPlan {
    Scan {
        table: String,
        schema: Vec<Attr>,
    },
    Select {
        input: Box<LogicalPlan>,
        predicate: Vec<Comparison>,
    },
    /// Hash join; the left input is the build side.
    Join {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        left_key: Attr,
        right_key: Attr,
    },
    CrossJoin {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
    },
    Map {
        input: Box<LogicalPlan>,
        expr: ScalarExpr,
        name: String,
    },
    Aggregate {
        input: Box<LogicalPlan>,
        group_keys: Vec<Attr>,
        aggs: Vec<AggCall>,
        output: Vec<AggOutput>,
    },
    Project {
        input: Box<LogicalPlan>,
        attrs: Vec<Attr>,
    },
}

impl LogicalPlan {
    /// Base tables in the order they were listed in the query.
    pub fn base_tables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tables(&mut out);
        out
    }

    fn collect_tables(&self, out: &mut Vec<String>) {
        match self {
            LogicalPlan::Scan { table, .. } => out.push(table.clone()),
            LogicalPlan::Select { input, .. }
            | LogicalPlan::Map { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Project { input, .. } => input.collect_tables(out),
            // build tables are listed before the probe side
            LogicalPlan::Join { left, right, .. } | LogicalPlan::CrossJoin { left, right } => {
                let mut r = Vec::new();
                right.collect_tables(&mut r);
                let driver = r.pop();
                out.extend(r);
                left.collect_tables(out);
                out.extend(driver);
            }
        }
    }

    pub fn join_count(&self) -> usize {
        match self {
            LogicalPlan::Scan { .. } => 0,
            LogicalPlan::Select { input, .. }
            | LogicalPlan::Map { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Project { input, .. } => input.join_count(),
            LogicalPlan::Join { left, right, .. } => 1 + left.join_count() + right.join_count(),
            LogicalPlan::CrossJoin { left, right } => left.join_count() + right.join_count(),
        }
    }

    pub fn cross_join_count(&self) -> usize {
        match self {
            LogicalPlan::Scan { .. } => 0,
            LogicalPlan::Select { input, .. }
            | LogicalPlan::Map { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Project { input, .. } => input.cross_join_count(),
            LogicalPlan::Join { left, right, .. } => {
                left.cross_join_count() + right.cross_join_count()
            }
            LogicalPlan::CrossJoin { left, right } => {
                1 + left.cross_join_count() + right.cross_join_count()
            }
        }
    }

    /// Output columns of the plan root, in order.
    pub fn output_schema(&self) -> Vec<(String, ColumnKind)> {
        match self {
            LogicalPlan::Project { attrs, .. } => {
                attrs.iter().map(|a| (a.column.clone(), a.kind)).collect()
            }
            LogicalPlan::Aggregate {
                group_keys,
                aggs,
                output,
                ..
            } => output
                .iter()
                .map(|o| match *o {
                    AggOutput::Group(i) => (group_keys[i].column.clone(), group_keys[i].kind),
                    AggOutput::Agg(i) => (aggs[i].name.clone(), aggs[i].result_kind()),
                })
                .collect(),
            other => other
                .attrs()
                .into_iter()
                .map(|a| (a.column, a.kind))
                .collect(),
        }
    }

    /// All attributes visible above this node (before any projection).
    pub fn attrs(&self) -> Vec<Attr> {
        match self {
            LogicalPlan::Scan { schema, .. } => schema.clone(),
            LogicalPlan::Select { input, .. } => input.attrs(),
            LogicalPlan::Join { left, right, .. } | LogicalPlan::CrossJoin { left, right } => {
                let mut a = left.attrs();
                a.extend(right.attrs());
                a
            }
            LogicalPlan::Map {
                input, expr, name, ..
            } => {
                let mut a = input.attrs();
                a.push(Attr::new("", name, expr.kind()));
                a
            }
            LogicalPlan::Aggregate { .. } | LogicalPlan::Project { .. } => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_division_by_zero_is_zero() {
        assert_eq!(ArithOp::Div.apply_int(7, 0), 0);
        assert_eq!(ArithOp::Div.apply_int(-7, 2), -3);
        assert_eq!(ArithOp::Div.apply_int(i64::MIN, -1), i64::MIN);
    }

    #[test]
    fn flip_is_involution() {
        for op in [
            CmpOp::Lt,
            CmpOp::Le,
            CmpOp::Eq,
            CmpOp::Ge,
            CmpOp::Gt,
            CmpOp::Ne,
        ] {
            assert_eq!(op.flip().flip(), op);
            assert_eq!(op.eval(1, 2), op.flip().eval(2, 1));
        }
    }
}
