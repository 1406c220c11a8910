//! Query results in canonical row order.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::storage::{ColumnKind, Value};

/// Relative tolerance used when comparing floating-point result cells.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<(String, ColumnKind)>,
    pub rows: Vec<Vec<Value>>,
}

fn cmp_value(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.total_cmp(y),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        _ => (a.kind() as u8).cmp(&(b.kind() as u8)),
    }
}

fn cmp_row(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match cmp_value(x, y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

pub fn floats_close(a: f64, b: f64) -> bool {
    if a == b || (a.is_nan() && b.is_nan()) {
        return true;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= FLOAT_TOLERANCE * scale
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mismatch {
    Schema,
    RowCount {
        left: usize,
        right: usize,
    },
    Cell {
        row: usize,
        column: usize,
        left: Value,
        right: Value,
    },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Schema => f.write_str("result schemas differ"),
            Mismatch::RowCount { left, right } => write!(f, "{left} rows vs {right} rows"),
            Mismatch::Cell {
                row,
                column,
                left,
                right,
            } => write!(f, "row {row} column {column}: {left} vs {right}"),
        }
    }
}

impl ResultTable {
    pub fn new(columns: Vec<(String, ColumnKind)>, mut rows: Vec<Vec<Value>>) -> Self {
        rows.sort_by(|a, b| cmp_row(a, b));
        ResultTable { columns, rows }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Multiset equality; floats compared with [`FLOAT_TOLERANCE`].
    pub fn compare(&self, other: &ResultTable) -> Result<(), Mismatch> {
        if self.columns.len() != other.columns.len()
            || self
                .columns
                .iter()
                .zip(&other.columns)
                .any(|(a, b)| a.1 != b.1)
        {
            return Err(Mismatch::Schema);
        }
        if self.rows.len() != other.rows.len() {
            return Err(Mismatch::RowCount {
                left: self.rows.len(),
                right: other.rows.len(),
            });
        }
        for (r, (a, b)) in self.rows.iter().zip(&other.rows).enumerate() {
            for (c, (x, y)) in a.iter().zip(b).enumerate() {
                let same = match (x, y) {
                    (Value::Float(p), Value::Float(q)) => floats_close(*p, *q),
                    _ => x == y,
                };
                if !same {
                    return Err(Mismatch::Cell {
                        row: r,
                        column: c,
                        left: x.clone(),
                        right: y.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn matches(&self, other: &ResultTable) -> bool {
        self.compare(other).is_ok()
    }

    /// FNV-1a over the canonical rows. Floats enter rounded to 9 significant
    /// digits so that summation order does not change the checksum.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, kind) in &self.columns {
            eat(name.as_bytes());
            eat(&[*kind as u8, 0xff]);
        }
        let mut buf = String::new();
        for row in &self.rows {
            for v in row {
                buf.clear();
                match v {
                    Value::Int(x) => {
                        let _ = fmt::Write::write_fmt(&mut buf, format_args!("i{x}"));
                    }
                    Value::Float(x) => {
                        let _ = fmt::Write::write_fmt(&mut buf, format_args!("f{x:.8e}"));
                    }
                    Value::Str(s) => {
                        let _ = fmt::Write::write_fmt(&mut buf, format_args!("s{s}"));
                    }
                }
                eat(buf.as_bytes());
                eat(&[0x1f]);
            }
            eat(&[0x1e]);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table(rows: Vec<Vec<Value>>) -> ResultTable {
        ResultTable::new(
            vec![
                ("a".into(), ColumnKind::Int64),
                ("b".into(), ColumnKind::Float64),
            ],
            rows,
        )
    }

    #[test]
    fn order_does_not_matter() {
        let a = table(vec![
            vec![Value::Int(2), Value::Float(1.0)],
            vec![Value::Int(1), Value::Float(3.0)],
        ]);
        let b = table(vec![
            vec![Value::Int(1), Value::Float(3.0 + 1e-12)],
            vec![Value::Int(2), Value::Float(1.0)],
        ]);
        assert!(a.matches(&b));
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn detects_differences() {
        let a = table(vec![vec![Value::Int(1), Value::Float(1.0)]]);
        let b = table(vec![vec![Value::Int(1), Value::Float(1.001)]]);
        assert!(matches!(
            a.compare(&b),
            Err(Mismatch::Cell { column: 1, .. })
        ));
        let c = table(vec![]);
        assert!(matches!(a.compare(&c), Err(Mismatch::RowCount { .. })));
    }
}
