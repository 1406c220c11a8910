//! Immutable columnar tables and deterministic benchmark data generators.
//!
//! Tables are built once and never mutated afterwards. Strings are
//! dictionary-encoded in first-appearance order; every column carries
//! min/max/distinct statistics computed at construction time, which the
//! code generator uses for hash-table sizing and group-key packing.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row count of generated dimension tables unless a caller asks otherwise.
pub const DEFAULT_DIMENSION_ROWS: usize = 1000;

pub const SHIP_MODES: [&str; 7] = ["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"];
pub const REGIONS: [&str; 5] = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"];
const WEEKDAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StorageError {
    #[error("row {row}: {reason}")]
    SchemaMismatch { row: usize, reason: String },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{column}` has {actual} values, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        actual: usize,
    },
    #[error("dictionary code {code} out of range in column `{column}`")]
    InvalidCode { column: String, code: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnKind {
    Int64,
    Float64,
    String,
}

impl ColumnKind {
    pub fn name(self) -> &'static str {
        match self {
            ColumnKind::Int64 => "int64",
            ColumnKind::Float64 => "float64",
            ColumnKind::String => "string",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "int64" | "int" | "integer" | "bigint" => Some(ColumnKind::Int64),
            "float64" | "float" | "double" => Some(ColumnKind::Float64),
            "string" | "str" | "text" | "varchar" => Some(ColumnKind::String),
            _ => None,
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single scalar value as it enters or leaves a table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn kind(&self) -> ColumnKind {
        match self {
            Value::Int(_) => ColumnKind::Int64,
            Value::Float(_) => ColumnKind::Float64,
            Value::Str(_) => ColumnKind::String,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    DictString {
        codes: Vec<i64>,
        lexicon: Vec<String>,
    },
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self {
            Column::Int64(_) => ColumnKind::Int64,
            Column::Float64(_) => ColumnKind::Float64,
            Column::DictString { .. } => ColumnKind::String,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int64(v) => v.len(),
            Column::Float64(v) => v.len(),
            Column::DictString { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            Column::Int64(v) => Value::Int(v[row]),
            Column::Float64(v) => Value::Float(v[row]),
            Column::DictString { codes, lexicon } => {
                Value::Str(lexicon[codes[row] as usize].clone())
            }
        }
    }

    /// Raw 64-bit cell: integers and dictionary codes as-is, floats as IEEE bits.
    pub fn raw(&self, row: usize) -> i64 {
        match self {
            Column::Int64(v) => v[row],
            Column::Float64(v) => v[row].to_bits() as i64,
            Column::DictString { codes, .. } => codes[row],
        }
    }

    pub fn lexicon(&self) -> Option<&[String]> {
        match self {
            Column::DictString { lexicon, .. } => Some(lexicon),
            _ => None,
        }
    }

    /// Dictionary code of `s`, if the string occurs in this column.
    pub fn code_of(&self, s: &str) -> Option<i64> {
        self.lexicon()?
            .iter()
            .position(|l| l == s)
            .map(|p| p as i64)
    }
}

/// Statistics the compiler relies on. For strings, min/max/distinct refer to
/// dictionary codes; for floats, min/max are zero and only `distinct` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ColumnStats {
    pub min: i64,
    pub max: i64,
    pub distinct: usize,
}

impl ColumnStats {
    fn compute(column: &Column) -> Self {
        match column {
            Column::Int64(v) => int_stats(v),
            Column::DictString { codes, lexicon } => {
                let mut s = int_stats(codes);
                s.distinct = s.distinct.min(lexicon.len());
                s
            }
            Column::Float64(v) => {
                let mut bits: Vec<u64> = v.iter().map(|f| f.to_bits()).collect();
                bits.sort_unstable();
                bits.dedup();
                ColumnStats {
                    min: 0,
                    max: 0,
                    distinct: bits.len(),
                }
            }
        }
    }
}

fn int_stats(v: &[i64]) -> ColumnStats {
    if v.is_empty() {
        return ColumnStats::default();
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable();
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    sorted.dedup();
    ColumnStats {
        min,
        max,
        distinct: sorted.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedColumn {
    pub name: String,
    pub data: Column,
    pub stats: ColumnStats,
}

/// An immutable, named columnar relation.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    name: String,
    row_count: usize,
    columns: Vec<NamedColumn>,
}

impl ColumnTable {
    /// Assembles a table from already-built columns.
    pub fn from_columns(
        name: impl Into<String>,
        columns: Vec<(String, Column)>,
    ) -> Result<Self, StorageError> {
        let row_count = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut out: Vec<NamedColumn> = Vec::with_capacity(columns.len());
        for (cname, data) in columns {
            if out.iter().any(|c| c.name == cname) {
                return Err(StorageError::DuplicateColumn(cname));
            }
            if data.len() != row_count {
                return Err(StorageError::LengthMismatch {
                    column: cname,
                    expected: row_count,
                    actual: data.len(),
                });
            }
            if let Column::DictString { codes, lexicon } = &data {
                if let Some(&bad) = codes
                    .iter()
                    .find(|&&c| c < 0 || c as usize >= lexicon.len())
                {
                    return Err(StorageError::InvalidCode {
                        column: cname,
                        code: bad,
                    });
                }
            }
            let stats = ColumnStats::compute(&data);
            out.push(NamedColumn {
                name: cname,
                data,
                stats,
            });
        }
        Ok(ColumnTable {
            name: name.into(),
            row_count,
            columns: out,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[NamedColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.named(name).map(|c| &c.data)
    }

    pub fn named(&self, name: &str) -> Option<&NamedColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn schema(&self) -> Vec<(String, ColumnKind)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.data.kind()))
            .collect()
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.data.value(i)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count).map(move |i| self.row(i))
    }
}

/// Incremental dictionary encoder; codes are assigned in first-appearance order.
#[derive(Debug, Default)]
pub struct DictBuilder {
    codes: Vec<i64>,
    lexicon: Vec<String>,
    index: BTreeMap<String, i64>,
}

impl DictBuilder {
    pub fn push(&mut self, s: &str) {
        let code = match self.index.get(s) {
            Some(&c) => c,
            None => {
                let c = self.lexicon.len() as i64;
                self.lexicon.push(s.to_string());
                self.index.insert(s.to_string(), c);
                c
            }
        };
        self.codes.push(code);
    }

    pub fn finish(self) -> Column {
        Column::DictString {
            codes: self.codes,
            lexicon: self.lexicon,
        }
    }
}

enum Builder {
    Int(Vec<i64>),
    Float(Vec<f64>),
    Str(DictBuilder),
}

/// Builds a table row by row, checking arity and kinds against `schema`.
pub fn create_table<S, I>(
    name: &str,
    schema: &[(S, ColumnKind)],
    rows: I,
) -> Result<ColumnTable, StorageError>
where
    S: AsRef<str>,
    I: IntoIterator<Item = Vec<Value>>,
{
    for (i, (n, _)) in schema.iter().enumerate() {
        if schema[..i].iter().any(|(m, _)| m.as_ref() == n.as_ref()) {
            return Err(StorageError::DuplicateColumn(n.as_ref().to_string()));
        }
    }
    let mut builders: Vec<Builder> = schema
        .iter()
        .map(|(_, k)| match k {
            ColumnKind::Int64 => Builder::Int(Vec::new()),
            ColumnKind::Float64 => Builder::Float(Vec::new()),
            ColumnKind::String => Builder::Str(DictBuilder::default()),
        })
        .collect();
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != schema.len() {
            return Err(StorageError::SchemaMismatch {
                row: r,
                reason: alloc::format!("expected {} values, got {}", schema.len(), row.len()),
            });
        }
        for (c, (value, b)) in row.into_iter().zip(builders.iter_mut()).enumerate() {
            match (b, value) {
                (Builder::Int(v), Value::Int(x)) => v.push(x),
                (Builder::Float(v), Value::Float(x)) => v.push(x),
                (Builder::Str(d), Value::Str(s)) => d.push(&s),
                (_, value) => {
                    return Err(StorageError::SchemaMismatch {
                        row: r,
                        reason: alloc::format!(
                            "column `{}` expects {}, got {}",
                            schema[c].0.as_ref(),
                            schema[c].1,
                            value.kind()
                        ),
                    })
                }
            }
        }
    }
    let columns = schema
        .iter()
        .zip(builders)
        .map(|((n, _), b)| {
            let col = match b {
                Builder::Int(v) => Column::Int64(v),
                Builder::Float(v) => Column::Float64(v),
                Builder::Str(d) => d.finish(),
            };
            (n.as_ref().to_string(), col)
        })
        .collect();
    ColumnTable::from_columns(name, columns)
}

/// Schema of the generated `lineorder` table, in column order.
pub fn lineorder_schema() -> Vec<(String, ColumnKind)> {
    [
        ("lo_linenumber", ColumnKind::Int64),
        ("lo_quantity", ColumnKind::Int64),
        ("lo_discount", ColumnKind::Int64),
        ("lo_revenue", ColumnKind::Int64),
        ("lo_extendedprice", ColumnKind::Int64),
        ("lo_shipmode", ColumnKind::String),
        ("lo_partkey", ColumnKind::Int64),
        ("lo_orderdate", ColumnKind::Int64),
        ("lo_suppkey", ColumnKind::Int64),
        ("lo_custkey", ColumnKind::Int64),
    ]
    .iter()
    .map(|(n, k)| (n.to_string(), *k))
    .collect()
}

/// Deterministic lineorder-style fact table with join keys into dimension
/// tables of [`DEFAULT_DIMENSION_ROWS`] rows.
pub fn gen_lineorder(n: usize, seed: u64) -> ColumnTable {
    gen_lineorder_with(n, seed, DEFAULT_DIMENSION_ROWS)
}

pub fn gen_lineorder_with(n: usize, seed: u64, dimension_rows: usize) -> ColumnTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = dimension_rows.max(1) as i64;
    let parts = ((n / 5).max(1)) as i64;

    let mut linenumber = Vec::with_capacity(n);
    let mut quantity = Vec::with_capacity(n);
    let mut discount = Vec::with_capacity(n);
    let mut revenue = Vec::with_capacity(n);
    let mut extendedprice = Vec::with_capacity(n);
    let mut shipmode = DictBuilder::default();
    let mut partkey = Vec::with_capacity(n);
    let mut orderdate = Vec::with_capacity(n);
    let mut suppkey = Vec::with_capacity(n);
    let mut custkey = Vec::with_capacity(n);

    for i in 0..n {
        linenumber.push(i as i64 + 1);
        quantity.push(rng.gen_range(1..=50i64));
        discount.push(rng.gen_range(0..=10i64));
        revenue.push(rng.gen_range(1..=6_000_000i64));
        extendedprice.push(rng.gen_range(1..=5_000_000i64));
        shipmode.push(SHIP_MODES[rng.gen_range(0..SHIP_MODES.len())]);
        partkey.push(rng.gen_range(0..parts));
        orderdate.push(rng.gen_range(0..dims));
        suppkey.push(rng.gen_range(0..dims));
        custkey.push(rng.gen_range(0..dims));
    }

    let columns = alloc::vec![
        ("lo_linenumber".to_string(), Column::Int64(linenumber)),
        ("lo_quantity".to_string(), Column::Int64(quantity)),
        ("lo_discount".to_string(), Column::Int64(discount)),
        ("lo_revenue".to_string(), Column::Int64(revenue)),
        ("lo_extendedprice".to_string(), Column::Int64(extendedprice)),
        ("lo_shipmode".to_string(), shipmode.finish()),
        ("lo_partkey".to_string(), Column::Int64(partkey)),
        ("lo_orderdate".to_string(), Column::Int64(orderdate)),
        ("lo_suppkey".to_string(), Column::Int64(suppkey)),
        ("lo_custkey".to_string(), Column::Int64(custkey)),
    ];
    ColumnTable::from_columns("lineorder", columns).expect("generator schema is consistent")
}

/// `date` dimension: one row per day key, seven years of data.
pub fn gen_date(rows: usize, seed: u64) -> ColumnTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd47e_d47e_d47e_d47e);
    let n = rows.max(1) as i64;
    let mut key = Vec::with_capacity(rows);
    let mut year = Vec::with_capacity(rows);
    let mut month = Vec::with_capacity(rows);
    let mut weekday = DictBuilder::default();
    for i in 0..rows as i64 {
        key.push(i);
        year.push(1992 + i * 7 / n);
        month.push(1 + (i * 84 / n) % 12);
        weekday.push(WEEKDAYS[rng.gen_range(0..WEEKDAYS.len())]);
    }
    ColumnTable::from_columns(
        "date",
        alloc::vec![
            ("d_datekey".to_string(), Column::Int64(key)),
            ("d_year".to_string(), Column::Int64(year)),
            ("d_monthnuminyear".to_string(), Column::Int64(month)),
            ("d_dayofweek".to_string(), weekday.finish()),
        ],
    )
    .expect("generator schema is consistent")
}

/// `supplier` dimension with region and nation strings.
pub fn gen_supplier(rows: usize, seed: u64) -> ColumnTable {
    let (key, region, nation) = keyed_region_nation(rows, seed ^ 0x5ee_5ee_5ee);
    ColumnTable::from_columns(
        "supplier",
        alloc::vec![
            ("s_suppkey".to_string(), Column::Int64(key)),
            ("s_region".to_string(), region),
            ("s_nation".to_string(), nation),
        ],
    )
    .expect("generator schema is consistent")
}

/// `customer` dimension with region and nation strings.
pub fn gen_customer(rows: usize, seed: u64) -> ColumnTable {
    let (key, region, nation) = keyed_region_nation(rows, seed ^ 0x0c05_70e5);
    ColumnTable::from_columns(
        "customer",
        alloc::vec![
            ("c_custkey".to_string(), Column::Int64(key)),
            ("c_region".to_string(), region),
            ("c_nation".to_string(), nation),
        ],
    )
    .expect("generator schema is consistent")
}

fn keyed_region_nation(rows: usize, seed: u64) -> (Vec<i64>, Column, Column) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = Vec::with_capacity(rows);
    let mut region = DictBuilder::default();
    let mut nation = DictBuilder::default();
    for i in 0..rows {
        key.push(i as i64);
        let r = rng.gen_range(0..REGIONS.len());
        region.push(REGIONS[r]);
        // five nations per region
        let nat = r * 5 + rng.gen_range(0..5usize);
        nation.push(&alloc::format!("NATION{nat:02}"));
    }
    (key, region.finish(), nation.finish())
}

/// The full star-schema dataset: lineorder plus its three dimension tables.
pub fn gen_star_schema(n: usize, seed: u64, dimension_rows: usize) -> Vec<ColumnTable> {
    alloc::vec![
        gen_lineorder_with(n, seed, dimension_rows),
        gen_date(dimension_rows, seed),
        gen_supplier(dimension_rows, seed),
        gen_customer(dimension_rows, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_relation() {
        let t = create_table("t", &[("a", ColumnKind::Int64)], Vec::<Vec<Value>>::new()).unwrap();
        assert_eq!(t.row_count(), 0);
        assert_eq!(t.columns().len(), 1);
    }

    #[test]
    fn strings_are_encoded_in_first_appearance_order() {
        let rows = ["x", "y", "x"]
            .iter()
            .map(|s| vec![Value::Str(s.to_string())]);
        let t = create_table("t", &[("s", ColumnKind::String)], rows).unwrap();
        match t.column("s").unwrap() {
            Column::DictString { codes, lexicon } => {
                assert_eq!(codes, &vec![0, 1, 0]);
                assert_eq!(lexicon, &vec!["x".to_string(), "y".to_string()]);
            }
            other => panic!("unexpected column {other:?}"),
        }
    }

    #[test]
    fn mixed_rows_read_back() {
        let rows = vec![
            vec![Value::Int(1), Value::Float(0.5)],
            vec![Value::Int(-7), Value::Float(2.25)],
            vec![Value::Int(3), Value::Float(-1.0)],
        ];
        let t = create_table(
            "t",
            &[("q", ColumnKind::Int64), ("r", ColumnKind::Float64)],
            rows.clone(),
        )
        .unwrap();
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.columns().len(), 2);
        let back: Vec<_> = t.rows().collect();
        assert_eq!(back, rows);
    }

    #[test]
    fn schema_errors() {
        let err = create_table(
            "t",
            &[("a", ColumnKind::Int64)],
            vec![vec![Value::Int(1), Value::Int(2)]],
        )
        .unwrap_err();
        assert!(matches!(err, StorageError::SchemaMismatch { row: 0, .. }));
        let err = create_table(
            "t",
            &[("a", ColumnKind::Int64)],
            vec![vec![Value::Str("no".into())]],
        )
        .unwrap_err();
        assert!(matches!(err, StorageError::SchemaMismatch { .. }));
        let err = create_table(
            "t",
            &[("a", ColumnKind::Int64), ("a", ColumnKind::Float64)],
            Vec::<Vec<Value>>::new(),
        )
        .unwrap_err();
        assert_eq!(err, StorageError::DuplicateColumn("a".into()));
    }

    #[test]
    fn lineorder_empty_has_schema() {
        let t = gen_lineorder(0, 3);
        assert_eq!(t.row_count(), 0);
        assert_eq!(t.schema(), lineorder_schema());
    }

    #[test]
    fn lineorder_selectivity_of_quantity_filter() {
        let t = gen_lineorder(100_000, 42);
        let Column::Int64(q) = t.column("lo_quantity").unwrap() else {
            panic!()
        };
        let hits = q.iter().filter(|&&v| v < 25).count();
        let sel = hits as f64 / 100_000.0;
        assert!((0.44..=0.52).contains(&sel), "selectivity {sel}");
    }

    #[test]
    fn lineorder_is_deterministic() {
        assert_eq!(gen_lineorder(2000, 9), gen_lineorder(2000, 9));
        assert_ne!(
            gen_lineorder(2000, 9).column("lo_quantity"),
            gen_lineorder(2000, 10).column("lo_quantity")
        );
    }

    #[test]
    fn lineorder_ranges() {
        let n = 5000;
        let t = gen_lineorder(n, 1);
        let st = |c: &str| t.named(c).unwrap().stats;
        assert_eq!(st("lo_linenumber").min, 1);
        assert_eq!(st("lo_linenumber").max, n as i64);
        assert!(st("lo_quantity").min >= 1 && st("lo_quantity").max <= 50);
        assert!(st("lo_discount").min >= 0 && st("lo_discount").max <= 10);
        assert!(st("lo_partkey").max < (n / 5) as i64);
        assert_eq!(st("lo_shipmode").distinct, 7);
        assert!(st("lo_orderdate").max < DEFAULT_DIMENSION_ROWS as i64);
    }

    #[test]
    fn dimension_keys_are_unique() {
        for t in [
            gen_date(1000, 1),
            gen_supplier(1000, 1),
            gen_customer(1000, 1),
        ] {
            let first = &t.columns()[0];
            assert_eq!(first.stats.distinct, t.row_count(), "{}", t.name());
        }
    }

    proptest::proptest! {
        #[test]
        fn dictionary_round_trip(words in proptest::collection::vec("[a-d]{0,3}", 0..40)) {
            let rows = words.iter().map(|w| vec![Value::Str(w.clone())]);
            let t = create_table("t", &[("s", ColumnKind::String)], rows).unwrap();
            for (i, w) in words.iter().enumerate() {
                proptest::prop_assert_eq!(t.column("s").unwrap().value(i), Value::Str(w.clone()));
            }
        }
    }
}
