//! Row-at-a-time interpreter for logical plans. Slow and simple on purpose:
//! compiled variants are checked against it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::logical::{
    AggCall, AggFunc, AggOutput, Attr, CmpOp, Comparison, LogicalPlan, ScalarExpr,
};
use crate::result::ResultTable;
use crate::storage::{ColumnKind, ColumnTable, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReferenceError {
    #[error("table `{0}` not bound")]
    MissingTable(String),
    #[error("attribute `{0}` not available")]
    MissingAttribute(String),
    #[error("{0}() over empty input")]
    EmptyAggregate(&'static str),
}

type Row = Vec<Value>;

struct Rel {
    schema: Vec<Attr>,
    rows: Vec<Row>,
}

impl Rel {
    fn index(&self, a: &Attr) -> Result<usize, ReferenceError> {
        self.schema
            .iter()
            .position(|s| s.table == a.table && s.column == a.column)
            .ok_or_else(|| ReferenceError::MissingAttribute(a.to_string()))
    }
}

/// Compiled scalar expression with attribute positions resolved.
enum Ev {
    Col(usize),
    Lit(Value),
    Bin(
        crate::logical::ArithOp,
        alloc::boxed::Box<Ev>,
        alloc::boxed::Box<Ev>,
    ),
}

fn compile(e: &ScalarExpr, rel: &Rel) -> Result<Ev, ReferenceError> {
    Ok(match e {
        ScalarExpr::Column(a) => Ev::Col(rel.index(a)?),
        ScalarExpr::Int(v) => Ev::Lit(Value::Int(*v)),
        ScalarExpr::Float(v) => Ev::Lit(Value::Float(*v)),
        ScalarExpr::Str(s) => Ev::Lit(Value::Str(s.clone())),
        ScalarExpr::Binary(op, l, r) => Ev::Bin(
            *op,
            alloc::boxed::Box::new(compile(l, rel)?),
            alloc::boxed::Box::new(compile(r, rel)?),
        ),
    })
}

fn as_f64(v: &Value) -> f64 {
    match v {
        Value::Int(x) => *x as f64,
        Value::Float(x) => *x,
        Value::Str(_) => f64::NAN,
    }
}

fn eval(e: &Ev, row: &Row) -> Value {
    match e {
        Ev::Col(i) => row[*i].clone(),
        Ev::Lit(v) => v.clone(),
        Ev::Bin(op, l, r) => match (eval(l, row), eval(r, row)) {
            (Value::Int(a), Value::Int(b)) => Value::Int(op.apply_int(a, b)),
            (a, b) => Value::Float(op.apply_float(as_f64(&a), as_f64(&b))),
        },
    }
}

fn test(op: CmpOp, a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => op.eval(x, y),
        (Value::Str(x), Value::Str(y)) => op.eval(x, y),
        _ => op.eval(as_f64(a), as_f64(b)),
    }
}

fn filter(rel: Rel, preds: &[Comparison]) -> Result<Rel, ReferenceError> {
    let compiled: Vec<(CmpOp, Ev, Ev)> = preds
        .iter()
        .map(|c| Ok((c.op, compile(&c.left, &rel)?, compile(&c.right, &rel)?)))
        .collect::<Result<_, ReferenceError>>()?;
    let rows = rel
        .rows
        .into_iter()
        .filter(|r| {
            compiled
                .iter()
                .all(|(op, l, rr)| test(*op, &eval(l, r), &eval(rr, r)))
        })
        .collect();
    Ok(Rel {
        schema: rel.schema,
        rows,
    })
}

fn run(plan: &LogicalPlan, tables: &[ColumnTable]) -> Result<Rel, ReferenceError> {
    match plan {
        LogicalPlan::Scan { table, schema } => {
            let t = tables
                .iter()
                .find(|t| t.name() == table)
                .ok_or_else(|| ReferenceError::MissingTable(table.clone()))?;
            let cols = schema
                .iter()
                .map(|a| {
                    t.column(&a.column)
                        .ok_or_else(|| ReferenceError::MissingAttribute(a.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rows = (0..t.row_count())
                .map(|i| cols.iter().map(|c| c.value(i)).collect())
                .collect();
            Ok(Rel {
                schema: schema.clone(),
                rows,
            })
        }
        LogicalPlan::Select { input, predicate } => filter(run(input, tables)?, predicate),
        LogicalPlan::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            let l = run(left, tables)?;
            let r = run(right, tables)?;
            let li = l.index(left_key)?;
            let ri = r.index(right_key)?;
            let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, row) in l.rows.iter().enumerate() {
                if let Value::Int(k) = row[li] {
                    map.entry(k).or_default().push(i);
                }
            }
            let mut rows = Vec::new();
            for row in &r.rows {
                if let Value::Int(k) = row[ri] {
                    if let Some(hits) = map.get(&k) {
                        for &h in hits {
                            let mut out = l.rows[h].clone();
                            out.extend(row.iter().cloned());
                            rows.push(out);
                        }
                    }
                }
            }
            let mut schema = l.schema;
            schema.extend(r.schema);
            Ok(Rel { schema, rows })
        }
        LogicalPlan::CrossJoin { left, right } => {
            let l = run(left, tables)?;
            let r = run(right, tables)?;
            let mut rows = Vec::with_capacity(l.rows.len() * r.rows.len());
            for rr in &r.rows {
                for lr in &l.rows {
                    let mut out = lr.clone();
                    out.extend(rr.iter().cloned());
                    rows.push(out);
                }
            }
            let mut schema = l.schema;
            schema.extend(r.schema);
            Ok(Rel { schema, rows })
        }
        LogicalPlan::Map { input, expr, name } => {
            let mut rel = run(input, tables)?;
            let e = compile(expr, &rel)?;
            for row in &mut rel.rows {
                let v = eval(&e, row);
                row.push(v);
            }
            rel.schema.push(Attr::new("", name, expr.kind()));
            Ok(rel)
        }
        LogicalPlan::Project { input, attrs } => {
            let rel = run(input, tables)?;
            let idx = attrs
                .iter()
                .map(|a| rel.index(a))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = rel
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect();
            Ok(Rel {
                schema: attrs.clone(),
                rows,
            })
        }
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
            output,
        } => aggregate(run(input, tables)?, group_keys, aggs, output),
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
enum KeyPart {
    I(i64),
    S(String),
}

#[derive(Clone)]
enum Acc {
    Int(i64),
    Float(f64),
    Count(i64),
    Extreme(Option<Value>),
    Avg(Value, i64),
}

fn fold(acc: &mut Acc, func: AggFunc, v: Option<Value>) {
    match acc {
        Acc::Count(c) => *c += 1,
        Acc::Int(s) => {
            if let Some(Value::Int(x)) = v {
                *s = s.wrapping_add(x)
            }
        }
        Acc::Float(s) => {
            if let Some(x) = v {
                *s += as_f64(&x)
            }
        }
        Acc::Extreme(cur) => {
            let x = v.expect("min/max argument");
            let replace = match cur {
                None => true,
                Some(c) => {
                    let op = if func == AggFunc::Min {
                        CmpOp::Lt
                    } else {
                        CmpOp::Gt
                    };
                    test(op, &x, c)
                }
            };
            if replace {
                *cur = Some(x)
            }
        }
        Acc::Avg(s, n) => {
            *n += 1;
            match (s, v) {
                (Value::Int(s), Some(Value::Int(x))) => *s = s.wrapping_add(x),
                (Value::Float(s), Some(x)) => *s += as_f64(&x),
                _ => {}
            }
        }
    }
}

fn init(a: &AggCall) -> Acc {
    let float = a.arg.as_ref().map(|e| e.kind()) == Some(ColumnKind::Float64);
    match a.func {
        AggFunc::Count => Acc::Count(0),
        AggFunc::Sum if float => Acc::Float(0.0),
        AggFunc::Sum => Acc::Int(0),
        AggFunc::Min | AggFunc::Max => Acc::Extreme(None),
        AggFunc::Avg if float => Acc::Avg(Value::Float(0.0), 0),
        AggFunc::Avg => Acc::Avg(Value::Int(0), 0),
    }
}

fn finish(acc: &Acc, func: AggFunc) -> Result<Value, ReferenceError> {
    Ok(match acc {
        Acc::Int(s) => Value::Int(*s),
        Acc::Float(s) => Value::Float(*s),
        Acc::Count(c) => Value::Int(*c),
        Acc::Extreme(v) => v
            .clone()
            .ok_or(ReferenceError::EmptyAggregate(func.name()))?,
        Acc::Avg(s, n) => {
            if *n == 0 {
                return Err(ReferenceError::EmptyAggregate(func.name()));
            }
            Value::Float(as_f64(s) / *n as f64)
        }
    })
}

fn aggregate(
    rel: Rel,
    group_keys: &[Attr],
    aggs: &[AggCall],
    output: &[AggOutput],
) -> Result<Rel, ReferenceError> {
    let key_idx = group_keys
        .iter()
        .map(|a| rel.index(a))
        .collect::<Result<Vec<_>, _>>()?;
    let args = aggs
        .iter()
        .map(|a| a.arg.as_ref().map(|e| compile(e, &rel)).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    let mut groups: BTreeMap<Vec<KeyPart>, (Row, Vec<Acc>)> = BTreeMap::new();
    if group_keys.is_empty() {
        groups.insert(Vec::new(), (Vec::new(), aggs.iter().map(init).collect()));
    }
    for row in &rel.rows {
        let key: Vec<KeyPart> = key_idx
            .iter()
            .map(|&i| match &row[i] {
                Value::Int(x) => KeyPart::I(*x),
                Value::Float(x) => KeyPart::I(x.to_bits() as i64),
                Value::Str(s) => KeyPart::S(s.clone()),
            })
            .collect();
        let entry = groups.entry(key).or_insert_with(|| {
            (
                key_idx.iter().map(|&i| row[i].clone()).collect(),
                aggs.iter().map(init).collect(),
            )
        });
        for ((acc, a), arg) in entry.1.iter_mut().zip(aggs).zip(&args) {
            fold(acc, a.func, arg.as_ref().map(|e| eval(e, row)));
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (_, (keys, accs)) in groups {
        let mut row = Vec::with_capacity(output.len());
        for o in output {
            row.push(match *o {
                AggOutput::Group(i) => keys[i].clone(),
                AggOutput::Agg(i) => {
                    if group_keys.is_empty() && rel.rows.is_empty() {
                        match aggs[i].func {
                            AggFunc::Sum | AggFunc::Count => finish(&accs[i], aggs[i].func)?,
                            f => return Err(ReferenceError::EmptyAggregate(f.name())),
                        }
                    } else {
                        finish(&accs[i], aggs[i].func)?
                    }
                }
            });
        }
        rows.push(row);
    }
    Ok(Rel {
        schema: Vec::new(),
        rows,
    })
}

/// Executes `plan` over `tables` and returns the result in canonical order.
pub fn reference_execute(
    plan: &LogicalPlan,
    tables: &[ColumnTable],
) -> Result<ResultTable, ReferenceError> {
    let rel = run(plan, tables)?;
    Ok(ResultTable::new(plan.output_schema(), rel.rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical::catalog_of;
    use crate::sql::parse_query;
    use crate::storage::{create_table, gen_lineorder, gen_star_schema, Column};
    use alloc::vec;

    #[test]
    fn quantity_projection_matches_brute_force_count() {
        let t = gen_lineorder(10_000, 7);
        let plan = parse_query(
            "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity<25",
            &catalog_of(core::slice::from_ref(&t)),
        )
        .unwrap();
        let r = reference_execute(&plan, core::slice::from_ref(&t)).unwrap();
        let Column::Int64(q) = t.column("lo_quantity").unwrap() else {
            panic!()
        };
        assert_eq!(r.row_count(), q.iter().filter(|&&v| v < 25).count());
    }

    #[test]
    fn grouped_sums_match_per_group_summation() {
        let t = gen_lineorder(5_000, 3);
        let plan = parse_query(
            "select lo_shipmode, sum(lo_quantity) from lineorder group by lo_shipmode",
            &catalog_of(core::slice::from_ref(&t)),
        )
        .unwrap();
        let r = reference_execute(&plan, core::slice::from_ref(&t)).unwrap();
        assert_eq!(r.row_count(), 7);
        let (Column::DictString { codes, lexicon }, Column::Int64(q)) = (
            t.column("lo_shipmode").unwrap(),
            t.column("lo_quantity").unwrap(),
        ) else {
            panic!()
        };
        for row in &r.rows {
            let Value::Str(mode) = &row[0] else { panic!() };
            let code = lexicon.iter().position(|l| l == mode).unwrap() as i64;
            let expect: i64 = codes
                .iter()
                .zip(q)
                .filter(|(c, _)| **c == code)
                .map(|(_, v)| v)
                .sum();
            assert_eq!(row[1], Value::Int(expect));
        }
    }

    #[test]
    fn empty_inputs() {
        let t = create_table(
            "t",
            &[("a", ColumnKind::Int64), ("g", ColumnKind::Int64)],
            Vec::<Vec<Value>>::new(),
        )
        .unwrap();
        let tables = vec![t];
        let cat = catalog_of(&tables);
        let grouped = parse_query("select g, sum(a) from t group by g", &cat).unwrap();
        assert_eq!(reference_execute(&grouped, &tables).unwrap().row_count(), 0);
        let plain = parse_query("select sum(a), count(*) from t", &cat).unwrap();
        let r = reference_execute(&plain, &tables).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Int(0)]]);
        let min = parse_query("select min(a) from t", &cat).unwrap();
        assert!(matches!(
            reference_execute(&min, &tables),
            Err(ReferenceError::EmptyAggregate("min"))
        ));
        let proj = parse_query("select a from t where a < 3", &cat).unwrap();
        assert_eq!(reference_execute(&proj, &tables).unwrap().row_count(), 0);
    }

    #[test]
    fn join_matches_nested_loop() {
        let tables = gen_star_schema(2_000, 5, 100);
        let plan = parse_query(
            "select d_year, sum(lo_revenue) from date, supplier, lineorder where lo_orderdate = d_datekey and lo_suppkey = s_suppkey and s_region = 'ASIA' group by d_year",
            &catalog_of(&tables),
        )
        .unwrap();
        let r = reference_execute(&plan, &tables).unwrap();
        let lo = &tables[0];
        let date = &tables[1];
        let supp = &tables[2];
        let mut expect: BTreeMap<i64, i64> = BTreeMap::new();
        for i in 0..lo.row_count() {
            let od = lo.column("lo_orderdate").unwrap().raw(i);
            let sk = lo.column("lo_suppkey").unwrap().raw(i);
            let region = supp.column("s_region").unwrap().value(sk as usize);
            if region != Value::Str("ASIA".into()) {
                continue;
            }
            let year = date.column("d_year").unwrap().raw(od as usize);
            *expect.entry(year).or_default() += lo.column("lo_revenue").unwrap().raw(i);
        }
        let got: Vec<(i64, i64)> = r
            .rows
            .iter()
            .map(|row| match (&row[0], &row[1]) {
                (Value::Int(a), Value::Int(b)) => (*a, *b),
                _ => panic!(),
            })
            .collect();
        assert_eq!(got, expect.into_iter().collect::<Vec<_>>());
    }
}
