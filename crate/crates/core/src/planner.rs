//! Splits a logical plan into pipeline programs.
//!
//! Each join build side becomes its own pipeline ending in HASH_PUT and a
//! PROJECT of the stored columns. The last FROM table drives the terminal
//! pipeline, which probes the build tables in turn and ends in PROJECT,
//! AGGREGATE or HASH_AGGREGATE.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::ir::{
    self, AggSpec, Column, Cond, HashFunction, HashParams, HashTableDescriptor, HashTableImpl,
    IrError, PExpr, PipelineKind, PipelineOp, PipelineProgram, Predication, VariantConfiguration,
};
use crate::logical::{AggCall, AggFunc, AggOutput, Attr, Comparison, LogicalPlan, ScalarExpr};
use crate::storage::{ColumnKind, ColumnStats, ColumnTable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("unsupported plan: {0}")]
    Unsupported(String),
    #[error("unknown table `{0}`")]
    MissingTable(String),
    #[error("unknown attribute `{0}`")]
    MissingAttribute(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Where a result column comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputSource {
    /// Column of the terminal PROJECT, by pipeline attribute name.
    Attr(String),
    Group(usize),
    Agg(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub source: OutputSource,
}

/// All pipelines of one query. Build pipelines come first, in the order
/// their hash tables are probed; the terminal pipeline is last.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSet {
    pub programs: Vec<PipelineProgram>,
    pub hash_tables: Vec<HashTableDescriptor>,
    /// (producer, consumer) pipeline ids.
    pub dependencies: Vec<(usize, usize)>,
    pub output: Vec<OutputColumn>,
}

const SEED_BASE: u64 = 0x9e37_79b9_7f4a_7c15;

impl PipelineSet {
    pub fn terminal(&self) -> &PipelineProgram {
        self.programs.last().expect("pipeline set is never empty")
    }

    pub fn kind(&self) -> PipelineKind {
        self.terminal().kind
    }

    pub fn uses_hash(&self) -> bool {
        self.programs.iter().any(|p| p.uses_hash())
    }

    /// The query's variant space: the terminal pipeline's space, widened by
    /// the hash dimensions when any pipeline joins.
    pub fn variant_space(&self) -> Vec<VariantConfiguration> {
        ir::enumerate_for(self.kind(), self.uses_hash())
    }

    /// Configuration with fields that cannot affect this query reset.
    pub fn canonical(&self, config: &VariantConfiguration) -> VariantConfiguration {
        let uses_hash = self.uses_hash() || self.kind() == PipelineKind::Aggregation;
        config.restrict(self.kind(), uses_hash)
    }

    /// Applies `config` to the terminal pipeline. Build pipelines take the
    /// shared code-generation modes (access, predication, hash table, unroll)
    /// and keep their default strategy.
    pub fn specialise(&self, config: &VariantConfiguration) -> Result<PipelineSet, IrError> {
        let mut out = self.clone();
        let n = out.programs.len();
        let build_config = VariantConfiguration {
            memory_access: config.memory_access,
            predication: config.predication,
            hash_table: config.hash_table,
            hash_function: config.hash_function,
            unroll_factor: config.unroll_factor,
            ..VariantConfiguration::default()
        };
        for (i, p) in out.programs.iter_mut().enumerate() {
            let c = if i + 1 == n { config } else { &build_config };
            *p = ir::apply_variant(p, c)?;
        }
        for h in &mut out.hash_tables {
            h.implementation = config.hash_table;
            h.function = config.hash_function;
        }
        Ok(out)
    }

    /// Every diagnostic over all programs.
    pub fn validate(&self) -> Vec<ir::Diagnostic> {
        let mut d: Vec<_> = self
            .programs
            .iter()
            .flat_map(|p| ir::validate_program(p, &self.hash_tables))
            .collect();
        d.extend(ir::validate_hash_consistency(&self.programs));
        d
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for h in &self.hash_tables {
            let _ = writeln!(
                s,
                "ht{} key={} rows<={} built by pipeline {} [h={} p={}]",
                h.id, h.key.0, h.build_rows, h.build_pipeline, h.implementation, h.function
            );
        }
        for p in &self.programs {
            s.push_str(&p.dump());
        }
        s
    }
}

/// Wraps a lowered op sequence as a program.
pub fn lower_pipeline(id: usize, ops: Vec<PipelineOp>) -> Result<PipelineProgram, PlanError> {
    Ok(PipelineProgram::new(id, ops)?)
}

struct BaseScan {
    table: String,
    preds: Vec<Comparison>,
}

enum Level {
    Hash {
        build: BaseScan,
        build_key: Attr,
        probe_key: Attr,
        residual: Vec<Comparison>,
    },
    Cross {
        aux: BaseScan,
        residual: Vec<Comparison>,
    },
}

impl Level {
    fn residual_mut(&mut self) -> &mut Vec<Comparison> {
        match self {
            Level::Hash { residual, .. } | Level::Cross { residual, .. } => residual,
        }
    }
}

fn base_scan(plan: &LogicalPlan) -> Result<BaseScan, PlanError> {
    match plan {
        LogicalPlan::Scan { table, .. } => Ok(BaseScan {
            table: table.clone(),
            preds: Vec::new(),
        }),
        LogicalPlan::Select { input, predicate } => {
            let mut s = base_scan(input)?;
            s.preds.extend(predicate.iter().cloned());
            Ok(s)
        }
        other => Err(PlanError::Unsupported(alloc::format!(
            "join input must be a filtered base table, found {}",
            node_name(other)
        ))),
    }
}

fn node_name(plan: &LogicalPlan) -> &'static str {
    match plan {
        LogicalPlan::Scan { .. } => "scan",
        LogicalPlan::Select { .. } => "selection",
        LogicalPlan::Join { .. } => "join",
        LogicalPlan::CrossJoin { .. } => "cross join",
        LogicalPlan::Map { .. } => "map",
        LogicalPlan::Aggregate { .. } => "aggregation",
        LogicalPlan::Project { .. } => "projection",
    }
}

/// Decomposes a left-deep join chain into its driver and join levels.
fn chain(plan: &LogicalPlan) -> Result<(BaseScan, Vec<Level>), PlanError> {
    match plan {
        LogicalPlan::Scan { .. } => Ok((base_scan(plan)?, Vec::new())),
        LogicalPlan::Select { input, predicate } => match &**input {
            LogicalPlan::Join { .. } | LogicalPlan::CrossJoin { .. } => {
                let (d, mut levels) = chain(input)?;
                levels
                    .last_mut()
                    .expect("join produced a level")
                    .residual_mut()
                    .extend(predicate.iter().cloned());
                Ok((d, levels))
            }
            _ => {
                let (mut d, levels) = chain(input)?;
                if !levels.is_empty() {
                    return Err(PlanError::Unsupported(
                        "selection below a join level".into(),
                    ));
                }
                d.preds.extend(predicate.iter().cloned());
                Ok((d, levels))
            }
        },
        LogicalPlan::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            let (d, mut levels) = chain(right)?;
            levels.push(Level::Hash {
                build: base_scan(left)?,
                build_key: left_key.clone(),
                probe_key: right_key.clone(),
                residual: Vec::new(),
            });
            Ok((d, levels))
        }
        LogicalPlan::CrossJoin { left, right } => {
            let (d, mut levels) = chain(right)?;
            levels.push(Level::Cross {
                aux: base_scan(left)?,
                residual: Vec::new(),
            });
            Ok((d, levels))
        }
        other => Err(PlanError::Unsupported(alloc::format!(
            "{} inside a pipeline",
            node_name(other)
        ))),
    }
}

struct Ctx<'a> {
    tables: &'a [ColumnTable],
}

impl<'a> Ctx<'a> {
    fn table(&self, name: &str) -> Result<&'a ColumnTable, PlanError> {
        self.tables
            .iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| PlanError::MissingTable(name.to_string()))
    }

    fn expr(&self, e: &ScalarExpr) -> Result<PExpr, PlanError> {
        Ok(match e {
            ScalarExpr::Column(a) => PExpr::Attr(a.qualified(), a.kind),
            ScalarExpr::Int(v) => PExpr::Int(*v),
            ScalarExpr::Float(v) => PExpr::Float(*v),
            ScalarExpr::Str(s) => {
                return Err(PlanError::Unsupported(alloc::format!(
                    "string literal '{s}' outside a comparison"
                )))
            }
            ScalarExpr::Binary(op, l, r) => {
                PExpr::Bin(*op, Box::new(self.expr(l)?), Box::new(self.expr(r)?))
            }
        })
    }

    fn code(&self, a: &Attr, s: &str) -> Result<PExpr, PlanError> {
        let col = self
            .table(&a.table)?
            .column(&a.column)
            .ok_or_else(|| PlanError::MissingAttribute(a.to_string()))?;
        // an absent string never matches any code
        Ok(PExpr::Int(col.code_of(s).unwrap_or(-1)))
    }

    fn cond(&self, c: &Comparison) -> Result<Cond, PlanError> {
        let (left, right) = match (&c.left, &c.right) {
            (ScalarExpr::Column(a), ScalarExpr::Str(s)) => (self.expr(&c.left)?, self.code(a, s)?),
            (ScalarExpr::Str(s), ScalarExpr::Column(a)) => (self.code(a, s)?, self.expr(&c.right)?),
            _ => (self.expr(&c.left)?, self.expr(&c.right)?),
        };
        Ok(Cond {
            op: c.op,
            left,
            right,
        })
    }

    fn filter(&self, preds: &[Comparison], ops: &mut Vec<PipelineOp>) -> Result<(), PlanError> {
        if preds.is_empty() {
            return Ok(());
        }
        ops.push(PipelineOp::Filter {
            conds: preds
                .iter()
                .map(|c| self.cond(c))
                .collect::<Result<_, _>>()?,
            mode: Predication::Branched,
            offset: 0,
        });
        Ok(())
    }

    fn stats(&self, a: &Attr) -> Result<ColumnStats, PlanError> {
        self.table(&a.table)?
            .named(&a.column)
            .map(|c| c.stats)
            .ok_or_else(|| PlanError::MissingAttribute(a.to_string()))
    }
}

fn column_of(a: &Attr) -> Column {
    (a.qualified(), a.kind)
}

fn push_unique(out: &mut Vec<Attr>, a: &Attr) {
    if !out.contains(a) {
        out.push(a.clone());
    }
}

fn scalar_attrs(e: &ScalarExpr, out: &mut Vec<Attr>) {
    let mut v = Vec::new();
    e.attrs(&mut v);
    for a in &v {
        push_unique(out, a);
    }
}

fn cmp_attrs(cs: &[Comparison], out: &mut Vec<Attr>) {
    for c in cs {
        scalar_attrs(&c.left, out);
        scalar_attrs(&c.right, out);
    }
}

/// Splits `plan` into pipelines.
pub fn partition_into_pipelines(
    plan: &LogicalPlan,
    tables: &[ColumnTable],
) -> Result<PipelineSet, PlanError> {
    let ctx = Ctx { tables };

    // peel the terminal operator and any maps below it
    let (top, mut below) = match plan {
        LogicalPlan::Aggregate { input, .. } | LogicalPlan::Project { input, .. } => {
            (plan, &**input)
        }
        other => {
            return Err(PlanError::Unsupported(alloc::format!(
                "plan root must be a projection or aggregation, found {}",
                node_name(other)
            )))
        }
    };
    let mut maps: Vec<(&ScalarExpr, &String)> = Vec::new();
    while let LogicalPlan::Map { input, expr, name } = below {
        maps.push((expr, name));
        below = input;
    }
    maps.reverse();
    let (driver, levels) = chain(below)?;

    // attributes needed above the join levels
    let mut needed: Vec<Attr> = Vec::new();
    for l in &levels {
        match l {
            Level::Hash {
                probe_key,
                residual,
                ..
            } => {
                push_unique(&mut needed, probe_key);
                cmp_attrs(residual, &mut needed);
            }
            Level::Cross { residual, aux } => {
                cmp_attrs(residual, &mut needed);
                cmp_attrs(&aux.preds, &mut needed);
            }
        }
    }
    for (e, _) in &maps {
        scalar_attrs(e, &mut needed);
    }
    match top {
        LogicalPlan::Aggregate {
            group_keys, aggs, ..
        } => {
            for g in group_keys {
                push_unique(&mut needed, g);
            }
            for a in aggs {
                if let Some(e) = &a.arg {
                    scalar_attrs(e, &mut needed);
                }
            }
        }
        LogicalPlan::Project { attrs, .. } => {
            for a in attrs {
                push_unique(&mut needed, a);
            }
        }
        _ => unreachable!(),
    }

    let driver_table = ctx.table(&driver.table)?;
    let mut programs = Vec::new();
    let mut hash_tables = Vec::new();
    let mut dependencies = Vec::new();
    let hash_levels = levels
        .iter()
        .filter(|l| matches!(l, Level::Hash { .. }))
        .count();
    let probe_id = hash_levels;

    let mut probe = alloc::vec![PipelineOp::Loop {
        table: driver.table.clone(),
        rows: driver_table.row_count(),
        step: 1,
        access: ir::MemoryAccess::Sequential,
    }];
    ctx.filter(&driver.preds, &mut probe)?;

    for level in &levels {
        match level {
            Level::Hash {
                build,
                build_key,
                probe_key,
                residual,
            } => {
                let t = ctx.table(&build.table)?;
                let stats = ctx.stats(build_key)?;
                if stats.distinct != t.row_count() {
                    return Err(PlanError::Unsupported(alloc::format!(
                        "join key `{build_key}` is not unique in `{}`",
                        build.table
                    )));
                }
                let id = hash_tables.len();
                let mut payload = alloc::vec![column_of(build_key)];
                for a in &needed {
                    if a.table == build.table && a != build_key {
                        payload.push(column_of(a));
                    }
                }
                let hash = HashParams::default();
                let mut ops = alloc::vec![PipelineOp::Loop {
                    table: build.table.clone(),
                    rows: t.row_count(),
                    step: 1,
                    access: ir::MemoryAccess::Sequential,
                }];
                ctx.filter(&build.preds, &mut ops)?;
                ops.push(PipelineOp::HashPut {
                    table: id,
                    key: PExpr::Attr(build_key.qualified(), build_key.kind),
                    payload: payload.clone(),
                    hash,
                    mode: Predication::Branched,
                    offset: 0,
                });
                ops.push(PipelineOp::Project {
                    attrs: payload.clone(),
                    mode: Predication::Branched,
                    offset: 0,
                });
                programs.push(lower_pipeline(id, ops)?);
                hash_tables.push(HashTableDescriptor {
                    id,
                    implementation: HashTableImpl::default(),
                    function: HashFunction::default(),
                    build_pipeline: id,
                    key: column_of(build_key),
                    payload: payload.clone(),
                    build_rows: t.row_count(),
                    seed: SEED_BASE.wrapping_mul(id as u64 + 1),
                });
                dependencies.push((id, probe_id));
                probe.push(PipelineOp::HashProbe {
                    table: id,
                    key: PExpr::Attr(probe_key.qualified(), probe_key.kind),
                    payload,
                    hash,
                    mode: Predication::Branched,
                    offset: 0,
                });
                ctx.filter(residual, &mut probe)?;
            }
            Level::Cross { aux, residual } => {
                let t = ctx.table(&aux.table)?;
                let columns = needed
                    .iter()
                    .filter(|a| a.table == aux.table)
                    .map(column_of)
                    .collect();
                probe.push(PipelineOp::CrossJoin {
                    table: aux.table.clone(),
                    rows: t.row_count(),
                    columns,
                    offset: 0,
                });
                ctx.filter(&aux.preds, &mut probe)?;
                ctx.filter(residual, &mut probe)?;
            }
        }
    }

    for (e, name) in &maps {
        probe.push(PipelineOp::Arithmetic {
            expr: ctx.expr(e)?,
            out: (alloc::format!("${name}"), e.kind()),
            offset: 0,
        });
    }

    let output = match top {
        LogicalPlan::Aggregate {
            group_keys,
            aggs,
            output,
            ..
        } => {
            let specs = agg_specs(&ctx, aggs, &mut probe)?;
            if group_keys.is_empty() {
                probe.push(PipelineOp::Aggregate {
                    aggs: specs,
                    mode: Predication::Branched,
                    offset: 0,
                });
            } else {
                probe.push(PipelineOp::HashAggregate {
                    group: group_keys.iter().map(column_of).collect(),
                    aggs: specs,
                    hash: HashParams::default(),
                    mode: Predication::Branched,
                    offset: 0,
                });
            }
            output
                .iter()
                .map(|o| match *o {
                    AggOutput::Group(i) => OutputColumn {
                        name: group_keys[i].column.clone(),
                        kind: group_keys[i].kind,
                        source: OutputSource::Group(i),
                    },
                    AggOutput::Agg(i) => OutputColumn {
                        name: aggs[i].name.clone(),
                        kind: aggs[i].result_kind(),
                        source: OutputSource::Agg(i),
                    },
                })
                .collect()
        }
        LogicalPlan::Project { attrs, .. } => {
            let mut cols: Vec<Column> = Vec::new();
            for a in attrs {
                let c = column_of(a);
                if !cols.contains(&c) {
                    cols.push(c);
                }
            }
            probe.push(PipelineOp::Project {
                attrs: cols,
                mode: Predication::Branched,
                offset: 0,
            });
            attrs
                .iter()
                .map(|a| OutputColumn {
                    name: a.column.clone(),
                    kind: a.kind,
                    source: OutputSource::Attr(a.qualified()),
                })
                .collect()
        }
        _ => unreachable!(),
    };
    programs.push(lower_pipeline(probe_id, probe)?);

    Ok(PipelineSet {
        programs,
        hash_tables,
        dependencies,
        output,
    })
}

/// Aggregate arguments that are computed expressions get an ARITHMETIC op.
fn agg_specs(
    ctx: &Ctx<'_>,
    aggs: &[AggCall],
    ops: &mut Vec<PipelineOp>,
) -> Result<Vec<AggSpec>, PlanError> {
    let mut specs = Vec::with_capacity(aggs.len());
    for (i, a) in aggs.iter().enumerate() {
        let arg = match &a.arg {
            None => None,
            Some(e @ ScalarExpr::Binary(..)) => {
                let out = (alloc::format!("$agg{i}"), e.kind());
                ops.push(PipelineOp::Arithmetic {
                    expr: ctx.expr(e)?,
                    out: out.clone(),
                    offset: 0,
                });
                Some(PExpr::Attr(out.0, out.1))
            }
            // COUNT over a string column only counts rows
            Some(ScalarExpr::Column(c))
                if c.kind == ColumnKind::String && a.func == AggFunc::Count =>
            {
                None
            }
            Some(e) => Some(ctx.expr(e)?),
        };
        specs.push(AggSpec {
            func: a.func,
            arg,
            name: a.name.clone(),
        });
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical::catalog_of;
    use crate::sql::parse_query;
    use crate::storage::{create_table, gen_star_schema, ColumnKind as K, Value};
    use alloc::vec;

    fn plan(sql: &str, tables: &[ColumnTable]) -> Result<PipelineSet, PlanError> {
        let p = parse_query(sql, &catalog_of(tables)).unwrap();
        partition_into_pipelines(&p, tables)
    }

    fn op_names(p: &PipelineProgram) -> Vec<&'static str> {
        p.ops.iter().map(|o| o.name()).collect()
    }

    fn join_tables() -> Vec<ColumnTable> {
        let mk = |name: &str, cols: &[&str], rows: usize| {
            let schema: Vec<(&str, K)> = cols.iter().map(|c| (*c, K::Int64)).collect();
            let data = (0..rows as i64)
                .map(|i| cols.iter().map(|_| Value::Int(i)).collect::<Vec<_>>())
                .collect::<Vec<_>>();
            create_table(name, &schema, data).unwrap()
        };
        vec![
            mk("t1", &["a", "x"], 10),
            mk("t2", &["b"], 10),
            mk("t3", &["c", "d", "z", "q"], 30),
        ]
    }

    #[test]
    fn projection_is_one_pipeline() {
        let tables = gen_star_schema(100, 1, 20);
        let set = plan(
            "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity < 25",
            &tables,
        )
        .unwrap();
        assert_eq!(set.programs.len(), 1);
        assert_eq!(op_names(set.terminal()), vec!["LOOP", "FILTER", "PROJECT"]);
        assert_eq!(set.kind(), PipelineKind::Projection);
        assert_eq!(set.variant_space().len(), 32);
        assert!(set.validate().is_empty());
    }

    #[test]
    fn grouped_aggregate_is_one_pipeline() {
        let tables = gen_star_schema(100, 1, 20);
        let set = plan(
            "select lo_shipmode, sum(lo_quantity), avg(lo_extendedprice) from lineorder \
             where lo_discount < 5 group by lo_shipmode",
            &tables,
        )
        .unwrap();
        assert_eq!(
            op_names(set.terminal()),
            vec!["LOOP", "FILTER", "HASH_AGGREGATE"]
        );
        assert_eq!(set.variant_space().len(), 896);
    }

    #[test]
    fn join_partitioning_matches_figure_shape() {
        let tables = join_tables();
        let set = plan(
            "select t1.x, sum(t3.q) from t1, t2, t3 \
             where t1.a = t3.c and t2.b = t3.d and t3.z < 3 group by t1.x",
            &tables,
        )
        .unwrap();
        assert_eq!(set.programs.len(), 3);
        assert_eq!(
            op_names(&set.programs[0]),
            vec!["LOOP", "HASH_PUT", "PROJECT"]
        );
        assert_eq!(
            op_names(&set.programs[1]),
            vec!["LOOP", "HASH_PUT", "PROJECT"]
        );
        assert_eq!(
            op_names(set.terminal()),
            vec![
                "LOOP",
                "FILTER",
                "HASH_PROBE",
                "HASH_PROBE",
                "HASH_AGGREGATE"
            ]
        );
        assert_eq!(set.dependencies, vec![(0, 2), (1, 2)]);
        // t1 stores its key and the grouping attribute
        assert_eq!(
            set.hash_tables[0].payload,
            vec![("t1.a".into(), K::Int64), ("t1.x".into(), K::Int64)]
        );
        assert!(matches!(&set.terminal().ops[2],
            PipelineOp::HashProbe { table: 0, key: PExpr::Attr(k, _), .. } if k == "t3.c"));
        assert!(set.validate().is_empty());
        assert_eq!(set.variant_space().len(), 896);
    }

    #[test]
    fn specialise_keeps_hash_tables_consistent() {
        let tables = join_tables();
        let set = plan("select t3.q, t1.x from t1, t3 where t1.a = t3.c", &tables).unwrap();
        assert_eq!(set.variant_space().len(), 128);
        for c in set.variant_space() {
            let s = set.specialise(&c).unwrap();
            assert!(s.validate().is_empty(), "{}", s.dump());
            assert_eq!(s.programs[0].predication, c.predication);
        }
    }

    #[test]
    fn non_unique_build_key_is_rejected() {
        let tables = gen_star_schema(100, 1, 20);
        // lineorder as build side: lo_orderdate repeats
        let r = plan(
            "select d_year from lineorder, date where lo_orderdate = d_datekey",
            &tables,
        );
        assert!(matches!(r, Err(PlanError::Unsupported(_))));
    }

    #[test]
    fn string_literals_become_codes() {
        let tables = gen_star_schema(200, 3, 20);
        let set = plan(
            "select d_year, sum(lo_revenue) from date, supplier, lineorder \
             where lo_orderdate = d_datekey and lo_suppkey = s_suppkey and s_region = 'ASIA' \
             group by d_year",
            &tables,
        )
        .unwrap();
        let code = tables[2]
            .column("s_region")
            .unwrap()
            .code_of("ASIA")
            .unwrap();
        let PipelineOp::Filter { conds, .. } = &set.programs[1].ops[1] else {
            panic!("{}", set.dump());
        };
        assert_eq!(conds[0].right, PExpr::Int(code));
    }

    #[test]
    fn cross_join_pipeline() {
        let tables = join_tables();
        let set = plan("select t2.b, t3.q from t2, t3 where t3.z < 2", &tables).unwrap();
        assert_eq!(set.programs.len(), 1);
        assert_eq!(
            op_names(set.terminal()),
            vec!["LOOP", "FILTER", "CROSS_JOIN", "PROJECT"]
        );
    }

    #[test]
    fn lowering_rejects_bad_heads() {
        assert!(matches!(
            lower_pipeline(0, vec![]),
            Err(PlanError::Ir(IrError::UnsupportedPlan(_)))
        ));
    }
}
