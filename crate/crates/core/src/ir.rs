//! Pipeline programs: the intermediate representation between logical plans
//! and generated kernels.
//!
//! Regular operation parameters (tables, predicates, attributes, aggregates)
//! are fixed when a program is lowered. Code-generation modes (memory access,
//! predication, hash table, offsets, loop step) are only changed by the
//! transformation passes in [`apply_variant`].

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::logical::{AggFunc, ArithOp, CmpOp};
use crate::storage::ColumnKind;

pub const THREAD_MULTIPLIERS: [u32; 7] = [1, 8, 64, 256, 1024, 16384, 65536];
pub const WORK_GROUP_SIZES: [u32; 7] = [16, 32, 64, 128, 256, 512, 1024];
pub const UNROLL_FACTORS: [u32; 3] = [1, 2, 4];

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub enum $name {
            #[default]
            $($v),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$v),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$v => $s),+
                }
            }

            pub fn parse(s: &str) -> Option<Self> {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($s) || s.replace('-', "_").eq_ignore_ascii_case($s) {
                    return Some($name::$v);
                })+
                None
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(ProjectionStrategy { SinglePass => "single_pass", MultiPass => "multi_pass" });
named_enum!(AggregationStrategy { LocalHash => "local_hash", GlobalHash => "global_hash" });
named_enum!(MemoryAccess { Sequential => "sequential", Coalesced => "coalesced" });
named_enum!(Predication { Branched => "branched", Predicated => "predicated" });
named_enum!(HashTableImpl { LinearProbing => "linear_probing", Cuckoo => "cuckoo" });
named_enum!(HashFunction { Murmur => "murmur", MultiplyShift => "multiply_shift" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PipelineKind {
    Projection,
    Aggregation,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Projection => "projection",
            PipelineKind::Aggregation => "aggregation",
        }
    }
}

/// A point in the variant space.
///
/// `work_group_size` only applies to aggregation pipelines and
/// `hash_table_count_multiplier` only to local hash aggregation; both are
/// `None` where they do not apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariantConfiguration {
    pub projection_strategy: ProjectionStrategy,
    pub aggregation_strategy: AggregationStrategy,
    pub memory_access: MemoryAccess,
    pub predication: Predication,
    pub hash_table: HashTableImpl,
    pub hash_function: HashFunction,
    pub thread_multiplier: u32,
    pub work_group_size: Option<u32>,
    pub hash_table_count_multiplier: Option<u32>,
    pub unroll_factor: u32,
}

impl Default for VariantConfiguration {
    fn default() -> Self {
        VariantConfiguration {
            projection_strategy: ProjectionStrategy::SinglePass,
            aggregation_strategy: AggregationStrategy::LocalHash,
            memory_access: MemoryAccess::Sequential,
            predication: Predication::Branched,
            hash_table: HashTableImpl::LinearProbing,
            hash_function: HashFunction::Murmur,
            thread_multiplier: 1,
            work_group_size: None,
            hash_table_count_multiplier: None,
            unroll_factor: 1,
        }
    }
}

impl VariantConfiguration {
    /// Drops fields that have no effect on a program of `kind`, so that
    /// configurations producing identical code compare equal.
    pub fn restrict(&self, kind: PipelineKind, uses_hash: bool) -> Self {
        let mut c = *self;
        if !uses_hash {
            c.hash_table = HashTableImpl::default();
            c.hash_function = HashFunction::default();
        }
        match kind {
            PipelineKind::Projection => {
                c.aggregation_strategy = AggregationStrategy::default();
                c.work_group_size = None;
                c.hash_table_count_multiplier = None;
                if c.projection_strategy == ProjectionStrategy::SinglePass {
                    c.thread_multiplier = 1;
                }
            }
            PipelineKind::Aggregation => {
                c.projection_strategy = ProjectionStrategy::default();
                c.thread_multiplier = 1;
                c.work_group_size = Some(c.work_group_size.unwrap_or(WORK_GROUP_SIZES[0]));
                c.hash_table_count_multiplier = match c.aggregation_strategy {
                    AggregationStrategy::LocalHash => {
                        Some(c.hash_table_count_multiplier.unwrap_or(1))
                    }
                    AggregationStrategy::GlobalHash => None,
                };
            }
        }
        c
    }

    pub fn check(&self, kind: PipelineKind) -> Result<(), IrError> {
        let bad = |m: &str| Err(IrError::InvalidConfig(m.to_string()));
        if !UNROLL_FACTORS.contains(&self.unroll_factor) {
            return bad("unroll factor must be 1, 2 or 4");
        }
        match kind {
            PipelineKind::Projection => {
                if self.work_group_size.is_some() {
                    return bad("work group size does not apply to projection pipelines");
                }
                if self.hash_table_count_multiplier.is_some() {
                    return bad("hash table count does not apply to projection pipelines");
                }
                if self.thread_multiplier == 0 {
                    return bad("thread multiplier must be positive");
                }
                if self.projection_strategy == ProjectionStrategy::SinglePass
                    && self.thread_multiplier != 1
                {
                    return bad("single-pass runs one worker per compute unit");
                }
            }
            PipelineKind::Aggregation => {
                if self.work_group_size == Some(0) || self.hash_table_count_multiplier == Some(0) {
                    return bad("work group size and table count must be positive");
                }
            }
        }
        Ok(())
    }

    /// One `key = value` line per field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "projection_strategy = {}", self.projection_strategy);
        let _ = writeln!(s, "aggregation_strategy = {}", self.aggregation_strategy);
        let _ = writeln!(s, "memory_access = {}", self.memory_access);
        let _ = writeln!(s, "predication = {}", self.predication);
        let _ = writeln!(s, "hash_table = {}", self.hash_table);
        let _ = writeln!(s, "hash_function = {}", self.hash_function);
        let _ = writeln!(s, "thread_multiplier = {}", self.thread_multiplier);
        if let Some(w) = self.work_group_size {
            let _ = writeln!(s, "work_group_size = {w}");
        }
        if let Some(m) = self.hash_table_count_multiplier {
            let _ = writeln!(s, "hash_table_count_multiplier = {m}");
        }
        let _ = writeln!(s, "unroll_factor = {}", self.unroll_factor);
        s
    }

    /// Parses the format written by [`to_kv`](Self::to_kv). Blank lines and
    /// `#` comments are ignored; missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, IrError> {
        let mut c = VariantConfiguration::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| {
                    IrError::InvalidConfig(alloc::format!("line {}: expected key = value", n + 1))
                })?;
            c.set(k.trim(), v.trim())
                .map_err(|e| IrError::InvalidConfig(alloc::format!("line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = || alloc::format!("invalid value `{value}` for `{key}`");
        let num = |v: &str| v.parse::<u32>().map_err(|_| bad());
        let opt = |v: &str| -> Result<Option<u32>, String> {
            if v.eq_ignore_ascii_case("none") || v == "-" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        };
        match key.replace('-', "_").as_str() {
            "projection_strategy" | "strategy" => {
                self.projection_strategy = ProjectionStrategy::parse(value).ok_or_else(bad)?
            }
            "aggregation_strategy" => {
                self.aggregation_strategy = AggregationStrategy::parse(value).ok_or_else(bad)?
            }
            "memory_access" | "access" => {
                self.memory_access = MemoryAccess::parse(value).ok_or_else(bad)?
            }
            "predication" => self.predication = Predication::parse(value).ok_or_else(bad)?,
            "hash_table" | "hash_table_impl" => {
                self.hash_table = HashTableImpl::parse(value).ok_or_else(bad)?
            }
            "hash_function" => self.hash_function = HashFunction::parse(value).ok_or_else(bad)?,
            "thread_multiplier" | "threads" => self.thread_multiplier = num(value)?,
            "work_group_size" => self.work_group_size = opt(value)?,
            "hash_table_count_multiplier" | "table_multiplier" => {
                self.hash_table_count_multiplier = opt(value)?
            }
            "unroll_factor" | "unroll" => self.unroll_factor = num(value)?,
            _ => return Err(alloc::format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Compact single-line label, e.g. for report rows.
    pub fn label(&self) -> String {
        let mut s = alloc::format!(
            "{}x{} {} {} {} {} {}",
            self.projection_strategy,
            self.thread_multiplier,
            self.aggregation_strategy,
            self.memory_access,
            self.predication,
            self.hash_table,
            self.hash_function
        );
        if let Some(m) = self.hash_table_count_multiplier {
            let _ = write!(s, " tables={m}");
        }
        if let Some(w) = self.work_group_size {
            let _ = write!(s, " wg={w}");
        }
        if self.unroll_factor != 1 {
            let _ = write!(s, " u={}", self.unroll_factor);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IrError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported plan: {0}")]
    UnsupportedPlan(String),
}

/// Scalar expression over pipeline attributes. String literals have been
/// replaced by dictionary codes.
#[derive(Debug, Clone, PartialEq)]
pub enum PExpr {
    Attr(String, ColumnKind),
    Int(i64),
    Float(f64),
    Bin(ArithOp, Box<PExpr>, Box<PExpr>),
}

impl PExpr {
    pub fn kind(&self) -> ColumnKind {
        match self {
            PExpr::Attr(_, k) => *k,
            PExpr::Int(_) => ColumnKind::Int64,
            PExpr::Float(_) => ColumnKind::Float64,
            PExpr::Bin(_, l, r) => {
                if l.kind() == ColumnKind::Float64 || r.kind() == ColumnKind::Float64 {
                    ColumnKind::Float64
                } else {
                    ColumnKind::Int64
                }
            }
        }
    }

    pub fn attrs(&self, out: &mut Vec<String>) {
        match self {
            PExpr::Attr(a, _) => {
                if !out.contains(a) {
                    out.push(a.clone())
                }
            }
            PExpr::Bin(_, l, r) => {
                l.attrs(out);
                r.attrs(out);
            }
            _ => {}
        }
    }
}

impl fmt::Display for PExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PExpr::Attr(a, _) => f.write_str(a),
            PExpr::Int(v) => write!(f, "{v}"),
            PExpr::Float(v) => write!(f, "{v:?}"),
            PExpr::Bin(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cond {
    pub op: CmpOp,
    pub left: PExpr,
    pub right: PExpr,
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.left, self.op.symbol(), self.right)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggSpec {
    pub func: AggFunc,
    pub arg: Option<PExpr>,
    pub name: String,
}

impl AggSpec {
    pub fn arg_kind(&self) -> ColumnKind {
        self.arg
            .as_ref()
            .map(PExpr::kind)
            .unwrap_or(ColumnKind::Int64)
    }
}

impl fmt::Display for AggSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(a) => write!(f, "{}({a})", self.func.name()),
            None => write!(f, "{}(*)", self.func.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HashParams {
    pub implementation: HashTableImpl,
    pub function: HashFunction,
}

impl fmt::Display for HashParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h={} p={}", self.implementation, self.function)
    }
}

pub type Column = (String, ColumnKind);

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineOp {
    Loop {
        table: String,
        rows: usize,
        step: u32,
        access: MemoryAccess,
    },
    Filter {
        conds: Vec<Cond>,
        mode: Predication,
        offset: u32,
    },
    HashPut {
        table: usize,
        key: PExpr,
        payload: Vec<Column>,
        hash: HashParams,
        mode: Predication,
        offset: u32,
    },
    HashProbe {
        table: usize,
        key: PExpr,
        payload: Vec<Column>,
        hash: HashParams,
        mode: Predication,
        offset: u32,
    },
    CrossJoin {
        table: String,
        rows: usize,
        columns: Vec<Column>,
        offset: u32,
    },
    Arithmetic {
        expr: PExpr,
        out: Column,
        offset: u32,
    },
    Aggregate {
        aggs: Vec<AggSpec>,
        mode: Predication,
        offset: u32,
    },
    HashAggregate {
        group: Vec<Column>,
        aggs: Vec<AggSpec>,
        hash: HashParams,
        mode: Predication,
        offset: u32,
    },
    Project {
        attrs: Vec<Column>,
        mode: Predication,
        offset: u32,
    },
}

impl PipelineOp {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineOp::Loop { .. } => "LOOP",
            PipelineOp::Filter { .. } => "FILTER",
            PipelineOp::HashPut { .. } => "HASH_PUT",
            PipelineOp::HashProbe { .. } => "HASH_PROBE",
            PipelineOp::CrossJoin { .. } => "CROSS_JOIN",
            PipelineOp::Arithmetic { .. } => "ARITHMETIC",
            PipelineOp::Aggregate { .. } => "AGGREGATE",
            PipelineOp::HashAggregate { .. } => "HASH_AGGREGATE",
            PipelineOp::Project { .. } => "PROJECT",
        }
    }

    pub fn offset(&self) -> Option<u32> {
        match self {
            PipelineOp::Loop { .. } => None,
            PipelineOp::Filter { offset, .. }
            | PipelineOp::HashPut { offset, .. }
            | PipelineOp::HashProbe { offset, .. }
            | PipelineOp::CrossJoin { offset, .. }
            | PipelineOp::Arithmetic { offset, .. }
            | PipelineOp::Aggregate { offset, .. }
            | PipelineOp::HashAggregate { offset, .. }
            | PipelineOp::Project { offset, .. } => Some(*offset),
        }
    }

    fn offset_mut(&mut self) -> Option<&mut u32> {
        match self {
            PipelineOp::Loop { .. } => None,
            PipelineOp::Filter { offset, .. }
            | PipelineOp::HashPut { offset, .. }
            | PipelineOp::HashProbe { offset, .. }
            | PipelineOp::CrossJoin { offset, .. }
            | PipelineOp::Arithmetic { offset, .. }
            | PipelineOp::Aggregate { offset, .. }
            | PipelineOp::HashAggregate { offset, .. }
            | PipelineOp::Project { offset, .. } => Some(offset),
        }
    }

    /// Branching mode, for ops that have one.
    pub fn mode(&self) -> Option<Predication> {
        match self {
            PipelineOp::Filter { mode, .. }
            | PipelineOp::HashPut { mode, .. }
            | PipelineOp::HashProbe { mode, .. }
            | PipelineOp::Aggregate { mode, .. }
            | PipelineOp::HashAggregate { mode, .. }
            | PipelineOp::Project { mode, .. } => Some(*mode),
            _ => None,
        }
    }

    fn mode_mut(&mut self) -> Option<&mut Predication> {
        match self {
            PipelineOp::Filter { mode, .. }
            | PipelineOp::HashPut { mode, .. }
            | PipelineOp::HashProbe { mode, .. }
            | PipelineOp::Aggregate { mode, .. }
            | PipelineOp::HashAggregate { mode, .. }
            | PipelineOp::Project { mode, .. } => Some(mode),
            _ => None,
        }
    }

    pub fn hash(&self) -> Option<(Option<usize>, HashParams)> {
        match self {
            PipelineOp::HashPut { table, hash, .. } | PipelineOp::HashProbe { table, hash, .. } => {
                Some((Some(*table), *hash))
            }
            PipelineOp::HashAggregate { hash, .. } => Some((None, *hash)),
            _ => None,
        }
    }

    fn hash_mut(&mut self) -> Option<&mut HashParams> {
        match self {
            PipelineOp::HashPut { hash, .. }
            | PipelineOp::HashProbe { hash, .. }
            | PipelineOp::HashAggregate { hash, .. } => Some(hash),
            _ => None,
        }
    }
}

/// Resolved execution strategy of a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    SinglePass,
    MultiPass {
        thread_multiplier: u32,
    },
    LocalHash {
        table_multiplier: u32,
        work_group: u32,
    },
    GlobalHash {
        work_group: u32,
    },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::SinglePass => f.write_str("single_pass"),
            Strategy::MultiPass { thread_multiplier } => {
                write!(f, "multi_pass threads={thread_multiplier}")
            }
            Strategy::LocalHash {
                table_multiplier,
                work_group,
            } => write!(f, "local_hash tables={table_multiplier} wg={work_group}"),
            Strategy::GlobalHash { work_group } => write!(f, "global_hash wg={work_group}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineProgram {
    pub id: usize,
    pub kind: PipelineKind,
    pub ops: Vec<PipelineOp>,
    pub memory_access: MemoryAccess,
    pub predication: Predication,
    pub unroll_factor: u32,
    pub strategy: Strategy,
}

impl PipelineProgram {
    /// Wraps lowered ops, checking the head and deriving the pipeline kind.
    pub fn new(id: usize, ops: Vec<PipelineOp>) -> Result<Self, IrError> {
        let kind = match (ops.first(), ops.last()) {
            (None, _) => return Err(IrError::UnsupportedPlan("empty pipeline".into())),
            (Some(PipelineOp::Loop { .. }), Some(PipelineOp::Project { .. })) => {
                PipelineKind::Projection
            }
            (
                Some(PipelineOp::Loop { .. }),
                Some(PipelineOp::Aggregate { .. } | PipelineOp::HashAggregate { .. }),
            ) => PipelineKind::Aggregation,
            (Some(PipelineOp::Loop { .. }), Some(o)) => {
                return Err(IrError::UnsupportedPlan(alloc::format!(
                    "pipeline cannot end in {}",
                    o.name()
                )))
            }
            (Some(o), _) => {
                return Err(IrError::UnsupportedPlan(alloc::format!(
                    "pipeline must start with LOOP, not {}",
                    o.name()
                )))
            }
        };
        let strategy = match kind {
            PipelineKind::Projection => Strategy::SinglePass,
            PipelineKind::Aggregation => Strategy::LocalHash {
                table_multiplier: 1,
                work_group: WORK_GROUP_SIZES[0],
            },
        };
        Ok(PipelineProgram {
            id,
            kind,
            ops,
            memory_access: MemoryAccess::Sequential,
            predication: Predication::Branched,
            unroll_factor: 1,
            strategy,
        })
    }

    pub fn uses_hash(&self) -> bool {
        self.ops.iter().any(|o| o.hash().is_some())
    }

    pub fn loop_table(&self) -> (&str, usize) {
        match &self.ops[0] {
            PipelineOp::Loop { table, rows, .. } => (table, *rows),
            _ => ("", 0),
        }
    }

    /// Ops of one unrolled replica, in order (excluding LOOP).
    pub fn replica(&self, offset: u32) -> impl Iterator<Item = &PipelineOp> {
        self.ops[1..]
            .iter()
            .filter(move |o| o.offset() == Some(offset))
    }

    /// Hash configuration currently applied, if any op uses one.
    pub fn hash_params(&self) -> Option<HashParams> {
        self.ops.iter().find_map(|o| o.hash()).map(|(_, h)| h)
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "pipeline {} {} [{} access={} predication={} unroll={}]",
            self.id,
            self.kind.name(),
            self.strategy,
            self.memory_access,
            self.predication,
            self.unroll_factor
        );
        for op in &self.ops {
            let _ = writeln!(s, "  {}", dump_op(op));
        }
        s
    }
}

fn cols(c: &[Column]) -> String {
    c.iter()
        .map(|(n, _)| n.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

fn dump_op(op: &PipelineOp) -> String {
    match op {
        PipelineOp::Loop {
            table,
            rows,
            step,
            access,
        } => alloc::format!("LOOP({table} rows={rows}) [step={step} {access}]"),
        PipelineOp::Filter {
            conds,
            mode,
            offset,
        } => alloc::format!(
            "FILTER({}) [m={mode} o={offset}]",
            conds
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" and ")
        ),
        PipelineOp::HashPut {
            table,
            key,
            payload,
            hash,
            mode,
            offset,
        } => alloc::format!(
            "HASH_PUT(ht{table} key={key} payload={}) [{hash} m={mode} o={offset}]",
            cols(payload)
        ),
        PipelineOp::HashProbe {
            table,
            key,
            payload,
            hash,
            mode,
            offset,
        } => alloc::format!(
            "HASH_PROBE(ht{table} key={key} payload={}) [{hash} m={mode} o={offset}]",
            cols(payload)
        ),
        PipelineOp::CrossJoin {
            table,
            rows,
            offset,
            ..
        } => alloc::format!("CROSS_JOIN({table} rows={rows}) [o={offset}]"),
        PipelineOp::Arithmetic { expr, out, offset } => {
            alloc::format!("ARITHMETIC({} := {expr}) [o={offset}]", out.0)
        }
        PipelineOp::Aggregate { aggs, mode, offset } => alloc::format!(
            "AGGREGATE({}) [m={mode} o={offset}]",
            aggs.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ),
        PipelineOp::HashAggregate {
            group,
            aggs,
            hash,
            mode,
            offset,
        } => alloc::format!(
            "HASH_AGGREGATE(group={} aggs={}) [{hash} m={mode} o={offset}]",
            cols(group),
            aggs.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ),
        PipelineOp::Project {
            attrs,
            mode,
            offset,
        } => alloc::format!("PROJECT({}) [m={mode} o={offset}]", cols(attrs)),
    }
}

/// Join hash table shared by one HASH_PUT and its HASH_PROBEs.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTableDescriptor {
    pub id: usize,
    pub implementation: HashTableImpl,
    pub function: HashFunction,
    /// Pipeline containing the HASH_PUT.
    pub build_pipeline: usize,
    pub key: Column,
    /// Columns stored by the build pipeline; the key comes first.
    pub payload: Vec<Column>,
    /// Upper bound on inserted keys (build input cardinality).
    pub build_rows: usize,
    pub seed: u64,
}

impl HashTableDescriptor {
    pub fn params(&self) -> HashParams {
        HashParams {
            implementation: self.implementation,
            function: self.function,
        }
    }
}

// ---------------------------------------------------------------------------
// transformation passes

pub fn set_strategy(
    program: &PipelineProgram,
    config: &VariantConfiguration,
) -> Result<PipelineProgram, IrError> {
    config.check(program.kind)?;
    let mut p = program.clone();
    p.strategy = match program.kind {
        PipelineKind::Projection => match config.projection_strategy {
            ProjectionStrategy::SinglePass => Strategy::SinglePass,
            ProjectionStrategy::MultiPass => {
                if p.ops
                    .iter()
                    .any(|o| matches!(o, PipelineOp::CrossJoin { .. }))
                {
                    return Err(IrError::InvalidConfig(
                        "multi-pass projection over a cross join".into(),
                    ));
                }
                Strategy::MultiPass {
                    thread_multiplier: config.thread_multiplier,
                }
            }
        },
        PipelineKind::Aggregation => {
            let work_group = config.work_group_size.unwrap_or(WORK_GROUP_SIZES[0]);
            match config.aggregation_strategy {
                AggregationStrategy::LocalHash => Strategy::LocalHash {
                    table_multiplier: config.hash_table_count_multiplier.unwrap_or(1),
                    work_group,
                },
                AggregationStrategy::GlobalHash => Strategy::GlobalHash { work_group },
            }
        }
    };
    Ok(p)
}

pub fn set_memory_access(program: &PipelineProgram, access: MemoryAccess) -> PipelineProgram {
    let mut p = program.clone();
    p.memory_access = access;
    for op in &mut p.ops {
        if let PipelineOp::Loop { access: a, .. } = op {
            *a = access;
        }
    }
    p
}

pub fn set_predication(program: &PipelineProgram, mode: Predication) -> PipelineProgram {
    let mut p = program.clone();
    p.predication = mode;
    for op in &mut p.ops {
        if let Some(m) = op.mode_mut() {
            *m = mode;
        }
    }
    p
}

pub fn set_hash_table(program: &PipelineProgram, params: HashParams) -> PipelineProgram {
    let mut p = program.clone();
    for op in &mut p.ops {
        if let Some(h) = op.hash_mut() {
            *h = params;
        }
    }
    p
}

/// Replicates the per-tuple body `factor` times. Any earlier unrolling is
/// undone first, so the pass is idempotent for a given factor.
pub fn unroll(program: &PipelineProgram, factor: u32) -> Result<PipelineProgram, IrError> {
    if !UNROLL_FACTORS.contains(&factor) {
        return Err(IrError::InvalidConfig(alloc::format!(
            "unroll factor {factor} not in {{1,2,4}}"
        )));
    }
    let mut p = program.clone();
    let body: Vec<PipelineOp> = program.replica(0).cloned().collect();
    let mut ops = Vec::with_capacity(1 + body.len() * factor as usize);
    let mut head = program.ops[0].clone();
    if let PipelineOp::Loop { step, .. } = &mut head {
        *step = factor;
    }
    ops.push(head);
    for o in 0..factor {
        for op in &body {
            let mut op = op.clone();
            if let Some(off) = op.offset_mut() {
                *off = o;
            }
            ops.push(op);
        }
    }
    p.ops = ops;
    p.unroll_factor = factor;
    Ok(p)
}

/// Runs all transformation passes in their fixed order.
pub fn apply_variant(
    program: &PipelineProgram,
    config: &VariantConfiguration,
) -> Result<PipelineProgram, IrError> {
    let p = set_strategy(program, config)?;
    let p = set_memory_access(&p, config.memory_access);
    let p = set_predication(&p, config.predication);
    let p = set_hash_table(
        &p,
        HashParams {
            implementation: config.hash_table,
            function: config.hash_function,
        },
    );
    unroll(&p, config.unroll_factor)
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    EmptyProgram,
    LoopNotFirst,
    ExtraLoop { index: usize },
    MixedPredication { index: usize },
    OffsetOutOfRange { index: usize, offset: u32 },
    StepMismatch { step: u32, unroll: u32 },
    KindMismatch,
    UnknownHashTable { index: usize, table: usize },
    HashTableMismatch { table: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::EmptyProgram => f.write_str("program has no operations"),
            Diagnostic::LoopNotFirst => f.write_str("program does not start with LOOP"),
            Diagnostic::ExtraLoop { index } => write!(f, "op {index}: second LOOP"),
            Diagnostic::MixedPredication { index } => {
                write!(f, "op {index}: predication mode differs from the program")
            }
            Diagnostic::OffsetOutOfRange { index, offset } => {
                write!(f, "op {index}: offset {offset} outside the unroll factor")
            }
            Diagnostic::StepMismatch { step, unroll } => {
                write!(f, "LOOP step {step} differs from unroll factor {unroll}")
            }
            Diagnostic::KindMismatch => f.write_str("pipeline kind does not match the last op"),
            Diagnostic::UnknownHashTable { index, table } => {
                write!(f, "op {index}: unknown hash table ht{table}")
            }
            Diagnostic::HashTableMismatch { table } => {
                write!(f, "ht{table}: build and probe use different hash tables")
            }
        }
    }
}

/// Structural checks on one program. Returns every problem found.
pub fn validate_program(
    program: &PipelineProgram,
    tables: &[HashTableDescriptor],
) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    let Some(first) = program.ops.first() else {
        d.push(Diagnostic::EmptyProgram);
        return d;
    };
    match first {
        PipelineOp::Loop { step, .. } => {
            if *step != program.unroll_factor {
                d.push(Diagnostic::StepMismatch {
                    step: *step,
                    unroll: program.unroll_factor,
                });
            }
        }
        _ => d.push(Diagnostic::LoopNotFirst),
    }
    let mut modes = program.ops.iter().filter_map(|o| o.mode());
    let reference = modes.next();
    for (i, op) in program.ops.iter().enumerate() {
        if i > 0 && matches!(op, PipelineOp::Loop { .. }) {
            d.push(Diagnostic::ExtraLoop { index: i });
        }
        if let (Some(m), Some(r)) = (op.mode(), reference) {
            if m != r {
                d.push(Diagnostic::MixedPredication { index: i });
            }
        }
        if let Some(o) = op.offset() {
            if o >= program.unroll_factor.max(1) {
                d.push(Diagnostic::OffsetOutOfRange {
                    index: i,
                    offset: o,
                });
            }
        }
        if let Some((Some(t), params)) = op.hash() {
            match tables.iter().find(|h| h.id == t) {
                None => d.push(Diagnostic::UnknownHashTable { index: i, table: t }),
                Some(h) => {
                    if h.params() != params {
                        let diag = Diagnostic::HashTableMismatch { table: t };
                        if !d.contains(&diag) {
                            d.push(diag);
                        }
                    }
                }
            }
        }
    }
    let expected = match program.ops.last() {
        Some(PipelineOp::Project { .. }) => Some(PipelineKind::Projection),
        Some(PipelineOp::Aggregate { .. } | PipelineOp::HashAggregate { .. }) => {
            Some(PipelineKind::Aggregation)
        }
        _ => None,
    };
    if expected != Some(program.kind) {
        d.push(Diagnostic::KindMismatch);
    }
    d
}

/// Checks that every probe of a join table agrees with its build.
pub fn validate_hash_consistency(programs: &[PipelineProgram]) -> Vec<Diagnostic> {
    let mut puts: Vec<(usize, HashParams)> = Vec::new();
    for p in programs {
        for op in &p.ops {
            if let PipelineOp::HashPut { table, hash, .. } = op {
                puts.push((*table, *hash));
            }
        }
    }
    let mut d = Vec::new();
    for p in programs {
        for op in &p.ops {
            if let PipelineOp::HashProbe { table, hash, .. } = op {
                let mismatch = puts.iter().any(|(t, h)| t == table && h != hash);
                let diag = Diagnostic::HashTableMismatch { table: *table };
                if mismatch && !d.contains(&diag) {
                    d.push(diag);
                }
            }
        }
    }
    d
}

// ---------------------------------------------------------------------------
// variant space

/// Every configuration of the benchmark space for `program`, with the unroll
/// factor fixed at 1.
pub fn enumerate_variant_space(program: &PipelineProgram) -> Vec<VariantConfiguration> {
    enumerate_for(program.kind, program.uses_hash())
}

pub fn enumerate_for(kind: PipelineKind, uses_hash: bool) -> Vec<VariantConfiguration> {
    let hashes: Vec<(HashTableImpl, HashFunction)> =
        if uses_hash || kind == PipelineKind::Aggregation {
            let mut v = Vec::new();
            for &i in HashTableImpl::ALL {
                for &f in HashFunction::ALL {
                    v.push((i, f));
                }
            }
            v
        } else {
            alloc::vec![(HashTableImpl::default(), HashFunction::default())]
        };
    let mut out = Vec::new();
    for &access in MemoryAccess::ALL {
        for &pred in Predication::ALL {
            for &(hash_table, hash_function) in &hashes {
                let base = VariantConfiguration {
                    memory_access: access,
                    predication: pred,
                    hash_table,
                    hash_function,
                    ..VariantConfiguration::default()
                };
                match kind {
                    PipelineKind::Projection => {
                        out.push(base);
                        for &m in &THREAD_MULTIPLIERS {
                            out.push(VariantConfiguration {
                                projection_strategy: ProjectionStrategy::MultiPass,
                                thread_multiplier: m,
                                ..base
                            });
                        }
                    }
                    PipelineKind::Aggregation => {
                        for &m in &THREAD_MULTIPLIERS {
                            for &w in &WORK_GROUP_SIZES {
                                out.push(VariantConfiguration {
                                    aggregation_strategy: AggregationStrategy::LocalHash,
                                    hash_table_count_multiplier: Some(m),
                                    work_group_size: Some(w),
                                    ..base
                                });
                            }
                        }
                        for &w in &WORK_GROUP_SIZES {
                            out.push(VariantConfiguration {
                                aggregation_strategy: AggregationStrategy::GlobalHash,
                                work_group_size: Some(w),
                                ..base
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn q(name: &str) -> Column {
        (name.into(), ColumnKind::Int64)
    }

    fn attr(name: &str) -> PExpr {
        PExpr::Attr(name.into(), ColumnKind::Int64)
    }

    fn quantity_projection() -> PipelineProgram {
        PipelineProgram::new(
            0,
            vec![
                PipelineOp::Loop {
                    table: "lineorder".into(),
                    rows: 100,
                    step: 1,
                    access: MemoryAccess::Sequential,
                },
                PipelineOp::Filter {
                    conds: vec![Cond {
                        op: CmpOp::Lt,
                        left: attr("lineorder.lo_quantity"),
                        right: PExpr::Int(25),
                    }],
                    mode: Predication::Branched,
                    offset: 0,
                },
                PipelineOp::Project {
                    attrs: vec![q("lineorder.lo_linenumber"), q("lineorder.lo_quantity")],
                    mode: Predication::Branched,
                    offset: 0,
                },
            ],
        )
        .unwrap()
    }

    fn two_join_probe() -> (Vec<PipelineProgram>, Vec<HashTableDescriptor>) {
        let loop_op = |t: &str| PipelineOp::Loop {
            table: t.into(),
            rows: 10,
            step: 1,
            access: MemoryAccess::Sequential,
        };
        let desc = |id: usize, key: &str| HashTableDescriptor {
            id,
            implementation: HashTableImpl::LinearProbing,
            function: HashFunction::Murmur,
            build_pipeline: id,
            key: q(key),
            payload: vec![q(key)],
            build_rows: 10,
            seed: id as u64,
        };
        let build = |id: usize, t: &str, key: &str| {
            PipelineProgram::new(
                id,
                vec![
                    loop_op(t),
                    PipelineOp::HashPut {
                        table: id,
                        key: attr(key),
                        payload: vec![q(key)],
                        hash: HashParams::default(),
                        mode: Predication::Branched,
                        offset: 0,
                    },
                    PipelineOp::Project {
                        attrs: vec![q(key)],
                        mode: Predication::Branched,
                        offset: 0,
                    },
                ],
            )
            .unwrap()
        };
        let probe = PipelineProgram::new(
            2,
            vec![
                loop_op("t3"),
                PipelineOp::Filter {
                    conds: vec![Cond {
                        op: CmpOp::Lt,
                        left: attr("t3.z"),
                        right: PExpr::Int(3),
                    }],
                    mode: Predication::Branched,
                    offset: 0,
                },
                PipelineOp::HashProbe {
                    table: 0,
                    key: attr("t3.c"),
                    payload: vec![q("t1.a")],
                    hash: HashParams::default(),
                    mode: Predication::Branched,
                    offset: 0,
                },
                PipelineOp::HashProbe {
                    table: 1,
                    key: attr("t3.d"),
                    payload: vec![q("t2.b")],
                    hash: HashParams::default(),
                    mode: Predication::Branched,
                    offset: 0,
                },
                PipelineOp::HashAggregate {
                    group: vec![q("t1.x")],
                    aggs: vec![AggSpec {
                        func: AggFunc::Sum,
                        arg: Some(attr("t3.q")),
                        name: "sum(q)".into(),
                    }],
                    hash: HashParams::default(),
                    mode: Predication::Branched,
                    offset: 0,
                },
            ],
        )
        .unwrap();
        (
            vec![build(0, "t1", "t1.a"), build(1, "t2", "t2.b"), probe],
            vec![desc(0, "t1.a"), desc(1, "t2.b")],
        )
    }

    #[test]
    fn variant_space_counts() {
        let proj = enumerate_variant_space(&quantity_projection());
        assert_eq!(proj.len(), 32);
        assert_eq!(
            proj.iter()
                .filter(|c| c.projection_strategy == ProjectionStrategy::SinglePass)
                .count(),
            4
        );
        let (programs, _) = two_join_probe();
        let agg = enumerate_variant_space(&programs[2]);
        assert_eq!(agg.len(), 896);
        for space in [&proj, &agg] {
            let mut sorted = space.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), space.len());
        }
        for c in &agg {
            apply_variant(&programs[2], c).unwrap();
        }
        for c in &proj {
            apply_variant(&quantity_projection(), c).unwrap();
        }
    }

    #[test]
    fn predication_pass_is_uniform() {
        let p = set_predication(&quantity_projection(), Predication::Predicated);
        assert!(p
            .ops
            .iter()
            .filter_map(|o| o.mode())
            .all(|m| m == Predication::Predicated));
        assert!(validate_program(&p, &[]).is_empty());
    }

    #[test]
    fn identity_config_only_sets_modes() {
        let base = quantity_projection();
        let out = apply_variant(&base, &VariantConfiguration::default()).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn unrolling_replicates_body() {
        let cfg = VariantConfiguration {
            unroll_factor: 2,
            ..VariantConfiguration::default()
        };
        let p = apply_variant(&quantity_projection(), &cfg).unwrap();
        assert!(matches!(p.ops[0], PipelineOp::Loop { step: 2, .. }));
        let names: Vec<_> = p.ops.iter().map(|o| (o.name(), o.offset())).collect();
        assert_eq!(
            names,
            vec![
                ("LOOP", None),
                ("FILTER", Some(0)),
                ("PROJECT", Some(0)),
                ("FILTER", Some(1)),
                ("PROJECT", Some(1)),
            ]
        );
        assert!(validate_program(&p, &[]).is_empty());
        // re-unrolling starts from the single replica
        assert_eq!(unroll(&p, 2).unwrap(), p);
        assert_eq!(unroll(&p, 1).unwrap(), quantity_projection());
    }

    #[test]
    fn invalid_configs() {
        let p = quantity_projection();
        let wg = VariantConfiguration {
            work_group_size: Some(64),
            ..VariantConfiguration::default()
        };
        assert!(matches!(
            apply_variant(&p, &wg),
            Err(IrError::InvalidConfig(_))
        ));
        let threads = VariantConfiguration {
            thread_multiplier: 8,
            ..VariantConfiguration::default()
        };
        assert!(apply_variant(&p, &threads).is_err());
        let unroll3 = VariantConfiguration {
            unroll_factor: 3,
            ..VariantConfiguration::default()
        };
        assert!(apply_variant(&p, &unroll3).is_err());
    }

    #[test]
    fn diagnostics() {
        let mut p = quantity_projection();
        if let PipelineOp::Project { mode, .. } = &mut p.ops[2] {
            *mode = Predication::Predicated;
        }
        assert_eq!(
            validate_program(&p, &[]),
            vec![Diagnostic::MixedPredication { index: 2 }]
        );

        let (mut programs, descs) = two_join_probe();
        for prog in &programs {
            assert!(validate_program(prog, &descs).is_empty(), "{}", prog.dump());
        }
        assert!(validate_hash_consistency(&programs).is_empty());
        programs[2] = set_hash_table(
            &programs[2],
            HashParams {
                implementation: HashTableImpl::Cuckoo,
                function: HashFunction::Murmur,
            },
        );
        assert_eq!(
            validate_hash_consistency(&programs),
            vec![
                Diagnostic::HashTableMismatch { table: 0 },
                Diagnostic::HashTableMismatch { table: 1 }
            ]
        );
        assert!(validate_program(&programs[2], &descs)
            .contains(&Diagnostic::HashTableMismatch { table: 0 }));

        let mut bad = quantity_projection();
        bad.ops.swap(0, 1);
        assert!(validate_program(&bad, &[]).contains(&Diagnostic::LoopNotFirst));
        assert!(PipelineProgram::new(0, vec![]).is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        for c in enumerate_for(PipelineKind::Aggregation, true)
            .into_iter()
            .chain(enumerate_for(PipelineKind::Projection, false))
        {
            assert_eq!(VariantConfiguration::from_kv(&c.to_kv()).unwrap(), c);
        }
    }

    #[test]
    fn dump_is_one_line_per_op() {
        let p = quantity_projection();
        let text = p.dump();
        assert_eq!(text.lines().count(), 1 + p.ops.len());
        assert!(text.contains("FILTER(lineorder.lo_quantity<25) [m=branched o=0]"));
    }

    fn arb_config() -> impl proptest::strategy::Strategy<Value = VariantConfiguration> {
        use proptest::prelude::*;
        (
            0usize..2,
            0usize..2,
            0usize..2,
            0usize..2,
            0usize..7,
            0usize..3,
        )
            .prop_map(|(s, a, p, h, m, u)| VariantConfiguration {
                projection_strategy: ProjectionStrategy::ALL[s],
                memory_access: MemoryAccess::ALL[a],
                predication: Predication::ALL[p],
                hash_table: HashTableImpl::ALL[h],
                thread_multiplier: if s == 0 { 1 } else { THREAD_MULTIPLIERS[m] },
                unroll_factor: UNROLL_FACTORS[u],
                ..VariantConfiguration::default()
            })
    }

    proptest::proptest! {
        #[test]
        fn passes_commute_before_unrolling(c in arb_config(), order in 0usize..6) {
            let base = quantity_projection();
            let fixed = apply_variant(&base, &c).unwrap();
            let steps: [&dyn Fn(PipelineProgram) -> PipelineProgram; 3] = [
                &|p| set_strategy(&p, &c).unwrap(),
                &|p| set_memory_access(&p, c.memory_access),
                &|p| set_predication(&p, c.predication),
            ];
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut p = base;
            for &i in &perms[order] {
                p = steps[i](p);
            }
            let p = set_hash_table(&p, HashParams { implementation: c.hash_table, function: c.hash_function });
            let p = unroll(&p, c.unroll_factor).unwrap();
            proptest::prop_assert_eq!(&p, &fixed);
            proptest::prop_assert_eq!(apply_variant(&quantity_projection(), &c).unwrap(), fixed);
            proptest::prop_assert!(validate_program(&p, &[]).is_empty());
        }
    }
}
