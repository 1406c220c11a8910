//! A small imperative kernel IR and the host-step plans that drive it.
//!
//! All values are 64-bit; floating-point values travel as their bit
//! patterns and are only interpreted as `f64` by the float operators.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

pub type VarId = u32;
pub type BufId = u32;
pub type ScalarId = u32;
pub type SiteId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intrinsic {
    GlobalId,
    GlobalSize,
    GroupId,
    LocalId,
    GroupSize,
}

impl Intrinsic {
    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::GlobalId => "global_thread_id()",
            Intrinsic::GlobalSize => "global_thread_count()",
            Intrinsic::GroupId => "group_id()",
            Intrinsic::LocalId => "local_id_in_group()",
            Intrinsic::GroupSize => "group_size()",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    FAdd,
    FSub,
    FMul,
    FDiv,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    FEq,
    FNe,
    FLt,
    FLe,
    FGt,
    FGe,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Min,
    Max,
    FMin,
    FMax,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        use BinOp::*;
        match self {
            Add | FAdd => "+",
            Sub | FSub => "-",
            Mul | FMul => "*",
            Div | FDiv => "/",
            Rem => "%",
            Eq | FEq => "==",
            Ne | FNe => "!=",
            Lt | FLt => "<",
            Le | FLe => "<=",
            Gt | FGt => ">",
            Ge | FGe => ">=",
            And => "&",
            Or => "|",
            Xor => "^",
            Shl => "<<",
            Shr => ">>",
            Min => "min",
            Max => "max",
            FMin => "fmin",
            FMax => "fmax",
        }
    }

    fn is_call(self) -> bool {
        matches!(self, BinOp::Min | BinOp::Max | BinOp::FMin | BinOp::FMax)
    }

    pub fn is_float(self) -> bool {
        use BinOp::*;
        matches!(
            self,
            FAdd | FSub | FMul | FDiv | FEq | FNe | FLt | FLe | FGt | FGe | FMin | FMax
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(i64),
    Var(VarId),
    Scalar(ScalarId),
    Intrinsic(Intrinsic),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
    Load {
        buf: BufId,
        idx: Box<Expr>,
        site: SiteId,
    },
    /// 64-bit Murmur finalizer of `x ^ seed`.
    Murmur(Box<Expr>, Box<Expr>),
    /// `(a * x) >> (64 - bits)`, unsigned.
    MulShift(Box<Expr>, Box<Expr>, Box<Expr>),
    ToFloat(Box<Expr>),
}

impl Expr {
    pub fn c(v: i64) -> Expr {
        Expr::Const(v)
    }

    pub fn f(v: f64) -> Expr {
        Expr::Const(v.to_bits() as i64)
    }

    pub fn var(v: VarId) -> Expr {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn select(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Select(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn load(buf: BufId, idx: Expr, site: SiteId) -> Expr {
        Expr::Load {
            buf,
            idx: Box::new(idx),
            site,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Add, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Mul, a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomicOp {
    Add,
    FAdd,
    Min,
    Max,
    FMin,
    FMax,
    Xchg,
}

impl AtomicOp {
    pub fn name(self) -> &'static str {
        match self {
            AtomicOp::Add => "atomic_add",
            AtomicOp::FAdd => "atomic_add_f64",
            AtomicOp::Min => "atomic_min",
            AtomicOp::Max => "atomic_max",
            AtomicOp::FMin => "atomic_min_f64",
            AtomicOp::FMax => "atomic_max_f64",
            AtomicOp::Xchg => "atomic_xchg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign(VarId, Expr),
    Store {
        buf: BufId,
        idx: Expr,
        val: Expr,
        site: SiteId,
    },
    /// `for (var = start; var < end; var += step)`
    For {
        var: VarId,
        start: Expr,
        end: Expr,
        step: Expr,
        body: Vec<Stmt>,
    },
    If {
        cond: Expr,
        then: Vec<Stmt>,
        els: Vec<Stmt>,
        site: SiteId,
    },
    Loop(Vec<Stmt>),
    Break,
    Atomic {
        op: AtomicOp,
        buf: BufId,
        idx: Expr,
        val: Expr,
        prior: Option<VarId>,
        site: SiteId,
    },
    AtomicCas {
        buf: BufId,
        idx: Expr,
        expected: Expr,
        desired: Expr,
        prior: VarId,
        site: SiteId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<BufId>,
    pub vars: Vec<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemType {
    I64,
    F64,
}

impl ElemType {
    pub fn name(self) -> &'static str {
        match self {
            ElemType::I64 => "i64",
            ElemType::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Len {
    Const(usize),
    /// Value of a host scalar plus a constant, known after a host step.
    Scalar(ScalarId, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    Fill(i64),
    Data(Vec<i64>),
    /// Bound to an input column by qualified name.
    Input(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferDecl {
    pub name: String,
    pub elem: ElemType,
    pub len: Len,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDecl {
    pub name: String,
    pub init: i64,
}

/// How HostMergeHashTables reads the aggregation buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum AggLayout {
    /// One slot per table, no key.
    Ungrouped { tables: usize },
    /// Slots with keys; a slot is live when its key is not EMPTY.
    Slots { keys: BufId, slots: usize },
    /// Per-table entry regions, each filled up to its counter.
    Entries {
        keys: BufId,
        counters: BufId,
        offsets: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccKind {
    Sum,
    FSum,
    Min,
    Max,
    FMin,
    FMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeSpec {
    pub layout: AggLayout,
    pub count: BufId,
    pub accs: Vec<(BufId, AccKind)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Alloc(BufId),
    Launch {
        kernel: usize,
        global: u64,
        group: u64,
        /// Threads at or beyond `limit` have no work and are skipped.
        limit: u64,
    },
    PrefixSum {
        flags: BufId,
        positions: BufId,
        total: ScalarId,
    },
    /// Moves per-worker regions `[start, start + count)` to the front of
    /// each column, in worker order, and sets `total`.
    Compact {
        regions: BufId,
        workers: usize,
        columns: Vec<BufId>,
        total: ScalarId,
    },
    MergeHashTables(MergeSpec),
    /// Rebuilds with fresh seeds when a cuckoo insertion failed.
    CheckRebuild {
        flag: BufId,
        seeds: Vec<ScalarId>,
        reset: Vec<BufId>,
        restart_at: usize,
        max_rebuilds: u32,
    },
    Finalize,
    Free(BufId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupPart {
    /// Mixed-radix component: `(packed / stride) % range + min`.
    Packed {
        min: i64,
        range: i64,
        stride: i64,
        lexicon: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinalColumn {
    /// Projection column read from a buffer, rows `[0, total)`.
    Buffer {
        buf: BufId,
        elem: ElemType,
        lexicon: Option<String>,
    },
    Group(GroupPart),
    Sum {
        acc: usize,
        float: bool,
    },
    Count,
    Min {
        acc: usize,
        float: bool,
    },
    Max {
        acc: usize,
        float: bool,
    },
    Avg {
        acc: usize,
        float: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalSpec {
    pub columns: Vec<(String, crate::storage::ColumnKind, FinalColumn)>,
    /// Row count for projections.
    pub total: Option<ScalarId>,
    pub grouped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlan {
    pub buffers: Vec<BufferDecl>,
    pub scalars: Vec<ScalarDecl>,
    pub kernels: Vec<Kernel>,
    pub steps: Vec<Step>,
    pub finalize: FinalSpec,
}

impl KernelPlan {
    pub fn launch_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Launch { .. }))
            .count()
    }

    pub fn prefix_sum_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::PrefixSum { .. }))
            .count()
    }
}

// ---------------------------------------------------------------------------
// text rendering

/// Name tables for rendering statements outside a full plan.
pub struct Names<'a> {
    pub buffers: &'a [BufferDecl],
    pub scalars: &'a [ScalarDecl],
    pub vars: &'a [String],
}

impl Names<'_> {
    fn buf(&self, b: BufId) -> &str {
        &self.buffers[b as usize].name
    }

    fn var(&self, v: VarId) -> &str {
        &self.vars[v as usize]
    }

    fn scalar(&self, s: ScalarId) -> &str {
        &self.scalars[s as usize].name
    }

    pub fn expr(&self, e: &Expr) -> String {
        let mut out = String::new();
        render_expr(self, e, &mut out);
        out
    }

    pub fn stmts(&self, body: &[Stmt], depth: usize) -> String {
        let mut out = String::new();
        render_stmts(self, body, depth, &mut out);
        out
    }
}

fn render_expr(n: &Names<'_>, e: &Expr, out: &mut String) {
    match e {
        Expr::Const(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Var(v) => out.push_str(n.var(*v)),
        Expr::Scalar(s) => out.push_str(n.scalar(*s)),
        Expr::Intrinsic(i) => out.push_str(i.name()),
        Expr::Bin(op, a, b) if op.is_call() => {
            let _ = write!(out, "{}(", op.symbol());
            render_expr(n, a, out);
            out.push_str(", ");
            render_expr(n, b, out);
            out.push(')');
        }
        Expr::Bin(op, a, b) => {
            out.push('(');
            render_expr(n, a, out);
            let _ = write!(
                out,
                " {}{} ",
                op.symbol(),
                if op.is_float() { "." } else { "" }
            );
            render_expr(n, b, out);
            out.push(')');
        }
        Expr::Select(c, a, b) => {
            out.push('(');
            render_expr(n, c, out);
            out.push_str(" ? ");
            render_expr(n, a, out);
            out.push_str(" : ");
            render_expr(n, b, out);
            out.push(')');
        }
        Expr::Load { buf, idx, .. } => {
            out.push_str(n.buf(*buf));
            out.push('[');
            render_expr(n, idx, out);
            out.push(']');
        }
        Expr::Murmur(x, s) => {
            out.push_str("hash_murmur(");
            render_expr(n, x, out);
            out.push_str(", ");
            render_expr(n, s, out);
            out.push(')');
        }
        Expr::MulShift(x, a, b) => {
            out.push_str("hash_multiply_shift(");
            render_expr(n, x, out);
            out.push_str(", ");
            render_expr(n, a, out);
            out.push_str(", ");
            render_expr(n, b, out);
            out.push(')');
        }
        Expr::ToFloat(x) => {
            out.push_str("(f64)");
            render_expr(n, x, out);
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn render_stmts(n: &Names<'_>, body: &[Stmt], depth: usize, out: &mut String) {
    for s in body {
        indent(out, depth);
        match s {
            Stmt::Assign(v, e) => {
                let _ = write!(out, "{} = ", n.var(*v));
                render_expr(n, e, out);
                out.push_str(";\n");
            }
            Stmt::Store { buf, idx, val, .. } => {
                let _ = write!(out, "{}[", n.buf(*buf));
                render_expr(n, idx, out);
                out.push_str("] = ");
                render_expr(n, val, out);
                out.push_str(";\n");
            }
            Stmt::For {
                var,
                start,
                end,
                step,
                body,
            } => {
                let v = n.var(*var);
                let _ = write!(out, "for ({v} = ");
                render_expr(n, start, out);
                let _ = write!(out, "; {v} < ");
                render_expr(n, end, out);
                let _ = write!(out, "; {v} += ");
                render_expr(n, step, out);
                out.push_str(") {\n");
                render_stmts(n, body, depth + 1, out);
                indent(out, depth);
                out.push_str("}\n");
            }
            Stmt::If {
                cond, then, els, ..
            } => {
                out.push_str("if (");
                render_expr(n, cond, out);
                out.push_str(") {\n");
                render_stmts(n, then, depth + 1, out);
                indent(out, depth);
                if els.is_empty() {
                    out.push_str("}\n");
                } else {
                    out.push_str("} else {\n");
                    render_stmts(n, els, depth + 1, out);
                    indent(out, depth);
                    out.push_str("}\n");
                }
            }
            Stmt::Loop(body) => {
                out.push_str("while (1) {\n");
                render_stmts(n, body, depth + 1, out);
                indent(out, depth);
                out.push_str("}\n");
            }
            Stmt::Break => out.push_str("break;\n"),
            Stmt::Atomic {
                op,
                buf,
                idx,
                val,
                prior,
                ..
            } => {
                if let Some(p) = prior {
                    let _ = write!(out, "{} = ", n.var(*p));
                }
                let _ = write!(out, "{}(&{}[", op.name(), n.buf(*buf));
                render_expr(n, idx, out);
                out.push_str("], ");
                render_expr(n, val, out);
                out.push_str(");\n");
            }
            Stmt::AtomicCas {
                buf,
                idx,
                expected,
                desired,
                prior,
                ..
            } => {
                let _ = write!(out, "{} = atomic_cmpxchg(&{}[", n.var(*prior), n.buf(*buf));
                render_expr(n, idx, out);
                out.push_str("], ");
                render_expr(n, expected, out);
                out.push_str(", ");
                render_expr(n, desired, out);
                out.push_str(");\n");
            }
        }
    }
}

fn render_len(plan: &KernelPlan, len: &Len) -> String {
    match len {
        Len::Const(c) => alloc::format!("{c}"),
        Len::Scalar(s, k) => alloc::format!("{} + {k}", plan.scalars[*s as usize].name),
    }
}

/// Deterministic text form of a plan: host steps, then every kernel.
pub fn render_kernel_text(plan: &KernelPlan) -> String {
    let mut out = String::new();
    let buf = |b: &BufId| plan.buffers[*b as usize].name.as_str();
    let scalar = |s: &ScalarId| plan.scalars[*s as usize].name.as_str();
    out.push_str("// host steps\n");
    for (i, s) in plan.steps.iter().enumerate() {
        let _ = write!(out, "// {i:>3}: ");
        match s {
            Step::Alloc(b) => {
                let d = &plan.buffers[*b as usize];
                let init = match &d.init {
                    Init::Zero => String::from("zero"),
                    Init::Fill(v) => alloc::format!("fill {v}"),
                    Init::Data(v) => alloc::format!("data[{}]", v.len()),
                    Init::Input(c) => alloc::format!("input {c}"),
                };
                let _ = writeln!(
                    out,
                    "AllocBuffer {} {}[{}] {init}",
                    d.name,
                    d.elem.name(),
                    render_len(plan, &d.len)
                );
            }
            Step::Launch {
                kernel,
                global,
                group,
                limit,
            } => {
                let _ = writeln!(
                    out,
                    "LaunchKernel {} global={global} group={group} active={limit}",
                    plan.kernels[*kernel].name
                );
            }
            Step::PrefixSum {
                flags,
                positions,
                total,
            } => {
                let _ = writeln!(
                    out,
                    "HostPrefixSum {} -> {}, {}",
                    buf(flags),
                    buf(positions),
                    scalar(total)
                );
            }
            Step::Compact {
                regions,
                workers,
                columns,
                total,
            } => {
                let cols: Vec<&str> = columns.iter().map(buf).collect();
                let _ = writeln!(
                    out,
                    "HostCompact {} workers={workers} [{}] -> {}",
                    buf(regions),
                    cols.join(", "),
                    scalar(total)
                );
            }
            Step::MergeHashTables(m) => {
                let layout = match &m.layout {
                    AggLayout::Ungrouped { tables } => alloc::format!("ungrouped tables={tables}"),
                    AggLayout::Slots { keys, slots } => {
                        alloc::format!("slots {} n={slots}", buf(keys))
                    }
                    AggLayout::Entries {
                        keys,
                        counters,
                        offsets,
                    } => alloc::format!(
                        "entries {} by {} tables={}",
                        buf(keys),
                        buf(counters),
                        offsets.len()
                    ),
                };
                let accs: Vec<&str> = m.accs.iter().map(|(b, _)| buf(b)).collect();
                let _ = writeln!(
                    out,
                    "HostMergeHashTables {layout} count={} accs=[{}]",
                    buf(&m.count),
                    accs.join(", ")
                );
            }
            Step::CheckRebuild {
                flag,
                seeds,
                restart_at,
                max_rebuilds,
                ..
            } => {
                let s: Vec<&str> = seeds.iter().map(scalar).collect();
                let _ = writeln!(
                    out,
                    "HostCheckRebuild {} reseed [{}] restart={restart_at} max={max_rebuilds}",
                    buf(flag),
                    s.join(", ")
                );
            }
            Step::Finalize => {
                let cols: Vec<&str> = plan
                    .finalize
                    .columns
                    .iter()
                    .map(|(n, _, _)| n.as_str())
                    .collect();
                let _ = writeln!(out, "HostFinalize [{}]", cols.join(", "));
            }
            Step::Free(b) => {
                let _ = writeln!(out, "FreeBuffer {}", buf(b));
            }
        }
    }
    for k in &plan.kernels {
        out.push('\n');
        let names = Names {
            buffers: &plan.buffers,
            scalars: &plan.scalars,
            vars: &k.vars,
        };
        let params: Vec<String> = k
            .params
            .iter()
            .map(|b| {
                let d = &plan.buffers[*b as usize];
                alloc::format!("global {}* {}", d.elem.name(), d.name)
            })
            .collect();
        let _ = writeln!(out, "kernel {}({}) {{", k.name, params.join(", "));
        if !k.vars.is_empty() {
            indent(&mut out, 1);
            let _ = writeln!(out, "i64 {};", k.vars.join(", "));
        }
        render_stmts(&names, &k.body, 1, &mut out);
        out.push_str("}\n");
    }
    out
}

impl fmt::Display for KernelPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_kernel_text(self))
    }
}

/// Visits every statement, depth first.
pub fn walk_stmts<'a>(body: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in body {
        f(s);
        match s {
            Stmt::For { body, .. } | Stmt::Loop(body) => walk_stmts(body, f),
            Stmt::If { then, els, .. } => {
                walk_stmts(then, f);
                walk_stmts(els, f);
            }
            _ => {}
        }
    }
}
