//! Fragment generation and kernel-plan assembly.
//!
//! Every pipeline operation yields a [`Fragment`]. Fragments are glued
//! together per execution strategy: kernel tops in op order, kernel bottoms
//! in reverse, one block per unrolled replica inside the LOOP scope.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::hash::{self, EMPTY_KEY, EMPTY_REF, MAX_EVICTIONS};
use crate::ir::{
    AggSpec, Column, Cond, HashFunction, HashTableDescriptor, HashTableImpl, MemoryAccess, PExpr,
    PipelineKind, PipelineOp, PipelineProgram, Predication, Strategy,
};
use crate::kernel::*;
use crate::logical::{AggFunc, ArithOp, CmpOp};
use crate::planner::{OutputSource, PipelineSet};
use crate::storage::{ColumnKind, ColumnTable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodegenError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("plan needs {required} buffer elements, budget is {budget}")]
    PlanTooLarge { required: usize, budget: usize },
    #[error("unknown column `{0}`")]
    MissingColumn(String),
}

type Result<T> = core::result::Result<T, CodegenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodegenOptions {
    /// Workers for single-pass projection; base of every thread count.
    pub compute_units: u32,
    /// Work-group size for projection kernels with many threads.
    pub group_hint: u32,
    /// Upper bound on aggregation-table elements.
    pub memory_budget: usize,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions {
            compute_units: 8,
            group_hint: 1,
            memory_budget: 1 << 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scope {
    If {
        cond: Expr,
        site: SiteId,
    },
    For {
        var: VarId,
        start: Expr,
        end: Expr,
        step: Expr,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Stmt(Stmt),
    Open(Scope),
    Close,
}

/// Code produced for one pipeline operation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub host_var_decls: Vec<BufId>,
    pub host_init: Vec<Step>,
    pub host_cleanup: Vec<Step>,
    pub kernel_var_decls: Vec<Stmt>,
    pub kernel_top: Vec<Item>,
    pub kernel_bottom: Vec<Item>,
    /// Runs once per thread after the LOOP scope closes.
    pub kernel_epilogue: Vec<Stmt>,
}

impl Fragment {
    fn top(&mut self, s: Stmt) {
        self.kernel_top.push(Item::Stmt(s));
    }

    fn open(&mut self, s: Scope) {
        self.kernel_top.push(Item::Open(s));
        self.kernel_bottom.push(Item::Close);
    }
}

/// Buffers, host scalars and site ids of one plan.
#[derive(Debug, Default)]
pub struct Registry {
    pub buffers: Vec<BufferDecl>,
    pub scalars: Vec<ScalarDecl>,
    inputs: BTreeMap<String, BufId>,
    allocated: Vec<bool>,
    sites: u32,
}

impl Registry {
    pub fn buffer(&mut self, name: &str, elem: ElemType, len: Len, init: Init) -> BufId {
        let mut unique = String::from(name);
        let mut n = 1;
        while self.buffers.iter().any(|b| b.name == unique) {
            n += 1;
            unique = alloc::format!("{name}_{n}");
        }
        self.buffers.push(BufferDecl {
            name: unique,
            elem,
            len,
            init,
        });
        self.allocated.push(false);
        (self.buffers.len() - 1) as BufId
    }

    pub fn input(&mut self, attr: &str, kind: ColumnKind) -> BufId {
        if let Some(b) = self.inputs.get(attr) {
            return *b;
        }
        let elem = elem_of(kind);
        let b = self.buffer(attr, elem, Len::Const(0), Init::Input(attr.to_string()));
        self.inputs.insert(attr.to_string(), b);
        b
    }

    pub fn scalar(&mut self, name: &str, init: i64) -> ScalarId {
        self.scalars.push(ScalarDecl {
            name: name.to_string(),
            init,
        });
        (self.scalars.len() - 1) as ScalarId
    }

    pub fn site(&mut self) -> SiteId {
        self.sites += 1;
        self.sites - 1
    }
}

fn elem_of(kind: ColumnKind) -> ElemType {
    match kind {
        ColumnKind::Float64 => ElemType::F64,
        _ => ElemType::I64,
    }
}

/// Runtime shape of a join hash table.
#[derive(Debug, Clone)]
pub struct JoinTable {
    pub id: usize,
    pub implementation: HashTableImpl,
    pub function: HashFunction,
    pub capacity: usize,
    pub slots: BufId,
    pub seeds: [ScalarId; 2],
    pub fail_flag: Option<BufId>,
    pub key_attr: String,
    pub columns: BTreeMap<String, BufId>,
}

#[derive(Debug, Clone)]
enum AggTables {
    Ungrouped,
    Linear {
        keys: BufId,
        off: Expr,
        mask: Expr,
        bits: Expr,
    },
    Cuckoo {
        tab: BufId,
        keys: BufId,
        counters: BufId,
        toff: Expr,
        cap: Expr,
        mask: Expr,
        bits: Expr,
        eoff: Expr,
    },
}

#[derive(Debug, Clone)]
struct AggTarget {
    table: Expr,
    tables: AggTables,
    count: BufId,
    /// Accumulator buffer per aggregate; COUNT uses the hidden count.
    accs: Vec<Option<(BufId, AccKind)>>,
    seeds: [ScalarId; 2],
    function: HashFunction,
    packing: Vec<(i64, i64)>,
}

#[derive(Debug, Clone)]
enum Role {
    /// Single-pass: write at a per-thread cursor inside a private region.
    Single {
        write_pos: VarId,
        outputs: BTreeMap<String, BufId>,
    },
    /// Multi-pass kernel 1: mark qualifying tuples.
    Flags {
        flags: BufId,
    },
    /// Multi-pass kernel 2: write qualifying tuples to prefix-sum positions.
    Positions {
        flags: BufId,
        positions: BufId,
        total: ScalarId,
        outputs: BTreeMap<String, BufId>,
    },
    Aggregate(AggTarget),
}

/// Per-kernel generation state.
pub struct GenCtx<'a> {
    reg: &'a mut Registry,
    joins: &'a [JoinTable],
    vars: Vec<String>,
    env: BTreeMap<String, Expr>,
    loop_table: String,
    rows: usize,
    threads: u64,
    unroll: u32,
    access: MemoryAccess,
    chunk: u64,
    id: VarId,
    end: Expr,
    idx: Expr,
    mode: Predication,
    ri: VarId,
    role: Role,
    ungrouped: Option<(VarId, Vec<VarId>)>,
}

fn c(v: i64) -> Expr {
    Expr::Const(v)
}

fn v(x: VarId) -> Expr {
    Expr::Var(x)
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::bin(op, a, b)
}

fn cmp_op(op: CmpOp, float: bool) -> BinOp {
    match (op, float) {
        (CmpOp::Lt, false) => BinOp::Lt,
        (CmpOp::Le, false) => BinOp::Le,
        (CmpOp::Eq, false) => BinOp::Eq,
        (CmpOp::Ge, false) => BinOp::Ge,
        (CmpOp::Gt, false) => BinOp::Gt,
        (CmpOp::Ne, false) => BinOp::Ne,
        (CmpOp::Lt, true) => BinOp::FLt,
        (CmpOp::Le, true) => BinOp::FLe,
        (CmpOp::Eq, true) => BinOp::FEq,
        (CmpOp::Ge, true) => BinOp::FGe,
        (CmpOp::Gt, true) => BinOp::FGt,
        (CmpOp::Ne, true) => BinOp::FNe,
    }
}

fn arith_op(op: ArithOp, float: bool) -> BinOp {
    match (op, float) {
        (ArithOp::Add, false) => BinOp::Add,
        (ArithOp::Sub, false) => BinOp::Sub,
        (ArithOp::Mul, false) => BinOp::Mul,
        (ArithOp::Div, false) => BinOp::Div,
        (ArithOp::Add, true) => BinOp::FAdd,
        (ArithOp::Sub, true) => BinOp::FSub,
        (ArithOp::Mul, true) => BinOp::FMul,
        (ArithOp::Div, true) => BinOp::FDiv,
    }
}

fn hash_expr(function: HashFunction, x: Expr, seed: Expr, mask: Expr, bits: Expr) -> Expr {
    let h = match function {
        HashFunction::Murmur => Expr::Murmur(x.into(), seed.into()),
        HashFunction::MultiplyShift => {
            Expr::MulShift(x.into(), bin(BinOp::Or, seed, c(1)).into(), bits.into())
        }
    };
    bin(BinOp::And, h, mask)
}

impl<'a> GenCtx<'a> {
    fn var(&mut self, base: &str) -> VarId {
        let mut name = String::from(base);
        let mut n = 1;
        while self.vars.contains(&name) {
            n += 1;
            name = alloc::format!("{base}{n}");
        }
        self.vars.push(name);
        (self.vars.len() - 1) as VarId
    }

    fn site(&mut self) -> SiteId {
        self.reg.site()
    }

    fn load(&mut self, buf: BufId, idx: Expr) -> Expr {
        let site = self.site();
        Expr::load(buf, idx, site)
    }

    fn store(&mut self, buf: BufId, idx: Expr, val: Expr) -> Stmt {
        let site = self.site();
        Stmt::Store {
            buf,
            idx,
            val,
            site,
        }
    }

    fn iff(&mut self, cond: Expr, then: Vec<Stmt>) -> Stmt {
        let site = self.site();
        Stmt::If {
            cond,
            then,
            els: Vec::new(),
            site,
        }
    }

    fn atomic(
        &mut self,
        op: AtomicOp,
        buf: BufId,
        idx: Expr,
        val: Expr,
        prior: Option<VarId>,
    ) -> Stmt {
        let site = self.site();
        Stmt::Atomic {
            op,
            buf,
            idx,
            val,
            prior,
            site,
        }
    }

    fn cas(&mut self, buf: BufId, idx: Expr, expected: Expr, desired: Expr, prior: VarId) -> Stmt {
        let site = self.site();
        Stmt::AtomicCas {
            buf,
            idx,
            expected,
            desired,
            prior,
            site,
        }
    }

    fn resolve(&mut self, attr: &str, kind: ColumnKind) -> Result<Expr> {
        if let Some(e) = self.env.get(attr) {
            let e = e.clone();
            return Ok(self.resite(e));
        }
        let own = attr
            .split_once('.')
            .map(|(t, _)| t == self.loop_table)
            .unwrap_or(false);
        if !own {
            return Err(CodegenError::MissingColumn(attr.to_string()));
        }
        let b = self.reg.input(attr, kind);
        let idx = self.idx.clone();
        Ok(self.load(b, idx))
    }

    /// Fresh site ids for a cloned expression, so each use is its own site.
    fn resite(&mut self, e: Expr) -> Expr {
        match e {
            Expr::Load { buf, idx, .. } => {
                let idx = self.resite(*idx);
                self.load(buf, idx)
            }
            Expr::Bin(op, a, b) => {
                let a = self.resite(*a);
                let b = self.resite(*b);
                bin(op, a, b)
            }
            Expr::Select(x, a, b) => {
                let x = self.resite(*x);
                let a = self.resite(*a);
                let b = self.resite(*b);
                Expr::select(x, a, b)
            }
            other => other,
        }
    }

    fn expr(&mut self, e: &PExpr) -> Result<Expr> {
        Ok(match e {
            PExpr::Attr(a, k) => self.resolve(a, *k)?,
            PExpr::Int(x) => c(*x),
            PExpr::Float(x) => Expr::f(*x),
            PExpr::Bin(op, l, r) => {
                let float = e.kind() == ColumnKind::Float64;
                let a = self.typed(l, float)?;
                let b = self.typed(r, float)?;
                bin(arith_op(*op, float), a, b)
            }
        })
    }

    fn typed(&mut self, e: &PExpr, float: bool) -> Result<Expr> {
        let x = self.expr(e)?;
        Ok(if float && e.kind() != ColumnKind::Float64 {
            Expr::ToFloat(x.into())
        } else {
            x
        })
    }

    fn cond(&mut self, conds: &[Cond]) -> Result<Expr> {
        let mut acc: Option<Expr> = None;
        for cd in conds {
            let float =
                cd.left.kind() == ColumnKind::Float64 || cd.right.kind() == ColumnKind::Float64;
            let l = self.typed(&cd.left, float)?;
            let r = self.typed(&cd.right, float)?;
            let e = bin(cmp_op(cd.op, float), l, r);
            acc = Some(match acc {
                None => e,
                Some(a) => bin(BinOp::And, a, e),
            });
        }
        Ok(acc.unwrap_or(c(1)))
    }

    fn predicated(&self) -> bool {
        self.mode == Predication::Predicated
    }

    /// 1 in branched mode, the result increment in predicated mode.
    fn inc(&self) -> Expr {
        if self.predicated() {
            v(self.ri)
        } else {
            c(1)
        }
    }

    fn join(&self, id: usize) -> Result<JoinTable> {
        self.joins
            .iter()
            .find(|j| j.id == id)
            .cloned()
            .ok_or_else(|| {
                CodegenError::Unsupported(alloc::format!("hash table ht{id} is not built"))
            })
    }

    /// Fragment for one operation of the current replica.
    pub fn generate_fragment(&mut self, op: &PipelineOp) -> Result<Fragment> {
        let mut f = Fragment::default();
        match op {
            PipelineOp::Loop { .. } => self.loop_fragment(&mut f),
            PipelineOp::Filter { conds, .. } => {
                if matches!(self.role, Role::Positions { .. }) {
                    // positions already encode the filter
                    return Ok(f);
                }
                let cond = self.cond(conds)?;
                if self.predicated() {
                    f.top(Stmt::Assign(self.ri, bin(BinOp::And, v(self.ri), cond)));
                } else {
                    let site = self.site();
                    f.open(Scope::If { cond, site });
                }
            }
            PipelineOp::HashProbe {
                table,
                key,
                payload,
                ..
            } => self.probe(&mut f, *table, key, payload)?,
            PipelineOp::HashPut { table, key, .. } => self.put(&mut f, *table, key)?,
            PipelineOp::CrossJoin {
                table,
                rows,
                columns,
                ..
            } => {
                if !matches!(self.role, Role::Single { .. } | Role::Aggregate(_)) {
                    return Err(CodegenError::Unsupported(
                        "CROSS_JOIN under the multi-pass strategy".into(),
                    ));
                }
                let j = self.var(&alloc::format!("j_{}", sanitize(table)));
                f.open(Scope::For {
                    var: j,
                    start: c(0),
                    end: c(*rows as i64),
                    step: c(1),
                });
                for (attr, kind) in columns {
                    let b = self.reg.input(attr, *kind);
                    let site = self.site();
                    self.env.insert(attr.clone(), Expr::load(b, v(j), site));
                }
            }
            PipelineOp::Arithmetic { expr, out, .. } => {
                let e = self.expr(expr)?;
                let x = self.var(&sanitize(&out.0));
                f.top(Stmt::Assign(x, e));
                self.env.insert(out.0.clone(), v(x));
            }
            PipelineOp::Project { attrs, .. } => self.project(&mut f, attrs)?,
            PipelineOp::Aggregate { aggs, .. } => self.aggregate(&mut f, aggs)?,
            PipelineOp::HashAggregate { group, aggs, .. } => {
                self.hash_aggregate(&mut f, group, aggs)?
            }
        }
        Ok(f)
    }

    fn loop_fragment(&mut self, f: &mut Fragment) {
        let tid = self.var("tid");
        f.kernel_var_decls
            .push(Stmt::Assign(tid, Expr::Intrinsic(Intrinsic::GlobalId)));
        let n = self.rows as i64;
        let u = self.unroll as i64;
        match self.access {
            MemoryAccess::Sequential => {
                let start = self.var("start");
                let end = self.var("end");
                let chunk = self.chunk as i64;
                f.kernel_var_decls
                    .push(Stmt::Assign(start, Expr::mul(v(tid), c(chunk))));
                f.kernel_var_decls.push(Stmt::Assign(
                    end,
                    bin(BinOp::Min, Expr::add(v(start), c(chunk)), c(n)),
                ));
                f.open(Scope::For {
                    var: self.id,
                    start: v(start),
                    end: v(end),
                    step: c(u),
                });
                self.end = v(end);
            }
            MemoryAccess::Coalesced => {
                f.open(Scope::For {
                    var: self.id,
                    start: v(tid),
                    end: c(n),
                    step: c(self.threads as i64 * u),
                });
                self.end = c(n);
            }
        }
    }

    fn probe(
        &mut self,
        f: &mut Fragment,
        table: usize,
        key: &PExpr,
        payload: &[Column],
    ) -> Result<()> {
        let j = self.join(table)?;
        let kx = self.expr(key)?;
        let kv = self.var(&alloc::format!("key{table}"));
        let rf = self.var(&alloc::format!("ref{table}"));
        let found = self.var(&alloc::format!("found{table}"));
        f.top(Stmt::Assign(kv, kx));
        let mask = c(j.capacity as i64 - 1);
        let bits = c(hash::log2(j.capacity) as i64);
        match j.implementation {
            HashTableImpl::LinearProbing => {
                let h = self.var(&alloc::format!("h{table}"));
                let k = self.var(&alloc::format!("slot_key{table}"));
                f.top(Stmt::Assign(
                    h,
                    hash_expr(
                        j.function,
                        v(kv),
                        Expr::Scalar(j.seeds[0]),
                        mask.clone(),
                        bits,
                    ),
                ));
                f.top(Stmt::Assign(rf, c(0)));
                f.top(Stmt::Assign(found, c(0)));
                let slot_key = self.load(j.slots, Expr::mul(v(h), c(2)));
                let slot_ref = self.load(j.slots, Expr::add(Expr::mul(v(h), c(2)), c(1)));
                let hit = self.iff(
                    bin(BinOp::Eq, v(k), v(kv)),
                    vec![
                        Stmt::Assign(rf, slot_ref),
                        Stmt::Assign(found, c(1)),
                        Stmt::Break,
                    ],
                );
                let miss = self.iff(bin(BinOp::Eq, v(k), c(EMPTY_KEY)), vec![Stmt::Break]);
                f.top(Stmt::Loop(vec![
                    Stmt::Assign(k, slot_key),
                    hit,
                    miss,
                    Stmt::Assign(h, bin(BinOp::And, Expr::add(v(h), c(1)), mask)),
                ]));
            }
            HashTableImpl::Cuckoo => {
                let key_col = j.columns[&j.key_attr];
                let r0 = self.var(&alloc::format!("r{table}_0"));
                let r1 = self.var(&alloc::format!("r{table}_1"));
                let h0 = hash_expr(
                    j.function,
                    v(kv),
                    Expr::Scalar(j.seeds[0]),
                    mask.clone(),
                    bits.clone(),
                );
                let h1 = hash_expr(j.function, v(kv), Expr::Scalar(j.seeds[1]), mask, bits);
                let l0 = self.load(j.slots, h0);
                let l1 = self.load(j.slots, Expr::add(c(j.capacity as i64), h1));
                f.top(Stmt::Assign(r0, l0));
                f.top(Stmt::Assign(r1, l1));
                let matched = |ctx: &mut Self, r: VarId| {
                    let k = ctx.load(key_col, bin(BinOp::Max, v(r), c(0)));
                    bin(
                        BinOp::And,
                        bin(BinOp::Ge, v(r), c(0)),
                        bin(BinOp::Eq, k, v(kv)),
                    )
                };
                let m0 = self.var(&alloc::format!("m{table}_0"));
                let m1 = self.var(&alloc::format!("m{table}_1"));
                let e0 = matched(self, r0);
                let e1 = matched(self, r1);
                f.top(Stmt::Assign(m0, e0));
                f.top(Stmt::Assign(m1, e1));
                f.top(Stmt::Assign(
                    rf,
                    Expr::select(v(m0), v(r0), Expr::select(v(m1), v(r1), c(0))),
                ));
                f.top(Stmt::Assign(found, bin(BinOp::Or, v(m0), v(m1))));
            }
        }
        if self.predicated() {
            f.top(Stmt::Assign(self.ri, bin(BinOp::And, v(self.ri), v(found))));
        } else {
            let site = self.site();
            f.open(Scope::If {
                cond: v(found),
                site,
            });
        }
        for (attr, _) in payload {
            let b = *j.columns.get(attr).ok_or_else(|| {
                CodegenError::MissingColumn(alloc::format!("{attr} in ht{table}"))
            })?;
            let site = self.site();
            self.env.insert(attr.clone(), Expr::load(b, v(rf), site));
        }
        Ok(())
    }

    fn write_position(&mut self) -> Result<Expr> {
        match &self.role {
            Role::Single { write_pos, .. } => Ok(v(*write_pos)),
            Role::Positions {
                positions, total, ..
            } => {
                let (positions, total) = (*positions, *total);
                let idx = self.idx.clone();
                let p = self.load(positions, idx);
                Ok(if self.predicated() {
                    Expr::select(v(self.ri), p, Expr::Scalar(total))
                } else {
                    p
                })
            }
            _ => Err(CodegenError::Unsupported(
                "write position outside a projection kernel".into(),
            )),
        }
    }

    fn output(&self, attr: &str) -> Result<BufId> {
        match &self.role {
            Role::Single { outputs, .. } | Role::Positions { outputs, .. } => outputs
                .get(attr)
                .copied()
                .ok_or_else(|| CodegenError::MissingColumn(attr.to_string())),
            _ => Err(CodegenError::Unsupported("no output columns".into())),
        }
    }

    fn put(&mut self, f: &mut Fragment, table: usize, key: &PExpr) -> Result<()> {
        if matches!(self.role, Role::Flags { .. }) {
            return Ok(());
        }
        let j = self.join(table)?;
        let pos = self.var(&alloc::format!("pos{table}"));
        let kv = self.var(&alloc::format!("key{table}"));
        let wp = self.write_position()?;
        let kx = self.expr(key)?;
        let mut body = vec![Stmt::Assign(pos, wp), Stmt::Assign(kv, kx)];
        let mask = c(j.capacity as i64 - 1);
        let bits = c(hash::log2(j.capacity) as i64);
        match j.implementation {
            HashTableImpl::LinearProbing => {
                let h = self.var(&alloc::format!("h{table}"));
                let prior = self.var(&alloc::format!("prior{table}"));
                body.push(Stmt::Assign(
                    h,
                    hash_expr(
                        j.function,
                        v(kv),
                        Expr::Scalar(j.seeds[0]),
                        mask.clone(),
                        bits,
                    ),
                ));
                let claim = self.cas(j.slots, Expr::mul(v(h), c(2)), c(EMPTY_KEY), v(kv), prior);
                let st = self.store(j.slots, Expr::add(Expr::mul(v(h), c(2)), c(1)), v(pos));
                let done = self.iff(
                    bin(BinOp::Eq, v(prior), c(EMPTY_KEY)),
                    vec![st, Stmt::Break],
                );
                body.push(Stmt::Loop(vec![
                    claim,
                    done,
                    Stmt::Assign(h, bin(BinOp::And, Expr::add(v(h), c(1)), mask)),
                ]));
            }
            HashTableImpl::Cuckoo => {
                let key_col = j.columns[&j.key_attr];
                let fail = j.fail_flag.expect("cuckoo tables carry a failure flag");
                let cur = self.var(&alloc::format!("cur{table}"));
                let ck = self.var(&alloc::format!("ckey{table}"));
                let side = self.var(&alloc::format!("side{table}"));
                let steps = self.var(&alloc::format!("evictions{table}"));
                let prior = self.var(&alloc::format!("prior{table}"));
                let h = self.var(&alloc::format!("h{table}"));
                let st = self.store(key_col, v(pos), v(kv));
                body.push(st);
                body.push(Stmt::Assign(cur, v(pos)));
                body.push(Stmt::Assign(ck, v(kv)));
                body.push(Stmt::Assign(side, c(0)));
                body.push(Stmt::Assign(steps, c(0)));
                let h0 = hash_expr(
                    j.function,
                    v(ck),
                    Expr::Scalar(j.seeds[0]),
                    mask.clone(),
                    bits.clone(),
                );
                let h1 = hash_expr(j.function, v(ck), Expr::Scalar(j.seeds[1]), mask, bits);
                let xchg = self.atomic(
                    AtomicOp::Xchg,
                    j.slots,
                    Expr::add(Expr::mul(v(side), c(j.capacity as i64)), v(h)),
                    v(cur),
                    Some(prior),
                );
                let placed = self.iff(bin(BinOp::Lt, v(prior), c(0)), vec![Stmt::Break]);
                let flag = self.store(fail, c(0), c(1));
                let give_up = self.iff(
                    bin(BinOp::Ge, v(steps), c(MAX_EVICTIONS)),
                    vec![flag, Stmt::Break],
                );
                let evicted_key = self.load(key_col, v(cur));
                body.push(Stmt::Loop(vec![
                    Stmt::Assign(h, Expr::select(v(side), h1, h0)),
                    xchg,
                    placed,
                    Stmt::Assign(steps, Expr::add(v(steps), c(1))),
                    give_up,
                    Stmt::Assign(cur, v(prior)),
                    Stmt::Assign(ck, evicted_key),
                    Stmt::Assign(side, bin(BinOp::Sub, c(1), v(side))),
                ]));
            }
        }
        if self.predicated() {
            let s = self.iff(v(self.ri), body);
            f.top(s);
        } else {
            for s in body {
                f.top(s);
            }
        }
        Ok(())
    }

    fn project(&mut self, f: &mut Fragment, attrs: &[Column]) -> Result<()> {
        match self.role.clone() {
            Role::Flags { flags } => {
                let idx = self.idx.clone();
                let val = self.inc();
                let s = self.store(flags, idx, val);
                f.top(s);
            }
            Role::Single { write_pos, .. } => {
                for (attr, kind) in attrs {
                    let b = self.output(attr)?;
                    let val = self.resolve(attr, *kind)?;
                    let s = self.store(b, v(write_pos), val);
                    f.top(s);
                }
                let inc = self.inc();
                f.top(Stmt::Assign(write_pos, Expr::add(v(write_pos), inc)));
            }
            Role::Positions { .. } => {
                let p = self.var("out_pos");
                let wp = self.write_position()?;
                f.top(Stmt::Assign(p, wp));
                for (attr, kind) in attrs {
                    let b = self.output(attr)?;
                    let val = self.resolve(attr, *kind)?;
                    let s = self.store(b, v(p), val);
                    f.top(s);
                }
            }
            Role::Aggregate(_) => {
                return Err(CodegenError::Unsupported(
                    "PROJECT inside an aggregation kernel".into(),
                ))
            }
        }
        Ok(())
    }

    fn target(&self) -> Result<AggTarget> {
        match &self.role {
            Role::Aggregate(t) => Ok(t.clone()),
            _ => Err(CodegenError::Unsupported(
                "aggregation outside an aggregation kernel".into(),
            )),
        }
    }

    /// Value added to an accumulator for one tuple.
    fn contribution(&mut self, a: &AggSpec, kind: AccKind) -> Result<Expr> {
        let arg = match &a.arg {
            Some(e) => self.expr(e)?,
            None => c(1),
        };
        let p = self.predicated();
        let ri = v(self.ri);
        Ok(match kind {
            AccKind::Sum if p => Expr::mul(arg, ri),
            AccKind::FSum if p => bin(BinOp::FMul, arg, Expr::ToFloat(ri.into())),
            AccKind::Min | AccKind::Max | AccKind::FMin | AccKind::FMax if p => {
                Expr::select(ri, arg, identity(kind))
            }
            _ => arg,
        })
    }

    fn aggregate(&mut self, f: &mut Fragment, aggs: &[AggSpec]) -> Result<()> {
        let t = self.target()?;
        let first = self.ungrouped.is_none();
        if first {
            let cnt = self.var("count");
            let accs = (0..aggs.len())
                .map(|i| self.var(&alloc::format!("acc{i}")))
                .collect();
            self.ungrouped = Some((cnt, accs));
        }
        let (cnt, accs) = self.ungrouped.clone().expect("set above");
        let inc = self.inc();
        f.top(Stmt::Assign(cnt, Expr::add(v(cnt), inc)));
        for (i, a) in aggs.iter().enumerate() {
            let Some((_, kind)) = t.accs[i] else { continue };
            let x = self.contribution(a, kind)?;
            f.top(Stmt::Assign(accs[i], bin(combine(kind), v(accs[i]), x)));
        }
        if first {
            f.kernel_var_decls.push(Stmt::Assign(cnt, c(0)));
            for (i, _) in aggs.iter().enumerate() {
                if let Some((_, kind)) = t.accs[i] {
                    f.kernel_var_decls
                        .push(Stmt::Assign(accs[i], identity(kind)));
                }
            }
            let mut flush =
                vec![self.atomic(AtomicOp::Add, t.count, t.table.clone(), v(cnt), None)];
            for (i, _) in aggs.iter().enumerate() {
                if let Some((b, kind)) = t.accs[i] {
                    flush.push(self.atomic(atomic_of(kind), b, t.table.clone(), v(accs[i]), None));
                }
            }
            let s = self.iff(bin(BinOp::Gt, v(cnt), c(0)), flush);
            f.kernel_epilogue.push(s);
        }
        Ok(())
    }

    fn hash_aggregate(
        &mut self,
        f: &mut Fragment,
        group: &[Column],
        aggs: &[AggSpec],
    ) -> Result<()> {
        let t = self.target()?;
        // mixed-radix key packing
        let mut packed: Option<Expr> = None;
        for ((attr, kind), (min, stride)) in group.iter().zip(&t.packing) {
            let x = self.resolve(attr, *kind)?;
            let part = Expr::mul(bin(BinOp::Sub, x, c(*min)), c(*stride));
            packed = Some(match packed {
                None => part,
                Some(p) => Expr::add(p, part),
            });
        }
        let kv = self.var("gkey");
        f.top(Stmt::Assign(kv, packed.unwrap_or(c(0))));
        let slot = self.var("slot");
        match &t.tables {
            AggTables::Ungrouped => {
                return Err(CodegenError::Unsupported(
                    "grouped aggregation without tables".into(),
                ))
            }
            AggTables::Linear {
                keys,
                off,
                mask,
                bits,
            } => {
                let h = self.var("gh");
                let cur = self.var("gcur");
                let prior = self.var("gprior");
                f.top(Stmt::Assign(
                    h,
                    hash_expr(
                        t.function,
                        v(kv),
                        Expr::Scalar(t.seeds[0]),
                        mask.clone(),
                        bits.clone(),
                    ),
                ));
                let l = self.load(*keys, v(slot));
                let hit = self.iff(bin(BinOp::Eq, v(cur), v(kv)), vec![Stmt::Break]);
                let claim = self.cas(*keys, v(slot), c(EMPTY_KEY), v(kv), prior);
                let won = self.iff(
                    bin(
                        BinOp::Or,
                        bin(BinOp::Eq, v(prior), c(EMPTY_KEY)),
                        bin(BinOp::Eq, v(prior), v(kv)),
                    ),
                    vec![Stmt::Break],
                );
                let empty = self.iff(bin(BinOp::Eq, v(cur), c(EMPTY_KEY)), vec![claim, won]);
                f.top(Stmt::Loop(vec![
                    Stmt::Assign(slot, Expr::add(off.clone(), v(h))),
                    Stmt::Assign(cur, l),
                    hit,
                    empty,
                    Stmt::Assign(h, bin(BinOp::And, Expr::add(v(h), c(1)), mask.clone())),
                ]));
            }
            AggTables::Cuckoo {
                tab,
                keys,
                counters,
                toff,
                cap,
                mask,
                bits,
                eoff,
            } => {
                let (tab, keys, counters) = (*tab, *keys, *counters);
                let hx = |_: &mut Self, k: Expr, s: usize| {
                    hash_expr(
                        t.function,
                        k,
                        Expr::Scalar(t.seeds[s]),
                        mask.clone(),
                        bits.clone(),
                    )
                };
                let e0 = self.var("e0");
                let e1 = self.var("e1");
                let m0 = self.var("em0");
                let m1 = self.var("em1");
                let h0 = hx(self, v(kv), 0);
                let h1 = hx(self, v(kv), 1);
                let l0 = self.load(tab, Expr::add(toff.clone(), h0));
                let l1 = self.load(tab, Expr::add(Expr::add(toff.clone(), cap.clone()), h1));
                f.top(Stmt::Assign(e0, l0));
                f.top(Stmt::Assign(e1, l1));
                for (m, e) in [(m0, e0), (m1, e1)] {
                    let k = self.load(keys, bin(BinOp::Max, v(e), c(0)));
                    f.top(Stmt::Assign(
                        m,
                        bin(
                            BinOp::And,
                            bin(BinOp::Ge, v(e), c(0)),
                            bin(BinOp::Eq, k, v(kv)),
                        ),
                    ));
                }
                f.top(Stmt::Assign(slot, Expr::select(v(m0), v(e0), v(e1))));
                // not found: take a fresh entry and insert its id
                let fresh = self.var("fresh");
                let cur = self.var("ecur");
                let ck = self.var("ekey");
                let side = self.var("eside");
                let steps = self.var("esteps");
                let prior = self.var("eprior");
                let h = self.var("eh");
                let mut ins =
                    vec![self.atomic(AtomicOp::Add, counters, t.table.clone(), c(1), Some(fresh))];
                ins.push(Stmt::Assign(slot, Expr::add(eoff.clone(), v(fresh))));
                ins.push(self.store(keys, v(slot), v(kv)));
                ins.push(Stmt::Assign(cur, v(slot)));
                ins.push(Stmt::Assign(ck, v(kv)));
                ins.push(Stmt::Assign(side, c(0)));
                ins.push(Stmt::Assign(steps, c(0)));
                let hh0 = hx(self, v(ck), 0);
                let hh1 = hx(self, v(ck), 1);
                let xchg = self.atomic(
                    AtomicOp::Xchg,
                    tab,
                    Expr::add(
                        Expr::add(toff.clone(), Expr::mul(v(side), cap.clone())),
                        v(h),
                    ),
                    v(cur),
                    Some(prior),
                );
                let placed = self.iff(bin(BinOp::Lt, v(prior), c(0)), vec![Stmt::Break]);
                // a dropped entry keeps its accumulators; the merge folds duplicates
                let give_up = self.iff(
                    bin(BinOp::Ge, v(steps), c(MAX_EVICTIONS)),
                    vec![Stmt::Break],
                );
                let evicted_key = self.load(keys, v(cur));
                ins.push(Stmt::Loop(vec![
                    Stmt::Assign(h, Expr::select(v(side), hh1, hh0)),
                    xchg,
                    placed,
                    Stmt::Assign(steps, Expr::add(v(steps), c(1))),
                    give_up,
                    Stmt::Assign(cur, v(prior)),
                    Stmt::Assign(ck, evicted_key),
                    Stmt::Assign(side, bin(BinOp::Sub, c(1), v(side))),
                ]));
                let s = self.iff(bin(BinOp::Eq, bin(BinOp::Or, v(m0), v(m1)), c(0)), ins);
                f.top(s);
            }
        }
        let inc = self.inc();
        let s = self.atomic(AtomicOp::Add, t.count, v(slot), inc, None);
        f.top(s);
        for (i, a) in aggs.iter().enumerate() {
            let Some((b, kind)) = t.accs[i] else { continue };
            let x = self.contribution(a, kind)?;
            let s = self.atomic(atomic_of(kind), b, v(slot), x, None);
            f.top(s);
        }
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
        .collect::<String>()
        .trim_start_matches('_')
        .to_string()
}

fn identity(kind: AccKind) -> Expr {
    match kind {
        AccKind::Sum => c(0),
        AccKind::FSum => Expr::f(0.0),
        AccKind::Min => c(i64::MAX),
        AccKind::Max => c(i64::MIN),
        AccKind::FMin => Expr::f(f64::INFINITY),
        AccKind::FMax => Expr::f(f64::NEG_INFINITY),
    }
}

pub fn identity_value(kind: AccKind) -> i64 {
    match identity(kind) {
        Expr::Const(x) => x,
        _ => 0,
    }
}

fn combine(kind: AccKind) -> BinOp {
    match kind {
        AccKind::Sum => BinOp::Add,
        AccKind::FSum => BinOp::FAdd,
        AccKind::Min => BinOp::Min,
        AccKind::Max => BinOp::Max,
        AccKind::FMin => BinOp::FMin,
        AccKind::FMax => BinOp::FMax,
    }
}

fn atomic_of(kind: AccKind) -> AtomicOp {
    match kind {
        AccKind::Sum => AtomicOp::Add,
        AccKind::FSum => AtomicOp::FAdd,
        AccKind::Min => AtomicOp::Min,
        AccKind::Max => AtomicOp::Max,
        AccKind::FMin => AtomicOp::FMin,
        AccKind::FMax => AtomicOp::FMax,
    }
}

fn acc_kind(a: &AggSpec) -> Result<Option<AccKind>> {
    let float = a.arg_kind() == ColumnKind::Float64;
    if a.arg_kind() == ColumnKind::String && a.func != AggFunc::Count {
        return Err(CodegenError::Unsupported(alloc::format!(
            "{} over a string attribute",
            a.func.name()
        )));
    }
    Ok(match (a.func, float) {
        (AggFunc::Count, _) => None,
        (AggFunc::Sum | AggFunc::Avg, false) => Some(AccKind::Sum),
        (AggFunc::Sum | AggFunc::Avg, true) => Some(AccKind::FSum),
        (AggFunc::Min, false) => Some(AccKind::Min),
        (AggFunc::Min, true) => Some(AccKind::FMin),
        (AggFunc::Max, false) => Some(AccKind::Max),
        (AggFunc::Max, true) => Some(AccKind::FMax),
    })
}

/// Turns a flat item list into nested statements.
fn build_tree(items: Vec<Item>) -> Result<Vec<Stmt>> {
    let mut stack: Vec<(Option<Scope>, Vec<Stmt>)> = vec![(None, Vec::new())];
    for it in items {
        match it {
            Item::Stmt(s) => stack.last_mut().expect("root frame").1.push(s),
            Item::Open(sc) => stack.push((Some(sc), Vec::new())),
            Item::Close => {
                let (scope, body) = stack.pop().expect("frame");
                let s = match scope {
                    Some(Scope::If { cond, site }) => Stmt::If {
                        cond,
                        then: body,
                        els: Vec::new(),
                        site,
                    },
                    Some(Scope::For {
                        var,
                        start,
                        end,
                        step,
                    }) => Stmt::For {
                        var,
                        start,
                        end,
                        step,
                        body,
                    },
                    None => {
                        return Err(CodegenError::Unsupported(
                            "unbalanced fragment scopes".into(),
                        ))
                    }
                };
                stack
                    .last_mut()
                    .ok_or_else(|| CodegenError::Unsupported("unbalanced fragment scopes".into()))?
                    .1
                    .push(s);
            }
        }
    }
    if stack.len() != 1 {
        return Err(CodegenError::Unsupported(
            "unbalanced fragment scopes".into(),
        ));
    }
    Ok(stack.pop().expect("root").1)
}

fn collect_params(body: &[Stmt]) -> Vec<BufId> {
    fn expr(e: &Expr, out: &mut Vec<BufId>) {
        match e {
            Expr::Load { buf, idx, .. } => {
                out.push(*buf);
                expr(idx, out);
            }
            Expr::Bin(_, a, b) | Expr::Murmur(a, b) => {
                expr(a, out);
                expr(b, out);
            }
            Expr::Select(x, a, b) | Expr::MulShift(x, a, b) => {
                expr(x, out);
                expr(a, out);
                expr(b, out);
            }
            Expr::ToFloat(a) => expr(a, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk_stmts(body, &mut |s| match s {
        Stmt::Assign(_, e) => expr(e, &mut out),
        Stmt::Store { buf, idx, val, .. } | Stmt::Atomic { buf, idx, val, .. } => {
            out.push(*buf);
            expr(idx, &mut out);
            expr(val, &mut out);
        }
        Stmt::AtomicCas {
            buf,
            idx,
            expected,
            desired,
            ..
        } => {
            out.push(*buf);
            expr(idx, &mut out);
            expr(expected, &mut out);
            expr(desired, &mut out);
        }
        Stmt::For {
            start, end, step, ..
        } => {
            expr(start, &mut out);
            expr(end, &mut out);
            expr(step, &mut out);
        }
        Stmt::If { cond, .. } => expr(cond, &mut out),
        _ => {}
    });
    out.sort_unstable();
    out.dedup();
    out
}

/// Number of threads with at least one row, and rows per sequential chunk.
pub fn active_threads(rows: usize, threads: u64, access: MemoryAccess) -> (u64, u64) {
    let n = rows as u64;
    let chunk = n.div_ceil(threads.max(1)).max(1);
    let limit = match access {
        MemoryAccess::Sequential => n.div_ceil(chunk),
        MemoryAccess::Coalesced => n.min(threads),
    };
    (limit, chunk)
}

/// Rows visited by threads `[first, first + count)`.
pub fn rows_of_threads(
    rows: usize,
    threads: u64,
    access: MemoryAccess,
    first: u64,
    count: u64,
) -> u64 {
    let n = rows as u64;
    match access {
        MemoryAccess::Sequential => {
            let chunk = n.div_ceil(threads.max(1)).max(1);
            let a = first.saturating_mul(chunk).min(n);
            let b = (first + count).saturating_mul(chunk).min(n);
            b - a
        }
        MemoryAccess::Coalesced => {
            let full = n / threads;
            let rem = n % threads;
            full * count + rem.saturating_sub(first).min(count)
        }
    }
}

struct Assembler<'a> {
    reg: Registry,
    steps: Vec<Step>,
    kernels: Vec<Kernel>,
    joins: Vec<JoinTable>,
    tables: &'a [ColumnTable],
    opts: CodegenOptions,
    budget_used: usize,
}

/// Selects ops of a replica by position.
type Include<'p> = &'p dyn Fn(usize, &PipelineOp) -> bool;

/// First variable after `id` and `result_increment`.
const RESERVED_BASE: VarId = 2;

struct KernelSpec<'p> {
    name: String,
    program: &'p PipelineProgram,
    threads: u64,
    role: Role,
    include: Include<'p>,
    /// Variables numbered from RESERVED_BASE, set up by the caller.
    reserved: &'p [&'p str],
    setup: Vec<Stmt>,
    epilogue: Vec<Stmt>,
}

impl<'a> Assembler<'a> {
    fn flush_allocs(&mut self) {
        for (i, done) in self.reg.allocated.iter_mut().enumerate() {
            if !*done {
                *done = true;
                self.steps.push(Step::Alloc(i as BufId));
            }
        }
    }

    fn charge(&mut self, elements: usize) -> Result<()> {
        self.budget_used = self.budget_used.saturating_add(elements);
        if self.budget_used > self.opts.memory_budget {
            return Err(CodegenError::PlanTooLarge {
                required: self.budget_used,
                budget: self.opts.memory_budget,
            });
        }
        Ok(())
    }

    fn kernel(&mut self, spec: KernelSpec<'_>) -> Result<Kernel> {
        let p = spec.program;
        let (table, rows) = p.loop_table();
        let (_, chunk) = active_threads(rows, spec.threads, p.memory_access);
        let joins = core::mem::take(&mut self.joins);
        let mut ctx = GenCtx {
            reg: &mut self.reg,
            joins: &joins,
            vars: Vec::new(),
            env: BTreeMap::new(),
            loop_table: table.to_string(),
            rows,
            threads: spec.threads,
            unroll: p.unroll_factor.max(1),
            access: p.memory_access,
            chunk,
            id: 0,
            end: c(0),
            idx: c(0),
            mode: p.predication,
            ri: 0,
            role: spec.role,
            ungrouped: None,
        };
        let result = Self::kernel_body(
            &mut ctx,
            p,
            spec.include,
            spec.reserved,
            spec.setup,
            spec.epilogue,
        );
        let vars = core::mem::take(&mut ctx.vars);
        drop(ctx);
        self.joins = joins;
        let body = result?;
        Ok(Kernel {
            name: spec.name,
            params: collect_params(&body),
            vars,
            body,
        })
    }

    fn kernel_body(
        ctx: &mut GenCtx<'_>,
        p: &PipelineProgram,
        include: Include<'_>,
        reserved: &[&str],
        setup: Vec<Stmt>,
        tail: Vec<Stmt>,
    ) -> Result<Vec<Stmt>> {
        ctx.id = ctx.var("id");
        ctx.ri = ctx.var("result_increment");
        for r in reserved {
            ctx.var(r);
        }
        let lf = ctx.generate_fragment(&p.ops[0])?;
        let mut decls = lf.kernel_var_decls;
        decls.extend(setup);
        let mut body: Vec<Item> = Vec::new();
        let mut epilogue = Vec::new();
        for o in 0..ctx.unroll {
            ctx.env.clear();
            let idx = ctx.var(&alloc::format!("idx{o}"));
            let offset = match ctx.access {
                MemoryAccess::Sequential => o as i64,
                MemoryAccess::Coalesced => o as i64 * ctx.threads as i64,
            };
            body.push(Item::Stmt(Stmt::Assign(
                idx,
                Expr::add(v(ctx.id), c(offset)),
            )));
            ctx.idx = v(idx);
            let mut closes = 0;
            if o > 0 {
                let site = ctx.site();
                body.push(Item::Open(Scope::If {
                    cond: bin(BinOp::Lt, v(idx), ctx.end.clone()),
                    site,
                }));
                closes += 1;
            }
            if ctx.predicated() {
                body.push(Item::Stmt(Stmt::Assign(ctx.ri, c(1))));
            }
            if let Role::Positions { flags, .. } = ctx.role {
                // only flagged tuples reach the second pass
                let flag = ctx.load(flags, v(idx));
                if ctx.predicated() {
                    body.push(Item::Stmt(Stmt::Assign(ctx.ri, flag)));
                } else {
                    let site = ctx.site();
                    body.push(Item::Open(Scope::If {
                        cond: bin(BinOp::Ne, flag, c(0)),
                        site,
                    }));
                    closes += 1;
                }
            }
            let mut bottoms: Vec<Vec<Item>> = Vec::new();
            for (i, op) in p.replica(o).enumerate() {
                if !include(i, op) {
                    continue;
                }
                let fr = ctx.generate_fragment(op)?;
                decls.extend(fr.kernel_var_decls);
                body.extend(fr.kernel_top);
                bottoms.push(fr.kernel_bottom);
                epilogue.extend(fr.kernel_epilogue);
            }
            for b in bottoms.into_iter().rev() {
                body.extend(b);
            }
            body.extend((0..closes).map(|_| Item::Close));
        }
        let mut items: Vec<Item> = decls.into_iter().map(Item::Stmt).collect();
        items.extend(lf.kernel_top);
        items.extend(body);
        items.extend(lf.kernel_bottom);
        items.extend(epilogue.into_iter().map(Item::Stmt));
        items.extend(tail.into_iter().map(Item::Stmt));
        build_tree(items)
    }

    fn launch(&mut self, kernel: Kernel, global: u64, group: u64, limit: u64) -> usize {
        self.flush_allocs();
        self.kernels.push(kernel);
        self.steps.push(Step::Launch {
            kernel: self.kernels.len() - 1,
            global,
            group,
            limit,
        });
        self.steps.len() - 1
    }

    /// Output columns, region table and launch step of a single-pass kernel.
    fn single_pass(
        &mut self,
        program: &PipelineProgram,
        outputs: &[Column],
        prefix: &str,
        build: Option<&HashTableDescriptor>,
    ) -> Result<(BTreeMap<String, BufId>, BufId, u64, usize)> {
        let (_, rows) = program.loop_table();
        let threads = self.opts.compute_units.max(1) as u64;
        let (limit, chunk) = active_threads(rows, threads, program.memory_access);
        let mut fanout: usize = 1;
        for op in program.replica(0) {
            if let PipelineOp::CrossJoin { rows, .. } = op {
                fanout = fanout.saturating_mul(*rows);
            }
        }
        let region = (chunk as usize).saturating_mul(fanout);
        let len = region.saturating_mul(threads as usize).max(1);
        self.charge(len.saturating_mul(outputs.len()))?;
        let mut out = BTreeMap::new();
        for (attr, kind) in outputs {
            let b = self.reg.buffer(
                &alloc::format!("{prefix}.{attr}"),
                elem_of(*kind),
                Len::Const(len),
                Init::Zero,
            );
            out.insert(attr.clone(), b);
        }
        let regions = self.reg.buffer(
            &alloc::format!("{prefix}.regions"),
            ElemType::I64,
            Len::Const(2 * threads as usize),
            Init::Zero,
        );
        if let Some(d) = build {
            self.register_join(d, out.clone())?;
        }
        let write_pos = RESERVED_BASE;
        let tid = Expr::Intrinsic(Intrinsic::GlobalId);
        let base = Expr::mul(tid.clone(), c(region as i64));
        let (s0, s1) = (self.reg.site(), self.reg.site());
        let epilogue = vec![
            Stmt::Store {
                buf: regions,
                idx: Expr::mul(tid.clone(), c(2)),
                val: base.clone(),
                site: s0,
            },
            Stmt::Store {
                buf: regions,
                idx: Expr::add(Expr::mul(tid, c(2)), c(1)),
                val: bin(BinOp::Sub, v(write_pos), base.clone()),
                site: s1,
            },
        ];
        let kernel = self.kernel(KernelSpec {
            name: alloc::format!("{prefix}_single_pass"),
            program,
            threads,
            role: Role::Single {
                write_pos,
                outputs: out.clone(),
            },
            include: &|_, _| true,
            reserved: &["write_pos"],
            setup: vec![Stmt::Assign(write_pos, base)],
            epilogue,
        })?;
        let step = self.launch(kernel, threads, 1, limit);
        Ok((out, regions, threads, step))
    }

    fn register_join(
        &mut self,
        d: &HashTableDescriptor,
        columns: BTreeMap<String, BufId>,
    ) -> Result<()> {
        let capacity = hash::capacity_for(d.build_rows);
        self.charge(2 * capacity)?;
        let (slots, fail) = match d.implementation {
            HashTableImpl::LinearProbing => {
                let s = self.reg.buffer(
                    &alloc::format!("ht{}.slots", d.id),
                    ElemType::I64,
                    Len::Const(2 * capacity),
                    Init::Fill(EMPTY_KEY),
                );
                (s, None)
            }
            HashTableImpl::Cuckoo => {
                let s = self.reg.buffer(
                    &alloc::format!("ht{}.refs", d.id),
                    ElemType::I64,
                    Len::Const(2 * capacity),
                    Init::Fill(EMPTY_REF),
                );
                let f = self.reg.buffer(
                    &alloc::format!("ht{}.failed", d.id),
                    ElemType::I64,
                    Len::Const(1),
                    Init::Zero,
                );
                (s, Some(f))
            }
        };
        let first = hash::next_seed(d.seed as i64);
        let s0 = self.reg.scalar(&alloc::format!("ht{}_seed0", d.id), first);
        let s1 = self
            .reg
            .scalar(&alloc::format!("ht{}_seed1", d.id), hash::next_seed(first));
        self.joins.push(JoinTable {
            id: d.id,
            implementation: d.implementation,
            function: d.function,
            capacity,
            slots,
            seeds: [s0, s1],
            fail_flag: fail,
            key_attr: d.key.0.clone(),
            columns,
        });
        Ok(())
    }

    fn build_pipeline(&mut self, set: &PipelineSet, program: &PipelineProgram) -> Result<()> {
        let desc = set
            .hash_tables
            .iter()
            .find(|h| h.build_pipeline == program.id)
            .ok_or_else(|| {
                CodegenError::Unsupported(alloc::format!(
                    "pipeline {} builds no hash table",
                    program.id
                ))
            })?;
        if program.strategy != Strategy::SinglePass {
            return Err(CodegenError::Unsupported(
                "build pipelines run single-pass".into(),
            ));
        }
        let prefix = alloc::format!("p{}", program.id);
        let (_, _, _, step) = self.single_pass(program, &desc.payload, &prefix, Some(desc))?;
        let j = self.joins.last().expect("registered above").clone();
        if let Some(flag) = j.fail_flag {
            self.steps.push(Step::CheckRebuild {
                flag,
                seeds: j.seeds.to_vec(),
                reset: vec![j.slots, flag],
                restart_at: step,
                max_rebuilds: 2,
            });
        }
        Ok(())
    }

    fn projection(&mut self, set: &PipelineSet, program: &PipelineProgram) -> Result<FinalSpec> {
        let attrs = match program.ops.last() {
            Some(PipelineOp::Project { attrs, .. }) => attrs.clone(),
            _ => {
                return Err(CodegenError::Unsupported(
                    "projection without PROJECT".into(),
                ))
            }
        };
        let prefix = alloc::format!("p{}", program.id);
        let total = self.reg.scalar("total", 0);
        let outputs = match program.strategy {
            Strategy::SinglePass => {
                let (out, regions, threads, _) =
                    self.single_pass(program, &attrs, &prefix, None)?;
                self.flush_allocs();
                self.steps.push(Step::Compact {
                    regions,
                    workers: threads as usize,
                    columns: attrs.iter().map(|(a, _)| out[a]).collect(),
                    total,
                });
                out
            }
            Strategy::MultiPass { thread_multiplier } => {
                self.multi_pass(program, &attrs, &prefix, thread_multiplier, total)?
            }
            _ => {
                return Err(CodegenError::Unsupported(
                    "aggregation strategy on a projection".into(),
                ))
            }
        };
        let mut columns = Vec::new();
        for oc in &set.output {
            let OutputSource::Attr(a) = &oc.source else {
                return Err(CodegenError::Unsupported("projection output".into()));
            };
            let buf = *outputs
                .get(a)
                .ok_or_else(|| CodegenError::MissingColumn(a.clone()))?;
            columns.push((
                oc.name.clone(),
                oc.kind,
                FinalColumn::Buffer {
                    buf,
                    elem: elem_of(oc.kind),
                    lexicon: (oc.kind == ColumnKind::String).then(|| a.clone()),
                },
            ));
        }
        Ok(FinalSpec {
            columns,
            total: Some(total),
            grouped: false,
        })
    }

    fn multi_pass(
        &mut self,
        program: &PipelineProgram,
        attrs: &[Column],
        prefix: &str,
        multiplier: u32,
        total: ScalarId,
    ) -> Result<BTreeMap<String, BufId>> {
        let (_, rows) = program.loop_table();
        let want = self.opts.compute_units.max(1) as u64 * multiplier.max(1) as u64;
        let group = (self.opts.group_hint.max(1) as u64).min(want);
        let threads = want.div_ceil(group) * group;
        let (limit, _) = active_threads(rows, threads, program.memory_access);
        self.charge(2 * rows)?;
        let flags = self.reg.buffer(
            &alloc::format!("{prefix}.flags"),
            ElemType::I64,
            Len::Const(rows),
            Init::Zero,
        );
        let positions = self.reg.buffer(
            &alloc::format!("{prefix}.positions"),
            ElemType::I64,
            Len::Const(rows),
            Init::Zero,
        );
        let ops0: Vec<&PipelineOp> = program.replica(0).collect();
        let last_check = ops0.iter().rposition(|o| {
            matches!(
                o,
                PipelineOp::Filter { .. }
                    | PipelineOp::HashProbe { .. }
                    | PipelineOp::CrossJoin { .. }
            )
        });
        let k1 = self.kernel(KernelSpec {
            name: alloc::format!("{prefix}_filter"),
            program,
            threads,
            role: Role::Flags { flags },
            include: &|i, op| {
                matches!(op, PipelineOp::Project { .. }) || last_check.is_some_and(|l| i <= l)
            },
            reserved: &[],
            setup: Vec::new(),
            epilogue: Vec::new(),
        })?;
        self.launch(k1, threads, group, limit);
        self.steps.push(Step::PrefixSum {
            flags,
            positions,
            total,
        });
        let mut out = BTreeMap::new();
        for (attr, kind) in attrs {
            // one trash slot past the end takes predicated non-qualifying writes
            let b = self.reg.buffer(
                &alloc::format!("{prefix}.{attr}"),
                elem_of(*kind),
                Len::Scalar(total, 1),
                Init::Zero,
            );
            out.insert(attr.clone(), b);
        }
        let k2 = self.kernel(KernelSpec {
            name: alloc::format!("{prefix}_project"),
            program,
            threads,
            role: Role::Positions {
                flags,
                positions,
                total,
                outputs: out.clone(),
            },
            include: &|_, op| !matches!(op, PipelineOp::Filter { .. }),
            reserved: &[],
            setup: Vec::new(),
            epilogue: Vec::new(),
        })?;
        self.launch(k2, threads, group, limit);
        Ok(out)
    }

    fn aggregation(&mut self, set: &PipelineSet, program: &PipelineProgram) -> Result<FinalSpec> {
        let (_, rows) = program.loop_table();
        let cu = self.opts.compute_units.max(1) as u64;
        let (tables, group, groups) = match program.strategy {
            Strategy::LocalHash {
                table_multiplier,
                work_group,
            } => {
                let n = cu * table_multiplier.max(1) as u64;
                (n, work_group.max(1) as u64, n)
            }
            Strategy::GlobalHash { work_group } => (1, work_group.max(1) as u64, cu),
            _ => {
                return Err(CodegenError::Unsupported(
                    "projection strategy on an aggregation".into(),
                ))
            }
        };
        let threads = group * groups;
        let access = program.memory_access;
        let (limit, _) = active_threads(rows, threads, access);
        let (group_cols, aggs) = match program.ops.last() {
            Some(PipelineOp::HashAggregate { group, aggs, .. }) => (group.clone(), aggs.clone()),
            Some(PipelineOp::Aggregate { aggs, .. }) => (Vec::new(), aggs.clone()),
            _ => {
                return Err(CodegenError::Unsupported(
                    "aggregation without AGGREGATE".into(),
                ))
            }
        };
        let hash = program.hash_params().unwrap_or_default();
        let grouped = !group_cols.is_empty();

        // mixed-radix key packing from column statistics
        let mut packing = Vec::new();
        let mut parts = Vec::new();
        let mut stride: i64 = 1;
        let mut distinct: usize = 1;
        for (attr, kind) in &group_cols {
            let stats = attr
                .split_once('.')
                .and_then(|(t, col)| {
                    self.tables
                        .iter()
                        .find(|x| x.name() == t)
                        .and_then(|x| x.named(col))
                })
                .map(|nc| nc.stats)
                .ok_or_else(|| CodegenError::MissingColumn(attr.clone()))?;
            if *kind == ColumnKind::Float64 {
                return Err(CodegenError::Unsupported(
                    "grouping by a float attribute".into(),
                ));
            }
            let range = stats
                .max
                .checked_sub(stats.min)
                .and_then(|r| r.checked_add(1))
                .filter(|r| *r > 0)
                .ok_or_else(|| CodegenError::Unsupported("grouping key range overflows".into()))?;
            packing.push((stats.min, stride));
            parts.push(GroupPart::Packed {
                min: stats.min,
                range,
                stride,
                lexicon: (*kind == ColumnKind::String).then(|| attr.clone()),
            });
            stride = stride.checked_mul(range).ok_or_else(|| {
                CodegenError::Unsupported("grouping key domain exceeds 64 bits".into())
            })?;
            distinct = distinct.saturating_mul(stats.distinct.max(1));
        }
        distinct = distinct.min(stride as usize);

        let mut kinds = Vec::new();
        for a in &aggs {
            kinds.push(acc_kind(a)?);
        }
        let prefix = alloc::format!("p{}", program.id);
        let n_tables = tables as usize;
        let per_table: Vec<u64> = if tables == 1 {
            vec![rows as u64]
        } else {
            (0..tables)
                .map(|t| rows_of_threads(rows, threads, access, t * group, group))
                .collect()
        };
        let first = hash::next_seed(AGG_SEED);
        let seed0 = self.reg.scalar("agg_seed0", first);
        let seed1 = self.reg.scalar("agg_seed1", hash::next_seed(first));
        let table_expr = if tables == 1 {
            c(0)
        } else {
            Expr::Intrinsic(Intrinsic::GroupId)
        };
        let capacity = |r: u64| {
            if r == 0 {
                0
            } else {
                hash::capacity_for(distinct.min(r as usize))
            }
        };
        let width = |cap: usize| if cap == 0 { 1 } else { hash::log2(cap) as i64 };
        let accs_n = kinds.iter().filter(|k| k.is_some()).count();
        // directory entries read once per thread into reserved variables
        let mut directory: Vec<(&'static str, Vec<i64>)> = Vec::new();
        let slots;
        let layout;
        let agg_tables;
        if !grouped {
            slots = n_tables;
            self.charge(slots * (1 + accs_n))?;
            layout = AggLayout::Ungrouped { tables: n_tables };
            agg_tables = AggTables::Ungrouped;
        } else {
            match hash.implementation {
                HashTableImpl::LinearProbing => {
                    let (mut offs, mut masks, mut bits) = (Vec::new(), Vec::new(), Vec::new());
                    let mut total = 0usize;
                    for &r in &per_table {
                        let cap = capacity(r);
                        offs.push(total as i64);
                        masks.push(cap.saturating_sub(1) as i64);
                        bits.push(width(cap));
                        total += cap;
                    }
                    self.charge(total.saturating_mul(2 + accs_n) + 3 * n_tables)?;
                    let keys = self.reg.buffer(
                        &alloc::format!("{prefix}.keys"),
                        ElemType::I64,
                        Len::Const(total.max(1)),
                        Init::Fill(EMPTY_KEY),
                    );
                    slots = total.max(1);
                    layout = AggLayout::Slots { keys, slots };
                    let (off, mask, width) = if tables == 1 {
                        (c(offs[0]), c(masks[0]), c(bits[0]))
                    } else {
                        directory.push(("table_offset", offs));
                        directory.push(("table_mask", masks));
                        directory.push(("table_bits", bits));
                        let r = RESERVED_BASE;
                        (v(r), v(r + 1), v(r + 2))
                    };
                    agg_tables = AggTables::Linear {
                        keys,
                        off,
                        mask,
                        bits: width,
                    };
                }
                HashTableImpl::Cuckoo => {
                    let mut cols: [Vec<i64>; 5] = Default::default();
                    let mut entry_offsets = Vec::with_capacity(n_tables);
                    let (mut ttotal, mut etotal) = (0usize, 0usize);
                    for &r in &per_table {
                        let cap = capacity(r);
                        cols[0].push(ttotal as i64);
                        cols[1].push(cap as i64);
                        cols[2].push(cap.saturating_sub(1) as i64);
                        cols[3].push(width(cap));
                        cols[4].push(etotal as i64);
                        entry_offsets.push(etotal);
                        ttotal += 2 * cap;
                        etotal += r as usize;
                    }
                    self.charge(ttotal + etotal.saturating_mul(2 + accs_n) + 6 * n_tables)?;
                    let tab = self.reg.buffer(
                        &alloc::format!("{prefix}.refs"),
                        ElemType::I64,
                        Len::Const(ttotal.max(1)),
                        Init::Fill(EMPTY_REF),
                    );
                    let keys = self.reg.buffer(
                        &alloc::format!("{prefix}.entry_keys"),
                        ElemType::I64,
                        Len::Const(etotal.max(1)),
                        Init::Fill(EMPTY_KEY),
                    );
                    let counters = self.reg.buffer(
                        &alloc::format!("{prefix}.entry_count"),
                        ElemType::I64,
                        Len::Const(n_tables),
                        Init::Zero,
                    );
                    slots = etotal.max(1);
                    layout = AggLayout::Entries {
                        keys,
                        counters,
                        offsets: entry_offsets,
                    };
                    let e: [Expr; 5] = if tables == 1 {
                        [
                            c(cols[0][0]),
                            c(cols[1][0]),
                            c(cols[2][0]),
                            c(cols[3][0]),
                            c(cols[4][0]),
                        ]
                    } else {
                        let names = [
                            "table_offset",
                            "table_capacity",
                            "table_mask",
                            "table_bits",
                            "entry_offset",
                        ];
                        for (nm, d) in names.into_iter().zip(cols) {
                            directory.push((nm, d));
                        }
                        core::array::from_fn(|i| v(RESERVED_BASE + i as VarId))
                    };
                    let [toff, cap, mask, width, eoff] = e;
                    agg_tables = AggTables::Cuckoo {
                        tab,
                        keys,
                        counters,
                        toff,
                        cap,
                        mask,
                        bits: width,
                        eoff,
                    };
                }
            }
        }
        let count = self.reg.buffer(
            &alloc::format!("{prefix}.count"),
            ElemType::I64,
            Len::Const(slots),
            Init::Zero,
        );
        let mut acc_bufs: Vec<Option<(BufId, AccKind)>> = Vec::new();
        let mut merge_accs = Vec::new();
        for (i, k) in kinds.iter().enumerate() {
            match k {
                None => acc_bufs.push(None),
                Some(kind) => {
                    let elem = match kind {
                        AccKind::FSum | AccKind::FMin | AccKind::FMax => ElemType::F64,
                        _ => ElemType::I64,
                    };
                    let b = self.reg.buffer(
                        &alloc::format!("{prefix}.acc{i}"),
                        elem,
                        Len::Const(slots),
                        Init::Fill(identity_value(*kind)),
                    );
                    acc_bufs.push(Some((b, *kind)));
                    merge_accs.push((b, *kind));
                }
            }
        }
        let mut setup = Vec::new();
        let mut reserved = Vec::new();
        for (i, (name, data)) in directory.into_iter().enumerate() {
            let b = self.reg.buffer(
                &alloc::format!("{prefix}.dir_{name}"),
                ElemType::I64,
                Len::Const(n_tables),
                Init::Data(data),
            );
            let site = self.reg.site();
            setup.push(Stmt::Assign(
                RESERVED_BASE + i as VarId,
                Expr::load(b, Expr::Intrinsic(Intrinsic::GroupId), site),
            ));
            reserved.push(name);
        }
        let target = AggTarget {
            table: table_expr,
            tables: agg_tables,
            count,
            accs: acc_bufs.clone(),
            seeds: [seed0, seed1],
            function: hash.function,
            packing,
        };
        let k = self.kernel(KernelSpec {
            name: alloc::format!(
                "{prefix}_{}",
                if grouped {
                    "hash_aggregate"
                } else {
                    "aggregate"
                }
            ),
            program,
            threads,
            role: Role::Aggregate(target),
            include: &|_, _| true,
            reserved: &reserved,
            setup,
            epilogue: Vec::new(),
        })?;
        self.launch(k, threads, group, limit);
        self.steps.push(Step::MergeHashTables(MergeSpec {
            layout,
            count,
            accs: merge_accs,
        }));

        let mut columns = Vec::new();
        for oc in &set.output {
            let col = match oc.source {
                OutputSource::Group(i) => FinalColumn::Group(parts[i].clone()),
                OutputSource::Agg(i) => {
                    let a = &aggs[i];
                    let acc = acc_bufs[..i].iter().filter(|x| x.is_some()).count();
                    let float = a.arg_kind() == ColumnKind::Float64;
                    match a.func {
                        AggFunc::Count => FinalColumn::Count,
                        AggFunc::Sum => FinalColumn::Sum { acc, float },
                        AggFunc::Min => FinalColumn::Min { acc, float },
                        AggFunc::Max => FinalColumn::Max { acc, float },
                        AggFunc::Avg => FinalColumn::Avg { acc, float },
                    }
                }
                OutputSource::Attr(_) => {
                    return Err(CodegenError::Unsupported(
                        "attribute output of an aggregation".into(),
                    ))
                }
            };
            columns.push((oc.name.clone(), oc.kind, col));
        }
        Ok(FinalSpec {
            columns,
            total: None,
            grouped,
        })
    }
}

const AGG_SEED: i64 = 0x5bd1_e995;

/// Assembles every pipeline of a specialised set into one kernel plan.
pub fn assemble_kernel_plan(
    set: &PipelineSet,
    tables: &[ColumnTable],
    opts: &CodegenOptions,
) -> Result<KernelPlan> {
    let mut a = Assembler {
        reg: Registry::default(),
        steps: Vec::new(),
        kernels: Vec::new(),
        joins: Vec::new(),
        tables,
        opts: *opts,
        budget_used: 0,
    };
    let n = set.programs.len();
    for p in &set.programs[..n - 1] {
        a.build_pipeline(set, p)?;
    }
    let terminal = set.terminal();
    let finalize = match terminal.kind {
        PipelineKind::Projection => a.projection(set, terminal)?,
        PipelineKind::Aggregation => a.aggregation(set, terminal)?,
    };
    a.flush_allocs();
    a.steps.push(Step::Finalize);
    for i in 0..a.reg.buffers.len() {
        a.steps.push(Step::Free(i as BufId));
    }
    Ok(KernelPlan {
        buffers: a.reg.buffers,
        scalars: a.reg.scalars,
        kernels: a.kernels,
        steps: a.steps,
        finalize,
    })
}

/// Fragment for one op of `program` in a standalone single-pass context.
/// Attributes of the loop table resolve to loads; others are unknown.
pub fn generate_fragment(
    op: &PipelineOp,
    program: &PipelineProgram,
    opts: &CodegenOptions,
) -> Result<Standalone> {
    let mut reg = Registry::default();
    let (table, rows) = program.loop_table();
    let threads = opts.compute_units.max(1) as u64;
    let (_, chunk) = active_threads(rows, threads, program.memory_access);
    let mut outputs = BTreeMap::new();
    if let PipelineOp::Project { attrs, .. } = op {
        for (a, k) in attrs {
            let b = reg.buffer(
                &alloc::format!("out.{a}"),
                elem_of(*k),
                Len::Const(1),
                Init::Zero,
            );
            outputs.insert(a.clone(), b);
        }
    }
    let mut ctx = GenCtx {
        reg: &mut reg,
        joins: &[],
        vars: Vec::new(),
        env: BTreeMap::new(),
        loop_table: table.to_string(),
        rows,
        threads,
        unroll: program.unroll_factor.max(1),
        access: program.memory_access,
        chunk,
        id: 0,
        end: c(rows as i64),
        idx: c(0),
        mode: program.predication,
        ri: 0,
        role: Role::Single {
            write_pos: 0,
            outputs,
        },
        ungrouped: None,
    };
    ctx.id = ctx.var("id");
    ctx.ri = ctx.var("result_increment");
    let wp = ctx.var("write_pos");
    if let Role::Single { write_pos, .. } = &mut ctx.role {
        *write_pos = wp;
    }
    ctx.idx = v(ctx.id);
    let fragment = ctx.generate_fragment(op)?;
    let vars = core::mem::take(&mut ctx.vars);
    Ok(Standalone {
        fragment,
        buffers: reg.buffers,
        scalars: reg.scalars,
        vars,
    })
}

/// A fragment with the names it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct Standalone {
    pub fragment: Fragment,
    pub buffers: Vec<BufferDecl>,
    pub scalars: Vec<ScalarDecl>,
    pub vars: Vec<String>,
}

impl Standalone {
    pub fn render(&self, items: &[Item]) -> String {
        let names = Names {
            buffers: &self.buffers,
            scalars: &self.scalars,
            vars: &self.vars,
        };
        let mut out = String::new();
        let mut depth = 0;
        for item in items {
            match item {
                Item::Stmt(s) => out.push_str(&names.stmts(core::slice::from_ref(s), depth)),
                Item::Open(Scope::If { cond, .. }) => {
                    out.push_str(&"  ".repeat(depth));
                    out.push_str(&alloc::format!("if ({}) {{\n", names.expr(cond)));
                    depth += 1;
                }
                Item::Open(Scope::For {
                    var,
                    start,
                    end,
                    step,
                }) => {
                    let id = &self.vars[*var as usize];
                    out.push_str(&"  ".repeat(depth));
                    out.push_str(&alloc::format!(
                        "for ({id} = {}; {id} < {}; {id} += {}) {{\n",
                        names.expr(start),
                        names.expr(end),
                        names.expr(step)
                    ));
                    depth += 1;
                }
                Item::Close => {
                    depth = depth.saturating_sub(1);
                    out.push_str(&"  ".repeat(depth));
                    out.push_str("}\n");
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ProjectionStrategy, VariantConfiguration};
    use crate::query::{compile_query, SUITE};
    use crate::storage::gen_star_schema;

    fn program(config: &VariantConfiguration) -> PipelineProgram {
        let t = gen_star_schema(1000, 3, 50);
        let q = compile_query("proj1", SUITE[0].sql, &t).unwrap();
        q.specialise(config).unwrap().terminal().clone()
    }

    fn fragment_of(config: &VariantConfiguration, pick: fn(&PipelineOp) -> bool) -> Standalone {
        let p = program(config);
        let op = p.ops.iter().find(|o| pick(o)).unwrap().clone();
        generate_fragment(&op, &p, &CodegenOptions::default()).unwrap()
    }

    fn is_filter(op: &PipelineOp) -> bool {
        matches!(op, PipelineOp::Filter { .. })
    }

    #[test]
    fn branched_filter_opens_scope() {
        let f = fragment_of(&VariantConfiguration::default(), is_filter);
        let top = f.render(&f.fragment.kernel_top);
        assert_eq!(top, "if ((lineorder.lo_quantity[id] < 25)) {\n");
        assert_eq!(f.fragment.kernel_bottom, vec![Item::Close]);
    }

    #[test]
    fn predicated_filter_folds_condition() {
        let config = VariantConfiguration {
            predication: Predication::Predicated,
            ..VariantConfiguration::default()
        };
        let f = fragment_of(&config, is_filter);
        assert_eq!(
            f.render(&f.fragment.kernel_top),
            "result_increment = (result_increment & (lineorder.lo_quantity[id] < 25));\n"
        );
        assert!(f.fragment.kernel_bottom.is_empty());
    }

    #[test]
    fn loop_fragments() {
        let config = VariantConfiguration {
            memory_access: MemoryAccess::Coalesced,
            ..VariantConfiguration::default()
        };
        let f = fragment_of(&config, |o| matches!(o, PipelineOp::Loop { .. }));
        let top = f.render(&f.fragment.kernel_top);
        assert!(
            top.contains("for (id = tid; id < 1000; id += 8) {"),
            "{top}"
        );
        assert_eq!(f.fragment.kernel_bottom, vec![Item::Close]);

        let f = fragment_of(&VariantConfiguration::default(), |o| {
            matches!(o, PipelineOp::Loop { .. })
        });
        let top = f.render(&f.fragment.kernel_top);
        assert!(
            top.starts_with("for (id = start; id < end; id += 1) {"),
            "{top}"
        );
        let names = Names {
            buffers: &f.buffers,
            scalars: &f.scalars,
            vars: &f.vars,
        };
        let decls = names.stmts(&f.fragment.kernel_var_decls, 0);
        assert!(decls.contains("start = (tid * 125);"), "{decls}");
    }

    #[test]
    fn project_advances_write_position() {
        let pick = |o: &PipelineOp| matches!(o, PipelineOp::Project { .. });
        let f = fragment_of(&VariantConfiguration::default(), pick);
        let top = f.render(&f.fragment.kernel_top);
        assert!(top.ends_with("write_pos = (write_pos + 1);\n"), "{top}");
        let config = VariantConfiguration {
            predication: Predication::Predicated,
            ..VariantConfiguration::default()
        };
        let f = fragment_of(&config, pick);
        let top = f.render(&f.fragment.kernel_top);
        assert!(
            top.ends_with("write_pos = (write_pos + result_increment);\n"),
            "{top}"
        );
    }

    #[test]
    fn branched_and_predicated_plans_differ_only_at_filter_and_project() {
        let t = gen_star_schema(1000, 3, 50);
        let q = compile_query("proj1", SUITE[0].sql, &t).unwrap();
        let opts = CodegenOptions::default();
        let config = VariantConfiguration::default();
        let a = render_kernel_text(&q.kernel_plan(&config, &t, &opts).unwrap());
        let pred = VariantConfiguration {
            predication: Predication::Predicated,
            ..config
        };
        let b = render_kernel_text(&q.kernel_plan(&pred, &t, &opts).unwrap());
        assert_ne!(a, b);
        let (la, lb): (Vec<_>, Vec<_>) = (a.lines().collect(), b.lines().collect());
        for line in la.iter().filter(|l| !lb.contains(l)) {
            assert!(
                line.contains("lo_quantity") || line.contains("write_pos") || line.trim() == "}",
                "{line}"
            );
        }
    }

    #[test]
    fn multi_pass_threads_follow_multiplier() {
        let t = gen_star_schema(100_000, 3, 50);
        let q = compile_query("proj1", SUITE[0].sql, &t).unwrap();
        let opts = CodegenOptions {
            compute_units: 16,
            group_hint: 32,
            ..CodegenOptions::default()
        };
        let config = VariantConfiguration {
            projection_strategy: ProjectionStrategy::MultiPass,
            thread_multiplier: 256,
            ..VariantConfiguration::default()
        };
        let plan = q.kernel_plan(&config, &t, &opts).unwrap();
        let launches: Vec<_> = plan
            .steps
            .iter()
            .filter_map(|s| match s {
                Step::Launch { global, group, .. } => Some((*global, *group)),
                _ => None,
            })
            .collect();
        assert_eq!(launches, vec![(4096, 32), (4096, 32)]);
        assert_eq!(plan.prefix_sum_count(), 1);
    }

    #[test]
    fn aggregation_tables_respect_budget() {
        let t = gen_star_schema(20_000, 3, 50);
        let q = compile_query("agg2", SUITE[3].sql, &t).unwrap();
        let config = VariantConfiguration {
            thread_multiplier: 65536,
            ..VariantConfiguration::default()
        };
        let opts = CodegenOptions {
            memory_budget: 1 << 16,
            ..CodegenOptions::default()
        };
        assert!(matches!(
            q.kernel_plan(&config, &t, &opts),
            Err(crate::query::QueryError::Codegen(
                CodegenError::PlanTooLarge { .. }
            ))
        ));
    }

    #[test]
    fn active_thread_partition() {
        assert_eq!(active_threads(1000, 8, MemoryAccess::Sequential), (8, 125));
        assert_eq!(active_threads(0, 8, MemoryAccess::Sequential).0, 0);
        let (limit, _) = active_threads(5, 64, MemoryAccess::Coalesced);
        assert_eq!(limit, 5);
    }
}
