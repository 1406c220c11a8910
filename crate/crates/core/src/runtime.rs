//! Kernel-plan execution: memory, the kernel interpreter, host steps and the
//! simulated device cost model.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::sync::atomic::{AtomicI64, Ordering};

use crate::hash;
use crate::kernel::*;
use crate::result::ResultTable;
use crate::storage::{ColumnKind, ColumnTable, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("hash table capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("divergent plan: {0}")]
    DivergentPlan(String),
    #[error("{0} over an empty input")]
    EmptyAggregate(String),
    #[error("variant pruned: exceeded the time limit")]
    Pruned,
    #[error("input column `{0}` is not bound")]
    MissingInput(String),
    #[error("invalid device model: {0}")]
    InvalidDevice(String),
}

type Result<T> = core::result::Result<T, RuntimeError>;

/// `positions[i] = Σ flags[..i]`, plus the total.
pub fn exclusive_prefix_sum(flags: &[i64]) -> (Vec<i64>, i64) {
    let mut out = Vec::with_capacity(flags.len());
    let mut acc = 0i64;
    for &f in flags {
        out.push(acc);
        acc += f;
    }
    (out, acc)
}

/// Input columns as raw 64-bit cells, keyed by `table.column`.
#[derive(Debug, Clone, Default)]
pub struct InputData {
    columns: BTreeMap<String, Vec<i64>>,
    lexicons: BTreeMap<String, Vec<String>>,
}

impl InputData {
    pub fn bind(tables: &[ColumnTable]) -> Self {
        let mut d = InputData::default();
        for t in tables {
            for c in t.columns() {
                let key = alloc::format!("{}.{}", t.name(), c.name);
                let raw = (0..c.data.len()).map(|i| c.data.raw(i)).collect();
                d.columns.insert(key.clone(), raw);
                if let Some(lex) = c.data.lexicon() {
                    d.lexicons.insert(key, lex.to_vec());
                }
            }
        }
        d
    }

    pub fn column(&self, name: &str) -> Option<&[i64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn lexicon(&self, name: &str) -> Option<&[String]> {
        self.lexicons.get(name).map(Vec::as_slice)
    }
}

pub enum Buffer<'a> {
    Input(&'a [i64]),
    Shared(Box<[AtomicI64]>),
}

impl Buffer<'_> {
    pub fn len(&self) -> usize {
        match self {
            Buffer::Input(s) => s.len(),
            Buffer::Shared(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shared(data: Vec<i64>) -> Self {
        Buffer::Shared(data.into_iter().map(AtomicI64::new).collect())
    }

    fn to_vec(&self) -> Vec<i64> {
        match self {
            Buffer::Input(s) => s.to_vec(),
            Buffer::Shared(s) => s.iter().map(|a| a.load(Ordering::Relaxed)).collect(),
        }
    }
}

/// Device memory of one plan execution.
#[derive(Default)]
pub struct Memory<'a> {
    pub bufs: Vec<Option<Buffer<'a>>>,
}

impl<'a> Memory<'a> {
    fn buf(&self, b: BufId) -> Result<&Buffer<'a>> {
        self.bufs
            .get(b as usize)
            .and_then(Option::as_ref)
            .ok_or_else(|| {
                RuntimeError::DivergentPlan(alloc::format!("buffer {b} is not allocated"))
            })
    }

    fn index(&self, b: BufId, i: i64) -> Result<(&Buffer<'a>, usize)> {
        let buf = self.buf(b)?;
        if i < 0 || i as usize >= buf.len() {
            return Err(RuntimeError::DivergentPlan(alloc::format!(
                "buffer {b}: index {i} outside [0, {})",
                buf.len()
            )));
        }
        Ok((buf, i as usize))
    }

    pub fn load(&self, b: BufId, i: i64) -> Result<i64> {
        Ok(match self.index(b, i)? {
            (Buffer::Input(s), i) => s[i],
            (Buffer::Shared(s), i) => s[i].load(Ordering::Acquire),
        })
    }

    fn cell(&self, b: BufId, i: i64) -> Result<&AtomicI64> {
        match self.index(b, i)? {
            (Buffer::Shared(s), i) => Ok(&s[i]),
            (Buffer::Input(_), _) => Err(RuntimeError::DivergentPlan(alloc::format!(
                "write to input buffer {b}"
            ))),
        }
    }

    pub fn store(&self, b: BufId, i: i64, v: i64) -> Result<()> {
        self.cell(b, i)?.store(v, Ordering::Release);
        Ok(())
    }

    pub fn atomic(&self, op: AtomicOp, b: BufId, i: i64, v: i64) -> Result<i64> {
        let cell = self.cell(b, i)?;
        let o = Ordering::AcqRel;
        let float = |f: fn(f64, f64) -> f64| {
            let mut cur = cell.load(Ordering::Acquire);
            loop {
                let next = f(f64::from_bits(cur as u64), f64::from_bits(v as u64)).to_bits() as i64;
                match cell.compare_exchange_weak(cur, next, o, Ordering::Acquire) {
                    Ok(p) => return p,
                    Err(p) => cur = p,
                }
            }
        };
        Ok(match op {
            AtomicOp::Add => cell.fetch_add(v, o),
            AtomicOp::Min => cell.fetch_min(v, o),
            AtomicOp::Max => cell.fetch_max(v, o),
            AtomicOp::Xchg => cell.swap(v, o),
            AtomicOp::FAdd => float(|a, b| a + b),
            AtomicOp::FMin => float(f64::min),
            AtomicOp::FMax => float(f64::max),
        })
    }

    pub fn cas(&self, b: BufId, i: i64, expected: i64, desired: i64) -> Result<i64> {
        let cell = self.cell(b, i)?;
        Ok(
            match cell.compare_exchange(expected, desired, Ordering::AcqRel, Ordering::Acquire) {
                Ok(p) | Err(p) => p,
            },
        )
    }

    pub fn snapshot(&self, b: BufId) -> Result<Vec<i64>> {
        Ok(self.buf(b)?.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub global: u64,
    pub group: u64,
    /// Threads at or beyond this id are skipped.
    pub limit: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    Atomic,
}

/// Observer of a thread's memory accesses and branch outcomes.
pub trait Tracer {
    fn access(&mut self, site: SiteId, buf: BufId, idx: i64, kind: AccessKind);
    fn branch(&mut self, site: SiteId, taken: bool);
}

pub struct NoTrace;

impl Tracer for NoTrace {
    #[inline(always)]
    fn access(&mut self, _: SiteId, _: BufId, _: i64, _: AccessKind) {}
    #[inline(always)]
    fn branch(&mut self, _: SiteId, _: bool) {}
}

const MAX_LOOP_ITERATIONS: u64 = 1 << 26;

enum Flow {
    Next,
    Break,
}

struct Thread<'r, 'm, T> {
    mem: &'r Memory<'m>,
    scalars: &'r [i64],
    vars: &'r mut [i64],
    tid: u64,
    dims: Dims,
    tracer: &'r mut T,
}

fn fbits(x: i64) -> f64 {
    f64::from_bits(x as u64)
}

fn tobits(x: f64) -> i64 {
    x.to_bits() as i64
}

pub fn apply_bin(op: BinOp, a: i64, b: i64) -> i64 {
    use BinOp::*;
    match op {
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Mul => a.wrapping_mul(b),
        Div => {
            if b == 0 {
                0
            } else {
                a.wrapping_div(b)
            }
        }
        Rem => {
            if b == 0 {
                0
            } else {
                a.wrapping_rem(b)
            }
        }
        FAdd => tobits(fbits(a) + fbits(b)),
        FSub => tobits(fbits(a) - fbits(b)),
        FMul => tobits(fbits(a) * fbits(b)),
        FDiv => {
            if fbits(b) == 0.0 {
                tobits(0.0)
            } else {
                tobits(fbits(a) / fbits(b))
            }
        }
        Eq => (a == b) as i64,
        Ne => (a != b) as i64,
        Lt => (a < b) as i64,
        Le => (a <= b) as i64,
        Gt => (a > b) as i64,
        Ge => (a >= b) as i64,
        FEq => (fbits(a) == fbits(b)) as i64,
        FNe => (fbits(a) != fbits(b)) as i64,
        FLt => (fbits(a) < fbits(b)) as i64,
        FLe => (fbits(a) <= fbits(b)) as i64,
        FGt => (fbits(a) > fbits(b)) as i64,
        FGe => (fbits(a) >= fbits(b)) as i64,
        And => a & b,
        Or => a | b,
        Xor => a ^ b,
        Shl => a.wrapping_shl((b & 63) as u32),
        Shr => ((a as u64) >> (b & 63)) as i64,
        Min => a.min(b),
        Max => a.max(b),
        FMin => tobits(fbits(a).min(fbits(b))),
        FMax => tobits(fbits(a).max(fbits(b))),
    }
}

impl<T: Tracer> Thread<'_, '_, T> {
    fn eval(&mut self, e: &Expr) -> Result<i64> {
        Ok(match e {
            Expr::Const(v) => *v,
            Expr::Var(v) => self.vars[*v as usize],
            Expr::Scalar(s) => self.scalars[*s as usize],
            Expr::Intrinsic(i) => match i {
                Intrinsic::GlobalId => self.tid as i64,
                Intrinsic::GlobalSize => self.dims.global as i64,
                Intrinsic::GroupId => (self.tid / self.dims.group.max(1)) as i64,
                Intrinsic::LocalId => (self.tid % self.dims.group.max(1)) as i64,
                Intrinsic::GroupSize => self.dims.group as i64,
            },
            Expr::Bin(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                apply_bin(*op, a, b)
            }
            Expr::Select(c, a, b) => {
                // both arms are evaluated: selects are branch-free
                let c = self.eval(c)?;
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                if c != 0 {
                    a
                } else {
                    b
                }
            }
            Expr::Load { buf, idx, site } => {
                let i = self.eval(idx)?;
                let v = self.mem.load(*buf, i)?;
                self.tracer.access(*site, *buf, i, AccessKind::Read);
                v
            }
            Expr::Murmur(x, s) => {
                let x = self.eval(x)?;
                let s = self.eval(s)?;
                hash::murmur(x, s)
            }
            Expr::MulShift(x, a, b) => {
                let x = self.eval(x)?;
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                hash::multiply_shift(x, a, b)
            }
            Expr::ToFloat(x) => tobits(self.eval(x)? as f64),
        })
    }

    fn exec(&mut self, body: &[Stmt]) -> Result<Flow> {
        for s in body {
            match s {
                Stmt::Assign(v, e) => {
                    let x = self.eval(e)?;
                    self.vars[*v as usize] = x;
                }
                Stmt::Store {
                    buf,
                    idx,
                    val,
                    site,
                } => {
                    let i = self.eval(idx)?;
                    let x = self.eval(val)?;
                    self.mem.store(*buf, i, x)?;
                    self.tracer.access(*site, *buf, i, AccessKind::Write);
                }
                Stmt::For {
                    var,
                    start,
                    end,
                    step,
                    body,
                } => {
                    let mut i = self.eval(start)?;
                    let end = self.eval(end)?;
                    let step = self.eval(step)?;
                    if step <= 0 {
                        return Err(RuntimeError::DivergentPlan("non-positive loop step".into()));
                    }
                    while i < end {
                        self.vars[*var as usize] = i;
                        if let Flow::Break = self.exec(body)? {
                            break;
                        }
                        i += step;
                    }
                }
                Stmt::If {
                    cond,
                    then,
                    els,
                    site,
                } => {
                    let c = self.eval(cond)? != 0;
                    self.tracer.branch(*site, c);
                    let f = if c { self.exec(then)? } else { self.exec(els)? };
                    if let Flow::Break = f {
                        return Ok(Flow::Break);
                    }
                }
                Stmt::Loop(body) => {
                    let mut n = 0u64;
                    while let Flow::Next = self.exec(body)? {
                        n += 1;
                        if n > MAX_LOOP_ITERATIONS {
                            return Err(RuntimeError::DivergentPlan("unbounded loop".into()));
                        }
                    }
                }
                Stmt::Break => return Ok(Flow::Break),
                Stmt::Atomic {
                    op,
                    buf,
                    idx,
                    val,
                    prior,
                    site,
                } => {
                    let i = self.eval(idx)?;
                    let x = self.eval(val)?;
                    let p = self.mem.atomic(*op, *buf, i, x)?;
                    self.tracer.access(*site, *buf, i, AccessKind::Atomic);
                    if let Some(pv) = prior {
                        self.vars[*pv as usize] = p;
                    }
                }
                Stmt::AtomicCas {
                    buf,
                    idx,
                    expected,
                    desired,
                    prior,
                    site,
                } => {
                    let i = self.eval(idx)?;
                    let e = self.eval(expected)?;
                    let d = self.eval(desired)?;
                    let p = self.mem.cas(*buf, i, e, d)?;
                    self.tracer.access(*site, *buf, i, AccessKind::Atomic);
                    self.vars[*prior as usize] = p;
                }
            }
        }
        Ok(Flow::Next)
    }
}

/// Runs logical thread `tid` of `kernel`. `vars` is scratch of at least
/// `kernel.vars.len()` elements; it is zeroed here.
pub fn run_thread<T: Tracer>(
    kernel: &Kernel,
    tid: u64,
    dims: Dims,
    mem: &Memory<'_>,
    scalars: &[i64],
    vars: &mut Vec<i64>,
    tracer: &mut T,
) -> Result<()> {
    vars.clear();
    vars.resize(kernel.vars.len(), 0);
    let mut t = Thread {
        mem,
        scalars,
        vars,
        tid,
        dims,
        tracer,
    };
    t.exec(&kernel.body)?;
    Ok(())
}

/// Memory transactions by access class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transactions {
    pub coalesced: u64,
    pub sequential: u64,
    pub scattered: u64,
    pub atomic: u64,
    pub divergent_branches: u64,
}

impl Transactions {
    fn add(&mut self, o: &Transactions) {
        self.coalesced += o.coalesced;
        self.sequential += o.sequential;
        self.scattered += o.scattered;
        self.atomic += o.atomic;
        self.divergent_branches += o.divergent_branches;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaunchReport {
    /// Seconds on the host, cost units on a simulated device.
    pub cost: f64,
    pub transactions: Transactions,
}

pub trait Launcher {
    fn launch(
        &mut self,
        kernel: &Kernel,
        dims: Dims,
        mem: &Memory<'_>,
        scalars: &[i64],
    ) -> Result<LaunchReport>;

    /// Cost of a host step touching `elements` elements.
    fn host_cost(&self, elements: usize) -> f64;
}

/// Runs every thread in order on the calling thread, without costs.
#[derive(Debug, Default)]
pub struct SerialLauncher;

impl Launcher for SerialLauncher {
    fn launch(
        &mut self,
        kernel: &Kernel,
        dims: Dims,
        mem: &Memory<'_>,
        scalars: &[i64],
    ) -> Result<LaunchReport> {
        let mut vars = Vec::new();
        for tid in 0..dims.limit.min(dims.global) {
            run_thread(kernel, tid, dims, mem, scalars, &mut vars, &mut NoTrace)?;
        }
        Ok(LaunchReport::default())
    }

    fn host_cost(&self, _: usize) -> f64 {
        0.0
    }
}

// ---------------------------------------------------------------------------
// device model

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    HostParallel,
    Simulated,
}

impl DeviceKind {
    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::HostParallel => "host_parallel",
            DeviceKind::Simulated => "simulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub name: String,
    pub kind: DeviceKind,
    pub compute_units: u32,
    pub warp_size: u32,
    pub coalesced_cost: f64,
    pub scattered_cost: f64,
    pub sequential_cost: f64,
    pub atomic_cost: f64,
    /// Per launched logical thread.
    pub launch_overhead: f64,
    pub divergence_penalty: f64,
    pub parallel_width: u32,
    /// Per element touched by a host step.
    pub host_element_cost: f64,
}

impl DeviceModel {
    /// Eight cores, one lane each: streaming reads are cheap, launches are not.
    pub fn cpu_sim() -> Self {
        DeviceModel {
            name: "cpu-sim".into(),
            kind: DeviceKind::Simulated,
            compute_units: 8,
            warp_size: 1,
            coalesced_cost: 1.0,
            scattered_cost: 4.0,
            sequential_cost: 1.0,
            atomic_cost: 8.0,
            launch_overhead: 5.0,
            divergence_penalty: 0.0,
            parallel_width: 8,
            host_element_cost: 0.5,
        }
    }

    /// Wide device with 32-lane warps: coalesced transactions are cheap and
    /// thousands of threads run concurrently.
    pub fn gpu_sim() -> Self {
        DeviceModel {
            name: "gpu-sim".into(),
            kind: DeviceKind::Simulated,
            compute_units: 16,
            warp_size: 32,
            coalesced_cost: 4.0,
            scattered_cost: 16.0,
            sequential_cost: 2.0,
            atomic_cost: 16.0,
            launch_overhead: 0.05,
            divergence_penalty: 8.0,
            parallel_width: 1024,
            host_element_cost: 0.05,
        }
    }

    pub fn host(compute_units: u32) -> Self {
        DeviceModel {
            name: "host".into(),
            kind: DeviceKind::HostParallel,
            compute_units: compute_units.max(1),
            warp_size: 1,
            coalesced_cost: 0.0,
            scattered_cost: 0.0,
            sequential_cost: 0.0,
            atomic_cost: 0.0,
            launch_overhead: 0.0,
            divergence_penalty: 0.0,
            parallel_width: compute_units.max(1),
            host_element_cost: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cpu-sim" => Some(Self::cpu_sim()),
            "gpu-sim" => Some(Self::gpu_sim()),
            _ => None,
        }
    }

    /// Thread counts follow the compute units; projection groups span a warp.
    pub fn codegen_options(&self) -> crate::codegen::CodegenOptions {
        crate::codegen::CodegenOptions {
            compute_units: self.compute_units,
            group_hint: self.warp_size.max(1),
            ..crate::codegen::CodegenOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let costs = [
            self.coalesced_cost,
            self.scattered_cost,
            self.sequential_cost,
            self.atomic_cost,
            self.launch_overhead,
            self.divergence_penalty,
            self.host_element_cost,
        ];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(RuntimeError::InvalidDevice(
                "costs must be finite and >= 0".into(),
            ));
        }
        if self.warp_size == 0 || self.parallel_width == 0 || self.compute_units == 0 {
            return Err(RuntimeError::InvalidDevice(
                "warp_size, parallel_width and compute_units must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// One `key = value` per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "compute_units = {}", self.compute_units);
        let _ = writeln!(s, "warp_size = {}", self.warp_size);
        let _ = writeln!(s, "coalesced_cost = {}", self.coalesced_cost);
        let _ = writeln!(s, "scattered_cost = {}", self.scattered_cost);
        let _ = writeln!(s, "sequential_cost = {}", self.sequential_cost);
        let _ = writeln!(s, "atomic_cost = {}", self.atomic_cost);
        let _ = writeln!(s, "launch_overhead = {}", self.launch_overhead);
        let _ = writeln!(s, "divergence_penalty = {}", self.divergence_penalty);
        let _ = writeln!(s, "parallel_width = {}", self.parallel_width);
        let _ = writeln!(s, "host_element_cost = {}", self.host_element_cost);
        s
    }

    /// Parses `key = value` lines over a base model (`preset = name` picks
    /// the base). `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut m = DeviceModel::cpu_sim();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad =
                |what: &str| RuntimeError::InvalidDevice(alloc::format!("line {}: {what}", n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            let f = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
            let u = |v: &str| v.parse::<u32>().map_err(|_| bad("expected an integer"));
            match k {
                "preset" => {
                    let name = m.name.clone();
                    m = DeviceModel::preset(v).ok_or_else(|| bad("unknown preset"))?;
                    if name != "cpu-sim" {
                        m.name = name;
                    }
                }
                "name" => m.name = v.to_string(),
                "kind" => {
                    m.kind = match v {
                        "host_parallel" => DeviceKind::HostParallel,
                        "simulated" => DeviceKind::Simulated,
                        _ => return Err(bad("kind is host_parallel or simulated")),
                    }
                }
                "compute_units" => m.compute_units = u(v)?,
                "warp_size" => m.warp_size = u(v)?,
                "coalesced_cost" => m.coalesced_cost = f(v)?,
                "scattered_cost" => m.scattered_cost = f(v)?,
                "sequential_cost" => m.sequential_cost = f(v)?,
                "atomic_cost" => m.atomic_cost = f(v)?,
                "launch_overhead" => m.launch_overhead = f(v)?,
                "divergence_penalty" => m.divergence_penalty = f(v)?,
                "parallel_width" => m.parallel_width = u(v)?,
                "host_element_cost" => m.host_element_cost = f(v)?,
                _ => return Err(bad("unknown key")),
            }
        }
        m.validate()?;
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// simulated device

fn address(buf: BufId, idx: i64) -> i64 {
    ((buf as i64) << 40) | (idx & ((1 << 40) - 1))
}

#[derive(Clone, Copy)]
enum EventKind {
    Access,
    Atomic,
    Branch,
}

#[derive(Clone, Copy)]
struct Event {
    site: SiteId,
    occ: u32,
    addr: i64,
    kind: EventKind,
    /// Cost if this access were issued alone.
    alone: f64,
    sequential: bool,
}

/// Per-lane trace: stream detection and, for warps, recorded events.
struct LaneTracer<'m> {
    model: &'m DeviceModel,
    last: Vec<i64>,
    occ: Vec<u32>,
    record: bool,
    events: Vec<Event>,
    cost: f64,
    tx: Transactions,
}

impl<'m> LaneTracer<'m> {
    fn new(model: &'m DeviceModel, sites: usize, record: bool) -> Self {
        LaneTracer {
            model,
            last: vec![i64::MIN; sites],
            occ: vec![0; sites],
            record,
            events: Vec::new(),
            cost: 0.0,
            tx: Transactions::default(),
        }
    }

    fn reset(&mut self) {
        self.last.iter_mut().for_each(|x| *x = i64::MIN);
        self.occ.iter_mut().for_each(|x| *x = 0);
    }

    fn next_occ(&mut self, site: SiteId) -> u32 {
        let o = &mut self.occ[site as usize];
        *o += 1;
        *o - 1
    }
}

impl Tracer for LaneTracer<'_> {
    fn access(&mut self, site: SiteId, buf: BufId, idx: i64, kind: AccessKind) {
        let addr = address(buf, idx);
        let s = site as usize;
        let sequential = self.last[s] != i64::MIN && self.last[s] + 1 == addr;
        self.last[s] = addr;
        let (alone, ek) = match kind {
            AccessKind::Atomic => (self.model.atomic_cost, EventKind::Atomic),
            _ if sequential => (self.model.sequential_cost, EventKind::Access),
            _ => (self.model.scattered_cost, EventKind::Access),
        };
        if self.record {
            let occ = self.next_occ(site);
            self.events.push(Event {
                site,
                occ,
                addr,
                kind: ek,
                alone,
                sequential,
            });
        } else {
            self.cost += alone;
            match ek {
                EventKind::Atomic => self.tx.atomic += 1,
                _ if sequential => self.tx.sequential += 1,
                _ => self.tx.scattered += 1,
            }
        }
    }

    fn branch(&mut self, site: SiteId, taken: bool) {
        if self.record {
            let occ = self.next_occ(site);
            self.events.push(Event {
                site,
                occ,
                addr: taken as i64,
                kind: EventKind::Branch,
                alone: 0.0,
                sequential: false,
            });
        }
    }
}

fn max_site(kernel: &Kernel) -> usize {
    fn expr(e: &Expr, m: &mut u32) {
        match e {
            Expr::Load { idx, site, .. } => {
                *m = (*m).max(*site + 1);
                expr(idx, m);
            }
            Expr::Bin(_, a, b) | Expr::Murmur(a, b) => {
                expr(a, m);
                expr(b, m);
            }
            Expr::Select(x, a, b) | Expr::MulShift(x, a, b) => {
                expr(x, m);
                expr(a, m);
                expr(b, m);
            }
            Expr::ToFloat(a) => expr(a, m),
            _ => {}
        }
    }
    let mut m = 0u32;
    walk_stmts(&kernel.body, &mut |s| match s {
        Stmt::Assign(_, e) => expr(e, &mut m),
        Stmt::Store { idx, val, site, .. } | Stmt::Atomic { idx, val, site, .. } => {
            m = m.max(site + 1);
            expr(idx, &mut m);
            expr(val, &mut m);
        }
        Stmt::AtomicCas {
            idx,
            expected,
            desired,
            site,
            ..
        } => {
            m = m.max(site + 1);
            expr(idx, &mut m);
            expr(expected, &mut m);
            expr(desired, &mut m);
        }
        Stmt::For {
            start, end, step, ..
        } => {
            expr(start, &mut m);
            expr(end, &mut m);
            expr(step, &mut m);
        }
        Stmt::If { cond, site, .. } => {
            m = m.max(site + 1);
            expr(cond, &mut m);
        }
        _ => {}
    });
    m as usize
}

/// Cost of one warp from the events of its lanes.
fn warp_cost(model: &DeviceModel, events: &mut [Event], tx: &mut Transactions) -> f64 {
    events.sort_unstable_by_key(|e| (e.site, e.occ, e.addr));
    let mut cost = 0.0;
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len() && events[j].site == events[i].site && events[j].occ == events[i].occ
        {
            j += 1;
        }
        let inst = &events[i..j];
        match inst[0].kind {
            EventKind::Branch => {
                let taken = inst.iter().filter(|e| e.addr != 0).count();
                if taken != 0 && taken != inst.len() {
                    cost += model.divergence_penalty;
                    tx.divergent_branches += 1;
                }
            }
            EventKind::Atomic => {
                for (k, e) in inst.iter().enumerate() {
                    let clash = (k > 0 && inst[k - 1].addr == e.addr)
                        || (k + 1 < inst.len() && inst[k + 1].addr == e.addr);
                    cost += if clash { 2.0 * e.alone } else { e.alone };
                    tx.atomic += 1;
                }
            }
            EventKind::Access => {
                let first = inst[0].addr;
                let last = inst[inst.len() - 1].addr;
                let mut distinct = 1i64;
                for w in inst.windows(2) {
                    if w[1].addr != w[0].addr {
                        distinct += 1;
                    }
                }
                // partially filled warps still share memory segments
                let w = model.warp_size.max(1) as i64;
                let mut segments = 1u64;
                for p in inst.windows(2) {
                    if p[1].addr.div_euclid(w) != p[0].addr.div_euclid(w) {
                        segments += 1;
                    }
                }
                let alone: f64 = inst.iter().map(|e| e.alone).sum();
                if inst.len() >= 2 && last - first == distinct - 1 {
                    cost += model.coalesced_cost;
                    tx.coalesced += 1;
                } else if inst.len() >= 2 && model.coalesced_cost * (segments as f64) < alone {
                    cost += model.coalesced_cost * segments as f64;
                    tx.coalesced += segments;
                } else {
                    for e in inst {
                        cost += e.alone;
                        if e.sequential {
                            tx.sequential += 1;
                        } else {
                            tx.scattered += 1;
                        }
                    }
                }
            }
        }
        i = j;
    }
    cost
}

/// Deterministic single-threaded execution with the parametric cost model.
pub struct SimLauncher<'m> {
    pub model: &'m DeviceModel,
}

impl<'m> SimLauncher<'m> {
    pub fn new(model: &'m DeviceModel) -> Self {
        SimLauncher { model }
    }
}

impl Launcher for SimLauncher<'_> {
    fn launch(
        &mut self,
        kernel: &Kernel,
        dims: Dims,
        mem: &Memory<'_>,
        scalars: &[i64],
    ) -> Result<LaunchReport> {
        let m = self.model;
        let group = dims.group.max(1);
        let groups = dims.global.div_ceil(group);
        let active = dims.limit.min(dims.global);
        let p = m.parallel_width.max(1) as u64;
        let mut units = vec![0.0f64; groups.min(p) as usize];
        let w = m.warp_size.max(1) as u64;
        let sites = max_site(kernel);
        let mut lane = LaneTracer::new(m, sites, w > 1);
        let mut tx = Transactions::default();
        let mut vars = Vec::new();
        let mut events: Vec<Event> = Vec::new();
        for g in 0..groups {
            let first = g * group;
            if first >= active {
                break;
            }
            let end = (first + group).min(active);
            let mut gcost = 0.0;
            let mut warp = first;
            while warp < end {
                let wend = (warp + w).min(end);
                events.clear();
                for tid in warp..wend {
                    lane.reset();
                    run_thread(kernel, tid, dims, mem, scalars, &mut vars, &mut lane)?;
                    if w > 1 {
                        events.append(&mut lane.events);
                    }
                }
                if w > 1 {
                    gcost += warp_cost(m, &mut events, &mut tx);
                } else {
                    gcost += lane.cost;
                    lane.cost = 0.0;
                }
                warp = wend;
            }
            units[(g % p) as usize] += gcost;
        }
        tx.add(&lane.tx);
        let busiest = units.iter().copied().fold(0.0, f64::max);
        Ok(LaunchReport {
            cost: m.launch_overhead * dims.global as f64 + busiest,
            transactions: tx,
        })
    }

    fn host_cost(&self, elements: usize) -> f64 {
        self.model.host_element_cost * elements as f64
    }
}

// ---------------------------------------------------------------------------
// plan execution

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExecutionMetrics {
    /// Seconds on the host, cost units on a simulated device.
    pub cost: f64,
    pub kernel_costs: Vec<(String, f64)>,
    pub host_cost: f64,
    pub transactions: Transactions,
    pub launches: u32,
    pub rebuilds: u32,
}

impl ExecutionMetrics {
    pub fn csv_header() -> &'static str {
        "cost,host_cost,launches,rebuilds,coalesced,sequential,scattered,atomic,divergent_branches"
    }

    pub fn csv_row(&self) -> String {
        let t = &self.transactions;
        alloc::format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cost,
            self.host_cost,
            self.launches,
            self.rebuilds,
            t.coalesced,
            t.sequential,
            t.scattered,
            t.atomic,
            t.divergent_branches
        )
    }
}

fn init_data(decl: &BufferDecl, len: usize) -> Vec<i64> {
    match &decl.init {
        Init::Zero | Init::Input(_) => vec![0; len],
        Init::Fill(v) => vec![*v; len],
        Init::Data(d) => {
            let mut v = d.clone();
            v.resize(len, 0);
            v
        }
    }
}

fn combine(kind: AccKind, a: i64, b: i64) -> i64 {
    match kind {
        AccKind::Sum => a.wrapping_add(b),
        AccKind::FSum => tobits(fbits(a) + fbits(b)),
        AccKind::Min => a.min(b),
        AccKind::Max => a.max(b),
        AccKind::FMin => tobits(fbits(a).min(fbits(b))),
        AccKind::FMax => tobits(fbits(a).max(fbits(b))),
    }
}

/// Groups after merging: packed key to (count, accumulators).
type Merged = BTreeMap<i64, (i64, Vec<i64>)>;

fn merge(spec: &MergeSpec, mem: &Memory<'_>) -> Result<(Merged, usize)> {
    let count = mem.snapshot(spec.count)?;
    let accs: Vec<Vec<i64>> = spec
        .accs
        .iter()
        .map(|(b, _)| mem.snapshot(*b))
        .collect::<Result<_>>()?;
    let mut out: Merged = BTreeMap::new();
    let mut touched = 0usize;
    let fold = |out: &mut Merged, key: i64, slot: usize| {
        let e = out.entry(key).or_insert_with(|| {
            (
                0,
                spec.accs
                    .iter()
                    .map(|(_, k)| crate::codegen::identity_value(*k))
                    .collect(),
            )
        });
        e.0 += count[slot];
        for (i, (_, k)) in spec.accs.iter().enumerate() {
            e.1[i] = combine(*k, e.1[i], accs[i][slot]);
        }
    };
    match &spec.layout {
        AggLayout::Ungrouped { tables } => {
            out.insert(
                0,
                (
                    0,
                    spec.accs
                        .iter()
                        .map(|(_, k)| crate::codegen::identity_value(*k))
                        .collect(),
                ),
            );
            for t in 0..*tables {
                if count[t] > 0 {
                    touched += 1;
                    fold(&mut out, 0, t);
                }
            }
        }
        AggLayout::Slots { keys, slots } => {
            let keys = mem.snapshot(*keys)?;
            for s in 0..*slots {
                if keys[s] != hash::EMPTY_KEY && count[s] > 0 {
                    touched += 1;
                    fold(&mut out, keys[s], s);
                }
            }
        }
        AggLayout::Entries {
            keys,
            counters,
            offsets,
        } => {
            let keys = mem.snapshot(*keys)?;
            let counters = mem.snapshot(*counters)?;
            for (t, &off) in offsets.iter().enumerate() {
                let end = offsets.get(t + 1).copied().unwrap_or(keys.len());
                let n = (counters[t].max(0) as usize).min(end - off);
                for s in off..off + n {
                    if count[s] > 0 {
                        touched += 1;
                        fold(&mut out, keys[s], s);
                    }
                }
            }
        }
    }
    Ok((out, touched))
}

fn decode(input: &InputData, raw: i64, kind: ColumnKind, lexicon: Option<&str>) -> Result<Value> {
    Ok(match (kind, lexicon) {
        (ColumnKind::String, Some(l)) => {
            let lex = input
                .lexicon(l)
                .ok_or_else(|| RuntimeError::MissingInput(l.to_string()))?;
            let s = usize::try_from(raw)
                .ok()
                .and_then(|i| lex.get(i))
                .ok_or_else(|| {
                    RuntimeError::DivergentPlan(alloc::format!("code {raw} not in {l}"))
                })?;
            Value::Str(s.clone())
        }
        (ColumnKind::Float64, _) => Value::Float(fbits(raw)),
        _ => Value::Int(raw),
    })
}

fn finalize(
    plan: &KernelPlan,
    input: &InputData,
    mem: &Memory<'_>,
    scalars: &[i64],
    merged: Option<&Merged>,
) -> Result<ResultTable> {
    let f = &plan.finalize;
    let schema: Vec<(String, ColumnKind)> =
        f.columns.iter().map(|(n, k, _)| (n.clone(), *k)).collect();
    let mut rows = Vec::new();
    if let Some(total) = f.total {
        let n = scalars[total as usize].max(0) as usize;
        let mut cols = Vec::new();
        for (_, kind, c) in &f.columns {
            let FinalColumn::Buffer { buf, lexicon, .. } = c else {
                return Err(RuntimeError::DivergentPlan(
                    "aggregate column in a projection".into(),
                ));
            };
            let data = mem.snapshot(*buf)?;
            if data.len() < n {
                return Err(RuntimeError::DivergentPlan(
                    "output shorter than its total".into(),
                ));
            }
            cols.push((data, *kind, lexicon.as_deref()));
        }
        for i in 0..n {
            let mut row = Vec::with_capacity(cols.len());
            for (data, kind, lex) in &cols {
                row.push(decode(input, data[i], *kind, *lex)?);
            }
            rows.push(row);
        }
        return Ok(ResultTable::new(schema, rows));
    }
    let merged = merged.ok_or_else(|| RuntimeError::DivergentPlan("no merged groups".into()))?;
    for (&key, (count, accs)) in merged {
        if f.grouped && *count == 0 {
            continue;
        }
        let mut row = Vec::with_capacity(f.columns.len());
        for (name, kind, c) in &f.columns {
            let empty = || RuntimeError::EmptyAggregate(name.clone());
            row.push(match c {
                FinalColumn::Group(GroupPart::Packed {
                    min,
                    range,
                    stride,
                    lexicon,
                }) => decode(
                    input,
                    (key / stride) % range + min,
                    *kind,
                    lexicon.as_deref(),
                )?,
                FinalColumn::Count => Value::Int(*count),
                FinalColumn::Sum { acc, float } => {
                    if *float {
                        Value::Float(fbits(accs[*acc]))
                    } else {
                        Value::Int(accs[*acc])
                    }
                }
                FinalColumn::Min { acc, float } | FinalColumn::Max { acc, float } => {
                    if *count == 0 {
                        return Err(empty());
                    }
                    if *float {
                        Value::Float(fbits(accs[*acc]))
                    } else {
                        Value::Int(accs[*acc])
                    }
                }
                FinalColumn::Avg { acc, float } => {
                    if *count == 0 {
                        return Err(empty());
                    }
                    let s = if *float {
                        fbits(accs[*acc])
                    } else {
                        accs[*acc] as f64
                    };
                    Value::Float(s / *count as f64)
                }
                FinalColumn::Buffer { .. } => {
                    return Err(RuntimeError::DivergentPlan(
                        "buffer column in an aggregation".into(),
                    ))
                }
            });
        }
        rows.push(row);
    }
    Ok(ResultTable::new(schema, rows))
}

/// Runs the host steps of `plan`, launching kernels through `launcher`.
pub fn execute_kernel_plan(
    plan: &KernelPlan,
    input: &InputData,
    launcher: &mut dyn Launcher,
) -> Result<(ResultTable, ExecutionMetrics)> {
    let mut mem = Memory {
        bufs: (0..plan.buffers.len()).map(|_| None).collect(),
    };
    let mut scalars: Vec<i64> = plan.scalars.iter().map(|s| s.init).collect();
    let mut metrics = ExecutionMetrics::default();
    let mut merged: Option<Merged> = None;
    let mut result: Option<ResultTable> = None;
    let mut rebuilds: BTreeMap<usize, u32> = BTreeMap::new();
    let mut pc = 0;
    while pc < plan.steps.len() {
        let step = &plan.steps[pc];
        pc += 1;
        match step {
            Step::Alloc(b) => {
                let d = &plan.buffers[*b as usize];
                let buf = match &d.init {
                    Init::Input(name) => Buffer::Input(
                        input
                            .column(name)
                            .ok_or_else(|| RuntimeError::MissingInput(name.clone()))?,
                    ),
                    _ => {
                        let len = match d.len {
                            Len::Const(n) => n,
                            Len::Scalar(s, k) => scalars[s as usize].max(0) as usize + k,
                        };
                        Buffer::shared(init_data(d, len))
                    }
                };
                mem.bufs[*b as usize] = Some(buf);
            }
            Step::Launch {
                kernel,
                global,
                group,
                limit,
            } => {
                let k = &plan.kernels[*kernel];
                let dims = Dims {
                    global: *global,
                    group: *group,
                    limit: *limit,
                };
                let r = launcher.launch(k, dims, &mem, &scalars)?;
                metrics.kernel_costs.push((k.name.clone(), r.cost));
                metrics.transactions.add(&r.transactions);
                metrics.launches += 1;
            }
            Step::PrefixSum {
                flags,
                positions,
                total,
            } => {
                let f = mem.snapshot(*flags)?;
                let (pos, t) = exclusive_prefix_sum(&f);
                metrics.host_cost += launcher.host_cost(f.len());
                mem.bufs[*positions as usize] = Some(Buffer::shared(pos));
                scalars[*total as usize] = t;
            }
            Step::Compact {
                regions,
                workers,
                columns,
                total,
            } => {
                let r = mem.snapshot(*regions)?;
                let mut moved = 0usize;
                for c in columns {
                    let Some(Buffer::Shared(data)) = mem.bufs[*c as usize].as_ref() else {
                        return Err(RuntimeError::DivergentPlan("compacting an input".into()));
                    };
                    let mut dst = 0usize;
                    for w in 0..*workers {
                        let (start, count) =
                            (r[2 * w].max(0) as usize, r[2 * w + 1].max(0) as usize);
                        if start + count > data.len() || dst > start {
                            return Err(RuntimeError::DivergentPlan("region out of range".into()));
                        }
                        for i in 0..count {
                            let v = data[start + i].load(Ordering::Relaxed);
                            data[dst + i].store(v, Ordering::Relaxed);
                        }
                        dst += count;
                    }
                    moved += dst;
                    scalars[*total as usize] = dst as i64;
                }
                if columns.is_empty() {
                    scalars[*total as usize] = (0..*workers).map(|w| r[2 * w + 1].max(0)).sum();
                }
                metrics.host_cost += launcher.host_cost(moved);
            }
            Step::MergeHashTables(spec) => {
                let (m, touched) = merge(spec, &mem)?;
                metrics.host_cost += launcher.host_cost(touched);
                merged = Some(m);
            }
            Step::CheckRebuild {
                flag,
                seeds,
                reset,
                restart_at,
                max_rebuilds,
            } => {
                if mem.load(*flag, 0)? != 0 {
                    let n = rebuilds.entry(pc - 1).or_insert(0);
                    *n += 1;
                    if *n > *max_rebuilds {
                        return Err(RuntimeError::CapacityExceeded(alloc::format!(
                            "cuckoo insertion failed after {max_rebuilds} rebuilds"
                        )));
                    }
                    metrics.rebuilds += 1;
                    for s in seeds {
                        scalars[*s as usize] = hash::next_seed(scalars[*s as usize]);
                    }
                    for b in reset {
                        let d = &plan.buffers[*b as usize];
                        let len = mem.buf(*b)?.len();
                        mem.bufs[*b as usize] = Some(Buffer::shared(init_data(d, len)));
                    }
                    pc = *restart_at;
                }
            }
            Step::Finalize => {
                result = Some(finalize(plan, input, &mem, &scalars, merged.as_ref())?);
            }
            Step::Free(b) => mem.bufs[*b as usize] = None,
        }
    }
    metrics.rebuilds = metrics.rebuilds.max(rebuilds.values().sum());
    metrics.cost = metrics.kernel_costs.iter().map(|(_, c)| c).sum::<f64>() + metrics.host_cost;
    let result =
        result.ok_or_else(|| RuntimeError::DivergentPlan("plan has no finalize step".into()))?;
    Ok((result, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::CodegenOptions;
    use crate::ir::{
        HashFunction, HashTableImpl, MemoryAccess, Predication, ProjectionStrategy,
        VariantConfiguration,
    };
    use crate::query::{compile_query, SUITE};
    use crate::storage::{gen_star_schema, Column};
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    #[test]
    fn prefix_sum_examples() {
        assert_eq!(exclusive_prefix_sum(&[1, 0, 1, 1]), (vec![0, 1, 1, 2], 3));
        assert_eq!(exclusive_prefix_sum(&[]), (vec![], 0));
    }

    #[test]
    fn prefix_sum_matches_naive_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let flags: Vec<i64> = (0..100_000).map(|_| rng.gen_range(0..2)).collect();
        let (pos, total) = exclusive_prefix_sum(&flags);
        let mut acc = 0;
        for (i, f) in flags.iter().enumerate() {
            assert_eq!(pos[i], acc);
            acc += f;
        }
        assert_eq!(total, acc);
    }

    proptest::proptest! {
        #[test]
        fn prefix_sum_positions(flags in proptest::collection::vec(0i64..4, 0..200)) {
            let (pos, total) = exclusive_prefix_sum(&flags);
            proptest::prop_assert_eq!(pos.len(), flags.len());
            for i in 0..flags.len() {
                proptest::prop_assert_eq!(pos[i], flags[..i].iter().sum::<i64>());
            }
            proptest::prop_assert_eq!(total, flags.iter().sum::<i64>());
        }
    }

    #[test]
    fn atomics_and_bounds() {
        let input = [1i64, 2, 3];
        let shared: Box<[AtomicI64]> = (0..4).map(|_| AtomicI64::new(0)).collect();
        let mem = Memory {
            bufs: vec![Some(Buffer::Input(&input)), Some(Buffer::Shared(shared))],
        };
        assert_eq!(mem.load(0, 2), Ok(3));
        assert!(matches!(
            mem.load(0, 3),
            Err(RuntimeError::DivergentPlan(_))
        ));
        assert!(mem.store(0, 0, 1).is_err());
        mem.atomic(AtomicOp::Add, 1, 1, 5).unwrap();
        mem.atomic(AtomicOp::Add, 1, 1, 7).unwrap();
        assert_eq!(mem.load(1, 1), Ok(12));
        assert_eq!(mem.cas(1, 1, 12, 1), Ok(12));
        assert_eq!(mem.cas(1, 1, 12, 2), Ok(1));
        mem.atomic(AtomicOp::Max, 1, 2, -4).unwrap();
        assert_eq!(mem.load(1, 2), Ok(0));
        mem.atomic(AtomicOp::Min, 1, 2, -4).unwrap();
        assert_eq!(mem.load(1, 2), Ok(-4));
    }

    #[test]
    fn float_add_is_exact_for_small_integers() {
        let shared: Box<[AtomicI64]> = (0..1)
            .map(|_| AtomicI64::new(0f64.to_bits() as i64))
            .collect();
        let mem = Memory {
            bufs: vec![Some(Buffer::Shared(shared))],
        };
        for i in 0..100 {
            mem.atomic(AtomicOp::FAdd, 0, 0, (i as f64).to_bits() as i64)
                .unwrap();
        }
        assert_eq!(f64::from_bits(mem.load(0, 0).unwrap() as u64), 4950.0);
    }

    #[test]
    fn device_config_round_trip() {
        for m in [
            DeviceModel::cpu_sim(),
            DeviceModel::gpu_sim(),
            DeviceModel::host(4),
        ] {
            assert_eq!(DeviceModel::from_kv(&m.to_kv()), Ok(m));
        }
        let m = DeviceModel::from_kv("# tweak\npreset = gpu-sim\nwarp_size = 16\n").unwrap();
        assert_eq!(m.warp_size, 16);
        assert_eq!(m.scattered_cost, DeviceModel::gpu_sim().scattered_cost);
        assert!(DeviceModel::from_kv("warp_size = 0\n").is_err());
        assert!(DeviceModel::from_kv("bogus = 1\n").is_err());
        assert!(DeviceModel::from_kv("atomic_cost = -1\n").is_err());
    }

    fn run_sim(
        sql: &str,
        config: &VariantConfiguration,
        t: &[ColumnTable],
        m: &DeviceModel,
    ) -> (crate::result::ResultTable, ExecutionMetrics) {
        let q = compile_query("q", sql, t).unwrap();
        let opts = m.codegen_options();
        q.execute(
            config,
            t,
            &InputData::bind(t),
            &opts,
            &mut SimLauncher::new(m),
        )
        .unwrap()
    }

    #[test]
    fn simulated_cost_is_reproducible() {
        let t = gen_star_schema(5000, 1, 100);
        for m in [DeviceModel::cpu_sim(), DeviceModel::gpu_sim()] {
            for q in &SUITE {
                let config = VariantConfiguration {
                    projection_strategy: ProjectionStrategy::MultiPass,
                    thread_multiplier: 64,
                    memory_access: MemoryAccess::Coalesced,
                    ..VariantConfiguration::default()
                };
                let (r1, a) = run_sim(q.sql, &config, &t, &m);
                let (r2, b) = run_sim(q.sql, &config, &t, &m);
                assert_eq!(a.cost.to_bits(), b.cost.to_bits());
                assert_eq!(a, b);
                assert_eq!(r1.checksum(), r2.checksum());
            }
        }
    }

    #[test]
    fn serial_and_simulated_results_agree() {
        let t = gen_star_schema(3000, 2, 100);
        let m = DeviceModel::gpu_sim();
        for q in &SUITE {
            let c = compile_query(q.name, q.sql, &t).unwrap();
            let config = VariantConfiguration::default();
            let (a, _) = run_sim(q.sql, &config, &t, &m);
            let (b, _) = c
                .execute(
                    &config,
                    &t,
                    &InputData::bind(&t),
                    &m.codegen_options(),
                    &mut SerialLauncher,
                )
                .unwrap();
            assert_eq!(a.compare(&b), Ok(()));
        }
    }

    #[test]
    fn coalesced_access_is_cheaper_on_wide_warps() {
        let t = gen_star_schema(20_000, 4, 100);
        let m = DeviceModel::gpu_sim();
        let base = VariantConfiguration {
            projection_strategy: ProjectionStrategy::MultiPass,
            thread_multiplier: 256,
            ..VariantConfiguration::default()
        };
        let coalesced = VariantConfiguration {
            memory_access: MemoryAccess::Coalesced,
            ..base
        };
        let (_, seq) = run_sim(SUITE[0].sql, &base, &t, &m);
        let (_, co) = run_sim(SUITE[0].sql, &coalesced, &t, &m);
        assert!(co.cost < seq.cost, "{co:?} vs {seq:?}");
        assert!(co.transactions.coalesced > 0);
    }

    #[test]
    fn sequential_streams_are_cheaper_on_scalar_lanes() {
        let t = gen_star_schema(20_000, 4, 100);
        let m = DeviceModel::cpu_sim();
        let base = VariantConfiguration::default();
        let coalesced = VariantConfiguration {
            memory_access: MemoryAccess::Coalesced,
            ..base
        };
        let (_, seq) = run_sim(SUITE[0].sql, &base, &t, &m);
        let (_, co) = run_sim(SUITE[0].sql, &coalesced, &t, &m);
        assert!(seq.cost < co.cost);
    }

    #[test]
    fn divergence_is_charged_only_with_warps() {
        let t = gen_star_schema(5000, 4, 100);
        let config = VariantConfiguration {
            projection_strategy: ProjectionStrategy::MultiPass,
            thread_multiplier: 64,
            memory_access: MemoryAccess::Coalesced,
            ..VariantConfiguration::default()
        };
        let (_, g) = run_sim(SUITE[0].sql, &config, &t, &DeviceModel::gpu_sim());
        assert!(g.transactions.divergent_branches > 0);
        let pred = VariantConfiguration {
            predication: Predication::Predicated,
            ..config
        };
        let (_, p) = run_sim(SUITE[0].sql, &pred, &t, &DeviceModel::gpu_sim());
        assert!(p.transactions.divergent_branches < g.transactions.divergent_branches);
        let (_, c) = run_sim(SUITE[0].sql, &config, &t, &DeviceModel::cpu_sim());
        assert_eq!(c.transactions.divergent_branches, 0);
    }

    /// Build a hash table over `k` distinct random keys, then probe with
    /// every key plus as many absent ones.
    pub(crate) fn hash_round_trip_tables(k: usize, seed: u64) -> Vec<ColumnTable> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut keys = alloc::collections::BTreeSet::new();
        while keys.len() < 2 * k {
            keys.insert(rng.gen_range(-(1i64 << 62)..(1i64 << 62)));
        }
        let mut all: Vec<i64> = keys.into_iter().collect();
        for i in (1..all.len()).rev() {
            all.swap(i, rng.gen_range(0..=i));
        }
        let present = all[..k].to_vec();
        let payload: Vec<i64> = present.iter().map(|x| x.wrapping_mul(7) ^ 0x55).collect();
        let mut probe = all.clone();
        for i in (1..probe.len()).rev() {
            probe.swap(i, rng.gen_range(0..=i));
        }
        vec![
            ColumnTable::from_columns(
                "build",
                vec![
                    ("b_key".to_string(), Column::Int64(present)),
                    ("b_payload".to_string(), Column::Int64(payload)),
                ],
            )
            .unwrap(),
            ColumnTable::from_columns("probe", vec![("p_key".to_string(), Column::Int64(probe))])
                .unwrap(),
        ]
    }

    pub(crate) const ROUND_TRIP_SQL: &str =
        "select p_key, b_payload from build, probe where p_key = b_key";

    #[test]
    fn hash_tables_round_trip() {
        let t = hash_round_trip_tables(5000, 9);
        let q = compile_query("rt", ROUND_TRIP_SQL, &t).unwrap();
        let want = q.reference(&t).unwrap();
        assert_eq!(want.row_count(), 5000);
        let input = InputData::bind(&t);
        for imp in [HashTableImpl::LinearProbing, HashTableImpl::Cuckoo] {
            for f in [HashFunction::Murmur, HashFunction::MultiplyShift] {
                let config = VariantConfiguration {
                    hash_table: imp,
                    hash_function: f,
                    ..VariantConfiguration::default()
                };
                let (got, _) = q
                    .execute(
                        &config,
                        &t,
                        &input,
                        &CodegenOptions::default(),
                        &mut SerialLauncher,
                    )
                    .unwrap();
                assert_eq!(got.compare(&want), Ok(()), "{imp:?} {f:?}");
            }
        }
    }
}
