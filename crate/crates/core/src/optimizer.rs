//! Variant-space search: coordinate descent and exhaustive exploration.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::codegen::CodegenOptions;
use crate::ir::{
    HashFunction, HashTableImpl, MemoryAccess, PipelineKind, Predication, VariantConfiguration,
    THREAD_MULTIPLIERS, WORK_GROUP_SIZES,
};
use crate::kernel::KernelPlan;
use crate::query::{compile_query, CompiledQuery, QueryError};
use crate::result::ResultTable;
use crate::runtime::{
    execute_kernel_plan, DeviceModel, ExecutionMetrics, InputData, RuntimeError, SimLauncher,
};
use crate::storage::ColumnTable;

/// Largest cross product [`full_exploration`] accepts by default.
pub const DEFAULT_EXPLORATION_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("variant space has {size} configurations, budget is {budget}")]
    BudgetExceeded { size: usize, budget: usize },
    #[error("workload has no queries")]
    EmptyWorkload,
    #[error("dimension `{0}` has no values")]
    EmptyDimension(String),
    #[error("unknown dimension `{0}` in feature order")]
    UnknownDimension(String),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// One admissible value: a label plus the configuration fields it sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimValue {
    pub label: String,
    pub settings: Vec<(&'static str, String)>,
}

impl DimValue {
    fn new(label: impl Into<String>, settings: &[(&'static str, &str)]) -> Self {
        DimValue {
            label: label.into(),
            settings: settings.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }

    /// A value that sets nothing; used by synthetic spaces.
    pub fn opaque(label: impl Into<String>) -> Self {
        DimValue {
            label: label.into(),
            settings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub values: Vec<DimValue>,
}

/// Coordinates of a configuration: one value index per dimension.
pub type Point = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSpace {
    pub dims: Vec<Dimension>,
}

impl VariantSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, OptimizerError> {
        if let Some(d) = dims.iter().find(|d| d.values.is_empty()) {
            return Err(OptimizerError::EmptyDimension(d.name.clone()));
        }
        Ok(VariantSpace { dims })
    }

    /// Dimensions that affect at least one pipeline of the given shape.
    pub fn for_pipelines(projection: bool, aggregation: bool, hashing: bool) -> Self {
        let mut dims = Vec::new();
        if projection {
            let mut values = vec![DimValue::new(
                "single_pass",
                &[
                    ("projection_strategy", "single_pass"),
                    ("thread_multiplier", "1"),
                ],
            )];
            for m in THREAD_MULTIPLIERS {
                let m = m.to_string();
                values.push(DimValue::new(
                    alloc::format!("multi_pass x{m}"),
                    &[
                        ("projection_strategy", "multi_pass"),
                        ("thread_multiplier", &m),
                    ],
                ));
            }
            dims.push(Dimension {
                name: "projection_strategy".into(),
                values,
            });
        }
        if aggregation {
            let mut values = Vec::new();
            for m in THREAD_MULTIPLIERS {
                let m = m.to_string();
                values.push(DimValue::new(
                    alloc::format!("local_hash x{m}"),
                    &[
                        ("aggregation_strategy", "local_hash"),
                        ("hash_table_count_multiplier", &m),
                    ],
                ));
            }
            values.push(DimValue::new(
                "global_hash",
                &[
                    ("aggregation_strategy", "global_hash"),
                    ("hash_table_count_multiplier", "none"),
                ],
            ));
            dims.push(Dimension {
                name: "aggregation_strategy".into(),
                values,
            });
        }
        dims.push(named(
            "memory_access",
            MemoryAccess::ALL.iter().map(|v| v.name()),
        ));
        dims.push(named(
            "predication",
            Predication::ALL.iter().map(|v| v.name()),
        ));
        if hashing || aggregation {
            dims.push(named(
                "hash_table",
                HashTableImpl::ALL.iter().map(|v| v.name()),
            ));
            dims.push(named(
                "hash_function",
                HashFunction::ALL.iter().map(|v| v.name()),
            ));
        }
        if aggregation {
            dims.push(Dimension {
                name: "work_group_size".into(),
                values: WORK_GROUP_SIZES
                    .iter()
                    .map(|w| {
                        let w = w.to_string();
                        DimValue::new(w.clone(), &[("work_group_size", &w)])
                    })
                    .collect(),
            });
        }
        VariantSpace { dims }
    }

    pub fn for_workload(w: &Workload) -> Self {
        let has = |k| w.queries.iter().any(|q| q.set.terminal().kind == k);
        let hashing = w
            .queries
            .iter()
            .any(|q| q.set.programs.iter().any(|p| p.uses_hash()));
        Self::for_pipelines(
            has(PipelineKind::Projection),
            has(PipelineKind::Aggregation),
            hashing,
        )
    }

    pub fn base(&self) -> Point {
        vec![0; self.dims.len()]
    }

    /// Π|D_i|, saturating.
    pub fn size(&self) -> usize {
        self.dims
            .iter()
            .fold(1usize, |a, d| a.saturating_mul(d.values.len()))
    }

    /// Σ|D_i|.
    pub fn total_values(&self) -> usize {
        self.dims.iter().map(|d| d.values.len()).sum()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn config(&self, p: &[usize]) -> VariantConfiguration {
        let mut c = VariantConfiguration::default();
        for (d, &i) in self.dims.iter().zip(p) {
            for (k, v) in &d.values[i].settings {
                // settings come from this module and always parse
                let _ = c.set(k, v);
            }
        }
        c
    }

    pub fn label(&self, p: &[usize]) -> String {
        let parts: Vec<&str> = self
            .dims
            .iter()
            .zip(p)
            .map(|(d, &i)| d.values[i].label.as_str())
            .collect();
        parts.join(" ")
    }

    /// Every point, last dimension varying fastest.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.size());
        let mut p = self.base();
        loop {
            out.push(p.clone());
            let mut d = self.dims.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                p[d] += 1;
                if p[d] < self.dims[d].values.len() {
                    break;
                }
                p[d] = 0;
            }
        }
    }

    /// Dimension indices in search order: the named ones first, then the rest
    /// in declaration order.
    pub fn order(&self, feature_order: &[String]) -> Result<Vec<usize>, OptimizerError> {
        let mut out = Vec::new();
        for name in feature_order {
            let Some(i) = self.dim_index(name) else {
                // variant dimensions absent from this workload are skipped
                if KNOWN_DIMENSIONS.contains(&name.as_str()) {
                    continue;
                }
                return Err(OptimizerError::UnknownDimension(name.clone()));
            };
            if !out.contains(&i) {
                out.push(i);
            }
        }
        for i in 0..self.dims.len() {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        Ok(out)
    }
}

/// Dimension names produced by [`VariantSpace::for_pipelines`].
pub const KNOWN_DIMENSIONS: [&str; 7] = [
    "projection_strategy",
    "aggregation_strategy",
    "memory_access",
    "predication",
    "hash_table",
    "hash_function",
    "work_group_size",
];

fn named<'a>(name: &str, values: impl Iterator<Item = &'a str>) -> Dimension {
    let key: &'static str = match name {
        "memory_access" => "memory_access",
        "predication" => "predication",
        "hash_table" => "hash_table",
        _ => "hash_function",
    };
    Dimension {
        name: name.to_string(),
        values: values.map(|v| DimValue::new(v, &[(key, v)])).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOptions {
    /// Maximum number of sweeps.
    pub q: usize,
    /// Stop at the first sweep that does not lower the cost.
    pub early_termination: bool,
    /// Dimensions searched first, by name.
    pub feature_order: Vec<String>,
    /// Per-query metric above which a variant counts as pruned.
    pub prune_threshold: Option<f64>,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            q: 3,
            early_termination: false,
            feature_order: vec![
                "projection_strategy".into(),
                "aggregation_strategy".into(),
                "memory_access".into(),
            ],
            prune_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrace {
    /// Evaluations that missed the cache during this sweep.
    pub evaluations: usize,
    pub changed: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub point: Point,
    pub cost: f64,
    pub evaluations: usize,
    pub sweeps: Vec<SweepTrace>,
}

/// Coordinate descent over `space`. `cost` is called once per distinct point.
pub fn learn(
    space: &VariantSpace,
    options: &LearnOptions,
    mut cost: impl FnMut(&[usize]) -> f64,
) -> Result<LearnOutcome, OptimizerError> {
    let order = space.order(&options.feature_order)?;
    let mut cache: BTreeMap<Point, f64> = BTreeMap::new();
    let mut eval = |p: &Point, n: &mut usize| -> f64 {
        if let Some(&c) = cache.get(p) {
            return c;
        }
        *n += 1;
        let c = cost(p);
        cache.insert(p.clone(), c);
        c
    };
    let mut v = space.base();
    let mut sweeps = Vec::new();
    let mut total = 0;
    let mut last_cost = f64::INFINITY;
    for _ in 0..options.q {
        let last = v.clone();
        let mut n = 0;
        for &d in &order {
            let mut best_time = f64::INFINITY;
            let mut best = None;
            for value in 0..space.dims[d].values.len() {
                let mut probe = v.clone();
                probe[d] = value;
                let t = eval(&probe, &mut n);
                if t < best_time {
                    best_time = t;
                    best = Some(value);
                }
            }
            // every value pruned: keep the current one
            if let Some(b) = best {
                v[d] = b;
            }
        }
        total += n;
        let now = eval(&v, &mut total);
        let changed = v != last;
        sweeps.push(SweepTrace {
            evaluations: n,
            changed,
            cost: now,
        });
        if !changed || (options.early_termination && !(now < last_cost)) {
            break;
        }
        last_cost = now;
    }
    let cost = if sweeps.is_empty() {
        f64::NAN
    } else {
        eval(&v, &mut total)
    };
    Ok(LearnOutcome {
        point: v,
        cost,
        evaluations: total,
        sweeps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub point: Point,
    pub cost: f64,
}

/// Evaluates every point; ranks by cost with ties in enumeration order.
pub fn explore(
    space: &VariantSpace,
    budget: usize,
    mut cost: impl FnMut(&[usize]) -> f64,
) -> Result<Vec<Ranked>, OptimizerError> {
    let size = space.size();
    if size > budget {
        return Err(OptimizerError::BudgetExceeded { size, budget });
    }
    let mut out: Vec<Ranked> = space
        .points()
        .into_iter()
        .map(|p| {
            let c = cost(&p);
            Ranked { point: p, cost: c }
        })
        .collect();
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(out)
}

// ---------------------------------------------------------------------------
// measuring workloads

/// Result of running one query variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Cost units or seconds; +∞ when pruned or failed.
    pub metric: f64,
    pub pruned: bool,
    pub checksum: Option<u64>,
    /// `None` when no oracle was consulted.
    pub verified: Option<bool>,
    pub error: Option<String>,
    pub metrics: Option<ExecutionMetrics>,
}

impl Outcome {
    pub fn failed(error: String) -> Self {
        Outcome {
            metric: f64::INFINITY,
            pruned: false,
            checksum: None,
            verified: None,
            error: Some(error),
            metrics: None,
        }
    }
}

/// Where variants run.
pub trait Device {
    fn name(&self) -> &str;
    fn codegen_options(&self) -> CodegenOptions;
    /// Executes `plan`, returning the result, metrics and the metric that
    /// ranks variants. With `limit`, runs past it may stop early with
    /// [`RuntimeError::Pruned`].
    fn run(
        &mut self,
        plan: &KernelPlan,
        input: &InputData,
        limit: Option<f64>,
    ) -> Result<(ResultTable, ExecutionMetrics, f64), RuntimeError>;
}

/// Deterministic device backed by the cost model.
pub struct SimDevice {
    pub model: DeviceModel,
}

impl Device for SimDevice {
    fn name(&self) -> &str {
        &self.model.name
    }

    fn codegen_options(&self) -> CodegenOptions {
        self.model.codegen_options()
    }

    fn run(
        &mut self,
        plan: &KernelPlan,
        input: &InputData,
        _limit: Option<f64>,
    ) -> Result<(ResultTable, ExecutionMetrics, f64), RuntimeError> {
        let (r, m) = execute_kernel_plan(plan, input, &mut SimLauncher::new(&self.model))?;
        let cost = m.cost;
        Ok((r, m, cost))
    }
}

/// Queries sharing one set of input tables.
pub struct Workload {
    pub tables: Vec<ColumnTable>,
    pub input: InputData,
    pub queries: Vec<CompiledQuery>,
    /// Reference results, when verification is on.
    pub oracles: Vec<Option<ResultTable>>,
}

impl Workload {
    pub fn new(tables: Vec<ColumnTable>, queries: &[(&str, &str)]) -> Result<Self, OptimizerError> {
        if queries.is_empty() {
            return Err(OptimizerError::EmptyWorkload);
        }
        let compiled = queries
            .iter()
            .map(|(name, sql)| compile_query(name, sql, &tables))
            .collect::<Result<Vec<_>, _>>()?;
        let input = InputData::bind(&tables);
        Ok(Workload {
            oracles: vec![None; compiled.len()],
            tables,
            input,
            queries: compiled,
        })
    }

    /// Computes reference results so that every measurement is verified.
    pub fn with_oracles(mut self) -> Result<Self, OptimizerError> {
        for (i, q) in self.queries.iter().enumerate() {
            self.oracles[i] = Some(q.reference(&self.tables)?);
        }
        Ok(self)
    }

    /// The same workload restricted to query `i`.
    pub fn single(&self, i: usize) -> Workload {
        Workload {
            tables: self.tables.clone(),
            input: self.input.clone(),
            queries: vec![self.queries[i].clone()],
            oracles: vec![self.oracles[i].clone()],
        }
    }
}

/// Measures workload variants, caching per query on the configuration
/// actually compiled for it.
pub struct Measurer<'a, D: Device + ?Sized> {
    pub workload: &'a Workload,
    pub device: &'a mut D,
    pub prune_threshold: Option<f64>,
    cache: BTreeMap<(usize, VariantConfiguration), Outcome>,
    /// Query executions (cache misses).
    pub executions: usize,
}

impl<'a, D: Device + ?Sized> Measurer<'a, D> {
    pub fn new(workload: &'a Workload, device: &'a mut D, prune_threshold: Option<f64>) -> Self {
        Measurer {
            workload,
            device,
            prune_threshold,
            cache: BTreeMap::new(),
            executions: 0,
        }
    }

    pub fn measure_query(&mut self, qi: usize, config: &VariantConfiguration) -> &Outcome {
        let q = &self.workload.queries[qi];
        let key = (qi, q.set.canonical(config));
        if !self.cache.contains_key(&key) {
            self.executions += 1;
            let outcome = self.run(qi, config);
            self.cache.insert(key, outcome);
        }
        &self.cache[&key]
    }

    fn run(&mut self, qi: usize, config: &VariantConfiguration) -> Outcome {
        let w = self.workload;
        let q = &w.queries[qi];
        let plan = match q.kernel_plan(config, &w.tables, &self.device.codegen_options()) {
            Ok(p) => p,
            Err(e) => return Outcome::failed(e.to_string()),
        };
        match self.device.run(&plan, &w.input, self.prune_threshold) {
            Ok((result, metrics, metric)) => {
                let pruned = self.prune_threshold.is_some_and(|t| metric > t);
                let verified = w.oracles[qi].as_ref().map(|o| result.matches(o));
                let bad = verified == Some(false);
                Outcome {
                    metric: if pruned || bad { f64::INFINITY } else { metric },
                    pruned,
                    checksum: Some(result.checksum()),
                    verified,
                    error: bad.then(|| "result differs from reference".to_string()),
                    metrics: Some(metrics),
                }
            }
            Err(RuntimeError::Pruned) => Outcome {
                metric: f64::INFINITY,
                pruned: true,
                checksum: None,
                verified: None,
                error: None,
                metrics: None,
            },
            Err(e) => Outcome::failed(e.to_string()),
        }
    }

    /// Cached outcome of query `qi` under `config`, if measured.
    pub fn outcome(&self, qi: usize, config: &VariantConfiguration) -> Option<&Outcome> {
        let q = &self.workload.queries[qi];
        self.cache.get(&(qi, q.set.canonical(config)))
    }

    /// Sum over the workload; +∞ if any query is pruned or fails.
    pub fn measure_variant(&mut self, config: &VariantConfiguration) -> f64 {
        let mut total = 0.0;
        for qi in 0..self.workload.queries.len() {
            total += self.measure_query(qi, config).metric;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learned {
    pub config: VariantConfiguration,
    pub label: String,
    pub cost: f64,
    /// Distinct configurations evaluated.
    pub evaluations: usize,
    pub sweeps: usize,
    /// Query executions performed.
    pub executions: usize,
}

pub fn learn_variant_configuration<D: Device + ?Sized>(
    space: &VariantSpace,
    workload: &Workload,
    device: &mut D,
    options: &LearnOptions,
) -> Result<Learned, OptimizerError> {
    let mut m = Measurer::new(workload, device, options.prune_threshold);
    learn_with(&mut m, space, options)
}

/// Learns through an existing measurer, reusing its cache.
pub fn learn_with<D: Device + ?Sized>(
    m: &mut Measurer<'_, D>,
    space: &VariantSpace,
    options: &LearnOptions,
) -> Result<Learned, OptimizerError> {
    let before = m.executions;
    let outcome = learn(space, options, |p| m.measure_variant(&space.config(p)))?;
    Ok(Learned {
        config: space.config(&outcome.point),
        label: space.label(&outcome.point),
        cost: outcome.cost,
        evaluations: outcome.evaluations,
        sweeps: outcome.sweeps.len(),
        executions: m.executions - before,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedVariant {
    pub rank: usize,
    pub config: VariantConfiguration,
    pub label: String,
    pub cost: f64,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub best: VariantConfiguration,
    pub ranking: Vec<RankedVariant>,
    pub evaluations: usize,
    pub executions: usize,
}

pub fn full_exploration<D: Device + ?Sized>(
    space: &VariantSpace,
    workload: &Workload,
    device: &mut D,
    prune_threshold: Option<f64>,
    budget: usize,
) -> Result<Exploration, OptimizerError> {
    let mut m = Measurer::new(workload, device, prune_threshold);
    full_exploration_with(&mut m, space, budget)
}

/// Explores through an existing measurer, reusing its cache.
pub fn full_exploration_with<D: Device + ?Sized>(
    m: &mut Measurer<'_, D>,
    space: &VariantSpace,
    budget: usize,
) -> Result<Exploration, OptimizerError> {
    let before = m.executions;
    let ranked = explore(space, budget, |p| m.measure_variant(&space.config(p)))?;
    let evaluations = ranked.len();
    let ranking: Vec<RankedVariant> = ranked
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankedVariant {
            rank: i + 1,
            config: space.config(&r.point),
            label: space.label(&r.point),
            pruned: r.cost.is_infinite(),
            cost: r.cost,
        })
        .collect();
    Ok(Exploration {
        best: ranking[0].config,
        ranking,
        evaluations,
        executions: m.executions - before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::SUITE;
    use crate::storage::gen_star_schema;

    fn synthetic() -> (VariantSpace, [Vec<f64>; 3]) {
        let dims = [4usize, 7, 2]
            .iter()
            .enumerate()
            .map(|(i, &n)| Dimension {
                name: alloc::format!("d{i}"),
                values: (0..n).map(|v| DimValue::opaque(v.to_string())).collect(),
            })
            .collect();
        let penalties = [
            vec![5.0, 3.0, 9.0, 4.0],
            vec![8.0, 6.0, 7.0, 2.0, 9.0, 5.0, 3.0],
            vec![1.0, 0.5],
        ];
        (VariantSpace::new(dims).unwrap(), penalties)
    }

    fn separable(pen: &[Vec<f64>; 3]) -> impl Fn(&[usize]) -> f64 + '_ {
        move |p| p.iter().zip(pen).map(|(&i, d)| d[i]).sum()
    }

    fn opts(feature_order: Vec<String>) -> LearnOptions {
        LearnOptions {
            feature_order,
            ..LearnOptions::default()
        }
    }

    #[test]
    fn separable_space_converges_in_one_sweep() {
        let (space, pen) = synthetic();
        let f = separable(&pen);
        let out = learn(&space, &opts(vec![]), &f).unwrap();
        let all = explore(&space, 1000, &f).unwrap();
        assert_eq!(all.len(), 56);
        assert_eq!(out.point, all[0].point);
        assert_eq!(out.point, vec![1, 3, 1]);
        assert!(out.sweeps[0].evaluations <= 13);
        assert!(out.sweeps[0].changed);
        assert_eq!(out.sweeps.len(), 2);
        assert!(!out.sweeps[1].changed);
        assert!(out.evaluations <= space.total_values() * 3);
    }

    #[test]
    fn zero_sweeps_return_base() {
        let (space, pen) = synthetic();
        let mut calls = 0;
        let out = learn(
            &space,
            &LearnOptions {
                q: 0,
                ..opts(vec![])
            },
            |p| {
                calls += 1;
                separable(&pen)(p)
            },
        )
        .unwrap();
        assert_eq!(out.point, space.base());
        assert_eq!(calls, 0);
        assert_eq!(out.evaluations, 0);
    }

    #[test]
    fn ties_keep_the_first_value() {
        let (space, _) = synthetic();
        let out = learn(&space, &opts(vec![]), |_| 1.0).unwrap();
        assert_eq!(out.point, space.base());
        assert_eq!(out.sweeps.len(), 1);
    }

    #[test]
    fn pruned_values_are_never_chosen() {
        let (space, pen) = synthetic();
        let f = separable(&pen);
        let out = learn(&space, &opts(vec![]), |p| {
            if p[1] == 3 {
                f64::INFINITY
            } else {
                f(p)
            }
        })
        .unwrap();
        assert_eq!(out.point, vec![1, 6, 1]);
        assert!(out.cost.is_finite());
        let out = learn(&space, &opts(vec![]), |_| f64::INFINITY).unwrap();
        assert_eq!(out.point, space.base());
    }

    #[test]
    fn feature_order_changes_the_search_path() {
        let (space, pen) = synthetic();
        let f = separable(&pen);
        let a = learn(&space, &opts(vec!["d2".into(), "d1".into()]), &f).unwrap();
        assert_eq!(a.point, vec![1, 3, 1]);
        assert!(matches!(
            learn(&space, &opts(vec!["nope".into()]), &f),
            Err(OptimizerError::UnknownDimension(_))
        ));
        assert_eq!(space.order(&["d2".into()]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn interacting_dimensions_need_more_sweeps() {
        // d1 = 6 pays off only once d0 = 1 is committed
        let (space, pen) = synthetic();
        let f = separable(&pen);
        let g = |p: &[usize]| {
            let bonus = if p[0] == 1 && p[1] == 6 { -10.0 } else { 0.0 };
            f(p) + bonus
        };
        let out = learn(&space, &opts(vec!["d1".into(), "d0".into()]), g).unwrap();
        let best = explore(&space, 100, g).unwrap()[0].point.clone();
        assert_eq!(out.point, best);
        assert_eq!(out.point, vec![1, 6, 1]);
        assert_eq!(out.sweeps.len(), 3);
        // monotone sweeps
        for w in out.sweeps.windows(2) {
            assert!(w[1].cost <= w[0].cost);
        }
    }

    #[test]
    fn early_termination_stops_without_improvement() {
        // costs tie across the sweep so the configuration changes but the
        // cost does not
        let (space, _) = synthetic();
        let g = |p: &[usize]| {
            if p[2] == 1 || p == [0, 0, 0] {
                1.0
            } else {
                2.0
            }
        };
        let plain = learn(&space, &opts(vec!["d2".into()]), g).unwrap();
        let early = learn(
            &space,
            &LearnOptions {
                early_termination: true,
                ..opts(vec!["d2".into()])
            },
            g,
        )
        .unwrap();
        assert!(early.sweeps.len() <= plain.sweeps.len());
        assert!(early.evaluations <= plain.evaluations);
    }

    #[test]
    fn budget_is_enforced() {
        let (space, pen) = synthetic();
        assert_eq!(
            explore(&space, 10, separable(&pen)).unwrap_err(),
            OptimizerError::BudgetExceeded {
                size: 56,
                budget: 10
            }
        );
    }

    #[test]
    fn ranking_ties_follow_enumeration_order() {
        let (space, _) = synthetic();
        let r = explore(&space, 100, |p| (p[0] % 2) as f64).unwrap();
        assert_eq!(r[0].point, vec![0, 0, 0]);
        assert_eq!(r[1].point, vec![0, 0, 1]);
        assert_eq!(r[28].point, vec![1, 0, 0]);
    }

    #[test]
    fn suite_space_sizes() {
        let t = gen_star_schema(200, 1, 50);
        let sizes: Vec<usize> = SUITE
            .iter()
            .map(|q| {
                let w = Workload::new(t.clone(), &[(q.name, q.sql)]).unwrap();
                VariantSpace::for_workload(&w).size()
            })
            .collect();
        assert_eq!(sizes, vec![32, 32, 896, 896, 896]);
        let pts = VariantSpace::for_pipelines(true, false, false).points();
        let mut configs: Vec<_> = pts
            .iter()
            .map(|p| VariantSpace::for_pipelines(true, false, false).config(p))
            .collect();
        configs.sort();
        configs.dedup();
        assert_eq!(configs.len(), 32);
        let w = Workload::new(
            t,
            &[(SUITE[0].name, SUITE[0].sql), (SUITE[2].name, SUITE[2].sql)],
        )
        .unwrap();
        let s = VariantSpace::for_workload(&w);
        assert_eq!(s.total_values(), 8 + 8 + 2 + 2 + 2 + 2 + 7);
    }

    #[test]
    fn measured_costs_are_repeatable_and_cached() {
        let t = gen_star_schema(2000, 1, 50);
        let w = Workload::new(
            t,
            &[(SUITE[0].name, SUITE[0].sql), (SUITE[2].name, SUITE[2].sql)],
        )
        .unwrap()
        .with_oracles()
        .unwrap();
        let mut dev = SimDevice {
            model: DeviceModel::cpu_sim(),
        };
        let config = VariantConfiguration::default();
        let mut m = Measurer::new(&w, &mut dev, None);
        let a = m.measure_variant(&config);
        let b = m.measure_variant(&config);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(m.executions, 2);
        // fields irrelevant to projections do not trigger a new projection run
        let other = VariantConfiguration {
            work_group_size: Some(64),
            ..config
        };
        m.measure_variant(&other);
        assert_eq!(m.executions, 3);
        assert_eq!(m.measure_query(0, &config).verified, Some(true));

        let single = w.single(0);
        let mut m1 = Measurer::new(&single, &mut dev, None);
        let q0 = m1.measure_query(0, &config).metric;
        assert_eq!(m1.measure_variant(&config), q0);
    }

    #[test]
    fn pruned_variants_cost_infinity() {
        let t = gen_star_schema(2000, 1, 50);
        let w = Workload::new(t, &[(SUITE[0].name, SUITE[0].sql)]).unwrap();
        let mut dev = SimDevice {
            model: DeviceModel::cpu_sim(),
        };
        let mut m = Measurer::new(&w, &mut dev, Some(1.0));
        assert!(m
            .measure_variant(&VariantConfiguration::default())
            .is_infinite());
        assert!(m.measure_query(0, &VariantConfiguration::default()).pruned);
    }

    #[test]
    fn exploration_and_learning_on_small_data() {
        let t = gen_star_schema(3000, 2, 50);
        let w = Workload::new(t, &[(SUITE[1].name, SUITE[1].sql)]).unwrap();
        let space = VariantSpace::for_workload(&w);
        let mut dev = SimDevice {
            model: DeviceModel::gpu_sim(),
        };
        let ex = full_exploration(&space, &w, &mut dev, None, DEFAULT_EXPLORATION_BUDGET).unwrap();
        assert_eq!(ex.evaluations, 32);
        assert_eq!(ex.ranking.len(), 32);
        assert!(ex.ranking.windows(2).all(|p| p[0].cost <= p[1].cost));
        let learned =
            learn_variant_configuration(&space, &w, &mut dev, &LearnOptions::default()).unwrap();
        assert!(learned.evaluations <= 3 * space.total_values());
        assert!(learned.cost >= ex.ranking[0].cost);
        assert!(matches!(
            Workload::new(Vec::new(), &[]),
            Err(OptimizerError::EmptyWorkload)
        ));
    }
}
