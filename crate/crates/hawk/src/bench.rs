//! The benchmark suite: explore or learn each suite query, verifying every
//! variant against the reference executor.

use std::time::{SystemTime, UNIX_EPOCH};

use hawk_core::optimizer::{
    full_exploration_with, learn_with, Device, LearnOptions, Measurer, OptimizerError,
    VariantSpace, Workload, DEFAULT_EXPLORATION_BUDGET,
};
use hawk_core::query::{suite, SuiteQuery};
use hawk_core::storage::{gen_star_schema, ColumnTable};

use crate::report::{BenchRow, BenchmarkReport, ReportError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub rows: usize,
    pub seed: u64,
    pub dimension_rows: usize,
    pub prune_threshold: Option<f64>,
    /// Run the learner instead of full exploration.
    pub learn: Option<LearnOptions>,
    pub verify: bool,
    pub budget: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            rows: 100_000,
            seed: 42,
            dimension_rows: 1000,
            prune_threshold: None,
            learn: None,
            verify: true,
            budget: DEFAULT_EXPLORATION_BUDGET,
        }
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Suite tables for `opts`.
pub fn suite_tables(opts: &BenchOptions) -> Vec<ColumnTable> {
    gen_star_schema(opts.rows, opts.seed, opts.dimension_rows)
}

pub fn run_benchmark_suite(
    device: &mut dyn Device,
    selection: &str,
    opts: &BenchOptions,
) -> Result<BenchmarkReport, BenchError> {
    let queries = suite(selection);
    if queries.is_empty() {
        return Err(ReportError::EmptySuite.into());
    }
    run_queries(device, &queries, &suite_tables(opts), opts)
}

pub fn run_queries(
    device: &mut dyn Device,
    queries: &[SuiteQuery],
    tables: &[ColumnTable],
    opts: &BenchOptions,
) -> Result<BenchmarkReport, BenchError> {
    let mut report = BenchmarkReport::default();
    for q in queries {
        let mut w = Workload::new(tables.to_vec(), &[(q.name, q.sql)])?;
        if opts.verify {
            w = w.with_oracles()?;
        }
        let oracle = w.oracles[0].as_ref().map(|o| o.checksum());
        let space = VariantSpace::for_workload(&w);
        let device_name = device.name().to_string();
        let mut m = Measurer::new(&w, device, opts.prune_threshold);
        let ranked: Vec<(hawk_core::ir::VariantConfiguration, usize)> = match &opts.learn {
            Some(lo) => {
                let lo = LearnOptions {
                    prune_threshold: opts.prune_threshold,
                    ..lo.clone()
                };
                let l = learn_with(&mut m, &space, &lo)?;
                vec![(l.config, l.evaluations)]
            }
            None => {
                let ex = full_exploration_with(&mut m, &space, opts.budget)?;
                let n = ex.evaluations;
                ex.ranking.into_iter().map(|r| (r.config, n)).collect()
            }
        };
        let q0 = &w.queries[0];
        for (i, (config, evaluations)) in ranked.into_iter().enumerate() {
            let outcome = m.measure_query(0, &config).clone();
            report.rows.push(BenchRow {
                query: q.name.to_string(),
                device: device_name.clone(),
                rank: i + 1,
                config: q0.set.canonical(&config),
                metric: outcome.metric,
                pruned: outcome.pruned,
                verified: outcome.verified,
                checksum: outcome.checksum,
                oracle_checksum: oracle,
                evaluations,
                timestamp: now_unix(),
            });
        }
    }
    Ok(report)
}
