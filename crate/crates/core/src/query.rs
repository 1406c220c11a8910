//! End-to-end query compilation and the benchmark query suite.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codegen::{self, CodegenError, CodegenOptions};
use crate::ir::{IrError, VariantConfiguration};
use crate::kernel::KernelPlan;
use crate::logical::{catalog_of, LogicalPlan};
use crate::planner::{self, PipelineSet, PlanError};
use crate::reference::{self, ReferenceError};
use crate::result::ResultTable;
use crate::runtime::{self, ExecutionMetrics, InputData, Launcher, RuntimeError};
use crate::sql::{self, SqlError};
use crate::storage::ColumnTable;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("invalid pipeline program: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledQuery {
    pub name: String,
    pub sql: String,
    pub plan: LogicalPlan,
    pub set: PipelineSet,
}

pub fn compile_query(
    name: &str,
    text: &str,
    tables: &[ColumnTable],
) -> Result<CompiledQuery, QueryError> {
    let plan = sql::parse_query(text, &catalog_of(tables))?;
    let set = planner::partition_into_pipelines(&plan, tables)?;
    Ok(CompiledQuery {
        name: name.to_string(),
        sql: text.to_string(),
        plan,
        set,
    })
}

impl CompiledQuery {
    /// Pipelines with `config` applied (after canonicalisation).
    pub fn specialise(&self, config: &VariantConfiguration) -> Result<PipelineSet, QueryError> {
        let set = self.set.specialise(&self.set.canonical(config))?;
        if let Some(d) = set.validate().first() {
            return Err(QueryError::Invalid(alloc::format!("{d:?}")));
        }
        Ok(set)
    }

    pub fn kernel_plan(
        &self,
        config: &VariantConfiguration,
        tables: &[ColumnTable],
        opts: &CodegenOptions,
    ) -> Result<KernelPlan, QueryError> {
        let set = self.specialise(config)?;
        Ok(codegen::assemble_kernel_plan(&set, tables, opts)?)
    }

    pub fn execute(
        &self,
        config: &VariantConfiguration,
        tables: &[ColumnTable],
        input: &InputData,
        opts: &CodegenOptions,
        launcher: &mut dyn Launcher,
    ) -> Result<(ResultTable, ExecutionMetrics), QueryError> {
        let plan = self.kernel_plan(config, tables, opts)?;
        Ok(runtime::execute_kernel_plan(&plan, input, launcher)?)
    }

    pub fn reference(&self, tables: &[ColumnTable]) -> Result<ResultTable, QueryError> {
        Ok(reference::reference_execute(&self.plan, tables)?)
    }

    pub fn variant_space(&self) -> Vec<VariantConfiguration> {
        self.set.variant_space()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SuiteGroup {
    Projection,
    Aggregation,
    Join,
}

impl SuiteGroup {
    pub fn name(self) -> &'static str {
        match self {
            SuiteGroup::Projection => "proj",
            SuiteGroup::Aggregation => "agg",
            SuiteGroup::Join => "join",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteQuery {
    pub name: &'static str,
    pub group: SuiteGroup,
    pub sql: &'static str,
}

pub const SUITE: [SuiteQuery; 5] = [
    SuiteQuery {
        name: "proj1",
        group: SuiteGroup::Projection,
        sql: "select lo_linenumber, lo_quantity, lo_revenue from lineorder where lo_quantity<25",
    },
    SuiteQuery {
        name: "proj2",
        group: SuiteGroup::Projection,
        sql: "select lo_linenumber, lo_quantity, lo_revenue from lineorder \
              where lo_quantity<25 and lo_discount<=3 and lo_discount>=1 and lo_revenue>4900000",
    },
    SuiteQuery {
        name: "agg1",
        group: SuiteGroup::Aggregation,
        sql: "select lo_shipmode, sum(lo_quantity) from lineorder group by lo_shipmode",
    },
    SuiteQuery {
        name: "agg2",
        group: SuiteGroup::Aggregation,
        sql: "select lo_partkey, sum(lo_quantity) from lineorder group by lo_partkey",
    },
    SuiteQuery {
        name: "join1",
        group: SuiteGroup::Join,
        sql: "select d_year, sum(lo_revenue) from date, supplier, lineorder \
              where lo_orderdate = d_datekey and lo_suppkey = s_suppkey and s_region = 'ASIA' \
              group by d_year",
    },
];

/// Suite queries by selector: `all`, `proj`, `agg`, `join` or a query name.
pub fn suite(selection: &str) -> Vec<SuiteQuery> {
    SUITE
        .iter()
        .filter(|q| selection == "all" || selection == q.group.name() || selection == q.name)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{
        AggregationStrategy, HashFunction, HashTableImpl, MemoryAccess, Predication,
        ProjectionStrategy,
    };
    use crate::kernel::render_kernel_text;
    use crate::runtime::{DeviceModel, SerialLauncher, SimLauncher};
    use crate::storage::gen_star_schema;

    fn data(n: usize) -> Vec<ColumnTable> {
        gen_star_schema(n, 7, 200)
    }

    fn check_all(q: &SuiteQuery, tables: &[ColumnTable], stride: usize) {
        let c = compile_query(q.name, q.sql, tables).unwrap();
        let want = c.reference(tables).unwrap();
        let input = InputData::bind(tables);
        let opts = CodegenOptions {
            compute_units: 3,
            ..CodegenOptions::default()
        };
        for (i, config) in c.variant_space().iter().enumerate() {
            if i % stride != 0 {
                continue;
            }
            for unroll in [1, 4] {
                let config = VariantConfiguration {
                    unroll_factor: unroll,
                    ..*config
                };
                let (got, _) = c
                    .execute(&config, tables, &input, &opts, &mut SerialLauncher)
                    .unwrap_or_else(|e| panic!("{} {}: {e}", q.name, config.label()));
                if let Err(m) = got.compare(&want) {
                    panic!("{} {}: {m}", q.name, config.label());
                }
            }
        }
    }

    #[test]
    fn projections_match_reference() {
        let t = data(3000);
        check_all(&SUITE[0], &t, 1);
        check_all(&SUITE[1], &t, 1);
    }

    #[test]
    fn aggregations_match_reference() {
        let t = data(2000);
        check_all(&SUITE[2], &t, 3);
        check_all(&SUITE[3], &t, 5);
    }

    #[test]
    fn join_matches_reference() {
        let t = data(2000);
        check_all(&SUITE[4], &t, 7);
    }

    #[test]
    fn assorted_queries_match_reference() {
        let t = data(1500);
        let queries = [
            "select count(*) from lineorder where lo_quantity < 10",
            "select min(lo_revenue), max(lo_revenue), avg(lo_quantity) from lineorder",
            "select lo_shipmode, count(*), avg(lo_discount) from lineorder where lo_discount > 5 group by lo_shipmode",
            "select lo_shipmode, lo_discount, min(lo_quantity), max(lo_revenue) from lineorder group by lo_shipmode, lo_discount",
            "select lo_quantity * 2 + 1, lo_revenue / 100 from lineorder where lo_quantity >= 49",
            "select s_region, sum(lo_revenue) from supplier, lineorder where lo_suppkey = s_suppkey group by s_region",
            "select lo_linenumber, d_year from date, lineorder where lo_orderdate = d_datekey and lo_quantity = 1",
            "select sum(lo_extendedprice * lo_discount) from lineorder where lo_discount <= 3",
        ];
        let input = InputData::bind(&t);
        for sql in queries {
            let c = compile_query("q", sql, &t).unwrap_or_else(|e| panic!("{sql}: {e}"));
            let want = c.reference(&t).unwrap();
            for (i, config) in c.variant_space().iter().enumerate() {
                if i % 11 != 0 {
                    continue;
                }
                let (got, _) = c
                    .execute(
                        config,
                        &t,
                        &input,
                        &CodegenOptions::default(),
                        &mut SerialLauncher,
                    )
                    .unwrap_or_else(|e| panic!("{sql} {}: {e}", config.label()));
                if let Err(m) = got.compare(&want) {
                    panic!("{sql} {}: {m}", config.label());
                }
            }
        }
    }

    #[test]
    fn empty_input() {
        let t = gen_star_schema(0, 7, 0);
        let input = InputData::bind(&t);
        let m = DeviceModel::gpu_sim();
        for q in &SUITE {
            let c = compile_query(q.name, q.sql, &t).unwrap();
            for config in c.variant_space().iter().step_by(13) {
                let (got, metrics) = c
                    .execute(
                        config,
                        &t,
                        &input,
                        &CodegenOptions::default(),
                        &mut SimLauncher::new(&m),
                    )
                    .unwrap();
                assert_eq!(got.row_count(), 0, "{} {}", q.name, config.label());
                let plan = c
                    .kernel_plan(config, &t, &CodegenOptions::default())
                    .unwrap();
                let launch: f64 = plan
                    .steps
                    .iter()
                    .filter_map(|s| match s {
                        crate::kernel::Step::Launch { global, .. } => Some(*global as f64),
                        _ => None,
                    })
                    .sum::<f64>()
                    * m.launch_overhead;
                assert_eq!(metrics.cost, launch);
            }
        }
    }

    #[test]
    fn empty_ungrouped_aggregates() {
        let t = data(500);
        let input = InputData::bind(&t);
        let c = compile_query(
            "q",
            "select sum(lo_quantity), count(*) from lineorder where lo_quantity > 1000",
            &t,
        )
        .unwrap();
        let config = VariantConfiguration::default();
        let (got, _) = c
            .execute(
                &config,
                &t,
                &input,
                &CodegenOptions::default(),
                &mut SerialLauncher,
            )
            .unwrap();
        assert_eq!(got.compare(&c.reference(&t).unwrap()), Ok(()));
        let c = compile_query(
            "q",
            "select min(lo_quantity) from lineorder where lo_quantity > 1000",
            &t,
        )
        .unwrap();
        let err = c
            .execute(
                &config,
                &t,
                &input,
                &CodegenOptions::default(),
                &mut SerialLauncher,
            )
            .unwrap_err();
        assert!(matches!(
            err,
            QueryError::Runtime(RuntimeError::EmptyAggregate(_))
        ));
        assert!(c.reference(&t).is_err());
    }

    #[test]
    fn kernel_counts_per_strategy() {
        let t = data(100);
        let c = compile_query("proj1", SUITE[0].sql, &t).unwrap();
        let opts = CodegenOptions::default();
        let multi = VariantConfiguration {
            projection_strategy: ProjectionStrategy::MultiPass,
            thread_multiplier: 8,
            ..VariantConfiguration::default()
        };
        let p = c.kernel_plan(&multi, &t, &opts).unwrap();
        assert_eq!((p.kernels.len(), p.prefix_sum_count()), (2, 1));
        let p = c
            .kernel_plan(&VariantConfiguration::default(), &t, &opts)
            .unwrap();
        assert_eq!((p.kernels.len(), p.prefix_sum_count()), (1, 0));

        let c = compile_query("agg1", SUITE[2].sql, &t).unwrap();
        let global = VariantConfiguration {
            aggregation_strategy: AggregationStrategy::GlobalHash,
            ..VariantConfiguration::default()
        };
        let p = c.kernel_plan(&global, &t, &opts).unwrap();
        assert_eq!(p.kernels.len(), 1);
        let merges: Vec<_> = p
            .steps
            .iter()
            .filter_map(|s| match s {
                crate::kernel::Step::MergeHashTables(m) => Some(m.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(merges.len(), 1);
        let text = render_kernel_text(&p);
        assert_eq!(text.matches("\nkernel ").count(), 1);
    }

    #[test]
    fn render_is_deterministic_and_mentions_modes() {
        let t = data(100);
        let c = compile_query("proj2", SUITE[1].sql, &t).unwrap();
        let opts = CodegenOptions::default();
        let config = VariantConfiguration {
            projection_strategy: ProjectionStrategy::MultiPass,
            thread_multiplier: 64,
            memory_access: MemoryAccess::Coalesced,
            predication: Predication::Predicated,
            ..VariantConfiguration::default()
        };
        let a = render_kernel_text(&c.kernel_plan(&config, &t, &opts).unwrap());
        let b = render_kernel_text(&c.kernel_plan(&config, &t, &opts).unwrap());
        assert_eq!(a, b);
        assert!(a.contains("HostPrefixSum"));
        assert!(a.contains("result_increment = (result_increment &"));
        assert!(a.contains("for (id = tid; id < 100; id += 512)"), "{a}");

        let c = compile_query("join1", SUITE[4].sql, &t).unwrap();
        let config = VariantConfiguration {
            hash_table: HashTableImpl::Cuckoo,
            hash_function: HashFunction::MultiplyShift,
            ..VariantConfiguration::default()
        };
        let text = render_kernel_text(&c.kernel_plan(&config, &t, &opts).unwrap());
        assert!(text.contains("HostCheckRebuild"));
        assert!(text.contains("hash_multiply_shift("));
        assert_eq!(text.matches("\nkernel ").count(), 3);
    }

    #[test]
    fn suite_selection() {
        assert_eq!(suite("all").len(), 5);
        assert_eq!(suite("proj").len(), 2);
        assert_eq!(suite("agg").len(), 2);
        assert_eq!(suite("join").len(), 1);
        assert_eq!(suite("agg2")[0].name, "agg2");
        assert!(suite("nothing").is_empty());
    }
}
