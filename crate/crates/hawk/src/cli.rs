//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hawk_core::ir::VariantConfiguration;
use hawk_core::kernel::render_kernel_text;
use hawk_core::optimizer::{
    full_exploration_with, learn_with, LearnOptions, Measurer, VariantSpace, Workload,
    DEFAULT_EXPLORATION_BUDGET,
};
use hawk_core::query::{compile_query, suite};
use hawk_core::result::ResultTable;
use hawk_core::storage::{gen_star_schema, ColumnTable};

use crate::bench::{now_unix, run_benchmark_suite, BenchOptions};
use crate::csvio::{load_dataset, save_dataset};
use crate::device::AnyDevice;
use crate::report::{emit_report, BenchRow, BenchmarkReport};

#[derive(Parser, Debug)]
#[command(name = "hawk", version, about = "Hardware-adaptive query compiler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the star-schema dataset as CSV files
    Gen {
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        dimension_rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one query variant
    Run {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        variant: VariantArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cpu-sim")]
        device: String,
        #[arg(long)]
        no_verify: bool,
        /// Write result rows here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every variant of a query
    Explore {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cpu-sim")]
        device: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prune_threshold: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_EXPLORATION_BUDGET)]
        budget: usize,
        #[arg(long)]
        no_verify: bool,
    },
    /// Learn a variant configuration for a workload
    Learn {
        /// Directory of .sql files, or a suite selection (all, proj, agg, join, or a query name)
        #[arg(long)]
        workload: String,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cpu-sim")]
        device: String,
        /// Output file; a directory with --per-query
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        q: usize,
        #[arg(long)]
        early_stop: bool,
        /// Comma-separated dimension names searched first
        #[arg(long, value_delimiter = ',')]
        feature_order: Option<Vec<String>>,
        #[arg(long)]
        prune_threshold: Option<f64>,
        /// Learn one configuration per query
        #[arg(long)]
        per_query: bool,
    },
    /// Explore (or learn) every selected suite query and write reports
    Bench {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value = "cpu-sim")]
        device: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        dimension_rows: usize,
        #[arg(long)]
        learn: bool,
        #[arg(long)]
        prune_threshold: Option<f64>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Print the generated kernels of one variant
    EmitKernel {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        variant: VariantArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cpu-sim")]
        device: String,
    },
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// SQL file or suite query name
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub sql: Option<String>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Directory of CSV tables written by `gen`
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub dimension_rows: usize,
}

#[derive(Args, Debug)]
pub struct VariantArgs {
    /// Configuration file (key = value lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra settings, e.g. --set memory_access=coalesced
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub access: Option<String>,
    #[arg(long)]
    pub predication: Option<String>,
    #[arg(long)]
    pub hash_table: Option<String>,
    #[arg(long)]
    pub hash_function: Option<String>,
    #[arg(long)]
    pub aggregation: Option<String>,
    #[arg(long)]
    pub work_group_size: Option<String>,
    #[arg(long)]
    pub tables: Option<String>,
    #[arg(long)]
    pub unroll: Option<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Verify(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl QueryArgs {
    /// (name, sql)
    fn resolve(&self) -> Result<(String, String), Failure> {
        match (&self.query, &self.sql) {
            (Some(_), Some(_)) => Err(usage("give either --query or --sql")),
            (None, None) => Err(usage("a query is required (--query or --sql)")),
            (None, Some(s)) => Ok(("query".into(), s.clone())),
            (Some(q), None) => {
                let path = Path::new(q);
                if path.is_file() {
                    let sql = fs::read_to_string(path)?;
                    let name = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().to_string())
                        .unwrap_or_else(|| "query".into());
                    return Ok((name, sql));
                }
                match suite(q).as_slice() {
                    [one] if one.name == q => Ok((one.name.into(), one.sql.into())),
                    _ => Err(usage(format!("`{q}` is neither a file nor a suite query"))),
                }
            }
        }
    }
}

impl DataArgs {
    fn tables(&self) -> Result<Vec<ColumnTable>, Failure> {
        match &self.data {
            Some(dir) => Ok(load_dataset(dir)?),
            None => Ok(gen_star_schema(self.rows, self.seed, self.dimension_rows)),
        }
    }
}

impl VariantArgs {
    fn resolve(&self) -> Result<VariantConfiguration, Failure> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                VariantConfiguration::from_kv(&text)
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => VariantConfiguration::default(),
        };
        let flags = [
            ("projection_strategy", &self.strategy),
            ("thread_multiplier", &self.threads),
            ("memory_access", &self.access),
            ("predication", &self.predication),
            ("hash_table", &self.hash_table),
            ("hash_function", &self.hash_function),
            ("aggregation_strategy", &self.aggregation),
            ("work_group_size", &self.work_group_size),
            ("hash_table_count_multiplier", &self.tables),
            ("unroll_factor", &self.unroll),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, v).map_err(usage)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k.trim(), v.trim()).map_err(usage)?;
        }
        Ok(c)
    }
}

fn write_result(r: &ResultTable, out: &mut dyn Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(r.columns.iter().map(|(n, _)| n.as_str()))?;
    for row in &r.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

fn cmd_gen(rows: usize, seed: u64, dimension_rows: usize, out: &Path) -> Outcome {
    let tables = gen_star_schema(rows, seed, dimension_rows);
    save_dataset(out, &tables)?;
    for t in &tables {
        eprintln!("{}: {} rows", t.name(), t.row_count());
    }
    Ok(())
}

fn cmd_run(
    query: &QueryArgs,
    variant: &VariantArgs,
    data: &DataArgs,
    device: &str,
    no_verify: bool,
    out: Option<&Path>,
) -> Outcome {
    let (name, sql) = query.resolve()?;
    let config = variant.resolve()?;
    let tables = data.tables()?;
    let mut dev = AnyDevice::resolve(device).map_err(|e| usage(e.to_string()))?;
    let q = compile_query(&name, &sql, &tables).map_err(|e| usage(e.to_string()))?;
    let d = dev.as_dyn();
    let plan = q.kernel_plan(&config, &tables, &d.codegen_options())?;
    let input = hawk_core::runtime::InputData::bind(&tables);
    let (result, metrics, metric) = d.run(&plan, &input, None)?;
    match out {
        Some(p) => write_result(&result, &mut fs::File::create(p)?)?,
        None => write_result(&result, &mut std::io::stdout().lock())?,
    }
    eprintln!("variant: {}", q.set.canonical(&config).label());
    eprintln!("metric: {metric}");
    eprintln!("{}", hawk_core::runtime::ExecutionMetrics::csv_header());
    eprintln!("{}", metrics.csv_row());
    if !no_verify {
        let want = q.reference(&tables)?;
        if let Err(m) = result.compare(&want) {
            return Err(Failure::Verify(format!(
                "result differs from reference: {m}"
            )));
        }
        eprintln!("verified: checksum {:016x}", result.checksum());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_explore(
    query: &QueryArgs,
    data: &DataArgs,
    device: &str,
    out: &Path,
    prune: Option<f64>,
    budget: usize,
    no_verify: bool,
) -> Outcome {
    let (name, sql) = query.resolve()?;
    let tables = data.tables()?;
    let mut dev = AnyDevice::resolve(device).map_err(|e| usage(e.to_string()))?;
    let prune = prune.or(dev.default_prune());
    let mut w = Workload::new(tables, &[(&name, &sql)]).map_err(|e| usage(e.to_string()))?;
    if !no_verify {
        w = w.with_oracles()?;
    }
    let oracle = w.oracles[0].as_ref().map(|o| o.checksum());
    let space = VariantSpace::for_workload(&w);
    let d = dev.as_dyn();
    let device_name = d.name().to_string();
    let mut m = Measurer::new(&w, d, prune);
    let ex = full_exploration_with(&mut m, &space, budget)?;
    let mut report = BenchmarkReport::default();
    for r in &ex.ranking {
        let o = m.measure_query(0, &r.config).clone();
        report.rows.push(BenchRow {
            query: name.clone(),
            device: device_name.clone(),
            rank: r.rank,
            config: w.queries[0].set.canonical(&r.config),
            metric: o.metric,
            pruned: o.pruned,
            verified: o.verified,
            checksum: o.checksum,
            oracle_checksum: oracle,
            evaluations: ex.evaluations,
            timestamp: now_unix(),
        });
    }
    fs::write(out, report.to_csv())?;
    eprintln!(
        "{} variants, best {} ({})",
        ex.evaluations, ex.ranking[0].label, ex.ranking[0].cost
    );
    if report.mismatches() > 0 {
        return Err(Failure::Verify(format!(
            "{} variants differ from the reference",
            report.mismatches()
        )));
    }
    Ok(())
}

fn workload_queries(spec: &str) -> Result<Vec<(String, String)>, Failure> {
    let dir = Path::new(spec);
    if dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "sql"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            let name = f
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            out.push((name, fs::read_to_string(&f)?));
        }
        if out.is_empty() {
            return Err(usage(format!("no .sql files in {spec}")));
        }
        return Ok(out);
    }
    let qs = suite(spec);
    if qs.is_empty() {
        return Err(usage(format!(
            "`{spec}` is neither a directory nor a suite selection"
        )));
    }
    Ok(qs
        .iter()
        .map(|q| (q.name.to_string(), q.sql.to_string()))
        .collect())
}

fn learned_file(l: &hawk_core::optimizer::Learned, device: &str, queries: &[String]) -> String {
    format!(
        "# device: {device}\n# workload: {}\n# cost: {}\n# evaluations: {}\n# sweeps: {}\n{}",
        queries.join(" "),
        l.cost,
        l.evaluations,
        l.sweeps,
        l.config.to_kv()
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_learn(
    workload: &str,
    data: &DataArgs,
    device: &str,
    out: &Path,
    options: LearnOptions,
    per_query: bool,
) -> Outcome {
    let queries = workload_queries(workload)?;
    let tables = data.tables()?;
    let mut dev = AnyDevice::resolve(device).map_err(|e| usage(e.to_string()))?;
    let options = LearnOptions {
        prune_threshold: options.prune_threshold.or(dev.default_prune()),
        ..options
    };
    let refs: Vec<(&str, &str)> = queries
        .iter()
        .map(|(n, s)| (n.as_str(), s.as_str()))
        .collect();
    let w = Workload::new(tables, &refs).map_err(|e| usage(e.to_string()))?;
    let d = dev.as_dyn();
    let device_name = d.name().to_string();
    if per_query {
        fs::create_dir_all(out)?;
        for (i, (name, _)) in queries.iter().enumerate() {
            let single = w.single(i);
            let space = VariantSpace::for_workload(&single);
            let mut m = Measurer::new(&single, &mut *d, options.prune_threshold);
            let l = learn_with(&mut m, &space, &options)?;
            fs::write(
                out.join(format!("{name}.cfg")),
                learned_file(&l, &device_name, std::slice::from_ref(name)),
            )?;
            eprintln!(
                "{name}: {} (cost {}, {} evaluations)",
                l.label, l.cost, l.evaluations
            );
        }
        return Ok(());
    }
    let space = VariantSpace::for_workload(&w);
    let mut m = Measurer::new(&w, d, options.prune_threshold);
    let l = learn_with(&mut m, &space, &options)?;
    let names: Vec<String> = queries.iter().map(|(n, _)| n.clone()).collect();
    fs::write(out, learned_file(&l, &device_name, &names))?;
    eprintln!(
        "learned {} (cost {}, {} evaluations, {} sweeps)",
        l.label, l.cost, l.evaluations, l.sweeps
    );
    Ok(())
}

fn cmd_emit(query: &QueryArgs, variant: &VariantArgs, data: &DataArgs, device: &str) -> Outcome {
    let (name, sql) = query.resolve()?;
    let config = variant.resolve()?;
    let tables = data.tables()?;
    let mut dev = AnyDevice::resolve(device).map_err(|e| usage(e.to_string()))?;
    let q = compile_query(&name, &sql, &tables).map_err(|e| usage(e.to_string()))?;
    let plan = q.kernel_plan(&config, &tables, &dev.as_dyn().codegen_options())?;
    print!("{}", render_kernel_text(&plan));
    Ok(())
}

pub fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Gen {
            rows,
            seed,
            dimension_rows,
            out,
        } => cmd_gen(rows, seed, dimension_rows, &out),
        Command::Run {
            query,
            variant,
            data,
            device,
            no_verify,
            out,
        } => cmd_run(&query, &variant, &data, &device, no_verify, out.as_deref()),
        Command::Explore {
            query,
            data,
            device,
            out,
            prune_threshold,
            budget,
            no_verify,
        } => cmd_explore(
            &query,
            &data,
            &device,
            &out,
            prune_threshold,
            budget,
            no_verify,
        ),
        Command::Learn {
            workload,
            data,
            device,
            out,
            q,
            early_stop,
            feature_order,
            prune_threshold,
            per_query,
        } => {
            let mut options = LearnOptions {
                q,
                early_termination: early_stop,
                prune_threshold,
                ..LearnOptions::default()
            };
            if let Some(f) = feature_order {
                options.feature_order = f;
            }
            cmd_learn(&workload, &data, &device, &out, options, per_query)
        }
        Command::Bench {
            suite: selection,
            device,
            out,
            rows,
            seed,
            dimension_rows,
            learn,
            prune_threshold,
            no_verify,
        } => {
            let mut dev = AnyDevice::resolve(&device).map_err(|e| usage(e.to_string()))?;
            let opts = BenchOptions {
                rows,
                seed,
                dimension_rows,
                prune_threshold: prune_threshold.or(dev.default_prune()),
                learn: learn.then(LearnOptions::default),
                verify: !no_verify,
                budget: DEFAULT_EXPLORATION_BUDGET,
            };
            let report = run_benchmark_suite(dev.as_dyn(), &selection, &opts)?;
            let files = emit_report(&report, &out, "report")?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            if report.mismatches() > 0 {
                return Err(Failure::Verify(format!(
                    "{} variants differ from the reference",
                    report.mismatches()
                )));
            }
            Ok(())
        }
        Command::EmitKernel {
            query,
            variant,
            data,
            device,
        } => cmd_emit(&query, &variant, &data, &device),
    }
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Verify(m) => eprintln!("verification failed: {m}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
