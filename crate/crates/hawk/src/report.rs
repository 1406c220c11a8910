//! Benchmark reports as CSV and aligned text.

use std::fs;
use std::path::{Path, PathBuf};

use hawk_core::ir::VariantConfiguration;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no suite query matches the selection")]
    EmptySuite,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// One measured (query, configuration, device) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub query: String,
    pub device: String,
    pub rank: usize,
    pub config: VariantConfiguration,
    /// Simulated cost or seconds; +∞ when pruned or failed.
    pub metric: f64,
    pub pruned: bool,
    pub verified: Option<bool>,
    pub checksum: Option<u64>,
    pub oracle_checksum: Option<u64>,
    /// Configurations evaluated for this query.
    pub evaluations: usize,
    /// Unix seconds when the row was produced.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
}

pub const COLUMNS: [&str; 20] = [
    "query",
    "device",
    "rank",
    "projection_strategy",
    "aggregation_strategy",
    "thread_multiplier",
    "memory_access",
    "predication",
    "hash_table",
    "hash_function",
    "work_group_size",
    "hash_table_count_multiplier",
    "unroll_factor",
    "metric",
    "pruned",
    "verified",
    "checksum",
    "oracle_checksum",
    "evaluations",
    "timestamp",
];

fn opt_u32(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn opt_hex(v: Option<u64>) -> String {
    v.map(|x| format!("{x:016x}")).unwrap_or_else(|| "-".into())
}

fn fmt_metric(m: f64) -> String {
    if m.is_infinite() {
        "inf".into()
    } else {
        // round-trips exactly
        format!("{m:?}")
    }
}

impl BenchRow {
    pub fn fields(&self) -> Vec<String> {
        let c = &self.config;
        vec![
            self.query.clone(),
            self.device.clone(),
            self.rank.to_string(),
            c.projection_strategy.to_string(),
            c.aggregation_strategy.to_string(),
            c.thread_multiplier.to_string(),
            c.memory_access.to_string(),
            c.predication.to_string(),
            c.hash_table.to_string(),
            c.hash_function.to_string(),
            opt_u32(c.work_group_size),
            opt_u32(c.hash_table_count_multiplier),
            c.unroll_factor.to_string(),
            fmt_metric(self.metric),
            self.pruned.to_string(),
            match self.verified {
                Some(true) => "yes".into(),
                Some(false) => "no".into(),
                None => "-".into(),
            },
            opt_hex(self.checksum),
            opt_hex(self.oracle_checksum),
            self.evaluations.to_string(),
            self.timestamp.to_string(),
        ]
    }

    fn from_fields(f: &[String]) -> Result<Self, ReportError> {
        let bad = |what: &str| ReportError::Malformed(format!("bad {what}: {f:?}"));
        if f.len() != COLUMNS.len() {
            return Err(bad("field count"));
        }
        let mut config = VariantConfiguration::default();
        for (i, key) in COLUMNS.iter().enumerate().take(13).skip(3) {
            config.set(key, &f[i]).map_err(ReportError::Malformed)?;
        }
        let hex = |s: &str| -> Result<Option<u64>, ReportError> {
            if s == "-" {
                Ok(None)
            } else {
                u64::from_str_radix(s, 16)
                    .map(Some)
                    .map_err(|_| bad("checksum"))
            }
        };
        Ok(BenchRow {
            query: f[0].clone(),
            device: f[1].clone(),
            rank: f[2].parse().map_err(|_| bad("rank"))?,
            config,
            metric: if f[13] == "inf" {
                f64::INFINITY
            } else {
                f[13].parse().map_err(|_| bad("metric"))?
            },
            pruned: f[14].parse().map_err(|_| bad("pruned"))?,
            verified: match f[15].as_str() {
                "yes" => Some(true),
                "no" => Some(false),
                "-" => None,
                _ => return Err(bad("verified")),
            },
            checksum: hex(&f[16])?,
            oracle_checksum: hex(&f[17])?,
            evaluations: f[18].parse().map_err(|_| bad("evaluations"))?,
            timestamp: f[19].parse().map_err(|_| bad("timestamp"))?,
        })
    }
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        // writing into memory cannot fail
        w.write_record(COLUMNS).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r.fields()).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| ReportError::Malformed(e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        if header != COLUMNS {
            return Err(ReportError::Malformed("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ReportError::Malformed(e.to_string()))?;
            let f: Vec<String> = rec.iter().map(String::from).collect();
            rows.push(BenchRow::from_fields(&f)?);
        }
        Ok(BenchmarkReport { rows })
    }

    /// Columns padded to equal width.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> =
            std::iter::once(COLUMNS.iter().map(|s| s.to_string()).collect())
                .chain(self.rows.iter().map(|r| r.fields()))
                .collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Rows whose result disagreed with the reference.
    pub fn mismatches(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.verified == Some(false))
            .count()
    }
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.txt`.
pub fn emit_report(
    report: &BenchmarkReport,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::EmptySuite);
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, report.to_csv()).map_err(io(&csv_path))?;
    let txt_path = dir.join(format!("{stem}.txt"));
    fs::write(&txt_path, report.to_text()).map_err(io(&txt_path))?;
    Ok(vec![csv_path, txt_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use hawk_core::ir::{MemoryAccess, ProjectionStrategy};

    fn sample() -> BenchmarkReport {
        let mut rows = Vec::new();
        for (i, m) in [1.5, 0.1 + 0.2, f64::INFINITY].into_iter().enumerate() {
            rows.push(BenchRow {
                query: "proj1".into(),
                device: "cpu-sim".into(),
                rank: i + 1,
                config: VariantConfiguration {
                    projection_strategy: ProjectionStrategy::MultiPass,
                    thread_multiplier: 64,
                    memory_access: MemoryAccess::Coalesced,
                    work_group_size: (i == 1).then_some(32),
                    ..VariantConfiguration::default()
                },
                metric: m,
                pruned: m.is_infinite(),
                verified: if m.is_infinite() { None } else { Some(true) },
                checksum: Some(0xdead_beef_0000_0001 + i as u64),
                oracle_checksum: Some(0xdead_beef_0000_0001),
                evaluations: 32,
                timestamp: 1_700_000_000,
            });
        }
        BenchmarkReport { rows }
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let text = r.to_csv();
        assert_eq!(text, r.to_csv());
        assert_eq!(BenchmarkReport::from_csv(&text).unwrap(), r);
    }

    #[test]
    fn text_is_aligned() {
        let t = sample().to_text();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        let col = lines[0].find("metric").unwrap();
        for l in &lines[1..] {
            assert_ne!(&l[col - 2..col], "  x");
            assert_eq!(&l[col - 2..col], "  ");
        }
    }

    #[test]
    fn empty_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&BenchmarkReport::default(), dir.path(), "r"),
            Err(ReportError::EmptySuite)
        ));
        let files = emit_report(&sample(), dir.path(), "r").unwrap();
        assert_eq!(files.len(), 2);
        assert!(BenchmarkReport::from_csv("a,b\n1,2\n").is_err());
    }
}
