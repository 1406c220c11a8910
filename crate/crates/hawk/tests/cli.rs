use std::path::Path;
use std::process::{Command, Output};

fn hawk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hawk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hawk(&[]).status.code(), Some(2));
    assert_eq!(hawk(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        hawk(&[
            "run",
            "--query",
            "proj1",
            "--rows",
            "10",
            "--set",
            "colour=blue"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        hawk(&["run", "--query", "nope", "--rows", "10"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hawk(&["run", "--query", "proj1", "--rows", "10", "--device", "tpu"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hawk(&["run", "--sql", "select from", "--rows", "10"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(hawk(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = hawk(&["run", "--query", "proj1", "--data", p(&missing)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn generated_data_runs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = hawk(&[
        "gen",
        "--rows",
        "3000",
        "--dimension-rows",
        "60",
        "--seed",
        "4",
        "--out",
        p(&data),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("lineorder.csv").is_file());

    let o = hawk(&[
        "run",
        "--query",
        "agg2",
        "--data",
        p(&data),
        "--strategy",
        "multi_pass",
        "--threads",
        "8",
        "--aggregation",
        "local_hash",
        "--tables",
        "16",
        "--access",
        "coalesced",
        "--predication",
        "predicated",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("verified: checksum"));
    assert!(stdout(&o).lines().count() > 1);

    let o = hawk(&[
        "run",
        "--sql",
        "select lo_quantity from lineorder where lo_quantity < 3",
        "--data",
        p(&data),
        "--device",
        "gpu-sim",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("lo_quantity\n"));

    let sql = dir.path().join("q.sql");
    std::fs::write(&sql, "select d_year, sum(lo_revenue) from date, lineorder where lo_orderdate = d_datekey group by d_year").unwrap();
    let o = hawk(&[
        "run",
        "--query",
        p(&sql),
        "--data",
        p(&data),
        "--device",
        "host",
        "--hash-table",
        "cuckoo",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn emit_kernel_is_deterministic() {
    let args = [
        "emit-kernel",
        "--query",
        "proj2",
        "--rows",
        "500",
        "--strategy",
        "multi_pass",
        "--threads",
        "64",
    ];
    let a = hawk(&args);
    let b = hawk(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.matches("kernel ").count() >= 2, "{text}");
}

#[test]
fn explore_and_learn_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ranking = dir.path().join("proj1.csv");
    let o = hawk(&[
        "explore",
        "--query",
        "proj1",
        "--rows",
        "2000",
        "--dimension-rows",
        "50",
        "--out",
        p(&ranking),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&ranking).unwrap();
    assert_eq!(text.lines().count(), 33);

    let learned = dir.path().join("learned.cfg");
    let o = hawk(&[
        "learn",
        "--workload",
        "proj",
        "--rows",
        "2000",
        "--dimension-rows",
        "50",
        "--device",
        "gpu-sim",
        "--out",
        p(&learned),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = std::fs::read_to_string(&learned).unwrap();
    assert!(cfg.contains("projection_strategy"), "{cfg}");

    let o = hawk(&[
        "run",
        "--query",
        "proj1",
        "--rows",
        "2000",
        "--dimension-rows",
        "50",
        "--config",
        p(&learned),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let per = dir.path().join("per");
    let o = hawk(&[
        "learn",
        "--workload",
        "proj",
        "--per-query",
        "--early-stop",
        "--rows",
        "2000",
        "--dimension-rows",
        "50",
        "--out",
        p(&per),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(per.join("proj1.cfg").is_file() && per.join("proj2.cfg").is_file());

    let o = hawk(&[
        "learn",
        "--workload",
        "proj",
        "--rows",
        "100",
        "--feature-order",
        "colour",
        "--out",
        p(&learned),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn bench_writes_csv_and_text_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = hawk(&[
        "bench",
        "--suite",
        "proj1",
        "--rows",
        "1000",
        "--dimension-rows",
        "40",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let report = hawk::report::BenchmarkReport::from_csv(&csv).unwrap();
    assert_eq!(report.rows.len(), 32);
    assert!(report.rows.iter().all(|r| r.verified == Some(true)));
    assert!(out.join("report.txt").is_file());
    let o = hawk(&[
        "bench",
        "--suite",
        "nothing",
        "--rows",
        "100",
        "--out",
        p(&out),
    ]);
    assert_ne!(o.status.code(), Some(0));
}
