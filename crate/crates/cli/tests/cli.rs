use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use trajguard::supervisor::parse_verdict_log_line;
use trajguard::{Cause, Verdict};

const BIN: &str = env!("CARGO_BIN_EXE_trajguard");

fn trajguard(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn verdicts(path: &Path) -> Vec<Verdict> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| parse_verdict_log_line(l).unwrap().verdict)
        .collect()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen", "--out", p(&out)];
    args.extend_from_slice(extra);
    let (code, _, err) = trajguard(&args);
    assert_eq!(code, 0, "{err}");
    out
}

#[test]
fn exit_codes_follow_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let ok = gen(
        dir.path(),
        "ok.jsonl",
        &["--kind", "straight", "--count", "3"],
    );
    let bad = gen(
        dir.path(),
        "bad.jsonl",
        &["--kind", "infeasible-curvature", "--count", "3"],
    );
    let out = dir.path().join("o");

    assert_eq!(
        trajguard(&["validate", "--dataset", p(&ok), "--out", p(&out)]).0,
        0
    );
    assert_eq!(
        trajguard(&["validate", "--dataset", p(&bad), "--out", p(&out)]).0,
        2
    );
    assert_eq!(
        trajguard(&["supervise", "--dataset", p(&ok), "--out", p(&out)]).0,
        0
    );
    assert_eq!(
        trajguard(&["supervise", "--dataset", p(&bad), "--out", p(&out)]).0,
        2
    );

    let (code, _, err) = trajguard(&[
        "validate",
        "--dataset",
        "/no/such/file.jsonl",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("does not exist"), "{err}");

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"supervisor": {"cycle_ms": 500}}"#).unwrap();
    assert_eq!(
        trajguard(&["validate", "--config", p(&cfg), "--dataset", p(&ok)]).0,
        1
    );
    assert_eq!(trajguard(&["validate", "--out", p(&out)]).0, 1);
}

#[test]
fn golden_verdict_lines() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "g.jsonl",
        &["--kind", "straight", "--count", "2"],
    );
    let out = dir.path().join("o");
    trajguard(&["validate", "--dataset", p(&data), "--out", p(&out)]);
    let log = fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
    assert_eq!(
        log,
        concat!(
            r#"{"cause":"passed","schema_version":1,"t_ns":0,"total_cost":0.0000000000000000e0,"trajectory_id":1,"value":1,"violations":[]}"#,
            "\n",
            r#"{"cause":"passed","schema_version":1,"t_ns":50000000,"total_cost":0.0000000000000000e0,"trajectory_id":2,"value":1,"violations":[]}"#,
            "\n",
        )
    );
}

#[test]
fn ground_truth_violations_match_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "acc.jsonl",
        &["--kind", "infeasible-accel", "--count", "8", "--seed", "42"],
    );
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("acc.truth.json")).unwrap())
            .unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        trajguard(&["validate", "--dataset", p(&data), "--out", p(&out)]).0,
        2
    );

    let got = verdicts(&out.join("verdicts.jsonl"));
    let expected = truth["trajectories"].as_array().unwrap();
    assert_eq!(got.len(), expected.len());
    for (v, t) in got.iter().zip(expected) {
        assert_eq!(v.trajectory_id(), t["id"].as_u64());
        let want: Vec<(String, u64)> = t["violations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| {
                (
                    x["constraint"].as_str().unwrap().to_string(),
                    x["index"].as_u64().unwrap(),
                )
            })
            .collect();
        let have: Vec<(String, u64)> = v
            .violations()
            .iter()
            .map(|x| (x.constraint.as_str().to_string(), x.index as u64))
            .collect();
        assert_eq!(have, want);
    }
}

#[test]
fn analytic_speed_cost_matches_costs_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "s.jsonl",
        &[
            "--kind", "arc", "--speed", "9", "--radius", "25", "--count", "2",
        ],
    );
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.truth.json")).unwrap())
            .unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        trajguard(&["validate", "--dataset", p(&data), "--out", p(&out)]).0,
        0
    );
    let mut rdr = csv::Reader::from_path(out.join("costs.csv")).unwrap();
    for (rec, t) in rdr.records().zip(truth["trajectories"].as_array().unwrap()) {
        let rec = rec.unwrap();
        let j_vel: f64 = rec[4].parse().unwrap();
        let j_lat: f64 = rec[5].parse().unwrap();
        let want_vel = t["analytic"]["j_vel"].as_f64().unwrap();
        let want_lat = t["analytic"]["j_lat"].as_f64().unwrap();
        assert!(
            (j_vel - want_vel).abs() <= 1e-12 * want_vel,
            "{j_vel} vs {want_vel}"
        );
        assert!(
            (j_lat - want_lat).abs() <= 1e-6 * want_lat,
            "{j_lat} vs {want_lat}"
        );
    }
}

#[test]
fn ranking_over_curved_path_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "lc.jsonl",
        &[
            "--kind",
            "lane-change",
            "--count",
            "12",
            "--seed",
            "5",
            "--objects",
            "2",
        ],
    );
    let path = dir.path().join("curve.json");
    let vertices: Vec<[f64; 2]> = (0..=40)
        .map(|i| {
            let x = i as f64 * 1.5;
            [x, 2.0 * (x / 15.0).sin()]
        })
        .collect();
    fs::write(&path, serde_json::to_string(&vertices).unwrap()).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"cost": {"w_ref": 0.5, "w_vel": 2, "w_lat": 0.25, "w_lon": 1, "w_obs": 3, "v_desired": 8}}"#).unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = trajguard(&[
        "validate",
        "--config",
        p(&cfg),
        "--dataset",
        p(&data),
        "--path",
        p(&path),
        "--out",
        p(&out),
        "--enable-obs-cost",
    ]);
    assert_eq!(code, 0, "{err}");

    let mut rows: Vec<(f64, usize)> = Vec::new();
    let mut rdr = csv::Reader::from_path(out.join("costs.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let t: Vec<f64> = (3..9).map(|i| rec[i].parse().unwrap()).collect();
        let sum = 0.5 * t[0] + 2.0 * t[1] + 0.25 * t[2] + 1.0 * t[3] + 3.0 * t[4];
        assert!((t[5] - sum).abs() <= 1e-12 * sum, "{} vs {sum}", t[5]);
        assert!(t[4] > 0.0, "obstacle term should be active");
        rows.push((sum, rec[9].parse().unwrap()));
    }
    assert_eq!(rows.len(), 12);
    let mut by_cost: Vec<usize> = (0..rows.len()).collect();
    by_cost.sort_by(|&a, &b| rows[a].0.total_cmp(&rows[b].0));
    for (rank, &i) in by_cost.iter().enumerate() {
        assert_eq!(rows[i].1, rank + 1);
    }

    let tracks = fs::read_to_string(out.join("tracks.csv")).unwrap();
    assert_eq!(tracks.lines().count(), 1 + 12 * 30);
    assert!(tracks.starts_with("trajectory_id,index,x,y,s,d,feasible,j_sum\n"));
}

#[test]
fn validate_and_supervise_agree_on_trajectory_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "mix.jsonl",
        &[
            "--kind",
            "infeasible-accel",
            "--count",
            "15",
            "--seed",
            "2",
            "--gap",
            "6:300",
        ],
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    trajguard(&["validate", "--dataset", p(&data), "--out", p(&a)]);
    trajguard(&["supervise", "--dataset", p(&data), "--out", p(&b)]);
    let offline = verdicts(&a.join("verdicts.jsonl"));
    let online: Vec<Verdict> = verdicts(&b.join("verdicts.jsonl"))
        .into_iter()
        .filter(|v| v.cause() != Cause::Timeout)
        .collect();
    assert_eq!(offline, online);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "g.jsonl",
        &["--kind", "straight", "--count", "6", "--gap", "3:400"],
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"supervisor": {"t_max_ms": 1000}}"#).unwrap();
    let out = dir.path().join("o");
    // the file's 1 s budget hides the gap; the flag restores 100 ms
    assert_eq!(
        trajguard(&[
            "supervise",
            "--config",
            p(&cfg),
            "--dataset",
            p(&data),
            "--out",
            p(&out)
        ])
        .0,
        0
    );
    let (code, stdout, _) = trajguard(&[
        "supervise",
        "--config",
        p(&cfg),
        "--t-max-ms",
        "100",
        "--dataset",
        p(&data),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 2);
    assert!(stdout.contains("timeout=1"), "{stdout}");
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["timeout"], 1);
    assert_eq!(summary["passed"], 6);
}

#[test]
fn tail_exposes_a_silent_planner() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "one.jsonl", &["--kind", "straight"]);
    let out = dir.path().join("o");
    // one pass at t = 0, then silence for a second
    let (code, stdout, _) = trajguard(&[
        "supervise",
        "--dataset",
        p(&data),
        "--out",
        p(&out),
        "--tail-ms",
        "1000",
    ]);
    assert_eq!(code, 2, "{stdout}");
    let log = fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
    let lines: Vec<_> = log
        .lines()
        .map(|l| parse_verdict_log_line(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].t_ns, 110_000_000);

    let (_, stdout, _) = trajguard(&[
        "supervise",
        "--dataset",
        p(&data),
        "--out",
        p(&out),
        "--tail-ms",
        "1000",
        "--repeat-timeout",
    ]);
    assert!(stdout.contains("timeout=90"), "{stdout}");
}

#[test]
fn gen_is_deterministic_and_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(
        dir.path(),
        "a.jsonl",
        &[
            "--kind",
            "lane-change",
            "--count",
            "5",
            "--seed",
            "7",
            "--with-path",
        ],
    );
    let b = gen(
        dir.path(),
        "b.jsonl",
        &["--kind", "lane-change", "--count", "5", "--seed", "7"],
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("a.truth.json").exists());
    let path: Vec<[f64; 2]> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a.path.json")).unwrap()).unwrap();
    assert_eq!(path[0], [0.0, 0.0]);
}

#[test]
fn bench_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = trajguard(&[
        "bench",
        "--runs",
        "2",
        "--per-run",
        "50",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("30 points"), "{stdout}");
    let stats = fs::read_to_string(dir.path().join("bench_stats.csv")).unwrap();
    let lines: Vec<_> = stats.lines().collect();
    assert!(lines[0].starts_with("# clock=monotonic resolution_ns="));
    assert_eq!(lines[1], "run,min,max,avg,jitter_abs,jitter_pct");
    assert_eq!(lines.len(), 4);
    let samples = fs::read_to_string(dir.path().join("bench_samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 2 + 100);
}

#[test]
fn single_sample_bench_has_zero_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = trajguard(&[
        "bench",
        "--runs",
        "1",
        "--per-run",
        "1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code, 0);
    let stats = fs::read_to_string(dir.path().join("bench_stats.csv")).unwrap();
    let row: Vec<&str> = stats.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[1], row[2]);
    assert_eq!(row[4], "0");
    assert_eq!(row[5], "0");
    assert_eq!(
        trajguard(&["bench", "--per-run", "0", "--out", p(dir.path())]).0,
        1
    );
}
