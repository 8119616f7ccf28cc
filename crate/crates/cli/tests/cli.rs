use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde_json::Value;

use allocdss_core::generator::GeneratorSpec;
use allocdss_core::io::{self, load_daily_records, load_instance, load_result, read_document};
use allocdss_core::kpi::{before_after, BeforeAfterComparison};
use allocdss_core::model::{DailyServiceRecord, PlanConfig};
use allocdss_core::{allocate, OrderId};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_allocdss"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn records(o: &Output) -> Vec<Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{e}: {l}")))
        .collect()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(&["generate", "--spec", p(&fixture("demo.spec.json")), "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let inst = load_instance(&a).unwrap();
    assert_eq!(inst.orders.len(), 2000);
    assert_eq!(inst.warehouses.len(), 3);

    let c = dir.path().join("c.json");
    let o = run(&[
        "generate",
        "--spec",
        p(&fixture("demo.spec.json")),
        "--out",
        p(&c),
        "--seed",
        "43",
    ]);
    assert!(o.status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn generate_at_case_study_scale() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("big.spec.json");
    io::save_generator_spec(&GeneratorSpec::case_study_scale(2026), &spec).unwrap();
    let out = dir.path().join("big.json");
    let o = run(&["--format", "records", "generate", "--spec", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec = &records(&o)[0];
    assert_eq!(rec["n_orders"], 212_278);
    assert_eq!(rec["n_stores"], 772);
    assert_eq!(rec["n_warehouses"], 3);
}

#[test]
fn allocate_sample_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "--format",
        "table",
        "allocate",
        "--instance",
        p(&fixture("sample_instance.json")),
        "--plan",
        p(&fixture("sample.plan.json")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("feasibility day 1: PASS (0 violations)"), "{text}");
    assert!(text.contains("accepted 2 of 3 orders"));
    assert!(text.contains("timing: filter"));
    assert!(!out.join("result_day2.json").exists());

    let result = load_result(&out.join("result.json")).unwrap();
    assert_eq!(result.accepted, [OrderId::from("o1"), OrderId::from("o3")]);
    assert_eq!(result.objective_value, 45.0);
    for w in ["w1", "w2"] {
        let name = format!("dispatch_{w}.csv");
        assert_eq!(
            fs::read_to_string(out.join(&name)).unwrap(),
            fs::read_to_string(fixture("golden/sample").join(&name)).unwrap(),
            "{name}"
        );
    }
    assert!(!out.join("dispatch_w3.csv").exists());
    assert!(out.join("kpi.json").exists());
}

#[test]
fn second_day_flag_writes_day_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "--format",
        "records",
        "allocate",
        "--instance",
        p(&fixture("sample_instance.json")),
        "--out",
        p(&out),
        "--second-day",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let day2 = load_result(&out.join("result_day2.json")).unwrap();
    assert!(day2.accepted.is_empty());
    assert_eq!(day2.rejections.len(), 1);
    let verdicts: Vec<Value> = records(&o)
        .into_iter()
        .filter(|r| r["check"] == "feasibility")
        .map(|r| r["verdict"].clone())
        .collect();
    assert_eq!(verdicts.len(), 2);
    assert!(verdicts.iter().all(|v| *v == "PASS"));
}

#[test]
fn seeded_pipeline_is_byte_identical_and_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let inst = dir.path().join(format!("{tag}.json"));
        let out = dir.path().join(tag);
        let o = run(&["generate", "--spec", p(&fixture("demo.spec.json")), "--out", p(&inst)]);
        assert!(o.status.success());
        let o = run(&[
            "allocate",
            "--instance",
            p(&inst),
            "--plan",
            p(&fixture("demo.plan.json")),
            "--out",
            p(&out),
            "--second-day",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push((inst, out));
    }
    let (ia, oa) = &outputs[0];
    let (ib, ob) = &outputs[1];
    assert_eq!(fs::read(ia).unwrap(), fs::read(ib).unwrap());
    let mut names: Vec<String> = fs::read_dir(oa)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "dispatch_w1.csv",
            "dispatch_w2.csv",
            "dispatch_w3.csv",
            "kpi.json",
            "result.json",
            "result_day2.json"
        ]
    );
    for name in &names {
        assert_eq!(fs::read(oa.join(name)).unwrap(), fs::read(ob.join(name)).unwrap(), "{name}");
    }
    for w in ["w1", "w2", "w3"] {
        let name = format!("dispatch_{w}.csv");
        assert_eq!(
            fs::read(oa.join(&name)).unwrap(),
            fs::read(fixture("golden/demo").join(&name)).unwrap(),
            "{name}"
        );
    }

    let inst = load_instance(ia).unwrap();
    let plan = io::load_plan(&fixture("demo.plan.json")).unwrap();
    let direct = allocate(&inst, &plan, &allocdss_core::model::initial_residuals(&inst)).unwrap();
    assert_eq!(load_result(&oa.join("result.json")).unwrap(), direct);
}

fn synthetic_records() -> Vec<DailyServiceRecord> {
    let start = NaiveDate::from_ymd_opt(2026, 1, 1).unwrap();
    let mut out = Vec::new();
    for d in 0..60u64 {
        let date = start + chrono::Days::new(d);
        let after = d >= 30;
        for s in 0..4u64 {
            let requested = 100.0 + (d * 7 + s * 13) as f64 % 50.0;
            let served = if after { 0.9 } else { 0.6 } + 0.002 * ((d + s) % 10) as f64;
            out.push(DailyServiceRecord {
                date,
                store_id: format!("s{s}").into(),
                requested,
                shipped: requested * served,
                store_limit: 120.0,
            });
        }
    }
    out
}

#[test]
fn evaluate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synthetic_records();
    let path = dir.path().join("daily.csv");
    io::save_daily_records(&recs, &path).unwrap();
    let out = dir.path().join("eval");
    let o = run(&[
        "--format",
        "table",
        "evaluate",
        "--records",
        p(&path),
        "--cutoff",
        "2026-01-31",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for row in [
        "Weighted Ship/Order Ratio",
        "Weighted Same-Day Coverage",
        "Average Daily Unserved Batch",
        "Store-days with Order > Limit",
        "Store-days with Ship > Limit",
        "Store-days with Full Fulfillment",
        "Mann-Whitney U",
    ] {
        assert!(text.contains(row), "missing {row}:\n{text}");
    }
    let cutoff = NaiveDate::from_ymd_opt(2026, 1, 31).unwrap();
    let expected = before_after(&load_daily_records(&path).unwrap(), cutoff).unwrap();
    let written: BeforeAfterComparison = read_document(&out.join("comparison.json")).unwrap().value;
    assert_eq!(written, expected);
    assert_eq!(expected.before.n_days, 30);
    assert_eq!(expected.mannwhitney_u, 900.0);
    let series = fs::read_to_string(out.join("daily_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 61);
}

#[test]
fn evaluate_rejects_cutoff_outside_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("daily.csv");
    io::save_daily_records(&synthetic_records(), &path).unwrap();
    for cutoff in ["2025-06-01", "2027-01-01"] {
        let o = run(&[
            "evaluate",
            "--records",
            p(&path),
            "--cutoff",
            cutoff,
            "--out",
            p(&dir.path().join("eval")),
        ]);
        assert_eq!(o.status.code(), Some(1), "{cutoff}");
        assert!(stderr(&o).contains("cutoff"));
    }
}

#[test]
fn bench_gap_on_loose_instances_has_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("loose.spec.json");
    io::save_generator_spec(
        &GeneratorSpec {
            n_stores: 3,
            capacity_tightness: 2.0,
            category_tightness: 2.0,
            ..GeneratorSpec::default()
        },
        &spec,
    )
    .unwrap();
    let out = dir.path().join("gap.json");
    let o = run(&[
        "--format",
        "records",
        "bench",
        "--mode",
        "gap",
        "--spec",
        p(&spec),
        "--seeds",
        "20",
        "--n-orders",
        "12",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(records(&o).len(), 20);
    let summary: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(summary["max_gap"], 0.0);
    assert_eq!(summary["usable"], 20);
}

#[test]
fn bench_scaling_reports_ratios() {
    let o = run(&[
        "--format",
        "table",
        "bench",
        "--mode",
        "scaling",
        "--sizes",
        "500,1000,2000",
        "--reps",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5, "{text}");
    assert!(text.contains("fit t = a N log2 N"));
}

#[test]
fn simulate_writes_loadable_records() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sim.spec.json");
    io::save_generator_spec(
        &GeneratorSpec {
            n_orders: 200,
            n_stores: 8,
            capacity_tightness: 0.7,
            ..GeneratorSpec::default()
        },
        &spec,
    )
    .unwrap();
    let out = dir.path().join("daily.csv");
    let o = run(&[
        "--format",
        "records",
        "simulate",
        "--spec",
        p(&spec),
        "--days",
        "10",
        "--go-live-day",
        "6",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let days = records(&o);
    assert_eq!(days.len(), 10);
    assert_eq!(days[4]["policy"], "arrival-order");
    assert_eq!(days[5]["policy"], "heuristic");
    assert_eq!(load_daily_records(&out).unwrap().len(), 80);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["allocate", "--instance", "/nonexistent.json", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: /nonexistent.json"));

    let plan = dir.path().join("bad.plan.json");
    let mut bad = PlanConfig::default();
    bad.activations.insert("w1".into(), true);
    bad.activations.insert("w2".into(), true);
    bad.ranks.insert("w1".into(), 1);
    bad.ranks.insert("w2".into(), 1);
    io::save_plan(&bad, &plan).unwrap();
    let o = run(&[
        "allocate",
        "--instance",
        p(&fixture("sample_instance.json")),
        "--plan",
        p(&plan),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ranks[w1]"), "{}", stderr(&o));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["evaluate", "--cutoff", "not-a-date"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("allocate"));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn get(addr: &str, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(addr).ok()?;
    stream
        .write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
        .ok()?;
    let mut text = String::new();
    stream.read_to_string(&mut text).ok()?;
    Some(text)
}

fn serve_and_probe(mut cmd: Command, addr: &str) -> String {
    let mut child = cmd
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(reply) = get(addr, "/warehouses") {
            break reply;
        }
        assert!(Instant::now() < deadline, "service did not start on {addr}");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    reply
}

#[test]
fn serve_listens_on_flag_and_environment_address() {
    let addr = format!("127.0.0.1:{}", free_port());
    let mut cmd = bin();
    cmd.args(["serve", "--addr", &addr]);
    let reply = serve_and_probe(cmd, &addr);
    assert!(reply.starts_with("HTTP/1.1 409"), "{reply}");
    assert!(reply.contains("empty_session"));

    let addr = format!("127.0.0.1:{}", free_port());
    let mut cmd = bin();
    cmd.arg("serve").env("ALLOCDSS_ADDR", &addr);
    let reply = serve_and_probe(cmd, &addr);
    assert!(reply.starts_with("HTTP/1.1 409"), "{reply}");
}
