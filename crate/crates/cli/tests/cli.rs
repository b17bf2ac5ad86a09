use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msr"))
        .args(args)
        .env_remove("MSR_API_KEY")
        .env_remove("MSR_BASE_URL")
        .output()
        .expect("run msr")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, docs: &str, words: &str) -> (String, String) {
    let pre = dir.join("pre.jsonl");
    let post = dir.join("post.jsonl");
    let out = msr(&["synth", "--pre-out", path(&pre), "--post-out", path(&post), "--docs", docs, "--words", words]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (path(&pre).to_string(), path(&post).to_string())
}

#[test]
fn match_prints_matches_then_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.txt");
    let g = dir.path().join("g.txt");
    fs::write(&r, "the cat sat on the mat").unwrap();
    fs::write(&g, "the cat sat near the mat").unwrap();
    let out = msr(&["match", path(&r), path(&g), "--lmin", "1", "--lmax", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let (matches, freq) = text.split_once("\n\n").unwrap();
    let lines: Vec<&str> = matches.lines().collect();
    assert_eq!(lines[0], "length,pos_ref,pos_gen,text");
    assert_eq!(lines[1], "3,0,0,the cat sat");
    assert_eq!(lines.len(), 5);
    assert_eq!(freq, "k,f_k\n1,4\n2,2\n3,1\n4,0\n");

    let out = msr(&["match", path(&r), path(&g), "--lmin", "1", "--lmax", "3", "--exact", "--no-matches"]);
    assert_eq!(stdout(&out), "k,f_k\n1,2\n2,1\n3,1\n");
}

#[test]
fn stats_reports_complete_separation() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre.csv");
    let post = dir.path().join("post.csv");
    fs::write(&pre, "k,f_k\n5,16\n6,15\n7,14\n8,13\n9,12\n10,11\n11,10\n12,9\n").unwrap();
    fs::write(&post, "8,7,6,5,4,3,2,1\n").unwrap();
    let out = msr(&["stats", path(&pre), path(&post)]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["delta"], -1.0);
    assert_eq!(v["ks"], 1.0);
    assert!((v["h_statistic"].as_f64().unwrap() - 11.294).abs() < 0.001);
    assert!((v["p_value"].as_f64().unwrap() - 0.000778).abs() < 0.00001);
    assert_eq!(v["n_pre"], 8);
    assert_eq!(v["n_post"], 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(msr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(msr(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("missing.csv");
    assert_eq!(msr(&["stats", path(&missing), path(&missing)]).status.code(), Some(2));

    let (pre, post) = synth(dir.path(), "3", "300");
    let out_dir = dir.path().join("out");
    let base = ["audit", "--pre", &pre, "--post", &post, "--min-words", "100", "--out", path(&out_dir)];

    let mut odd = base.to_vec();
    odd.extend(["--backend", "verbatim", "--shots", "5"]);
    assert_eq!(msr(&odd).status.code(), Some(1));

    let mut bad_backend = base.to_vec();
    bad_backend.extend(["--backend", "telepathy"]);
    assert_eq!(msr(&bad_backend).status.code(), Some(1));

    let mut live = base.to_vec();
    live.extend(["--backend", "live", "--base-url", "http://127.0.0.1:1/v1"]);
    let out = msr(&live);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "{not json\n").unwrap();
    let out = msr(&["audit", "--pre", path(&garbage), "--post", &post, "--backend", "verbatim"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_then_audit_detects_contamination() {
    let dir = tempfile::tempdir().unwrap();
    let (pre, post) = synth(dir.path(), "10", "1050");
    let out_dir = dir.path().join("report");
    let cache = dir.path().join("cache.jsonl");
    let args = [
        "audit", "--pre", &pre, "--post", &post, "--backend", "verbatim", "--post-backend", "oblivious", "--cache",
        path(&cache), "--out", path(&out_dir),
    ];
    let out = msr(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("delta=-1.0000"), "{}", stdout(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["comparison"]["delta"], -1.0);
    let first = fs::read(out_dir.join("frequencies.csv")).unwrap();
    assert!(String::from_utf8_lossy(&first).starts_with("k,"));

    assert!(msr(&args).status.success());
    assert_eq!(fs::read(out_dir.join("frequencies.csv")).unwrap(), first);
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let (pre, post) = synth(dir.path(), "4", "1050");
    let out_dir = dir.path().join("sweep");
    let out = msr(&[
        "sweep", "length", "--values", "75,125", "--pre", &pre, "--post", &post, "--backend", "partial:0.5", "--out",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("length-75/frequencies.csv").exists());
    assert!(out_dir.join("length-125/summary.json").exists());
    let table = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "value,l_min,l_max,delta,ks,h_statistic,p_value,failures");
    assert!(rows[1].starts_with("75,5,12,"));
    assert!(rows[2].starts_with("125,5,12,"));

    let out = msr(&["sweep", "shots", "--values", "2,x", "--pre", &pre, "--post", &post, "--backend", "verbatim"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn transcript_shows_held_out_reference() {
    let dir = tempfile::tempdir().unwrap();
    let (pre, _) = synth(dir.path(), "2", "1050");
    let out = msr(&["transcript", "--doc", "pre-0001", "--pre", &pre, "--truncate", "75"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("# pre-0001 (pre, 75 tokens, segment lengths [13, 13, 13, 12, 12, 12])"));
    assert!(text.contains("complete the paragraph"));

    let out = msr(&["transcript", "--doc", "nope", "--pre", &pre]);
    assert_eq!(out.status.code(), Some(2));
}
