use std::path::Path;
use std::process::{Command, Output};

fn evqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evqa")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = evqa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# tiny run\nn_topics=3\nquestions_per_topic=4\n").unwrap();
    cfg
}

#[test]
fn staged_generation_matches_single_shot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let tr = tmp.path().join("tr");
    let f = |n: &str| tmp.path().join(n);
    let g = ["--config", s(&cfg), "--seed", "3", "--canned", "--transcripts-dir", s(&tr)];
    let run = |rest: &[&str]| ok(&[&g[..], rest].concat());
    run(&["gen", "all", "-o", s(&f("all.jsonl"))]);
    run(&["gen", "topics", "-o", s(&f("topics.jsonl"))]);
    run(&["gen", "questions", "--topics", s(&f("topics.jsonl")), "-o", s(&f("questions.jsonl"))]);
    run(&["gen", "sources", "--questions", s(&f("questions.jsonl")), "-o", s(&f("sources.jsonl"))]);
    run(&["gen", "instructions", "--sources", s(&f("sources.jsonl")), "-o", s(&f("instructions.jsonl"))]);
    run(&["gen", "answers", s(&f("instructions.jsonl")), "-o", s(&f("staged.jsonl"))]);
    assert_eq!(std::fs::read(f("all.jsonl")).unwrap(), std::fs::read(f("staged.jsonl")).unwrap());
}

#[test]
fn score_filter_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let f = |n: &str| tmp.path().join(n);
    ok(&["--config", s(&cfg), "--canned", "gen", "all", "-o", s(&f("base.jsonl"))]);
    ok(&["score", "--stub", s(&f("base.jsonl")), "-o", s(&f("scored.jsonl"))]);
    ok(&["filter", "source-quality", s(&f("scored.jsonl")), "-o", s(&f("plus.jsonl"))]);
    ok(&["filter", "attributability", s(&f("plus.jsonl")), "-o", s(&f("pp.jsonl"))]);
    let out = ok(&["stats", "describe", s(&f("scored.jsonl")), s(&f("pp.jsonl")), "--label", "base", "--label", "pp"]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("base"), "{report}");
    assert!(report.lines().nth(2).unwrap().starts_with("pp"), "{report}");

    // filtering needs scored input
    let out = evqa(&["filter", "source-quality", s(&f("base.jsonl")), "-o", s(&f("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    // and the attributability tier needs Plus input
    let out = evqa(&["filter", "attributability", s(&f("scored.jsonl")), "-o", s(&f("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_from_runs_table() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs.tsv");
    let mut table = String::from("setting\ttestset\tmetric\tvalue\n");
    for (setting, base) in [("base", 40.0), ("plusplus", 70.0)] {
        for testset in ["a", "b", "c"] {
            for k in 0..4 {
                table.push_str(&format!("{setting}\t{testset}\tattributability\t{}\n", base + f64::from(k)));
            }
        }
    }
    std::fs::write(&runs, table).unwrap();
    let out = ok(&["stats", "compare", "--runs", s(&runs), "--compare", "base<plusplus"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.contains("fisher")), "{text}");
}

#[test]
fn render_prompt_writes_golden_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("f.json");
    std::fs::write(
        &fixture,
        r#"{"question":"How do solar panels generate electricity?","sources":[
            {"name":"Lee et al., 2020, p.3","content":"Photovoltaic cells convert sunlight directly into electric current."},
            {"name":"Kim, 2019, p.9","content":"Honey bees pollinate a third of global food crops."}]}"#,
    )
    .unwrap();
    let out_path = tmp.path().join("prompt.txt");
    ok(&["render-prompt", s(&fixture), "-o", s(&out_path)]);
    let golden = include_str!("../../core/tests/golden/prompt_two_sources.txt");
    assert_eq!(std::fs::read_to_string(out_path).unwrap(), golden);
}

#[test]
fn exit_codes() {
    assert_eq!(evqa(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(evqa(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let f = |n: &str| tmp.path().join(n);
    let cfg = small_config(tmp.path());
    ok(&["--config", s(&cfg), "--canned", "gen", "all", "-o", s(&f("base.jsonl"))]);
    // no backend selected
    assert_eq!(evqa(&["score", s(&f("base.jsonl")), "-o", s(&f("x.jsonl"))]).status.code(), Some(64));
    // nothing recorded and no upstream
    let empty = f("empty-transcripts");
    let out = evqa(&["--config", s(&cfg), "--transcripts-dir", s(&empty), "gen", "topics", "-o", s(&f("t.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    // unknown config key is a usage error
    let bad = f("bad.cfg");
    std::fs::write(&bad, "n_topicz=3\n").unwrap();
    assert_eq!(evqa(&["--config", s(&bad), "--canned", "gen", "topics"]).status.code(), Some(64));
    // missing input file
    assert_eq!(evqa(&["stats", "describe", s(&f("missing.jsonl"))]).status.code(), Some(1));
}
