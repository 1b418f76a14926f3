use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blade"))
        .args(args)
        .output()
        .expect("run blade")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const GOLD: &str = r#"{"id":"a","tokens":["x","y","z"],"sentence_label":1,"token_labels":[0,1,0]}
{"id":"b","tokens":["p","q"],"sentence_label":0,"token_labels":[0,0]}
{"id":"c","tokens":["r"],"sentence_label":1,"token_labels":[1]}
"#;

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    let g = d.path().join("g.jsonl");
    fs::write(&g, GOLD).unwrap();
    let out = blade(&["eval", "--pred", s(&g), "--gold", s(&g)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sentence\tP=100.00\tR=100.00\tF0.5=100.00"), "{text}");
    assert!(text.contains("token\tP=100.00\tR=100.00\tF0.5=100.00"), "{text}");
}

#[test]
fn eval_counts_errors() {
    let d = tempfile::tempdir().unwrap();
    let g = d.path().join("g.jsonl");
    let p = d.path().join("p.jsonl");
    fs::write(&g, GOLD).unwrap();
    // one false positive, one false negative, one true positive
    fs::write(&p, GOLD.replace("[0,1,0]", "[1,1,0]").replace("[1]}", "[0]}")).unwrap();
    let out = blade(&["eval", "--pred", s(&p), "--gold", s(&g), "--level", "token", "--beta", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), "token\tP=50.00\tR=50.00\tF1=50.00");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(blade(&["eval", "--gold", "x"]).status.code(), Some(1));
    assert_eq!(blade(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(blade(&["--threads", "0", "eval", "--pred", "a", "--gold", "b"]).status.code(), Some(1));
    assert_eq!(blade(&["--config", "/nonexistent/conf", "synth", "--out-dir", "x"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let g = d.path().join("g.jsonl");
    let bad = d.path().join("bad.jsonl");
    fs::write(&g, GOLD).unwrap();
    fs::write(&bad, "{\"id\":\"a\",\"tokens\":[]}\n").unwrap();
    let out = blade(&["eval", "--pred", s(&bad), "--gold", s(&g)]);
    assert_eq!(out.status.code(), Some(2));
    let missing = d.path().join("missing.jsonl");
    assert_eq!(blade(&["eval", "--pred", s(&missing), "--gold", s(&g)]).status.code(), Some(2));
    let short = d.path().join("short.jsonl");
    fs::write(&short, GOLD.lines().next().unwrap()).unwrap();
    assert_eq!(blade(&["eval", "--pred", s(&short), "--gold", s(&g)]).status.code(), Some(2));
}

#[test]
fn command_line_overrides_config_file() {
    let d = tempfile::tempdir().unwrap();
    let conf = d.path().join("run.conf");
    fs::write(&conf, "# synthetic corpus\nsentences = 40\nunseen = 10\ngroups = 2\nper-group = 5\n").unwrap();
    let out_dir = d.path().join("data");
    let out = blade(&["--config", s(&conf), "synth", "--out-dir", s(&out_dir), "--sentences", "60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let total: usize = ["train", "dev", "test"]
        .iter()
        .map(|n| lines(&out_dir.join(format!("{n}.jsonl"))).len())
        .sum();
    assert_eq!(total, 60);
    let unseen = lines(&out_dir.join("unseen_aug.jsonl")).len() + lines(&out_dir.join("unseen_test.jsonl")).len();
    assert_eq!(unseen, 10);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("train.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn pipeline_outputs_have_documented_layout() {
    let d = tempfile::tempdir().unwrap();
    let p = |n: &str| d.path().join(n);
    let ok = |args: &[&str]| {
        let out = blade(args);
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["synth", "--out-dir", s(&p("data")), "--sentences", "200", "--unseen", "40", "--groups", "2"]);
    ok(&[
        "train", "--train", s(&p("data/train.jsonl")), "--dev", s(&p("data/dev.jsonl")), "--word-dim", "6",
        "--filters", "1:8", "--epochs", "2", "--out", s(&p("m.blmd")),
    ]);
    assert!(p("m.blmd.vocab").exists());
    assert!(p("m.blmd.manifest.json").exists());

    ok(&["predict", "--model", s(&p("m.blmd")), "--input", s(&p("data/test.jsonl")), "--out", s(&p("pred.jsonl"))]);
    let test = lines(&p("data/test.jsonl"));
    let pred = lines(&p("pred.jsonl"));
    assert_eq!(pred.len(), test.len());
    for (q, t) in pred.iter().zip(&test) {
        assert_eq!(q["id"], t["id"]);
        let n = t["tokens"].as_array().unwrap().len();
        assert_eq!(q["token_labels"].as_array().unwrap().len(), n);
        assert_eq!(q["probs"].as_array().unwrap().len(), 2);
    }

    ok(&["build-db", "--model", s(&p("m.blmd")), "--input", s(&p("data/train.jsonl")), "--db", s(&p("db.blex"))]);
    assert!(p("db.blex.sidecar").exists());
    ok(&[
        "audit", "--model", s(&p("m.blmd")), "--db", s(&p("db.blex")), "--input", s(&p("data/test.jsonl")),
        "--rule", "exa", "--out", s(&p("audit.jsonl")),
    ]);
    let audit = lines(&p("audit.jsonl"));
    assert_eq!(audit.len(), test.len());
    for a in &audit {
        let labels = a["token_labels"].as_array().unwrap();
        let raw = a["raw_token_labels"].as_array().unwrap();
        assert_eq!(labels.len(), raw.len());
        // an admitted label is always also a raw detection
        for (l, r) in labels.iter().zip(raw) {
            assert!(l.as_u64().unwrap() <= r.as_u64().unwrap());
        }
    }

    // overwriting the input database in place is refused
    let out = blade(&[
        "edit-db", "--db", s(&p("db.blex")), "--record", "0", "--field", "gold-token", "--value", "0", "--out",
        s(&p("db.blex")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
