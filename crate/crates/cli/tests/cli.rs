use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bdrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdrisk"))
        .args(args)
        .env_remove("BDRISK_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bdrisk(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Asserts the exit code and that stderr is exactly one JSON object line.
fn fails_with(args: &[&str], code: i32) -> Value {
    let out = bdrisk(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let v: Value = serde_json::from_str(stderr.trim_end()).unwrap();
    assert_eq!(v["exit_code"], code);
    v
}

fn post(user: &str, bd: &str, id: &str, day: u32, level: &str) -> String {
    let date = chrono_free_date(day);
    format!(
        r#"{{"user_id":"{user}","bd_type":"{bd}","post_id":"{id}","timestamp":"{date}","text":"feeling low today {id}","mood":"Depressed","somatic":[],"suicidality":"{level}"}}"#
    )
}

/// Days after 2020-01-01, within January and February.
fn chrono_free_date(day: u32) -> String {
    if day < 31 {
        format!("2020-01-{:02}T12:00:00Z", day + 1)
    } else {
        format!("2020-02-{:02}T12:00:00Z", day - 30)
    }
}

fn small_corpus(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"n_users": 30, "min_posts": 6, "max_posts": 14, "mean_gap_days": 8.0}"#).unwrap();
    let corpus = dir.join("corpus.jsonl");
    ok(&["synth", "--spec", p(&spec), "--seed", "3", "--out", p(&corpus)]);
    corpus
}

const TINY: [&str; 18] = [
    "--embedding-dim", "16", "--hidden-size", "4", "--epochs", "3", "--patience", "3", "--folds", "3", "--batch-size",
    "32", "--max-len", "12", "--lr", "0.005", "--jobs", "2",
];

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"), dir.path().join("c.jsonl"));
    ok(&["synth", "--seed", "7", "--out", p(&a)]);
    ok(&["synth", "--seed", "7", "--out", p(&b)]);
    ok(&["synth", "--seed", "8", "--out", p(&c)]);
    let read = |x: &Path| std::fs::read(x).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let manifest: Value = serde_json::from_slice(&read(&dir.path().join("a.manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seeds"]["seed"], 7);
    assert_eq!(manifest["corpus_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn timelines_match_the_window_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("oracle.jsonl");
    let lines = [
        post("u1", "BD-I", "a", 0, "IN"),
        post("u1", "BD-I", "b", 10, "IN"),
        post("u1", "BD-I", "c", 20, "IN"),
        post("u1", "BD-I", "d", 35, "ID"),
        post("u2", "NOS", "e", 0, "AT"),
        post("u2", "NOS", "f", 3, "AT"),
    ];
    std::fs::write(&corpus, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("timelines.jsonl");
    ok(&["timelines", "--corpus", p(&corpus), "--l", "6", "--m", "1", "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1, "{text}");
    assert_eq!(rows[0]["anchor_post_id"], "c");
    assert_eq!(rows[0]["future_label"], "ID");
    assert_eq!(rows[0]["post_ids"], serde_json::json!(["a", "b", "c"]));
    assert_eq!(rows[0]["deltas"], serde_json::json!([20.0, 10.0, 0.0]));
}

#[test]
fn full_chain_produces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let tl = dir.path().join("timelines.jsonl");
    ok(&["timelines", "--corpus", p(&corpus), "--out", p(&tl)]);
    let n_timelines = std::fs::read_to_string(&tl).unwrap().lines().count();
    assert!(n_timelines >= 100, "only {n_timelines} timelines");

    let run = dir.path().join("run");
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&run)];
    args.extend(TINY);
    ok(&args);
    for f in ["metrics.csv", "history.csv", "folds.csv", "summary.json", "config.json", "manifest.json", "fold0.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "run_id,task,scheme,precision,recall,f1");
    assert_eq!(metrics.lines().count(), 1 + 2 * 3 + 2);

    let rerun = dir.path().join("rerun");
    let saved = run.join("config.json");
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&rerun), "--config", p(&saved)];
    args.extend(["--jobs", "1"]);
    ok(&args);
    for f in ["metrics.csv", "history.csv", "fold1.ckpt"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(rerun.join(f)).unwrap(), "{f} differs");
    }

    let eval = dir.path().join("eval.csv");
    ok(&["eval", "--checkpoint", p(&run.join("fold0.ckpt")), "--corpus", p(&corpus), "--out", p(&eval)]);
    let text = std::fs::read_to_string(&eval).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "run_id,task,scheme,precision,recall,f1");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("fold0,suicidality,4,"));
    assert!(rows[1].starts_with("fold0,symptom,4,"));
    let v = fails_with(
        &["eval", "--checkpoint", p(&run.join("fold0.ckpt")), "--corpus", p(&corpus), "--scheme", "2", "--out", p(&eval)],
        3,
    );
    assert!(v["message"].as_str().unwrap().contains("levels"));

    let att = dir.path().join("attention.json");
    let svg = dir.path().join("attention.svg");
    let csv = dir.path().join("attention.csv");
    ok(&[
        "attention", "--checkpoint", p(&run.join("fold0.ckpt")), "--corpus", p(&corpus), "--out", p(&att), "--plot",
        p(&svg), "--csv", p(&csv),
    ]);
    let profile: Value = serde_json::from_slice(&std::fs::read(&att).unwrap()).unwrap();
    assert_eq!(profile["symptoms"].as_array().unwrap().len(), 8);
    assert_eq!(profile["levels"].as_array().unwrap().len(), 4);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 32);
}

#[test]
fn ablation_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ablate = dir.path().join("ablate.csv");
    let mut args = vec!["ablate", "--corpus", p(&corpus), "--variant", "w/o Somatic", "--out", p(&ablate)];
    args.extend(TINY);
    ok(&args);
    let text = std::fs::read_to_string(&ablate).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("w/o Somatic,suicidality,4,"));

    let sweep = dir.path().join("sweep.csv");
    let mut args = vec!["sweep", "--corpus", p(&corpus), "--l", "1,6", "--m", "1", "--out", p(&sweep)];
    args.extend(TINY);
    ok(&args);
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().next().unwrap(), "l_months,m_months,n_timelines,scheme,precision,recall,f1,symptom_f1,note");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn analysis_commands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let surv = dir.path().join("survival.csv");
    let plot = dir.path().join("survival.svg");
    ok(&["survival", "--corpus", p(&corpus), "--out", p(&surv), "--plot", p(&plot)]);
    let text = std::fs::read_to_string(&surv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "group,time_days,at_risk,events,survival");
    assert!(dir.path().join("survival.json").is_file());
    assert!(std::fs::read_to_string(&plot).unwrap().contains("<path"));

    let lex = dir.path().join("lex.json");
    std::fs::write(&lex, r#"{"sad": ["sad", "cry*", "hopeless"]}"#).unwrap();
    let ratings = dir.path().join("ratings.csv");
    std::fs::write(&ratings, "unit,rater,label\n1,a,IN\n1,b,IN\n2,a,ID\n2,b,IN\n3,a,BR\n3,b,BR\n4,a,ID\n4,b,ID\n").unwrap();
    let stats = dir.path().join("stats.csv");
    ok(&["stats", "--corpus", p(&corpus), "--lexicon", p(&lex), "--ratings", p(&ratings), "--out", p(&stats)]);
    let table = std::fs::read_to_string(&stats).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Depressed,")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("sad,")), "{table}");
    let agreement = std::fs::read_to_string(dir.path().join("stats.agreement.csv")).unwrap();
    assert!(agreement.contains("cohens_kappa,a|b,4,"));
    assert!(agreement.contains("krippendorff_alpha,a|b,4,"));
}

#[test]
fn failures_use_exit_codes_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    fails_with(&["train", "--out", p(&out)], 2);
    fails_with(&["synth", "--seed", "1", "--out", p(&out), "--bogus"], 2);
    fails_with(&["train", "--corpus", "/nonexistent/corpus.jsonl", "--out", p(&out)], 3);
    fails_with(&[], 2);

    let corpus = small_corpus(dir.path());
    fails_with(&["ablate", "--corpus", p(&corpus), "--variant", "no-such-row", "--out", p(&out)], 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"hiden_size": 3}"#).unwrap();
    fails_with(&["train", "--corpus", p(&corpus), "--config", p(&bad), "--out", p(&out)], 3);
    fails_with(&["train", "--corpus", p(&corpus), "--lr=-1", "--out", p(&out)], 3);
    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "{not json\n").unwrap();
    fails_with(&["survival", "--corpus", p(&garbage), "--out", p(&out)], 3);

    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&run_dir)];
    args.extend(["--embedding-dim", "16", "--hidden-size", "4", "--epochs", "3", "--folds", "3", "--patience", "3"]);
    args.extend(["--lr", "1e300", "--weight-decay", "0"]);
    let v = fails_with(&args, 4);
    assert_eq!(v["error"], "divergence");
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for (flag, default) in [
        ("--lr", "1e-5"),
        ("--hidden-size", "512"),
        ("--lstm-layers", "2"),
        ("--dropout", "0.1"),
        ("--alpha", "1.8"),
        ("--batch-size", "64"),
        ("--epochs", "200"),
        ("--patience", "20"),
        ("--lr-gamma", "0.001"),
        ("--weight-decay", "0.01"),
        ("--folds", "5"),
    ] {
        let lines: Vec<&str> = help.lines().collect();
        let at = lines.iter().position(|l| l.trim_start().starts_with(&format!("{flag} "))).unwrap_or_else(|| panic!("{flag} missing"));
        let block: Vec<&str> = std::iter::once(lines[at])
            .chain(lines[at + 1..].iter().take_while(|l| !l.trim_start().starts_with('-')).copied())
            .collect();
        assert!(block.join(" ").contains(&format!("[default: {default}]")), "{flag}: {block:?}");
    }
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    assert!(top.contains("Exit codes"));
}

#[test]
fn embedding_cache_directory_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let cache = dir.path().join("cache");
    std::fs::create_dir(&cache).unwrap();
    let run = |out: &str| {
        let mut args = vec!["train", "--corpus", p(&corpus), "--out"];
        let out = dir.path().join(out);
        let out_s = out.to_str().unwrap().to_string();
        args.push(&out_s);
        args.extend(TINY);
        let status = Command::new(env!("CARGO_BIN_EXE_bdrisk")).args(&args).env("BDRISK_CACHE_DIR", &cache).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(run("b"), first);
}
