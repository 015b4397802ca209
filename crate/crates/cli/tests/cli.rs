use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use idgnn_cli::Cli;

fn idgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idgnn"))
        .args(args)
        .env_remove("IDGNN_SEED")
        .output()
        .expect("binary runs")
}

fn idgnn_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idgnn"))
        .args(args)
        .env("IDGNN_SEED", seed)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(o), stderr(o));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_documents_every_flag() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        let name = sub.get_name();
        let out = idgnn(&[name, "--help"]);
        ok(&out);
        let text = stdout(&out);
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(text.contains(&format!("--{long}")), "{name} --help lacks --{long}");
            assert!(arg.get_help().is_some(), "{name} --{long} has no help text");
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = idgnn(&["gen-wlhard", "--bogus", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = idgnn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let out = idgnn(&["train", "--config", s(&missing), "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: kind=usage msg="), "{err}");

    let out = idgnn_env(&["gen-wlhard", "--pairs", "2", "--out", s(dir.path())], "not-a-number");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    std::fs::write(&data, "{\"num_nodes\": 2, \"edges\": [[0, 5]], \"graph_label\": 0}\n").unwrap();
    let out = idgnn(&["train", "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind=validation msg="), "{err}");

    let out = idgnn(&["gen-wlhard", "--pairs", "2", "--sizes", "5", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: kind=contract"));
}

#[test]
fn generation_is_reproducible_with_provenance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "gen-istriangle".to_string(),
            "--graphs".into(),
            "6".into(),
            "--nodes".into(),
            "20".into(),
            "--test-graphs".into(),
            "2".into(),
            "--labeled".into(),
            "30".into(),
            "--seed".into(),
            "4".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    for dir in [a.path(), b.path()] {
        let owned = args(dir);
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        ok(&idgnn(&refs));
    }
    let prov = read_json(&a.path().join("provenance-gen-istriangle.json"));
    assert_eq!(prov["status"], "completed");
    assert_eq!(prov["seed"], 4);
    let artifacts = prov["artifacts"].as_object().unwrap();
    assert_eq!(artifacts.len(), 7);
    for (rel, hash) in artifacts {
        let bytes_a = std::fs::read(a.path().join(rel)).unwrap();
        let bytes_b = std::fs::read(b.path().join(rel)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{rel} differs between runs");
        assert_eq!(hash.as_str().unwrap().len(), 64);
    }
    assert_eq!(
        std::fs::read(a.path().join("provenance-gen-istriangle.json")).unwrap(),
        std::fs::read(b.path().join("provenance-gen-istriangle.json")).unwrap()
    );
    let first = std::fs::read_to_string(a.path().join("train.jsonl")).unwrap();
    assert_eq!(first.lines().count(), 6);
}

#[test]
fn seed_env_overrides_flag() {
    let by_flag = tempfile::tempdir().unwrap();
    let by_env = tempfile::tempdir().unwrap();
    ok(&idgnn(&["gen-wlhard", "--pairs", "5", "--seed", "9", "--out", s(by_flag.path())]));
    ok(&idgnn_env(&["gen-wlhard", "--pairs", "5", "--seed", "1", "--out", s(by_env.path())], "9"));
    assert_eq!(
        std::fs::read(by_flag.path().join("pairs.jsonl")).unwrap(),
        std::fs::read(by_env.path().join("pairs.jsonl")).unwrap()
    );
    assert_eq!(read_json(&by_env.path().join("provenance-gen-wlhard.json"))["seed"], 9);
}

#[test]
fn verify_theorem3_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = idgnn(&["verify-theorem3", "--graphs", "25", "--seed", "3", "--out", s(dir.path())]);
    ok(&out);
    assert_eq!(stdout(&out).trim(), "25/25 agree; invariant under 50 resamples");
    let report = read_json(&dir.path().join("theorem3.json"));
    assert_eq!(report["intermediates_vary"], 25);
}

#[test]
fn verify_wl_report() {
    let out = idgnn(&["verify-wl", "--pairs", "20", "--sizes", "6,8,10", "--seed", "2"]);
    ok(&out);
    assert!(stdout(&out).starts_with("20/20 pairs 1-WL indistinguishable"), "{}", stdout(&out));
}

fn write_config(dir: &Path, name: &str, icon: bool) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "epochs": 4,
        "batch_size": 8,
        "hidden_dim": 8,
        "num_layers": 2,
        "id_dim": 2,
        "dropout": 0.0,
        "seeds": [0, 1],
        "eval_every": 2,
        "invariance_k": 5,
        "invariance_every": 2,
        "icon": {"enabled": icon, "lambda_reg": 0.1},
    });
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

/// Checks every polyline vertex lies inside its panel's frame.
fn assert_no_clipping(svg: &str) {
    let attr = |tag: &str, key: &str| -> f64 {
        let start = tag.find(&format!(" {key}=\"")).unwrap() + key.len() + 3;
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    };
    let mut panels = 0;
    for panel in svg.split("<g class=\"panel\">").skip(1) {
        panels += 1;
        let rect = &panel[panel.find("<rect class=\"frame\"").unwrap()..];
        let rect = &rect[..rect.find("/>").unwrap()];
        let (x, y, w, h) = (attr(rect, "x"), attr(rect, "y"), attr(rect, "width"), attr(rect, "height"));
        let mut lines = 0;
        for line in panel.split("<polyline").skip(1) {
            lines += 1;
            let start = line.find("points=\"").unwrap() + 8;
            let end = start + line[start..].find('"').unwrap();
            for pt in line[start..end].split_whitespace() {
                let (px, py) = pt.split_once(',').unwrap();
                let (px, py): (f64, f64) = (px.parse().unwrap(), py.parse().unwrap());
                assert!(px >= x && px <= x + w && py >= y && py <= y + h, "point {pt} outside frame");
            }
        }
        assert_eq!(lines, 2, "expected an RNI and an ICON series per panel");
    }
    assert_eq!(panels, 2);
}

#[test]
fn train_evaluate_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&idgnn(&["gen-wlhard", "--pairs", "10", "--sizes", "6", "--seed", "1", "--out", s(&root.join("data"))]));
    let data = root.join("data/pairs.jsonl");

    let mut csv_text = String::new();
    for (method, icon) in [("rni", false), ("icon", true)] {
        let cfg = write_config(root, &format!("{method}.json"), icon);
        let out_dir = root.join(method);
        let out = idgnn(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--extra-test",
            &format!("again={}", s(&data)),
            "--out",
            s(&out_dir),
        ]);
        ok(&out);
        assert!(stdout(&out).contains(&format!("{method} test: accuracy")));
        for f in ["record.json", "metrics.csv", "checkpoints/seed-0.json", "checkpoints/seed-1.json"] {
            assert!(out_dir.join(f).is_file(), "missing {f}");
        }
        let prov = read_json(&out_dir.join("provenance-train.json"));
        assert_eq!(prov["status"], "completed");
        assert_eq!(prov["artifacts"].as_object().unwrap().len(), 4);
        let text = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        assert!(text.starts_with("epoch,split,task_metric,invariance_ratio,K,seed"));
        assert!(text.contains(",again,") && text.contains("final,"));
        if csv_text.is_empty() {
            csv_text = text;
        } else {
            csv_text.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }

    let ckpt = root.join("icon/checkpoints/seed-0.json");
    let out = idgnn(&["eval-invariance", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "test", "--k", "7", "--out", s(&root.join("inv"))]);
    ok(&out);
    let inv = read_json(&root.join("inv/invariance.json"));
    let mean = inv["mean"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&mean), "{mean}");
    assert_eq!(inv["per_example"].as_array().unwrap().len(), 4);

    let combined = root.join("combined.csv");
    std::fs::write(&combined, csv_text).unwrap();
    let plots = root.join("plots");
    ok(&idgnn(&["export-curves", "--metrics", s(&combined), "--out", s(&plots)]));
    let svgs: Vec<_> = std::fs::read_dir(&plots)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 1);
    let svg = std::fs::read_to_string(&svgs[0]).unwrap();
    assert!(svg.contains(">rni</text>") && svg.contains(">icon</text>"));
    assert_no_clipping(&svg);

    let summary = std::fs::read_to_string(plots.join("summary.csv")).unwrap();
    assert!(summary.starts_with("dataset,model,method,split,task_metric_mean"));
    assert!(summary.lines().any(|l| l.contains(",icon,test,")));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&idgnn(&["gen-wlhard", "--pairs", "6", "--sizes", "6", "--out", s(&root.join("data"))]));
    let cfg = write_config(root, "cfg.json", true);
    for run in ["a", "b"] {
        ok(&idgnn(&["train", "--config", s(&cfg), "--data", s(&root.join("data/pairs.jsonl")), "--seed", "5", "--out", s(&root.join(run))]));
    }
    for f in ["metrics.csv", "record.json", "checkpoints/seed-5.json", "provenance-train.json"] {
        assert_eq!(std::fs::read(root.join("a").join(f)).unwrap(), std::fs::read(root.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_metrics_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "epoch,split,task_metric,invariance_ratio,K,seed,dataset,model,method\n").unwrap();
    let out = idgnn(&["export-curves", "--metrics", s(&csv), "--out", s(&dir.path().join("plots"))]);
    ok(&out);
    assert!(stderr(&out).starts_with("warning:"));
    let svgs = std::fs::read_dir(dir.path().join("plots"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 0);
}
