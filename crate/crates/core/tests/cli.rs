use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srupp_encoder::cli::config::RunConfig;
use srupp_encoder::srupp::{matrix_csv, parse_matrix_csv};
use srupp_encoder::{SeededRng, Tensor};

fn srupp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srupp"))
        .args(args)
        .output()
        .expect("spawn srupp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// tiny.cfg with fewer steps, written into `dir`.
fn quick_config(dir: &Path, steps: usize, lr: &str) -> PathBuf {
    let text = std::fs::read_to_string(config("tiny.cfg"))
        .unwrap()
        .replace("steps = 50", &format!("steps = {steps}"))
        .replace("learning_rate = 0.003", &format!("learning_rate = {lr}"));
    let path = dir.join("quick.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_eval_and_dump_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 12, "0.003");
    let run = dir.path().join("run");
    let o = srupp(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["checkpoint.srpp", "history.csv", "run.cfg"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("step,loss,accuracy"));
    assert_eq!(history.lines().count(), 13);
    let saved = RunConfig::load(&run.join("run.cfg")).unwrap();
    assert_eq!(saved, RunConfig::load(&cfg).unwrap());

    let ckpt = run.join("checkpoint.srpp");
    let o = srupp(&["eval", "--checkpoint", s(&ckpt), "--lengths", "24,72"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "24");
    assert_eq!(rows[1][0], "72");
    for r in &rows {
        let acc: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let feats = Tensor::uniform(&[24, 8], 0.0, 1.0, &mut SeededRng::new(3));
    let input = dir.path().join("feats.csv");
    std::fs::write(&input, matrix_csv(&feats)).unwrap();
    let attn = dir.path().join("attn.csv");
    let o = srupp(&[
        "attn-dump",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--layer",
        "0",
        "--out",
        s(&attn),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w = parse_matrix_csv(&std::fs::read_to_string(&attn).unwrap()).unwrap();
    // 24 frames -> 11 -> 5
    assert_eq!(w.shape(), &[5, 5]);
    for i in 0..5 {
        assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn training_is_reproducible_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 6, "0.003");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        srupp(&["train", "--config", s(&cfg), "--out", s(&a)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        srupp(&["train", "--config", s(&cfg), "--out", s(&b)])
            .status
            .code(),
        Some(0)
    );
    for f in ["checkpoint.srpp", "history.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn divergence_exits_one_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 20, "1e308");
    let o = srupp(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at step"), "{}", stderr(&o));
}

#[test]
fn gradcheck_default_passes() {
    let o = srupp(&["gradcheck", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for name in ["sru", "srupp", "encoder"] {
        assert!(
            text.lines()
                .any(|l| l.starts_with(name) && l.ends_with("ok")),
            "{text}"
        );
    }
}

#[test]
fn profile_text_csv_and_verify() {
    let o = srupp(&[
        "profile",
        "--config",
        s(&config("librispeech.cfg")),
        "--seq-len",
        "1000",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("GFlops"));
    assert!(text.contains("assumption: num_layers = 6"));

    let o = srupp(&[
        "profile",
        "--config",
        s(&config("tiny.cfg")),
        "--seq-len",
        "31",
        "--format",
        "csv",
        "--verify",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("component,params,flops\n"));
    assert!(text.contains("(matches)"));
    let total: u64 = text
        .lines()
        .find(|l| l.starts_with("total,"))
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(text.contains(&format!("instrumented flops: {total}")));
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = srupp(&[
        "profile",
        "--config",
        s(&config("tiny.cfg")),
        "--seq-len",
        "6",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("minimum of 7"));

    let o = srupp(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("nope.srpp")),
        "--lengths",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = quick_config(dir.path(), 2, "0.003");
    let run = dir.path().join("run");
    assert_eq!(
        srupp(&["train", "--config", s(&cfg), "--out", s(&run)])
            .status
            .code(),
        Some(0)
    );
    let ckpt = run.join("checkpoint.srpp");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let o = srupp(&["eval", "--checkpoint", s(&ckpt), "--lengths", "24"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("byte offset"), "{}", stderr(&o));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "embed_dim = 7\nbidirectional = true\n").unwrap();
    let o = srupp(&["profile", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(srupp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(srupp(&["--help"]).status.code(), Some(0));
}

#[test]
fn attention_layer_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 1, "0.003");
    let run = dir.path().join("run");
    assert_eq!(
        srupp(&["train", "--config", s(&cfg), "--out", s(&run)])
            .status
            .code(),
        Some(0)
    );
    let input = dir.path().join("feats.csv");
    std::fs::write(&input, matrix_csv(&Tensor::zeros(&[9, 8]))).unwrap();
    let o = srupp(&[
        "attn-dump",
        "--checkpoint",
        s(&run.join("checkpoint.srpp")),
        "--input",
        s(&input),
        "--layer",
        "2",
        "--out",
        s(&dir.path().join("a.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of range"));
    assert!(!dir.path().join("a.csv").exists());
}
