use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogalign"))
        .args(args)
        .output()
        .expect("spawn cogalign")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let o = bin(args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(task: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth",
            "--task",
            task,
            "--seed",
            "2",
            "-o",
            &s(&root.join("data")),
            "--set",
            "synth.n_train=30",
            "--set",
            "synth.n_test=10",
            "--set",
            "synth.n_dev=10",
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        s(&self.root.join(name))
    }

    fn data(&self, split: &str) -> String {
        self.path(&format!("data/{split}.tsv"))
    }

    /// Small-model training arguments plus `extra`.
    fn train_args(&self, task: &str, extra: &[&str]) -> Vec<String> {
        let mut a: Vec<String> = [
            "train",
            "--task",
            task,
            "--train",
            &self.data("train"),
            "--test",
            &self.data("test"),
            "--epochs",
            "2",
            "--checkpoint",
            &self.path("m.ckpt"),
            "--metrics",
            &self.path("metrics.jsonl"),
            "--set",
            "model.word_dim=8",
            "--set",
            "model.hidden=4",
            "--set",
            "model.shared_dim=6",
            "--set",
            "model.use_chars=false",
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        a.extend(extra.iter().map(|x| x.to_string()));
        a
    }

    fn metrics(&self) -> Vec<Value> {
        std::fs::read_to_string(self.path("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn synth_writes_splits_and_spec() {
    let f = Fixture::new("ner");
    for name in ["train.tsv", "dev.tsv", "test.tsv", "spec.cfg"] {
        assert!(f.root.join("data").join(name).exists(), "{name}");
    }
    let spec = std::fs::read_to_string(f.root.join("data/spec.cfg")).unwrap();
    assert!(
        spec.contains("n_train = 30") || spec.contains("n_train=30"),
        "{spec}"
    );
}

#[test]
fn train_eval_decode_export_round_trip() {
    let f = Fixture::new("ner");
    let out = ok(&strs(&f.train_args("ner", &[])));
    assert!(out.contains("epoch   1"), "{out}");

    let lines = f.metrics();
    let epochs: Vec<_> = lines.iter().filter(|l| l["record"] == "epoch").collect();
    assert_eq!(epochs.len(), 2);
    let summary = lines.last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["split"], "test");
    let trained_f1 = summary["span"]["f1"].as_f64().unwrap();

    let (ckpt, test, eval_metrics) = (f.path("m.ckpt"), f.data("test"), f.path("eval.jsonl"));
    let common = [
        "--checkpoint",
        &ckpt,
        "--test",
        &test,
        "--metrics",
        &eval_metrics,
    ];
    let mut eval = vec!["eval"];
    eval.extend(common);
    ok(&eval);
    let ev: Value = serde_json::from_str(
        std::fs::read_to_string(f.path("eval.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    // a reloaded checkpoint scores exactly like the model that was saved
    assert_eq!(ev["span"]["f1"].as_f64().unwrap(), trained_f1);

    let decoded_path = f.path("decoded.tsv");
    let mut decode = vec!["decode", "-o", &decoded_path];
    decode.extend(common);
    ok(&decode);
    let input = std::fs::read_to_string(f.data("test")).unwrap();
    let decoded = std::fs::read_to_string(f.path("decoded.tsv")).unwrap();
    assert_eq!(input.lines().count(), decoded.lines().count());
    for (a, b) in input.lines().zip(decoded.lines()) {
        let (ca, cb): (Vec<_>, Vec<_>) = (a.split('\t').collect(), b.split('\t').collect());
        assert_eq!(ca.len(), cb.len());
        if ca.len() > 1 {
            assert_eq!(ca[0], cb[0]);
            assert_eq!(ca[2..], cb[2..]);
            assert!(["O", "B-ENT", "I-ENT"].contains(&cb[1]) || !cb[1].is_empty());
        }
    }

    let hidden_path = f.path("hidden.tsv");
    let mut export = vec!["export", "-o", &hidden_path];
    export.extend(common);
    let out = ok(&export);
    assert!(out.contains("modality centroid distance"), "{out}");
    let hidden = std::fs::read_to_string(f.path("hidden.tsv")).unwrap();
    assert!(hidden.lines().any(|l| l.starts_with("text\t")));
    assert!(hidden.lines().any(|l| l.starts_with("cognitive\t")));
}

#[test]
fn classification_task_trains_and_reports_macro_scores() {
    let f = Fixture::new("sentiment");
    ok(&strs(&f.train_args("sentiment", &[])));
    let summary = f.metrics().pop().unwrap();
    assert!(summary["macro"]["f1"].is_number(), "{summary}");
    assert!(summary["discriminator_accuracy"].is_number());
}

#[test]
fn no_discriminator_ablation_reports_zero_adversarial_loss() {
    let f = Fixture::new("ner");
    ok(&strs(
        &f.train_args("ner", &["--ablate", "no-discriminator"]),
    ));
    for l in f.metrics().iter().filter(|l| l["record"] == "epoch") {
        assert_eq!(l["adversarial"].as_f64().unwrap(), 0.0, "{l}");
        assert!(l["task_cog"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let f = Fixture::new("ner");
    let cfg = f.path("run.cfg");
    std::fs::write(&cfg, "train.epochs = 5\nmodel.hidden = 4\n").unwrap();
    let args = f.train_args("ner", &["-c", &cfg]);
    // the file asks for 5 epochs, the flag for 2
    assert!(args.windows(2).any(|w| w[0] == "--epochs" && w[1] == "2"));
    ok(&strs(&args));
    let epochs = f
        .metrics()
        .iter()
        .filter(|l| l["record"] == "epoch")
        .count();
    assert_eq!(epochs, 2);
}

#[test]
fn config_and_data_errors_exit_2() {
    let f = Fixture::new("ner");
    let missing = bin(&[
        "eval",
        "--checkpoint",
        &f.path("nope.ckpt"),
        "--test",
        &f.data("test"),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let unknown = bin(&["synth", "-o", &f.path("x"), "--set", "model.hiden=3"]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("model.hiden"));

    let bad_task = bin(&["synth", "--task", "parsing", "-o", &f.path("x")]);
    assert_eq!(code(&bad_task), 2);

    let no_train = bin(&["train", "--checkpoint", &f.path("m.ckpt")]);
    assert_eq!(code(&no_train), 2);

    std::fs::write(f.path("bad.tsv"), "word\n").unwrap();
    let bad_tsv = bin(&["train", "--train", &f.path("bad.tsv")]);
    assert_eq!(code(&bad_tsv), 2);
}

#[test]
fn diverging_training_exits_3() {
    let f = Fixture::new("ner");
    let o = bin(&strs(&f.train_args("ner", &["--lr", "1e300"])));
    assert_eq!(
        code(&o),
        3,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn gradcheck_passes_and_flags_an_injected_fault() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("adversarial/shared"), "{out}");
    assert!(!out.contains("FAIL"));
    ok(&["gradcheck", "--float32"]);
    ok(&["gradcheck", "--task", "relation", "--signals", "eye"]);

    let o = bin(&["gradcheck", "--inject-grl-fault"]);
    assert_eq!(code(&o), 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL"));
    // the task objective never crosses the reversal node
    assert!(stdout
        .lines()
        .filter(|l| l.starts_with("task/"))
        .all(|l| l.ends_with("ok")));
}

#[test]
fn help_lists_config_keys() {
    let out = ok(&["--help"]);
    assert!(out.contains("train.lambda"));
    assert!(out.contains("synth.rho"));
}
