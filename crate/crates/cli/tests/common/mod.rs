#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const PROVIDER: &str = "mock:mix:7";

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy(name: &str) -> String {
    workspace().join("data/toy").join(name).display().to_string()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn docmt<S: AsRef<str>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docmt"))
        .args(args.iter().map(AsRef::as_ref))
        .output()
        .expect("run docmt")
}

/// Runs `docmt` and panics with its stderr unless it exits 0.
pub fn docmt_ok<S: AsRef<str>>(args: &[S]) -> String {
    let out = docmt(args);
    assert!(
        out.status.success(),
        "docmt {:?} failed: {}",
        args.iter().map(AsRef::as_ref).collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The full toy pipeline. Returns `(file name, contents)` for every report written to `dir`.
pub fn run_golden_pipeline(dir: &Path) -> Vec<(String, String)> {
    let out = |name: &str| dir.join(name).display().to_string();
    let corpus = toy("manifest.toml");
    let mqm = toy("mqm.tsv");
    let mut names = Vec::new();
    for (metric, weights) in [
        ("doc-bertscore", None),
        ("doc-prism", None),
        ("doc-comet", Some(toy("comet.weights"))),
    ] {
        for n in ["0", "2"] {
            let name = format!("scores-{metric}-{n}.tsv");
            let mut args = vec![
                "score".to_string(),
                "--corpus".into(),
                corpus.clone(),
                "--provider".into(),
                PROVIDER.into(),
                "--metric".into(),
                metric.into(),
                "--context-size".into(),
                n.into(),
                "--output".into(),
                out(&name),
            ];
            if let Some(w) = &weights {
                args.extend(["--weights".to_string(), w.clone()]);
            }
            docmt_ok(&args);
            names.push(name);
        }
    }
    let mut correlate = vec!["correlate".to_string(), "--mqm".into(), mqm.clone(), "--seed".into(), "0".into()];
    correlate.extend(names.iter().map(|n| out(n)));
    correlate.extend(["--output".to_string(), out("table1.tsv")]);
    docmt_ok(&correlate);
    docmt_ok(&[
        "signif",
        "--mqm",
        &mqm,
        &out("scores-doc-bertscore-2.tsv"),
        &out("scores-doc-bertscore-0.tsv"),
        "--n-perm",
        "1000",
        "--seed",
        "0",
        "--output",
        &out("signif.tsv"),
    ]);
    docmt_ok(&[
        "contrastive",
        "--examples",
        &toy("contrastive.tsv"),
        "--config",
        &toy("run.toml"),
        "--weights",
        &toy("comet-qe.weights"),
        "--output",
        &out("table2.tsv"),
    ]);
    for (format, name) in [("long", "fig2.tsv"), ("modes", "table3.tsv")] {
        docmt_ok(&[
            "ablate",
            "--corpus",
            &corpus,
            "--mqm",
            &mqm,
            "--provider",
            PROVIDER,
            "--metric",
            "doc-bertscore",
            "--sizes",
            "0,1,2",
            "--modes",
            "reference,hypothesis",
            "--format",
            format,
            "--output",
            &out(name),
        ]);
    }
    names.extend(["table1.tsv", "signif.tsv", "table2.tsv", "fig2.tsv", "table3.tsv"].map(String::from));
    names
        .into_iter()
        .map(|n| {
            let content = fs::read_to_string(dir.join(&n)).unwrap();
            (n, content)
        })
        .collect()
}

/// Compares reports with the committed copies; `DOCMT_BLESS=1` rewrites them instead.
pub fn compare_with_golden(artifacts: &[(String, String)]) -> Vec<String> {
    let bless = std::env::var_os("DOCMT_BLESS").is_some();
    let mut problems = Vec::new();
    for (name, content) in artifacts {
        let path = golden_dir().join(name);
        if bless {
            fs::create_dir_all(golden_dir()).unwrap();
            fs::write(&path, content).unwrap();
            continue;
        }
        match fs::read_to_string(&path) {
            Ok(expected) if &expected == content => {}
            Ok(_) => problems.push(format!("{name} differs from the committed copy")),
            Err(e) => problems.push(format!("{}: {e}", path.display())),
        }
    }
    problems
}
