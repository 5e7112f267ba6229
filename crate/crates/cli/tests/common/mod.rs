#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use kgfuse::seed::sha256_hex;

pub const BIN: &str = env!("CARGO_BIN_EXE_kgfuse");

/// Runs the binary in `dir`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it succeeds.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "kgfuse {} failed ({:?}):\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn hash(path: impl AsRef<Path>) -> String {
    sha256_hex(&std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display())))
}

pub fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Four entities, two relations, four gold triples.
pub fn small_kg(dir: &Path) {
    write(
        dir,
        "vocab.jsonl",
        concat!(
            "{\"id\":\"Q1\",\"surface\":\"flu\"}\n",
            "{\"id\":\"Q2\",\"surface\":\"fever\"}\n",
            "{\"id\":\"Q3\",\"surface\":\"cough\"}\n",
            "{\"id\":\"Q4\",\"surface\":\"aspirin\"}\n",
        ),
    );
    write(
        dir,
        "relations.jsonl",
        concat!(
            "{\"id\":\"P1\",\"verbalization\":\"has symptoms\"}\n",
            "{\"id\":\"P2\",\"verbalization\":\"treated by\"}\n",
        ),
    );
    write(
        dir,
        "triples.jsonl",
        concat!(
            "{\"s\":\"Q1\",\"r\":\"P1\",\"o\":\"Q2\"}\n",
            "{\"s\":\"Q1\",\"r\":\"P1\",\"o\":\"Q3\"}\n",
            "{\"s\":\"Q1\",\"r\":\"P2\",\"o\":\"Q4\"}\n",
            "{\"s\":\"Q2\",\"r\":\"P2\",\"o\":\"Q4\"}\n",
        ),
    );
}

/// Four entities fully connected by one relation with equal weights; the
/// relational objective alone is minimized by a constant encoder.
pub fn symmetric_kg(dir: &Path) {
    write(
        dir,
        "vocab.jsonl",
        concat!(
            "{\"id\":\"a\",\"surface\":\"alpha\"}\n",
            "{\"id\":\"b\",\"surface\":\"beta\"}\n",
            "{\"id\":\"c\",\"surface\":\"gamma\"}\n",
            "{\"id\":\"d\",\"surface\":\"delta\"}\n",
        ),
    );
    write(dir, "relations.jsonl", "{\"id\":\"R0\",\"verbalization\":\"linked to\"}\n");
    let mut rows = String::new();
    for s in ["a", "b", "c", "d"] {
        for o in ["a", "b", "c", "d"] {
            if s != o {
                rows.push_str(&format!(
                    "{{\"s\":\"{s}\",\"r\":\"R0\",\"o\":\"{o}\",\"weight\":0.5,\"predicted\":true,\"correct\":true}}\n"
                ));
            }
        }
    }
    write(dir, "weights.jsonl", &rows);
}

pub fn train_symmetric_gk(dir: &Path, lambda: &str, out: &str) -> serde_json::Value {
    ok(
        dir,
        &[
            "train-gk", "--weights", "weights.jsonl", "--vocab", "vocab.jsonl", "--relations", "relations.jsonl",
            "--toy", "--toy-dim", "16", "--lambda", lambda, "--out", out,
        ],
    );
    json(dir.join(format!("{out}.report.json")))
}
