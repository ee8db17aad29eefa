#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CATEGORIES: [&str; 6] = ["Kitchen", "Garden", "Outdoor", "Office", "Bath", "Toys"];
const ADJECTIVES: [&str; 5] = ["Bamboo", "Steel", "Recycled", "Classic", "Compact"];

pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
}

pub fn catalog_jsonl(n_items: usize) -> String {
    let mut out = String::new();
    for n in 0..n_items {
        let cat = CATEGORIES[n % CATEGORIES.len()];
        let adj = ADJECTIVES[(n / CATEGORIES.len()) % ADJECTIVES.len()];
        let line = serde_json::json!({
            "id": format!("i{n:03}"),
            "title": format!("{adj} {cat} Item {n}"),
            "category": cat,
            "attributes": {"brand": format!("b{}", n % 7)},
            "sustainable": n % 4 == 0,
        });
        writeln!(out, "{line}").unwrap();
    }
    out
}

/// Sessions of three same-category items; the target shares the category.
pub fn sessions_jsonl(prefix: &str, range: std::ops::Range<usize>, n_items: usize) -> String {
    let n_cat = CATEGORIES.len();
    let per_cat = n_items / n_cat;
    let item = |cat: usize, j: usize| format!("i{:03}", (j % per_cat) * n_cat + cat);
    let mut out = String::new();
    for s in range {
        let cat = s % n_cat;
        let base = s / n_cat;
        let items: Vec<String> = (0..3).map(|j| item(cat, base + 2 * j)).collect();
        let target = item(cat, base + 7);
        let line = serde_json::json!({"session_id": format!("{prefix}{s}"), "items": items, "target": target});
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub const REFINING_SCRIPT: &str = r#"{
  "tags": {
    "infer_reason": "1. ignores the most recent interaction\n2. overlooks the shared category",
    "refine_prompt": "<START>{{q=0.8}} Focus on the latest item.\n{session}\n{candidates}\nReturn a JSON array.<END>",
    "augment": "<START>{{q=0.6}} Variant A\n{session}\n{candidates}<END>\n<START>{{q=0.5}} Variant B\n{session}\n{candidates}<END>\n<START>{{q=0.4}} Variant C\n{session}\n{candidates}<END>"
  },
  "seed": 11
}"#;

pub const SEED_PROMPT: &str = "{{q=0.3}} Rank the candidates for this session.\n{session}\n{candidates}\nReturn a JSON array.";

/// Writes a fixture with `n_train + n_test` sessions over `n_items` items.
pub fn fixture(dir: &Path, n_items: usize, n_train: usize, n_test: usize, extra_toml: &str) -> Fixture {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("catalog.jsonl"), catalog_jsonl(n_items)).unwrap();
    fs::write(dir.join("train.jsonl"), sessions_jsonl("tr", 0..n_train, n_items)).unwrap();
    fs::write(dir.join("test.jsonl"), sessions_jsonl("te", n_train..n_train + n_test, n_items)).unwrap();
    fs::write(dir.join("mock.json"), REFINING_SCRIPT).unwrap();
    fs::write(dir.join("seed_prompt.txt"), SEED_PROMPT).unwrap();
    let config = format!(
        r#"[paths]
catalog = "catalog.jsonl"
train = "train.jsonl"
test = "test.jsonl"
runs_root = "runs"

[ingest]
n_initial = 100
seed = 3

[mock]
script = "mock.json"

[prompt]
seeds = ["seed_prompt.txt"]

[optimizer]
max_trials = 12
batch_size = 8
{extra_toml}"#
    );
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        config: path,
    }
}

pub fn greenrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greenrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = greenrec(args);
    assert!(
        out.status.success(),
        "greenrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
