//! Canonical serialization against an independent canonicalizer.
//!
//! The canonicalizer below re-derives the canonical form straight from the
//! raw JSON values (sorted images, alphabetical keys, f64 box coordinates,
//! provenance defaulted) without touching the dataset model, so agreement
//! is evidence rather than tautology.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sgtransfer::{load_dataset, load_vocab, write_dataset, Vocab};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_vocab() -> Vocab {
    load_vocab(
        &fixture_dir().join("objects.txt"),
        &fixture_dir().join("predicates.txt"),
    )
    .unwrap()
}

const FIXTURES: [&str; 5] = [
    "f1_empty.jsonl",
    "f2_single.jsonl",
    "f3_unsorted.jsonl",
    "f4_provenance.jsonl",
    "f5_mixed.jsonl",
];

/// Reference canonicalizer: plain JSON value manipulation. serde_json's
/// default map is ordered by key, which matches the canonical key order.
fn canonicalize(raw: &str) -> String {
    let mut images: Vec<Value> = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    images.sort_by_key(|v| v["image_id"].as_str().unwrap().to_string());
    let mut out = String::new();
    for image in images {
        let objects: Vec<Value> = image["objects"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| {
                let coords: Vec<f64> = o["box"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|c| c.as_f64().unwrap())
                    .collect();
                json!({ "box": coords, "class": o["class"] })
            })
            .collect();
        let relations: Vec<Value> = image["relations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let provenance = r
                    .get("provenance")
                    .and_then(Value::as_str)
                    .unwrap_or("original");
                json!({
                    "obj": r["obj"],
                    "predicate": r["predicate"],
                    "provenance": provenance,
                    "subj": r["subj"],
                })
            })
            .collect();
        let canonical = json!({
            "image_id": image["image_id"],
            "objects": objects,
            "relations": relations,
        });
        out.push_str(&serde_json::to_string(&canonical).unwrap());
        out.push('\n');
    }
    out
}

#[test]
fn write_matches_independent_canonicalizer() {
    let vocab = fixture_vocab();
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let path = fixture_dir().join(name);
        let raw = std::fs::read_to_string(&path).unwrap();
        let dataset = load_dataset(&path, &vocab).unwrap();
        let out = dir.path().join(name);
        write_dataset(&dataset, &out).unwrap();
        let written = std::fs::read_to_string(&out).unwrap();
        assert_eq!(written, canonicalize(&raw), "fixture {name}");
    }
}

#[test]
fn load_write_load_is_identity() {
    let vocab = fixture_vocab();
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let path = fixture_dir().join(name);
        let first = load_dataset(&path, &vocab).unwrap();
        let out = dir.path().join(name);
        write_dataset(&first, &out).unwrap();
        let second = load_dataset(&out, &vocab).unwrap();
        assert_eq!(first, second, "fixture {name}");
    }
}

#[test]
fn equal_datasets_serialize_identically() {
    let vocab = fixture_vocab();
    let path = fixture_dir().join("f3_unsorted.jsonl");
    let dataset = load_dataset(&path, &vocab).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    write_dataset(&dataset, &a).unwrap();
    write_dataset(&dataset.clone(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
