//! Canonical JSONL dataset I/O and vocab file loading.
//!
//! The canonical form fixes everything that could wobble between runs:
//! one image per line, images sorted by `image_id`, record keys in a fixed
//! order, box coordinates always serialized as floats, provenance always
//! present, `\n` line endings. Equal datasets produce identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{BBox, Dataset, Image, ObjectInstance, Provenance, RelationInstance, Vocab};

/// Key marking a metadata header line in dataset and plan files.
pub(crate) const HEADER_KEY: &str = "__manifest__";

// Field declaration order below is the canonical (sorted) key order.

#[derive(Serialize, Deserialize)]
struct WireImage {
    image_id: String,
    objects: Vec<WireObject>,
    relations: Vec<WireRelation>,
}

#[derive(Serialize, Deserialize)]
struct WireObject {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
}

#[derive(Serialize, Deserialize)]
struct WireRelation {
    obj: usize,
    predicate: String,
    provenance: Option<String>,
    subj: usize,
}

fn provenance_to_string(p: &Provenance, vocab: &Vocab) -> String {
    match p {
        Provenance::Original => "original".to_string(),
        Provenance::InternalTransfer { src } => {
            format!("internal_transfer({})", vocab.predicate_name(*src))
        }
        Provenance::ExternalTransfer => "external_transfer".to_string(),
    }
}

fn provenance_from_string(s: &str, vocab: &Vocab) -> std::result::Result<Provenance, String> {
    match s {
        "original" => Ok(Provenance::Original),
        "external_transfer" => Ok(Provenance::ExternalTransfer),
        other => {
            let inner = other
                .strip_prefix("internal_transfer(")
                .and_then(|rest| rest.strip_suffix(')'))
                .ok_or_else(|| format!("unknown provenance {other:?}"))?;
            let src = vocab
                .predicate_index(inner)
                .ok_or_else(|| format!("unknown transfer source predicate {inner:?}"))?;
            Ok(Provenance::InternalTransfer { src })
        }
    }
}

/// Load object and predicate class names, one per line, index order as listed.
/// Blank lines are ignored.
pub fn load_vocab(objects_path: &Path, predicates_path: &Path) -> Result<Vocab> {
    let read_names = |path: &Path| -> Result<Vec<String>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut names = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let name = line.trim_end_matches('\r');
            if !name.is_empty() {
                names.push(name.to_string());
            }
        }
        Ok(names)
    };
    Vocab::new(read_names(objects_path)?, read_names(predicates_path)?)
}

fn image_from_wire(wire: WireImage, vocab: &Vocab) -> std::result::Result<Image, String> {
    let mut objects = Vec::with_capacity(wire.objects.len());
    for (oid, obj) in wire.objects.into_iter().enumerate() {
        let class = vocab
            .object_index(&obj.class)
            .ok_or_else(|| format!("object {oid}: unknown object class {:?}", obj.class))?;
        let [x1, y1, x2, y2] = obj.bbox;
        let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| format!("object {oid}: {e}"))?;
        objects.push(ObjectInstance { class, bbox });
    }
    let mut relations = Vec::with_capacity(wire.relations.len());
    for (rid, rel) in wire.relations.into_iter().enumerate() {
        let predicate = vocab
            .predicate_index(&rel.predicate)
            .ok_or_else(|| format!("relation {rid}: unknown predicate {:?}", rel.predicate))?;
        let provenance = match rel.provenance {
            None => Provenance::Original,
            Some(s) => {
                provenance_from_string(&s, vocab).map_err(|e| format!("relation {rid}: {e}"))?
            }
        };
        relations.push(RelationInstance {
            subj: rel.subj,
            obj: rel.obj,
            predicate,
            provenance,
        });
    }
    Ok(Image {
        id: wire.image_id,
        objects,
        relations,
    })
}

fn image_to_wire(image: &Image, vocab: &Vocab) -> WireImage {
    WireImage {
        image_id: image.id.clone(),
        objects: image
            .objects
            .iter()
            .map(|o| WireObject {
                bbox: [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                class: vocab.object_name(o.class).to_string(),
            })
            .collect(),
        relations: image
            .relations
            .iter()
            .map(|r| WireRelation {
                obj: r.obj,
                predicate: vocab.predicate_name(r.predicate).to_string(),
                provenance: Some(provenance_to_string(&r.provenance, vocab)),
                subj: r.subj,
            })
            .collect(),
    }
}

/// Load a dataset file, validating every record. A leading header line (a
/// JSON object holding only the manifest key) is tolerated and skipped so
/// that enhanced datasets can be read by every consumer.
pub fn load_dataset(path: &Path, vocab: &Vocab) -> Result<Dataset> {
    load_dataset_with_header(path, vocab).map(|(d, _)| d)
}

/// Like [`load_dataset`], also returning the embedded header (if any) as raw JSON.
pub fn load_dataset_with_header(
    path: &Path,
    vocab: &Vocab,
) -> Result<(Dataset, Option<serde_json::Value>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut images = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        if idx == 0 {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) {
                if let Some(obj) = value.as_object() {
                    if obj.contains_key(HEADER_KEY) {
                        header = Some(obj[HEADER_KEY].clone());
                        continue;
                    }
                }
            }
        }
        let wire: WireImage = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let image_id = wire.image_id.clone();
        let image = image_from_wire(wire, vocab).map_err(|m| Error::Invariant {
            image_id,
            message: m,
        })?;
        images.push(image);
    }
    Ok((Dataset::new(vocab.clone(), images)?, header))
}

/// Canonical serialization of a dataset: one JSON line per image, images
/// sorted by id.
pub fn canonical_dataset_lines(dataset: &Dataset) -> Vec<String> {
    let mut order: Vec<&Image> = dataset.images().iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order
        .into_iter()
        .map(|image| {
            serde_json::to_string(&image_to_wire(image, dataset.vocab()))
                .expect("image serialization cannot fail")
        })
        .collect()
}

/// Write the canonical form of a dataset.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_lines(path, None, canonical_dataset_lines(dataset))
}

/// Write the canonical form preceded by a manifest header line.
pub fn write_dataset_with_header(
    dataset: &Dataset,
    header: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    let header_line = serde_json::to_string(&serde_json::json!({ HEADER_KEY: header }))
        .expect("header serialization cannot fail");
    write_lines(path, Some(header_line), canonical_dataset_lines(dataset))
}

pub(crate) fn write_lines(path: &Path, header: Option<String>, lines: Vec<String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, line: &str| -> Result<()> {
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    if let Some(h) = header {
        write(&mut out, &h)?;
    }
    for line in &lines {
        write(&mut out, line)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// SHA-256 of a file's raw bytes, hex encoded. Used for manifest input stamps.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
