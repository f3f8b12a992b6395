//! Score dump formats: JSONL and a length-prefixed little-endian binary
//! variant whose header carries the vocab fingerprint.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vocab;

use super::{ScoreTable, ScoreVector};

const BINARY_MAGIC: &[u8; 8] = b"SGSCDMP1";

#[derive(Serialize, Deserialize)]
struct WireScore {
    image_id: String,
    subj: usize,
    obj: usize,
    scores: Vec<f64>,
}

/// Write a score table as JSONL, one record per pair, keys in table order.
pub fn write_scores_jsonl(table: &ScoreTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ((image_id, subj, obj), vector) in table.iter() {
        let record = WireScore {
            image_id: image_id.clone(),
            subj: *subj,
            obj: *obj,
            scores: vector.values().to_vec(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Score(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Write the binary variant. Header: magic, fingerprint, vector length,
/// record count; then one length-prefixed record per pair.
pub fn write_scores_binary(table: &ScoreTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    out.write_all(BINARY_MAGIC).map_err(io_err)?;
    let fp = table.fingerprint().as_bytes();
    out.write_all(&(fp.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    out.write_all(fp).map_err(io_err)?;
    let vec_len = table.iter().next().map(|(_, v)| v.len()).unwrap_or(0) as u32;
    out.write_all(&vec_len.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(table.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for ((image_id, subj, obj), vector) in table.iter() {
        let id = image_id.as_bytes();
        out.write_all(&(id.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        out.write_all(id).map_err(io_err)?;
        out.write_all(&(*subj as u64).to_le_bytes())
            .map_err(io_err)?;
        out.write_all(&(*obj as u64).to_le_bytes())
            .map_err(io_err)?;
        for v in vector.values() {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Load a score dump, auto-detecting the format, validating vector length
/// and normalization against the vocab.
pub fn load_external_scores(path: &Path, vocab: &Vocab) -> Result<ScoreTable> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    drop(file);
    if n == 8 && &magic == BINARY_MAGIC {
        load_binary(path, vocab)
    } else {
        load_jsonl(path, vocab)
    }
}

fn load_jsonl(path: &Path, vocab: &Vocab) -> Result<ScoreTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = ScoreTable::new(vocab.fingerprint());
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: WireScore = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let vector = ScoreVector::new(record.scores, vocab.score_len()).map_err(|e| {
            Error::Score(format!(
                "({}, {}, {}): {e}",
                record.image_id, record.subj, record.obj
            ))
        })?;
        table.insert((record.image_id, record.subj, record.obj), vector)?;
    }
    Ok(table)
}

fn load_binary(path: &Path, vocab: &Vocab) -> Result<ScoreTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let io_err = |e| Error::io(path, e);
    let bad = |m: &str| Error::Score(format!("{}: {m}", path.display()));

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let fp_len = read_u32(&mut input).map_err(io_err)? as usize;
    let mut fp = vec![0u8; fp_len];
    input.read_exact(&mut fp).map_err(io_err)?;
    let fp = String::from_utf8(fp).map_err(|_| bad("fingerprint is not utf-8"))?;
    if fp != vocab.fingerprint() {
        return Err(Error::Score(
            "score dump was produced under a different vocab (fingerprint mismatch)".into(),
        ));
    }
    let vec_len = read_u32(&mut input).map_err(io_err)? as usize;
    let count = read_u64(&mut input).map_err(io_err)?;
    if count > 0 && vec_len != vocab.score_len() {
        return Err(bad(&format!(
            "vector length {vec_len} does not match vocab ({})",
            vocab.score_len()
        )));
    }
    let mut table = ScoreTable::new(vocab.fingerprint());
    for _ in 0..count {
        let id_len = read_u32(&mut input).map_err(io_err)? as usize;
        let mut id = vec![0u8; id_len];
        input.read_exact(&mut id).map_err(io_err)?;
        let image_id = String::from_utf8(id).map_err(|_| bad("image id is not utf-8"))?;
        let subj = read_u64(&mut input).map_err(io_err)? as usize;
        let obj = read_u64(&mut input).map_err(io_err)? as usize;
        let mut values = Vec::with_capacity(vec_len);
        for _ in 0..vec_len {
            let mut buf = [0u8; 8];
            input.read_exact(&mut buf).map_err(io_err)?;
            values.push(f64::from_le_bytes(buf));
        }
        let vector = ScoreVector::new(values, vocab.score_len())
            .map_err(|e| Error::Score(format!("({image_id}, {subj}, {obj}): {e}")))?;
        table.insert((image_id, subj, obj), vector)?;
    }
    Ok(table)
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn vocab() -> Vocab {
        Vocab::new(vec!["man".into()], vec!["on".into(), "riding".into()]).unwrap()
    }

    fn sample_table(v: &Vocab) -> ScoreTable {
        let mut table = ScoreTable::new(v.fingerprint());
        table
            .insert(
                ("img_b".into(), 0, 1),
                ScoreVector::new(vec![0.2, 0.3, 0.5], 3).unwrap(),
            )
            .unwrap();
        table
            .insert(
                ("img_a".into(), 1, 0),
                ScoreVector::new(vec![0.6, 0.1, 0.3], 3).unwrap(),
            )
            .unwrap();
        table
    }

    #[test]
    fn jsonl_round_trip() {
        let v = vocab();
        let table = sample_table(&v);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        write_scores_jsonl(&table, &path).unwrap();
        let loaded = load_external_scores(&path, &v).unwrap();
        assert_eq!(table, loaded);
    }

    #[test]
    fn binary_round_trip() {
        let v = vocab();
        let table = sample_table(&v);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.bin");
        write_scores_binary(&table, &path).unwrap();
        let loaded = load_external_scores(&path, &v).unwrap();
        assert_eq!(table, loaded);
    }

    #[test]
    fn empty_binary_round_trip() {
        let v = vocab();
        let table = ScoreTable::new(v.fingerprint());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        write_scores_binary(&table, &path).unwrap();
        let loaded = load_external_scores(&path, &v).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn missing_na_slot_rejected() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.jsonl");
        fs::write(
            &path,
            "{\"image_id\":\"a\",\"subj\":0,\"obj\":1,\"scores\":[0.5,0.5]}\n",
        )
        .unwrap();
        let err = load_external_scores(&path, &v).unwrap_err();
        assert!(err.to_string().contains("length 2"));
    }

    #[test]
    fn negative_entry_rejected() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.jsonl");
        fs::write(
            &path,
            "{\"image_id\":\"a\",\"subj\":0,\"obj\":1,\"scores\":[-0.1,0.6,0.5]}\n",
        )
        .unwrap();
        assert!(load_external_scores(&path, &v).is_err());
    }

    #[test]
    fn non_normalized_rejected() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sum.jsonl");
        fs::write(
            &path,
            "{\"image_id\":\"a\",\"subj\":0,\"obj\":1,\"scores\":[0.2,0.2,0.2]}\n",
        )
        .unwrap();
        let err = load_external_scores(&path, &v).unwrap_err();
        assert!(err.to_string().contains("not normalized"));
    }

    #[test]
    fn binary_fingerprint_mismatch_rejected() {
        let v = vocab();
        let table = sample_table(&v);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.bin");
        write_scores_binary(&table, &path).unwrap();
        let other = Vocab::new(vec!["dog".into()], vec!["on".into(), "riding".into()]).unwrap();
        let err = load_external_scores(&path, &other).unwrap_err();
        assert!(err.to_string().contains("fingerprint mismatch"));
    }
}
