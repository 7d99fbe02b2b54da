//! Line-delimited JSON embedding and label files, and the binary adapter file.
//!
//! Embedding lines are `{"id": .., "text": .., "vector": [..]}`, label lines
//! `{"id": .., "label": ..}`. Parsing is strict: the first malformed line
//! aborts the load with its 1-based line number. Floats are written in
//! shortest round-trip form.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::AdapterModel;
use crate::similarity::{EmbeddingRecord, EmbeddingSet};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingLine {
    id: String,
    #[serde(default)]
    text: Option<String>,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    id: String,
    label: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dimension = None;
    for (n, line) in lines(path)? {
        let rec: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
        if rec.vector.is_empty() {
            return Err(parse_error(path, n, "empty vector"));
        }
        match dimension {
            None => dimension = Some(rec.vector.len()),
            Some(d) if d != rec.vector.len() => {
                return Err(parse_error(
                    path,
                    n,
                    format!("dimension drift: expected {d}, found {}", rec.vector.len()),
                ))
            }
            _ => {}
        }
        if !seen.insert(rec.id.clone()) {
            return Err(parse_error(path, n, format!("duplicate id {:?}", rec.id)));
        }
        records.push(EmbeddingRecord {
            id: rec.id,
            text: rec.text,
            vector: rec.vector,
        });
    }
    EmbeddingSet::from_records(records)
}

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in set {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Gold labels in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelFile {
    pub entries: Vec<(String, String)>,
}

impl LabelFile {
    pub fn to_map(&self) -> HashMap<String, String> {
        self.entries.iter().cloned().collect()
    }

    /// Distinct labels in order of first appearance.
    pub fn distinct_labels(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|(_, l)| seen.insert(l.clone()))
            .map(|(_, l)| l.clone())
            .collect()
    }

    /// Checks every labelled id exists in `set`.
    pub fn check_resolves(&self, set: &EmbeddingSet) -> Result<()> {
        let ids: HashSet<&str> = set.ids().collect();
        match self.entries.iter().find(|(id, _)| !ids.contains(id.as_str())) {
            Some((id, _)) => Err(Error::input(format!("labelled id {id:?} has no embedding"))),
            None => Ok(()),
        }
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelFile> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (n, line) in lines(path)? {
        let rec: LabelLine =
            serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(parse_error(path, n, format!("duplicate id {:?}", rec.id)));
        }
        entries.push((rec.id, rec.label));
    }
    Ok(LabelFile { entries })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelFile) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, label) in &labels.entries {
        out.push_str(&serde_json::to_string(&LabelLine { id: id.clone(), label: label.clone() }).expect("strings serialise"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const ADAPTER_MAGIC: &[u8; 8] = b"SURPADPT";
pub const ADAPTER_VERSION: u32 = 1;

/// Header of a persisted adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterHeader {
    pub version: u32,
    pub dimension: u32,
    pub seed: u64,
    /// SHA-256 of the training configuration.
    pub config_digest: [u8; 32],
}

/// Layout, little-endian: magic (8) · version u32 · dimension u32 · seed u64 ·
/// config digest (32) · `d²` row-major f64.
pub fn write_adapter(
    path: impl AsRef<Path>,
    adapter: &AdapterModel,
    seed: u64,
    config_digest: [u8; 32],
) -> Result<()> {
    let path = path.as_ref();
    let d = adapter.dimension();
    let mut buf = Vec::with_capacity(56 + 8 * d * d);
    buf.extend_from_slice(ADAPTER_MAGIC);
    buf.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&config_digest);
    for w in adapter.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_adapter(path: impl AsRef<Path>) -> Result<(AdapterHeader, AdapterModel)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| parse_error(path, 0, format!("adapter file: {m}"));
    if bytes.len() < 56 || &bytes[..8] != ADAPTER_MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != ADAPTER_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dimension = u32_at(12);
    let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let config_digest: [u8; 32] = bytes[24..56].try_into().unwrap();
    let d = dimension as usize;
    if bytes.len() != 56 + 8 * d * d {
        return Err(bad("payload size does not match dimension"));
    }
    let weights = bytes[56..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let adapter = AdapterModel::from_weights(d, weights)?;
    Ok((
        AdapterHeader {
            version,
            dimension,
            seed,
            config_digest,
        },
        adapter,
    ))
}

/// SHA-256 of arbitrary bytes, for adapter headers.
pub fn digest_bytes(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).into()
}

/// Writes `contents` to `path`.
pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
