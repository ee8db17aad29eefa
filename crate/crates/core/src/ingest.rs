//! JSON-lines loaders and seeded candidate sampling.
//!
//! `catalog.jsonl` holds one item per line:
//! `{"id":"a1","title":"Bamboo Brush","category":"Home","attributes":{"brand":"X"},"sustainable":true}`
//! (`attributes` and `sustainable` are optional).
//!
//! `sessions.jsonl` holds one session per line:
//! `{"session_id":"s1","items":["a1","a2"],"target":"a3"}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{CandidateKind, CandidateSet, Catalog, Item, Session};
use crate::error::IngestError;
use crate::seeding::keyed_rng;

pub const DEFAULT_N_INITIAL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub sessions: Vec<Session>,
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: "<stream>".into(),
        source,
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String, IngestError> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(malformed(line, format!("field {key:?} is empty"))),
        Some(_) => Err(malformed(line, format!("field {key:?} must be a string"))),
        None => Err(malformed(line, format!("missing field {key:?}"))),
    }
}

/// Yields `(line_no, object)` for each non-blank line.
fn json_objects<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, serde_json::Map<String, Value>), IngestError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(io_err(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => Ok((line_no, map)),
            Ok(_) => Err(malformed(line_no, "expected a JSON object")),
            Err(e) => Err(malformed(line_no, e.to_string())),
        })
    })
}

pub fn parse_catalog<R: BufRead>(reader: R) -> Result<Catalog, IngestError> {
    let mut catalog = Catalog::default();
    for entry in json_objects(reader) {
        let (line, obj) = entry?;
        let id = required_str(&obj, "id", line)?;
        let title = required_str(&obj, "title", line)?;
        let category = match obj.get("category") {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(malformed(line, "field \"category\" must be a string")),
        };
        let attributes = match obj.get("attributes") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Object(attrs)) => attrs
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    (k.clone(), v)
                })
                .collect(),
            Some(_) => return Err(malformed(line, "field \"attributes\" must be an object")),
        };
        let sustainable = match obj.get("sustainable") {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(malformed(line, "field \"sustainable\" must be a boolean")),
        };
        if catalog.contains(&id) {
            return Err(IngestError::DuplicateId { line, id });
        }
        let item = Item {
            id,
            title,
            category,
            attributes,
            sustainable,
        };
        catalog.push(item).map_err(|e| malformed(line, e.to_string()))?;
    }
    Ok(catalog)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, IngestError> {
    parse_catalog(open(path.as_ref())?)
}

#[derive(Deserialize)]
struct SessionLine {
    session_id: String,
    items: Vec<String>,
    target: String,
}

pub fn parse_sessions<R: BufRead>(reader: R, catalog: &Catalog) -> Result<Vec<Session>, IngestError> {
    let mut seen = HashSet::new();
    let mut sessions = Vec::new();
    for entry in json_objects(reader) {
        let (line, obj) = entry?;
        let raw: SessionLine =
            serde_json::from_value(Value::Object(obj)).map_err(|e| malformed(line, e.to_string()))?;
        if raw.session_id.is_empty() {
            return Err(malformed(line, "field \"session_id\" is empty"));
        }
        if raw.items.is_empty() {
            return Err(IngestError::EmptySession(raw.session_id));
        }
        if let Some(unknown) = raw
            .items
            .iter()
            .chain(std::iter::once(&raw.target))
            .find(|id| !catalog.contains(id))
        {
            return Err(IngestError::UnknownItem {
                session_id: raw.session_id.clone(),
                item_id: unknown.clone(),
            });
        }
        if !seen.insert(raw.session_id.clone()) {
            return Err(IngestError::DuplicateSession {
                line,
                session_id: raw.session_id,
            });
        }
        sessions.push(Session::new(raw.session_id, raw.items, raw.target));
    }
    Ok(sessions)
}

pub fn load_sessions(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Vec<Session>, IngestError> {
    parse_sessions(open(path.as_ref())?, catalog)
}

/// Draws the initial candidate pool for a session.
///
/// The target is always present; the remaining `n_initial - 1` ids are drawn
/// without replacement from the rest of the catalog and the final order is
/// shuffled. The stream is keyed by `(seed, session_id)` only, so the result
/// does not depend on which other sessions are sampled or in what order.
pub fn sample_candidates(
    session: &Session,
    catalog: &Catalog,
    n_initial: usize,
    seed: u64,
) -> Result<CandidateSet, IngestError> {
    if n_initial == 0 {
        return Err(IngestError::ZeroCandidates);
    }
    if catalog.len() < n_initial {
        return Err(IngestError::CatalogTooSmall {
            needed: n_initial,
            available: catalog.len(),
        });
    }
    let target_pos = catalog.position(&session.target).ok_or_else(|| IngestError::UnknownItem {
        session_id: session.session_id.clone(),
        item_id: session.target.clone(),
    })?;

    let mut rng = keyed_rng("candidates", seed, &session.session_id);
    let items = catalog.items();
    let mut picked: Vec<String> = index::sample(&mut rng, items.len() - 1, n_initial - 1)
        .into_iter()
        .map(|i| {
            // Skip over the target's slot.
            let i = if i >= target_pos { i + 1 } else { i };
            items[i].id.clone()
        })
        .collect();
    picked.push(session.target.clone());
    picked.shuffle(&mut rng);

    Ok(CandidateSet {
        session_id: session.session_id.clone(),
        candidates: picked,
        kind: CandidateKind::Initial,
    })
}

pub fn write_candidates<W: Write>(mut writer: W, sets: &[CandidateSet]) -> std::io::Result<()> {
    for set in sets {
        serde_json::to_writer(&mut writer, set)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn parse_candidates<R: BufRead>(reader: R) -> Result<Vec<CandidateSet>, IngestError> {
    let mut out = Vec::new();
    for entry in json_objects(reader) {
        let (line, obj) = entry?;
        let set: CandidateSet =
            serde_json::from_value(Value::Object(obj)).map_err(|e| malformed(line, e.to_string()))?;
        let set = CandidateSet::new(set.session_id, set.candidates, set.kind)
            .map_err(|e| malformed(line, e.to_string()))?;
        out.push(set);
    }
    Ok(out)
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateSet>, IngestError> {
    parse_candidates(open(path.as_ref())?)
}
