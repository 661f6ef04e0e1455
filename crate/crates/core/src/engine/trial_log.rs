//! Append-only JSONL trial log.
//!
//! Line 1 is a header, every further line a trial or pull record:
//!
//! ```text
//! {"checksum":"…","config_hash":"…","kind":"search","objective":"coverage:…","schema":"aabo-log/1","seed":7,"timestamp":…,"type":"header"}
//! {"checksum":"…","config":{…},"config_ref":"…","generation":0,"proposer":"prior","seed":…,"timestamp":…,"trial_id":0,"type":"trial"}
//! {"arm":0,"budget_index":1,"checksum":"…","config_ref":"…","generation":0,"leader":null,"reward":0.61,"round":1,"seed":…,"timestamp":…,"trial_id":0,"type":"pull"}
//! ```
//!
//! Keys are sorted. `checksum` is the hex SHA-256 of the compact line with
//! `checksum` and `timestamp` removed; `timestamp` is milliseconds since the
//! Unix epoch and is the only field allowed to differ between identical runs.
//! A failed pull has `"reward": null` and an `error` message.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::Proposer;
use crate::error::{Error, Result};
use crate::space::AnchorConfiguration;

pub const LOG_SCHEMA: &str = "aabo-log/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Search,
    Simulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub kind: LogKind,
    pub config_hash: String,
    pub objective: String,
    pub seed: u64,
    /// Arm means of a simulation run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialLine {
    pub trial_id: usize,
    pub generation: usize,
    pub proposer: Proposer,
    pub seed: u64,
    pub config_ref: String,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullLine {
    pub trial_id: usize,
    pub generation: usize,
    pub round: usize,
    /// Pool index within the generation.
    pub arm: usize,
    pub leader: Option<usize>,
    pub budget_index: usize,
    pub config_ref: String,
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Header(Header),
    Trial(TrialLine),
    Pull(PullLine),
}

impl TrialLine {
    pub fn new(trial_id: usize, generation: usize, proposer: Proposer, seed: u64, config: &AnchorConfiguration) -> Self {
        Self { trial_id, generation, proposer, seed, config_ref: config_ref(config), config: config.to_value() }
    }
}

/// Short identifier of a configuration inside a log.
pub fn config_ref(config: &AnchorConfiguration) -> String {
    config.fingerprint()[..16].to_owned()
}

/// A verified log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// 1-based line number.
    pub line: usize,
    pub record: Record,
    pub timestamp: Option<u64>,
    /// Compact body without checksum and timestamp.
    pub body: String,
}

fn body_of(record: &Record) -> Map<String, Value> {
    match serde_json::to_value(record).expect("plain data serializes") {
        Value::Object(m) => m,
        _ => unreachable!("records serialize to objects"),
    }
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Serialized line including checksum and timestamp, without newline.
pub fn encode_line(record: &Record, timestamp: u64) -> String {
    let mut map = body_of(record);
    let body = Value::Object(map.clone()).to_string();
    map.insert("checksum".into(), Value::String(digest(&body)));
    map.insert("timestamp".into(), Value::from(timestamp));
    Value::Object(map).to_string()
}

fn corrupt(line: usize, reason: impl Into<String>) -> Error {
    Error::CorruptLog { line, reason: reason.into() }
}

pub fn decode_line(text: &str, line: usize) -> Result<LogEntry> {
    let value: Value = serde_json::from_str(text).map_err(|e| corrupt(line, format!("not JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(corrupt(line, "not a JSON object"));
    };
    let checksum = match map.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err(corrupt(line, "missing checksum")),
    };
    let timestamp = match map.remove("timestamp") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| corrupt(line, "timestamp is not an integer"))?),
    };
    let body = Value::Object(map).to_string();
    if digest(&body) != checksum {
        return Err(corrupt(line, "checksum mismatch"));
    }
    let record: Record = serde_json::from_str(&body).map_err(|e| corrupt(line, format!("bad record: {e}")))?;
    Ok(LogEntry { line, record, timestamp, body })
}

/// Result of reading a log file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogContents {
    pub entries: Vec<LogEntry>,
    /// Byte length of the complete lines; a torn final line starts here.
    pub valid_len: u64,
    pub torn_tail: bool,
}

impl LogContents {
    pub fn header(&self) -> Option<&Header> {
        match self.entries.first().map(|e| &e.record) {
            Some(Record::Header(h)) => Some(h),
            _ => None,
        }
    }
}

/// Reads and verifies every complete line. A final line without a
/// terminating newline is reported as torn and skipped.
pub fn read_log(path: &Path) -> Result<LogContents> {
    let text = std::fs::read_to_string(path)?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<LogContents> {
    let (complete, torn_tail) = match text.rfind('\n') {
        Some(i) => (&text[..=i], i + 1 < text.len()),
        None => ("", !text.is_empty()),
    };
    let mut entries = Vec::new();
    for (i, raw) in complete.lines().enumerate() {
        let entry = decode_line(raw, i + 1)?;
        let is_header = matches!(entry.record, Record::Header(_));
        if (i == 0) != is_header {
            return Err(corrupt(i + 1, if i == 0 { "first line must be the header" } else { "unexpected header" }));
        }
        if let Record::Header(h) = &entry.record {
            if h.schema != LOG_SCHEMA {
                return Err(corrupt(1, format!("unsupported schema {:?}", h.schema)));
            }
        }
        entries.push(entry);
    }
    Ok(LogContents { entries, valid_len: complete.len() as u64, torn_tail })
}

/// SHA-256 over all record bodies; timestamps do not contribute.
pub fn determinism_hash(path: &Path) -> Result<String> {
    let contents = read_log(path)?;
    let mut h = Sha256::new();
    for e in &contents.entries {
        h.update(e.body.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

pub(crate) fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Appending writer; the coordinator is its only user.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    /// Creates or truncates `path`.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    /// Opens `path` for appending after dropping bytes past `valid_len`.
    pub fn append(path: &Path, valid_len: u64) -> Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(valid_len)?;
        drop(file);
        Ok(Self { out: BufWriter::new(OpenOptions::new().append(true).open(path)?) })
    }

    /// Writes one record; returns its timestamp.
    pub fn write(&mut self, record: &Record) -> Result<u64> {
        let ts = now_millis();
        self.out.write_all(encode_line(record, ts).as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(ts)
    }

    /// Flushes and syncs to disk.
    pub fn sync(&mut self) -> Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}
