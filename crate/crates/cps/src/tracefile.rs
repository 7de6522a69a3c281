//! Plain-text trace files.
//!
//! A trace starts with one header line and carries two lines per executed
//! command, all space-separated:
//!
//! ```text
//! CPS-TRACE 1 seed=7 cards=c1:cardos
//! 1 s1 c1 C 00A40000FF
//! 1 s1 c1 R  9000 OK
//! ```
//!
//! `C` lines hold the command bytes, `R` lines the response data (empty
//! field when the card returned none), the status word and the verdict
//! (`OK`, `ERR`, `ANOM`, or `-` for commands executed outside any
//! classified session). Both lines of a record share one sequence number;
//! sequence numbers are contiguous from 1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cps_core::apdu::{hex_format, hex_parse};
use cps_core::router::{Classification, TraceRecord};
use thiserror::Error;

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    /// (card id, profile name) pairs.
    pub cards: Vec<(String, String)>,
}

impl TraceHeader {
    pub fn new(seed: u64, cards: Vec<(String, String)>) -> Self {
        TraceHeader {
            version: TRACE_VERSION,
            seed,
            cards,
        }
    }

    pub fn to_line(&self) -> String {
        let cards = if self.cards.is_empty() {
            "-".to_string()
        } else {
            self.cards
                .iter()
                .map(|(id, profile)| format!("{id}:{profile}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "CPS-TRACE {} seed={} cards={}",
            self.version, self.seed, cards
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFileRecord {
    pub seq: u64,
    pub session_id: String,
    pub card_id: String,
    pub command: Vec<u8>,
    pub response_data: Vec<u8>,
    pub sw: u16,
    /// `None` renders as `-`: the command ran outside a classified session.
    pub verdict: Option<Classification>,
}

impl TraceFileRecord {
    /// Converts a router record; pass `classified = false` for commands
    /// that ran without a victim session.
    pub fn from_core(record: &TraceRecord, classified: bool) -> Self {
        TraceFileRecord {
            seq: record.seq,
            session_id: if classified {
                record.session_id.clone()
            } else {
                "-".to_string()
            },
            card_id: record.card_id.clone(),
            command: cps_core::apdu::encode_command(&record.command),
            response_data: record.response.data.clone(),
            sw: record.response.sw(),
            verdict: classified.then_some(record.verdict),
        }
    }

    pub fn to_lines(&self) -> (String, String) {
        let c = format!(
            "{} {} {} C {}",
            self.seq,
            self.session_id,
            self.card_id,
            hex_format(&self.command)
        );
        let r = format!(
            "{} {} {} R {} {:04X} {}",
            self.seq,
            self.session_id,
            self.card_id,
            hex_format(&self.response_data),
            self.sw,
            verdict_token(self.verdict)
        );
        (c, r)
    }
}

pub fn verdict_token(verdict: Option<Classification>) -> &'static str {
    match verdict {
        Some(Classification::CorrectTransition) => "OK",
        Some(Classification::DetectedError) => "ERR",
        Some(Classification::Anomaly) => "ANOM",
        None => "-",
    }
}

fn parse_verdict(token: &str) -> Option<Option<Classification>> {
    match token {
        "OK" => Some(Some(Classification::CorrectTransition)),
        "ERR" => Some(Some(Classification::DetectedError)),
        "ANOM" => Some(Some(Classification::Anomaly)),
        "-" => Some(None),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceFileRecord>,
}

impl TraceFile {
    pub fn from_core_records(
        header: TraceHeader,
        records: &[TraceRecord],
        classified: bool,
    ) -> Self {
        TraceFile {
            header,
            records: records
                .iter()
                .map(|r| TraceFileRecord::from_core(r, classified))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header.to_line();
        out.push('\n');
        for record in &self.records {
            let (c, r) = record.to_lines();
            let _ = writeln!(out, "{c}");
            let _ = writeln!(out, "{r}");
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported trace version {found} (this tool reads version {TRACE_VERSION})")]
    VersionMismatch { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_trace(path: &Path, trace: &TraceFile) -> Result<(), TraceError> {
    fs::write(path, trace.to_text())?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TraceFile, TraceError> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn parse_trace(text: &str) -> Result<TraceFile, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected a CPS-TRACE header"))?;
    let header = parse_header(header_line)?;

    let mut records = Vec::new();
    let mut pending: Option<(usize, TraceFileRecord)> = None;
    for (index, line) in lines {
        let line_no = index + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < 4 {
            return Err(parse_err(line_no, "truncated record line"));
        }
        let seq: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad seq '{}'", fields[0])))?;
        match fields[3] {
            "C" => {
                if let Some((at, _)) = pending {
                    return Err(parse_err(
                        line_no,
                        format!("C line while the C line at {at} still waits for its R line"),
                    ));
                }
                if fields.len() != 5 {
                    return Err(parse_err(line_no, "C lines carry exactly 5 fields"));
                }
                let command = hex_parse(fields[4])
                    .map_err(|e| parse_err(line_no, format!("command hex: {e}")))?;
                pending = Some((
                    line_no,
                    TraceFileRecord {
                        seq,
                        session_id: fields[1].to_string(),
                        card_id: fields[2].to_string(),
                        command,
                        response_data: Vec::new(),
                        sw: 0,
                        verdict: None,
                    },
                ));
            }
            "R" => {
                let (_, mut record) = pending
                    .take()
                    .ok_or_else(|| parse_err(line_no, "R line without a preceding C line"))?;
                if fields.len() != 7 {
                    return Err(parse_err(line_no, "R lines carry exactly 7 fields"));
                }
                if seq != record.seq
                    || fields[1] != record.session_id
                    || fields[2] != record.card_id
                {
                    return Err(parse_err(line_no, "R line does not match its C line"));
                }
                record.response_data = hex_parse(fields[4])
                    .map_err(|e| parse_err(line_no, format!("response hex: {e}")))?;
                record.sw = u16::from_str_radix(fields[5], 16)
                    .map_err(|_| parse_err(line_no, format!("bad status word '{}'", fields[5])))?;
                record.verdict = parse_verdict(fields[6])
                    .ok_or_else(|| parse_err(line_no, format!("bad verdict '{}'", fields[6])))?;
                let expected = records.len() as u64 + 1;
                if record.seq != expected {
                    return Err(parse_err(
                        line_no,
                        format!("seq {} out of order, expected {expected}", record.seq),
                    ));
                }
                records.push(record);
            }
            other => return Err(parse_err(line_no, format!("bad direction '{other}'"))),
        }
    }
    if let Some((at, _)) = pending {
        return Err(parse_err(
            at,
            "C line without its R line (truncated trace?)",
        ));
    }
    Ok(TraceFile { header, records })
}

fn parse_header(line: &str) -> Result<TraceHeader, TraceError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 || fields[0] != "CPS-TRACE" {
        return Err(parse_err(
            1,
            "expected 'CPS-TRACE <version> seed=<n> cards=<id:profile,...>'",
        ));
    }
    if fields[1] != "1" {
        return Err(TraceError::VersionMismatch {
            found: fields[1].to_string(),
        });
    }
    let seed = fields[2]
        .strip_prefix("seed=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad seed field '{}'", fields[2])))?;
    let cards_field = fields[3]
        .strip_prefix("cards=")
        .ok_or_else(|| parse_err(1, format!("bad cards field '{}'", fields[3])))?;
    let mut cards = Vec::new();
    if cards_field != "-" {
        for part in cards_field.split(',') {
            let (id, profile) = part
                .split_once(':')
                .ok_or_else(|| parse_err(1, format!("bad card entry '{part}'")))?;
            cards.push((id.to_string(), profile.to_string()));
        }
    }
    Ok(TraceHeader {
        version: 1,
        seed,
        cards,
    })
}
