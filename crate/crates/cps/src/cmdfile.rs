//! Command scripts: a classified replay in a file.
//!
//! ```text
//! victim P2-CARDOS
//! profile cardos
//! step P2-CARDOS 2,1
//! step P1-INCRYPTO 1,5
//! apdu 0084BD17 le=08
//! apdu 8086AC45 data=RN le=00
//! reset
//! ```
//!
//! `victim` names the program the trace is classified against and
//! `profile` the card it runs on. `step` lines take any built-in program
//! and a step reference (an `i,j` label or a step name, first match).
//! `apdu` lines build a raw command from four header bytes plus optional
//! `data=` (hex, `PIN`, `RN` or `PAYLOAD`) and `le=` fields; `reset`
//! resets the card without producing a trace record.

use std::fs;
use std::path::Path;

use cps_core::apdu::hex_parse;
use cps_core::program::Wildcard;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ApduData {
    None,
    Fixed(Vec<u8>),
    Hole(Wildcard),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptLine {
    Step {
        program: String,
        step: String,
    },
    Apdu {
        header: [u8; 4],
        data: ApduData,
        le: Option<u8>,
    },
    Reset,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandScript {
    /// Program the session is classified against.
    pub victim: String,
    /// Card profile the script runs on.
    pub profile: String,
    pub lines: Vec<ScriptLine>,
}

#[derive(Debug, Error)]
pub enum CmdFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing '{0}' directive")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> CmdFileError {
    CmdFileError::Parse {
        line,
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<CommandScript, CmdFileError> {
    parse(&fs::read_to_string(path)?)
}

pub fn parse(text: &str) -> Result<CommandScript, CmdFileError> {
    let mut victim = None;
    let mut profile = None;
    let mut lines = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (directive, rest) = line.split_once(' ').unwrap_or((line, ""));
        match directive {
            "victim" => victim = Some(rest.trim().to_string()),
            "profile" => profile = Some(rest.trim().to_string()),
            "step" => {
                let mut fields = rest.split_whitespace();
                let program = fields
                    .next()
                    .ok_or_else(|| err(line_no, "step needs a program name"))?
                    .to_string();
                let step = fields
                    .next()
                    .ok_or_else(|| err(line_no, "step needs a step label or name"))?
                    .to_string();
                if fields.next().is_some() {
                    return Err(err(line_no, "step lines take exactly two fields"));
                }
                lines.push(ScriptLine::Step { program, step });
            }
            "apdu" => lines.push(parse_apdu(rest, line_no)?),
            "reset" => lines.push(ScriptLine::Reset),
            other => return Err(err(line_no, format!("unknown directive '{other}'"))),
        }
    }

    Ok(CommandScript {
        victim: victim.ok_or(CmdFileError::Missing("victim"))?,
        profile: profile.ok_or(CmdFileError::Missing("profile"))?,
        lines,
    })
}

fn parse_apdu(rest: &str, line_no: usize) -> Result<ScriptLine, CmdFileError> {
    let mut fields = rest.split_whitespace();
    let header_hex = fields
        .next()
        .ok_or_else(|| err(line_no, "apdu needs a header"))?;
    let header_bytes = hex_parse(header_hex).map_err(|e| err(line_no, format!("header: {e}")))?;
    let header: [u8; 4] = header_bytes
        .try_into()
        .map_err(|_| err(line_no, "apdu header must be exactly 4 bytes"))?;

    let mut data = ApduData::None;
    let mut le = None;
    for token in fields {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("bad token '{token}'")))?;
        match key {
            "data" => {
                data = match value {
                    "PIN" => ApduData::Hole(Wildcard::Pin),
                    "RN" => ApduData::Hole(Wildcard::Rn),
                    "PAYLOAD" => ApduData::Hole(Wildcard::Payload),
                    hex => ApduData::Fixed(
                        hex_parse(hex).map_err(|e| err(line_no, format!("data: {e}")))?,
                    ),
                }
            }
            "le" => {
                let bytes = hex_parse(value).map_err(|e| err(line_no, format!("le: {e}")))?;
                if bytes.len() != 1 {
                    return Err(err(line_no, "le must be a single byte"));
                }
                le = Some(bytes[0]);
            }
            other => return Err(err(line_no, format!("unknown apdu field '{other}'"))),
        }
    }
    Ok(ScriptLine::Apdu { header, data, le })
}
