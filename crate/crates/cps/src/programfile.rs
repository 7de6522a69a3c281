//! Straight-line program files: one step per line.
//!
//! ```text
//! program P1-INCRYPTO
//! card incrypto
//! step 1,6 GIVE_CHAL 80860000 data=RN le=00
//! ```
//!
//! The third step field is the four header bytes as hex. `data=` takes
//! `-`, literal hex, or a wildcard marker (`PIN`, `RN`, `PAYLOAD`); `le=`
//! takes `-` or a hex byte. The PIN hole length comes from the named
//! card's built-in profile, or from an explicit `pin-length <n>` line for
//! card types this build does not know.

use std::fs;
use std::path::Path;

use cps_core::apdu::hex_parse;
use cps_core::card::CardProfile;
use cps_core::program::{
    Segment, StepLabel, StepTemplate, StraightLineProgram, Wildcard, PAYLOAD_LEN, RN_LEN,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProgramFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing '{0}' directive")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> ProgramFileError {
    ProgramFileError::Parse {
        line,
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<StraightLineProgram, ProgramFileError> {
    parse(&fs::read_to_string(path)?)
}

pub fn parse(text: &str) -> Result<StraightLineProgram, ProgramFileError> {
    let mut id = None;
    let mut card_type: Option<String> = None;
    let mut pin_length: Option<usize> = None;
    let mut steps = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (directive, rest) = line.split_once(' ').unwrap_or((line, ""));
        match directive {
            "program" => id = Some(rest.trim().to_string()),
            "card" => card_type = Some(rest.trim().to_string()),
            "pin-length" => {
                pin_length = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| err(line_no, format!("bad pin-length '{rest}'")))?,
                )
            }
            "step" => {
                let pin_len = pin_length
                    .or_else(|| {
                        card_type
                            .as_deref()
                            .and_then(CardProfile::builtin)
                            .map(|p| p.pin.len())
                    })
                    .ok_or_else(|| {
                        err(line_no, "PIN length unknown: declare 'card <builtin>' or 'pin-length <n>' first")
                    });
                steps.push(parse_step(rest, pin_len, line_no)?);
            }
            other => return Err(err(line_no, format!("unknown directive '{other}'"))),
        }
    }

    Ok(StraightLineProgram {
        id: id.ok_or(ProgramFileError::Missing("program"))?,
        card_type: card_type.ok_or(ProgramFileError::Missing("card"))?,
        steps,
    })
}

fn parse_step(
    rest: &str,
    pin_len: Result<usize, ProgramFileError>,
    line_no: usize,
) -> Result<StepTemplate, ProgramFileError> {
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(err(
            line_no,
            "step lines are 'step <i,j> <NAME> <header hex> data=<..> le=<..>'",
        ));
    }
    let label = StepLabel::parse(fields[0])
        .ok_or_else(|| err(line_no, format!("bad step label '{}'", fields[0])))?;
    let header = hex_parse(fields[2]).map_err(|e| err(line_no, format!("header: {e}")))?;
    if header.len() != 4 {
        return Err(err(line_no, "step header must be exactly 4 bytes"));
    }

    let data_value = fields[3]
        .strip_prefix("data=")
        .ok_or_else(|| err(line_no, "fourth step field must be data=..."))?;
    let data = match data_value {
        "-" => vec![],
        "PIN" => vec![Segment::Hole {
            kind: Wildcard::Pin,
            len: pin_len?,
        }],
        "RN" => vec![Segment::Hole {
            kind: Wildcard::Rn,
            len: RN_LEN,
        }],
        "PAYLOAD" => vec![Segment::Hole {
            kind: Wildcard::Payload,
            len: PAYLOAD_LEN,
        }],
        hex => vec![Segment::Fixed(
            hex_parse(hex).map_err(|e| err(line_no, format!("data: {e}")))?,
        )],
    };

    let le_value = fields[4]
        .strip_prefix("le=")
        .ok_or_else(|| err(line_no, "fifth step field must be le=..."))?;
    let le = match le_value {
        "-" => None,
        hex => {
            let bytes = hex_parse(hex).map_err(|e| err(line_no, format!("le: {e}")))?;
            if bytes.len() != 1 {
                return Err(err(line_no, "le must be a single byte"));
            }
            Some(bytes[0])
        }
    };

    Ok(StepTemplate {
        label,
        name: fields[1].to_string(),
        cla: header[0],
        ins: header[1],
        p1: header[2],
        p2: header[3],
        data,
        le,
    })
}
