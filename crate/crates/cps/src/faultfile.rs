//! Fault configuration files: routing overrides and injected commands.
//!
//! ```text
//! card c2 incrypto
//! misdirect s1 c2
//! inject 4 0084000008
//! ```
//!
//! `card` declares an extra card the run would not otherwise create,
//! `misdirect` reroutes a session's commands to another card, and
//! `inject` places a concrete hex-encoded APDU at a trace position
//! (1-based; the run's own commands shift past it).

use std::fs;
use std::path::Path;

use cps_core::apdu::{decode_command, hex_parse};
use cps_core::router::FaultConfig;
use thiserror::Error;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultScript {
    /// (card id, profile name) pairs to create in addition to the run's card.
    pub extra_cards: Vec<(String, String)>,
    pub config: FaultConfig,
}

impl FaultScript {
    pub fn none() -> FaultScript {
        FaultScript::default()
    }
}

#[derive(Debug, Error)]
pub enum FaultFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> FaultFileError {
    FaultFileError::Parse {
        line,
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<FaultScript, FaultFileError> {
    parse(&fs::read_to_string(path)?)
}

pub fn parse(text: &str) -> Result<FaultScript, FaultFileError> {
    let mut script = FaultScript::default();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "card" if fields.len() == 3 => {
                script
                    .extra_cards
                    .push((fields[1].to_string(), fields[2].to_string()));
            }
            "misdirect" if fields.len() == 3 => {
                script
                    .config
                    .misdirect
                    .insert(fields[1].to_string(), fields[2].to_string());
            }
            "inject" if fields.len() == 3 => {
                let position: u64 = fields[1]
                    .parse()
                    .map_err(|_| err(line_no, format!("bad position '{}'", fields[1])))?;
                if position == 0 {
                    return Err(err(line_no, "positions are 1-based"));
                }
                let raw =
                    hex_parse(fields[2]).map_err(|e| err(line_no, format!("apdu hex: {e}")))?;
                let cmd = decode_command(&raw).map_err(|e| err(line_no, format!("apdu: {e}")))?;
                if script.config.injections.insert(position, cmd).is_some() {
                    return Err(err(
                        line_no,
                        format!("duplicate injection at position {position}"),
                    ));
                }
            }
            other => return Err(err(line_no, format!("bad directive '{other}'"))),
        }
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_directives() {
        let text = "card c2 incrypto\nmisdirect s1 c2\ninject 4 0084000008\n";
        let script = parse(text).unwrap();
        assert_eq!(
            script.extra_cards,
            vec![("c2".to_string(), "incrypto".to_string())]
        );
        assert_eq!(script.config.misdirect.get("s1"), Some(&"c2".to_string()));
        assert_eq!(script.config.injections.len(), 1);
        let cmd = &script.config.injections[&4];
        assert_eq!(cmd.le, Some(0x08));
    }

    #[test]
    fn rejects_malformed_injection() {
        assert!(parse("inject 0 0084000008\n").is_err());
        assert!(parse("inject 4 00840000050102\n").is_err());
    }
}
