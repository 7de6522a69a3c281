//! Declarative card-profile files.
//!
//! One directive per line, `#` comments and blank lines ignored:
//!
//! ```text
//! profile cardos
//! pin 31323334
//! key-ids 31
//! reset 3BD218008131FE58C90114
//! rule select_mf cla=00 ins=A4 p1=00 p2=00 data=- effect=dir_mf
//! rule fallback cla=* ins=* p1=* p2=* data=any sw=6D00
//! ```
//!
//! Header byte matchers are a hex byte, `*`, or a set like `{80,81,8C,8F}`.
//! Data matchers: `-` (no data), `any`, `len:NN` (hex length), `PIN` (the
//! profile's PIN, declared above the rules), or literal hex. Optional rule
//! fields with their defaults: `guard=always`, `effect=` (none),
//! `respond=none`, `sw=9000`, `fail=6D00`. Guard and effect values come
//! from a fixed vocabulary and chain with commas. Rules apply first match
//! first, and the list must end in a match-anything fallback.

use std::fs;
use std::path::Path;

use cps_core::apdu::hex_parse;
use cps_core::card::{
    AcceptanceRule, ByteMatch, CardProfile, DataMatch, Effect, Guard, Pattern, ReplyData,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing '{0}' directive")]
    Missing(&'static str),
    #[error("invalid profile: {0}")]
    Invalid(#[from] cps_core::card::ProfileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> ProfileFileError {
    ProfileFileError::Parse {
        line,
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<CardProfile, ProfileFileError> {
    parse(&fs::read_to_string(path)?)
}

pub fn parse(text: &str) -> Result<CardProfile, ProfileFileError> {
    let mut name = None;
    let mut pin: Option<Vec<u8>> = None;
    let mut key_ids = None;
    let mut reset = None;
    let mut rules = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (directive, rest) = line.split_once(' ').unwrap_or((line, ""));
        match directive {
            "profile" => name = Some(rest.trim().to_string()),
            "pin" => {
                pin = Some(hex_parse(rest.trim()).map_err(|e| err(line_no, format!("pin: {e}")))?)
            }
            "key-ids" => {
                key_ids = Some(
                    hex_parse(rest.trim()).map_err(|e| err(line_no, format!("key-ids: {e}")))?,
                )
            }
            "reset" => {
                reset =
                    Some(hex_parse(rest.trim()).map_err(|e| err(line_no, format!("reset: {e}")))?)
            }
            "rule" => rules.push(parse_rule(rest, pin.as_deref(), line_no)?),
            other => return Err(err(line_no, format!("unknown directive '{other}'"))),
        }
    }

    let profile = CardProfile {
        name: name.ok_or(ProfileFileError::Missing("profile"))?,
        pin: pin.ok_or(ProfileFileError::Missing("pin"))?,
        key_ids: key_ids.ok_or(ProfileFileError::Missing("key-ids"))?,
        reset_response: reset.ok_or(ProfileFileError::Missing("reset"))?,
        rules,
    };
    profile.validate()?;
    Ok(profile)
}

fn parse_rule(
    rest: &str,
    pin: Option<&[u8]>,
    line_no: usize,
) -> Result<AcceptanceRule, ProfileFileError> {
    let mut tokens = rest.split_whitespace();
    let name = tokens
        .next()
        .ok_or_else(|| err(line_no, "rule needs a name"))?;

    let mut cla = None;
    let mut ins = None;
    let mut p1 = None;
    let mut p2 = None;
    let mut data = None;
    let mut rule = AcceptanceRule::new(
        name,
        // Placeholder; replaced below once the matchers are collected.
        Pattern {
            cla: ByteMatch::Any,
            ins: ByteMatch::Any,
            p1: ByteMatch::Any,
            p2: ByteMatch::Any,
            data: DataMatch::Any,
        },
    );

    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("bad token '{token}'")))?;
        match key {
            "cla" => cla = Some(parse_byte_match(value, line_no)?),
            "ins" => ins = Some(parse_byte_match(value, line_no)?),
            "p1" => p1 = Some(parse_byte_match(value, line_no)?),
            "p2" => p2 = Some(parse_byte_match(value, line_no)?),
            "data" => data = Some(parse_data_match(value, pin, line_no)?),
            "guard" => {
                rule = rule.guards(
                    value
                        .split(',')
                        .map(|g| parse_guard(g, line_no))
                        .collect::<Result<_, _>>()?,
                )
            }
            "effect" => {
                rule = rule.effects(
                    value
                        .split(',')
                        .filter(|e| !e.is_empty())
                        .map(|e| parse_effect(e, line_no))
                        .collect::<Result<_, _>>()?,
                )
            }
            "respond" => {
                rule = rule.reply(match value {
                    "none" => ReplyData::None,
                    "challenge" => ReplyData::Challenge,
                    "signature" => ReplyData::Signature,
                    other => return Err(err(line_no, format!("unknown respond '{other}'"))),
                })
            }
            "sw" => rule = rule.sw(parse_sw(value, line_no)?),
            "fail" => rule = rule.fail_sw(parse_sw(value, line_no)?),
            other => return Err(err(line_no, format!("unknown rule field '{other}'"))),
        }
    }

    rule.pattern = Pattern {
        cla: cla.ok_or_else(|| err(line_no, "rule needs cla="))?,
        ins: ins.ok_or_else(|| err(line_no, "rule needs ins="))?,
        p1: p1.ok_or_else(|| err(line_no, "rule needs p1="))?,
        p2: p2.ok_or_else(|| err(line_no, "rule needs p2="))?,
        data: data.ok_or_else(|| err(line_no, "rule needs data="))?,
    };
    Ok(rule)
}

fn parse_byte(value: &str, line_no: usize) -> Result<u8, ProfileFileError> {
    let bytes = hex_parse(value).map_err(|e| err(line_no, format!("'{value}': {e}")))?;
    if bytes.len() != 1 {
        return Err(err(line_no, format!("'{value}' is not a single byte")));
    }
    Ok(bytes[0])
}

fn parse_byte_match(value: &str, line_no: usize) -> Result<ByteMatch, ProfileFileError> {
    if value == "*" {
        return Ok(ByteMatch::Any);
    }
    if let Some(set) = value.strip_prefix('{').and_then(|v| v.strip_suffix('}')) {
        let bytes = set
            .split(',')
            .map(|b| parse_byte(b, line_no))
            .collect::<Result<Vec<u8>, _>>()?;
        return Ok(ByteMatch::OneOf(bytes));
    }
    Ok(ByteMatch::Exact(parse_byte(value, line_no)?))
}

fn parse_data_match(
    value: &str,
    pin: Option<&[u8]>,
    line_no: usize,
) -> Result<DataMatch, ProfileFileError> {
    match value {
        "-" => Ok(DataMatch::Exact(vec![])),
        "any" => Ok(DataMatch::Any),
        "PIN" => pin
            .map(|p| DataMatch::Exact(p.to_vec()))
            .ok_or_else(|| err(line_no, "data=PIN needs a pin directive above the rules")),
        other => {
            if let Some(len) = other.strip_prefix("len:") {
                let len = usize::from_str_radix(len, 16)
                    .map_err(|_| err(line_no, format!("bad len '{len}'")))?;
                return Ok(DataMatch::Len(len));
            }
            Ok(DataMatch::Exact(
                hex_parse(other).map_err(|e| err(line_no, format!("data: {e}")))?,
            ))
        }
    }
}

fn parse_guard(value: &str, line_no: usize) -> Result<Guard, ProfileFileError> {
    match value {
        "always" => Ok(Guard::Always),
        "seo_intact" => Ok(Guard::SeoIntact),
        "df_selected" => Ok(Guard::DfSelected),
        "se_restored" => Ok(Guard::SeRestored),
        "key_selected" => Ok(Guard::KeySelected),
        "pin_verified" => Ok(Guard::PinVerified),
        "challenge_pair_fresh" => Ok(Guard::ChallengePairFresh),
        other => Err(err(line_no, format!("unknown guard '{other}'"))),
    }
}

fn parse_effect(value: &str, line_no: usize) -> Result<Effect, ProfileFileError> {
    if let Some(key) = value.strip_prefix("select_key:") {
        return Ok(Effect::SelectKey(parse_byte(key, line_no)?));
    }
    match value {
        "dir_mf" => Ok(Effect::DirMf),
        "dir_df" => Ok(Effect::DirDf),
        "se_restored" => Ok(Effect::SeRestored),
        "pin_verified" => Ok(Effect::PinVerified),
        "set_card_challenge" => Ok(Effect::SetCardChallenge),
        "set_host_challenge" => Ok(Effect::SetHostChallenge),
        "consume_challenge_pair" => Ok(Effect::ConsumeChallengePair),
        "destroy_seo" => Ok(Effect::DestroySeo),
        "count_signature" => Ok(Effect::CountSignature),
        other => Err(err(line_no, format!("unknown effect '{other}'"))),
    }
}

fn parse_sw(value: &str, line_no: usize) -> Result<u16, ProfileFileError> {
    u16::from_str_radix(value, 16).map_err(|_| err(line_no, format!("bad status word '{value}'")))
}
