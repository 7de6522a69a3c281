//! Byte-exact encoding and decoding of short-form command and response
//! APDUs.
//!
//! A command carries a mandatory four byte header (`cla`, `ins`, `p1`,
//! `p2`) and an optional body. The body is serialized canonically: the
//! `lc` byte and the data field appear only when the data is non-empty,
//! and the `le` byte appears only when an expected-length indicator is
//! present. That yields the four short cases
//!
//! | case | layout                       | length   |
//! |------|------------------------------|----------|
//! | 1    | header                       | 4        |
//! | 2S   | header, le                   | 5        |
//! | 3S   | header, lc, data             | 5 + lc   |
//! | 4S   | header, lc, data, le         | 6 + lc   |
//!
//! and makes encoding a bijection: every value has exactly one wire form
//! and every accepted wire form decodes back to the same value. An `lc`
//! byte of zero is rejected (an empty data field is never serialized),
//! and `le = 0x00` is carried literally; whatever a zero `le` means is
//! the card's business, not the codec's.
//!
//! Responses are a data field (possibly empty) followed by the two
//! mandatory status bytes `sw1`, `sw2`. Success is exactly `90 00`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A command APDU. The data field is limited to 255 bytes (single-byte
/// `lc`); extended-length forms are not supported.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommandApdu {
    pub cla: u8,
    pub ins: u8,
    pub p1: u8,
    pub p2: u8,
    pub data: Vec<u8>,
    pub le: Option<u8>,
}

impl CommandApdu {
    pub fn new(cla: u8, ins: u8, p1: u8, p2: u8) -> Self {
        CommandApdu {
            cla,
            ins,
            p1,
            p2,
            data: Vec::new(),
            le: None,
        }
    }

    /// Attaches a data field. Panics if `data` exceeds 255 bytes.
    pub fn with_data(mut self, data: Vec<u8>) -> Self {
        assert!(data.len() <= 255, "APDU data field limited to 255 bytes");
        self.data = data;
        self
    }

    pub fn with_le(mut self, le: u8) -> Self {
        self.le = Some(le);
        self
    }

    pub fn header(&self) -> [u8; 4] {
        [self.cla, self.ins, self.p1, self.p2]
    }
}

impl fmt::Display for CommandApdu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex_format(&encode_command(self)))
    }
}

/// A response APDU: optional data and the two mandatory status bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ResponseApdu {
    pub data: Vec<u8>,
    pub sw1: u8,
    pub sw2: u8,
}

impl ResponseApdu {
    pub fn new(data: Vec<u8>, sw: u16) -> Self {
        ResponseApdu {
            data,
            sw1: (sw >> 8) as u8,
            sw2: sw as u8,
        }
    }

    /// Status word as a single value, `sw1` in the high byte.
    pub fn sw(&self) -> u16 {
        u16::from_be_bytes([self.sw1, self.sw2])
    }

    /// Success is exactly `90 00`.
    pub fn is_success(&self) -> bool {
        self.sw() == 0x9000
    }
}

impl fmt::Display for ResponseApdu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:04X}", hex_format(&self.data), self.sw())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ApduError {
    /// Command buffer shorter than the four byte header.
    CommandTooShort { len: usize },
    /// Buffer length matches none of the short-case equations, or `lc` is
    /// inconsistent with it.
    MalformedLength { len: usize, lc: u8 },
    /// Response buffer shorter than the two status bytes.
    ResponseTooShort { len: usize },
}

impl fmt::Display for ApduError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApduError::CommandTooShort { len } => {
                write!(f, "command APDU needs at least 4 bytes, got {len}")
            }
            ApduError::MalformedLength { len, lc } => {
                write!(f, "buffer of {len} bytes is inconsistent with lc={lc:02X}")
            }
            ApduError::ResponseTooShort { len } => {
                write!(f, "response APDU needs at least 2 bytes, got {len}")
            }
        }
    }
}

impl core::error::Error for ApduError {}

/// Serializes a command in canonical short form.
pub fn encode_command(cmd: &CommandApdu) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + cmd.data.len());
    out.extend_from_slice(&cmd.header());
    if !cmd.data.is_empty() {
        out.push(cmd.data.len() as u8);
        out.extend_from_slice(&cmd.data);
    }
    if let Some(le) = cmd.le {
        out.push(le);
    }
    out
}

/// Decodes a canonical short-form command buffer.
pub fn decode_command(raw: &[u8]) -> Result<CommandApdu, ApduError> {
    if raw.len() < 4 {
        return Err(ApduError::CommandTooShort { len: raw.len() });
    }
    let base = CommandApdu::new(raw[0], raw[1], raw[2], raw[3]);
    match raw.len() {
        4 => Ok(base),
        5 => Ok(base.with_le(raw[4])),
        len => {
            let lc = raw[4];
            // lc = 0 never appears in canonical form; empty data omits
            // the lc byte entirely.
            if lc == 0 {
                return Err(ApduError::MalformedLength { len, lc });
            }
            let data_end = 5 + lc as usize;
            if len == data_end {
                Ok(base.with_data(raw[5..data_end].to_vec()))
            } else if len == data_end + 1 {
                Ok(base
                    .with_data(raw[5..data_end].to_vec())
                    .with_le(raw[len - 1]))
            } else {
                Err(ApduError::MalformedLength { len, lc })
            }
        }
    }
}

pub fn encode_response(resp: &ResponseApdu) -> Vec<u8> {
    let mut out = Vec::with_capacity(resp.data.len() + 2);
    out.extend_from_slice(&resp.data);
    out.push(resp.sw1);
    out.push(resp.sw2);
    out
}

pub fn decode_response(raw: &[u8]) -> Result<ResponseApdu, ApduError> {
    if raw.len() < 2 {
        return Err(ApduError::ResponseTooShort { len: raw.len() });
    }
    let (data, sw) = raw.split_at(raw.len() - 2);
    Ok(ResponseApdu {
        data: data.to_vec(),
        sw1: sw[0],
        sw2: sw[1],
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HexError {
    OddLength {
        len: usize,
    },
    /// Anything outside `[0-9A-F]`, including separators and lowercase.
    InvalidChar {
        index: usize,
        byte: u8,
    },
}

impl fmt::Display for HexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HexError::OddLength { len } => write!(f, "hex text has odd length {len}"),
            HexError::InvalidChar { index, byte } => {
                write!(f, "invalid hex character 0x{byte:02X} at offset {index}")
            }
        }
    }
}

impl core::error::Error for HexError {}

/// Canonical hex form: uppercase, no separators.
pub fn hex_format(bytes: &[u8]) -> String {
    hex::encode_upper(bytes)
}

/// Strict inverse of [`hex_format`]: only `[0-9A-F]` and even length are
/// accepted.
pub fn hex_parse(text: &str) -> Result<Vec<u8>, HexError> {
    for (index, byte) in text.bytes().enumerate() {
        if !matches!(byte, b'0'..=b'9' | b'A'..=b'F') {
            return Err(HexError::InvalidChar { index, byte });
        }
    }
    if !text.len().is_multiple_of(2) {
        return Err(HexError::OddLength { len: text.len() });
    }
    // The scan above guarantees this cannot fail.
    Ok(hex::decode(text).expect("validated hex"))
}
