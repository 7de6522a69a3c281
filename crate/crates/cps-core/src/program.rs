//! Straight-line programs: the branch-free command sequences a middleware
//! emits for one card operation, written as templates with wildcard holes
//! for the values that vary per run (PIN, random numbers, the payload to
//! sign).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::apdu::CommandApdu;

/// Length of a random-number hole.
pub const RN_LEN: usize = 8;
/// Length of a signature payload hole.
pub const PAYLOAD_LEN: usize = 0x75;

/// The canonical payload bound to `Payload` holes when nothing else is
/// supplied: the ascending bytes `00..74`.
pub fn default_payload() -> Vec<u8> {
    (0x00..=0x74).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wildcard {
    Pin,
    Rn,
    Payload,
}

impl fmt::Display for Wildcard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wildcard::Pin => f.write_str("PIN"),
            Wildcard::Rn => f.write_str("RN"),
            Wildcard::Payload => f.write_str("PAYLOAD"),
        }
    }
}

/// One piece of a template's data field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Fixed(Vec<u8>),
    Hole { kind: Wildcard, len: usize },
}

impl Segment {
    fn len(&self) -> usize {
        match self {
            Segment::Fixed(bytes) => bytes.len(),
            Segment::Hole { len, .. } => *len,
        }
    }
}

/// Step label: program number and step number, printed `1,5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StepLabel {
    pub program: u8,
    pub step: u8,
}

impl StepLabel {
    pub fn new(program: u8, step: u8) -> Self {
        StepLabel { program, step }
    }

    pub fn parse(text: &str) -> Option<StepLabel> {
        let (p, s) = text.split_once(',')?;
        Some(StepLabel {
            program: p.parse().ok()?,
            step: s.parse().ok()?,
        })
    }
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.program, self.step)
    }
}

/// One step of a straight-line program: a label, a human name and a
/// command template. Header bytes and the `le` byte are fixed; only the
/// declared holes in the data field vary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepTemplate {
    pub label: StepLabel,
    pub name: String,
    pub cla: u8,
    pub ins: u8,
    pub p1: u8,
    pub p2: u8,
    pub data: Vec<Segment>,
    pub le: Option<u8>,
}

impl StepTemplate {
    pub fn data_len(&self) -> usize {
        self.data.iter().map(Segment::len).sum()
    }

    /// Template match: fixed bytes exact (header, fixed segments, `le`),
    /// holes accept anything of their length.
    pub fn matches(&self, cmd: &CommandApdu) -> bool {
        if [self.cla, self.ins, self.p1, self.p2] != cmd.header()
            || self.le != cmd.le
            || self.data_len() != cmd.data.len()
        {
            return false;
        }
        let mut offset = 0;
        for segment in &self.data {
            let end = offset + segment.len();
            if let Segment::Fixed(bytes) = segment {
                if bytes[..] != cmd.data[offset..end] {
                    return false;
                }
            }
            offset = end;
        }
        true
    }

    /// Fills every hole from `bindings` and returns the concrete command.
    pub fn instantiate(&self, bindings: &Bindings) -> Result<CommandApdu, TemplateError> {
        let mut data = Vec::with_capacity(self.data_len());
        for segment in &self.data {
            match segment {
                Segment::Fixed(bytes) => data.extend_from_slice(bytes),
                Segment::Hole { kind, len } => {
                    let bound = bindings.get(*kind).ok_or(TemplateError::MissingBinding {
                        step: self.label,
                        wildcard: *kind,
                    })?;
                    if bound.len() != *len {
                        return Err(TemplateError::BindingLength {
                            step: self.label,
                            wildcard: *kind,
                            expected: *len,
                            got: bound.len(),
                        });
                    }
                    data.extend_from_slice(bound);
                }
            }
        }
        let mut cmd = CommandApdu::new(self.cla, self.ins, self.p1, self.p2).with_data(data);
        cmd.le = self.le;
        Ok(cmd)
    }
}

/// Wildcard bindings for instantiation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bindings {
    pub pin: Option<Vec<u8>>,
    pub rn: Option<Vec<u8>>,
    pub payload: Option<Vec<u8>>,
}

impl Bindings {
    fn get(&self, kind: Wildcard) -> Option<&Vec<u8>> {
        match kind {
            Wildcard::Pin => self.pin.as_ref(),
            Wildcard::Rn => self.rn.as_ref(),
            Wildcard::Payload => self.payload.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemplateError {
    MissingBinding {
        step: StepLabel,
        wildcard: Wildcard,
    },
    BindingLength {
        step: StepLabel,
        wildcard: Wildcard,
        expected: usize,
        got: usize,
    },
    NoSuchStep {
        index: usize,
        len: usize,
    },
}

impl fmt::Display for TemplateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateError::MissingBinding { step, wildcard } => {
                write!(f, "step {step} needs a {wildcard} binding")
            }
            TemplateError::BindingLength {
                step,
                wildcard,
                expected,
                got,
            } => {
                write!(
                    f,
                    "step {step}: {wildcard} binding must be {expected} bytes, got {got}"
                )
            }
            TemplateError::NoSuchStep { index, len } => {
                write!(
                    f,
                    "step index {index} out of range for a {len}-step program"
                )
            }
        }
    }
}

impl core::error::Error for TemplateError {}

/// An ordered, branch-free list of labeled command templates for one card
/// type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StraightLineProgram {
    pub id: String,
    /// Name of the card profile this program was written for.
    pub card_type: String,
    pub steps: Vec<StepTemplate>,
}

impl StraightLineProgram {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Finds a step by `i,j` label or by name (first match).
    pub fn find_step(&self, key: &str) -> Option<usize> {
        if let Some(label) = StepLabel::parse(key) {
            return self.steps.iter().position(|s| s.label == label);
        }
        self.steps.iter().position(|s| s.name == key)
    }

    /// Looks up a built-in program. `P1` and `P2` are accepted as
    /// shorthands.
    pub fn builtin(name: &str) -> Option<StraightLineProgram> {
        match name {
            "P1-INCRYPTO" | "P1" => Some(Self::p1_incrypto()),
            "P2-CARDOS" | "P2" => Some(Self::p2_cardos()),
            "P1-CHALLENGE" => Some(Self::p1_challenge_pair()),
            _ => None,
        }
    }

    /// The ten-step signing program for the `incrypto` profile.
    pub fn p1_incrypto() -> StraightLineProgram {
        StraightLineProgram {
            id: "P1-INCRYPTO".to_string(),
            card_type: "incrypto".to_string(),
            steps: vec![
                step(1, 1, "MF", [0x00, 0xA4, 0x00, 0x00], vec![], Some(0xFF)),
                step(
                    1,
                    2,
                    "CHDIR",
                    [0x00, 0xA4, 0x00, 0x00],
                    vec![fixed(&[0x14, 0x00])],
                    Some(0xFF),
                ),
                step(
                    1,
                    3,
                    "MSE_RESTORE",
                    [0x00, 0x22, 0xF3, 0x03],
                    vec![],
                    Some(0x00),
                ),
                step(
                    1,
                    4,
                    "MSE_SET",
                    [0x00, 0x22, 0xF1, 0xB6],
                    vec![fixed(&[0x83, 0x01, 0x10])],
                    Some(0x00),
                ),
                step(
                    1,
                    5,
                    "GET_CHAL",
                    [0x00, 0x84, 0x00, 0x00],
                    vec![],
                    Some(0x08),
                ),
                step(
                    1,
                    6,
                    "GIVE_CHAL",
                    [0x80, 0x86, 0x00, 0x00],
                    vec![hole(Wildcard::Rn, RN_LEN)],
                    Some(0x00),
                ),
                step(
                    1,
                    7,
                    "VERIFY",
                    [0x0C, 0x20, 0x00, 0x9A],
                    vec![hole(Wildcard::Pin, 8)],
                    Some(0x00),
                ),
                step(
                    1,
                    8,
                    "GET_CHAL",
                    [0x00, 0x84, 0x00, 0x00],
                    vec![],
                    Some(0x08),
                ),
                step(
                    1,
                    9,
                    "GIVE_CHAL",
                    [0x80, 0x86, 0x00, 0x00],
                    vec![hole(Wildcard::Rn, RN_LEN)],
                    Some(0x00),
                ),
                step(
                    1,
                    10,
                    "PSO_CDS",
                    [0x0C, 0x2A, 0x9E, 0x9A],
                    vec![hole(Wildcard::Payload, PAYLOAD_LEN)],
                    Some(0xFF),
                ),
            ],
        }
    }

    /// The five-step signing program for the `cardos` profile.
    pub fn p2_cardos() -> StraightLineProgram {
        StraightLineProgram {
            id: "P2-CARDOS".to_string(),
            card_type: "cardos".to_string(),
            steps: vec![
                step(2, 1, "MF", [0x00, 0xA4, 0x00, 0x00], vec![], Some(0xFF)),
                step(
                    2,
                    2,
                    "MSE_RESTORE",
                    [0x00, 0x22, 0xF3, 0x30],
                    vec![],
                    Some(0x00),
                ),
                step(
                    2,
                    3,
                    "MSE_SET",
                    [0x00, 0x22, 0xF1, 0xB6],
                    vec![fixed(&[0x4D, 0x00, 0x83, 0x01, 0x31])],
                    Some(0x00),
                ),
                step(
                    2,
                    4,
                    "VERIFY",
                    [0x0C, 0x20, 0x00, 0x90],
                    vec![hole(Wildcard::Pin, 4)],
                    Some(0x00),
                ),
                step(
                    2,
                    5,
                    "PSO_CDS",
                    [0x0C, 0x2A, 0x9E, 0x9A],
                    vec![hole(Wildcard::Payload, PAYLOAD_LEN)],
                    Some(0xFF),
                ),
            ],
        }
    }

    /// Just the Get/Give Challenge pair of the `incrypto` program, handy
    /// as the foreign side of interleaving experiments.
    pub fn p1_challenge_pair() -> StraightLineProgram {
        let p1 = Self::p1_incrypto();
        StraightLineProgram {
            id: "P1-CHALLENGE".to_string(),
            card_type: "incrypto".to_string(),
            steps: vec![p1.steps[4].clone(), p1.steps[5].clone()],
        }
    }
}

/// Instantiates step `index` of `program` with the given bindings.
pub fn instantiate_step(
    program: &StraightLineProgram,
    index: usize,
    bindings: &Bindings,
) -> Result<CommandApdu, TemplateError> {
    let template = program.steps.get(index).ok_or(TemplateError::NoSuchStep {
        index,
        len: program.len(),
    })?;
    template.instantiate(bindings)
}

fn step(
    program: u8,
    number: u8,
    name: &str,
    header: [u8; 4],
    data: Vec<Segment>,
    le: Option<u8>,
) -> StepTemplate {
    StepTemplate {
        label: StepLabel::new(program, number),
        name: name.to_string(),
        cla: header[0],
        ins: header[1],
        p1: header[2],
        p2: header[3],
        data,
        le,
    }
}

fn fixed(bytes: &[u8]) -> Segment {
    Segment::Fixed(bytes.to_vec())
}

fn hole(kind: Wildcard, len: usize) -> Segment {
    Segment::Hole { kind, len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apdu::{encode_command, hex_parse};

    fn full_bindings() -> Bindings {
        Bindings {
            pin: Some(b"12345678".to_vec()),
            rn: Some(vec![0xAA; 8]),
            payload: Some(default_payload()),
        }
    }

    #[test]
    fn give_challenge_instantiates_to_wire_shape() {
        let p1 = StraightLineProgram::p1_incrypto();
        let cmd = instantiate_step(&p1, 5, &full_bindings()).unwrap();
        let mut expected = hex_parse("8086000008").unwrap();
        expected.extend_from_slice(&[0xAA; 8]);
        expected.push(0x00);
        assert_eq!(encode_command(&cmd), expected);
    }

    #[test]
    fn verify_instantiates_with_profile_pin() {
        let p2 = StraightLineProgram::p2_cardos();
        let bindings = Bindings {
            pin: Some(vec![0x31, 0x32, 0x33, 0x34]),
            ..Default::default()
        };
        let cmd = instantiate_step(&p2, 3, &bindings).unwrap();
        assert_eq!(
            encode_command(&cmd),
            hex_parse("0C2000900431323334 00".replace(' ', "").as_str()).unwrap()
        );
    }

    #[test]
    fn missing_binding_is_an_error() {
        let p2 = StraightLineProgram::p2_cardos();
        let err = instantiate_step(&p2, 3, &Bindings::default()).unwrap_err();
        assert_eq!(
            err,
            TemplateError::MissingBinding {
                step: StepLabel::new(2, 4),
                wildcard: Wildcard::Pin
            }
        );
    }

    #[test]
    fn binding_length_is_checked() {
        let p1 = StraightLineProgram::p1_incrypto();
        let bindings = Bindings {
            pin: Some(vec![0x31; 4]),
            ..Default::default()
        };
        assert!(matches!(
            instantiate_step(&p1, 6, &bindings),
            Err(TemplateError::BindingLength {
                expected: 8,
                got: 4,
                ..
            })
        ));
    }

    #[test]
    fn out_of_range_step() {
        let p2 = StraightLineProgram::p2_cardos();
        assert!(matches!(
            instantiate_step(&p2, 9, &full_bindings()),
            Err(TemplateError::NoSuchStep { index: 9, len: 5 })
        ));
    }

    #[test]
    fn template_match_is_fixed_bytes_exact_wildcards_any() {
        let p2 = StraightLineProgram::p2_cardos();
        let verify = &p2.steps[3];
        let own = CommandApdu::new(0x0C, 0x20, 0x00, 0x90)
            .with_data(vec![9; 4])
            .with_le(0x00);
        assert!(verify.matches(&own));

        // Wrong p2 byte: foreign.
        let foreign = CommandApdu::new(0x0C, 0x20, 0x00, 0x9A)
            .with_data(vec![9; 4])
            .with_le(0x00);
        assert!(!verify.matches(&foreign));

        // le is a fixed byte of the template.
        let wrong_le = CommandApdu::new(0x0C, 0x20, 0x00, 0x90)
            .with_data(vec![9; 4])
            .with_le(0x01);
        assert!(!verify.matches(&wrong_le));

        // Wrong data length.
        let wrong_len = CommandApdu::new(0x0C, 0x20, 0x00, 0x90)
            .with_data(vec![9; 8])
            .with_le(0x00);
        assert!(!verify.matches(&wrong_len));
    }

    #[test]
    fn labels_parse_and_lookup() {
        assert_eq!(StepLabel::parse("1,10"), Some(StepLabel::new(1, 10)));
        assert_eq!(StepLabel::parse("oops"), None);

        let p1 = StraightLineProgram::p1_incrypto();
        assert_eq!(p1.find_step("1,8"), Some(7));
        // By name: first match.
        assert_eq!(p1.find_step("GET_CHAL"), Some(4));
        assert_eq!(p1.find_step("PSO_CDS"), Some(9));
        assert_eq!(p1.find_step("2,1"), None);
    }

    #[test]
    fn builtins_resolve() {
        assert_eq!(
            StraightLineProgram::builtin("P1").unwrap().id,
            "P1-INCRYPTO"
        );
        assert_eq!(StraightLineProgram::builtin("P2-CARDOS").unwrap().len(), 5);
        assert_eq!(
            StraightLineProgram::builtin("P1-CHALLENGE").unwrap().len(),
            2
        );
        assert!(StraightLineProgram::builtin("P3").is_none());
    }

    #[test]
    fn step_templates_match_their_own_instantiation() {
        for program in [
            StraightLineProgram::p1_incrypto(),
            StraightLineProgram::p2_cardos(),
        ] {
            let pin_len = if program.card_type == "incrypto" {
                8
            } else {
                4
            };
            let bindings = Bindings {
                pin: Some(vec![0x30; pin_len]),
                rn: Some(vec![0x01; 8]),
                payload: Some(default_payload()),
            };
            for (index, template) in program.steps.iter().enumerate() {
                let cmd = instantiate_step(&program, index, &bindings).unwrap();
                assert!(
                    template.matches(&cmd),
                    "step {} must match itself",
                    template.label
                );
            }
        }
    }
}
