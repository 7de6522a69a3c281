//! Rule-driven simulated smartcards.
//!
//! A [`CardProfile`] is an ordered list of [`AcceptanceRule`]s: the first
//! rule whose pattern matches an incoming command decides what the card
//! does. A rule whose guard holds applies its effects and answers with its
//! reply template; a rule whose guard fails answers with its declared
//! failure status and touches nothing. A match-anything fallback rule
//! ("instruction not supported") terminates every rule list, so `execute`
//! is total: card-level problems are status words, never errors.
//!
//! Two profiles ship built in. `cardos` models a card whose signing flow
//! is select MF, MSE Restore, MSE Set, Verify, PSO-CDS, and which also
//! answers challenge commands at any point without disturbing that flow.
//! `incrypto` models a card with a challenge-based secure-messaging flavor:
//! Verify and PSO-CDS demand a fresh Get/Give Challenge pair, modified and
//! undocumented challenge-class commands are accepted silently, a data-less
//! SELECT loops back to the master file without clearing session state, and
//! MSE Erase destroys the security environment object permanently - no PIN
//! required, no recovery short of replacing the card.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::apdu::{CommandApdu, ResponseApdu};
use crate::stream::{expand, ByteStream, LANE_CARD};

pub const SW_SUCCESS: u16 = 0x9000;
pub const SW_INS_NOT_SUPPORTED: u16 = 0x6D00;
pub const SW_WRONG_P1_P2: u16 = 0x6A86;
pub const SW_FILE_NOT_FOUND: u16 = 0x6A82;
pub const SW_SECURITY_STATUS: u16 = 0x6982;
pub const SW_CONDITIONS_NOT_SATISFIED: u16 = 0x6985;
pub const SW_PIN_MISMATCH: u16 = 0x6300;

/// Pseudo-signatures are always this long.
pub const SIGNATURE_LEN: usize = 128;

/// Matcher for one header byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ByteMatch {
    Exact(u8),
    Any,
    OneOf(Vec<u8>),
}

impl ByteMatch {
    fn matches(&self, byte: u8) -> bool {
        match self {
            ByteMatch::Exact(b) => *b == byte,
            ByteMatch::Any => true,
            ByteMatch::OneOf(set) => set.contains(&byte),
        }
    }

    fn is_any(&self) -> bool {
        matches!(self, ByteMatch::Any)
    }
}

/// Matcher for the data field. The implied `lc` constraint rides along:
/// `Exact` pins length and content, `Len` pins length only, `Any` accepts
/// everything including no data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataMatch {
    Exact(Vec<u8>),
    Len(usize),
    Any,
}

impl DataMatch {
    fn matches(&self, data: &[u8]) -> bool {
        match self {
            DataMatch::Exact(bytes) => bytes == data,
            DataMatch::Len(n) => data.len() == *n,
            DataMatch::Any => true,
        }
    }
}

/// Command pattern over (cla, ins, p1, p2, data). The response `le` byte
/// is deliberately ignored: cards react to what arrives in the command
/// body, not to how much the host expects back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub cla: ByteMatch,
    pub ins: ByteMatch,
    pub p1: ByteMatch,
    pub p2: ByteMatch,
    pub data: DataMatch,
}

impl Pattern {
    pub fn matches(&self, cmd: &CommandApdu) -> bool {
        self.cla.matches(cmd.cla)
            && self.ins.matches(cmd.ins)
            && self.p1.matches(cmd.p1)
            && self.p2.matches(cmd.p2)
            && self.data.matches(&cmd.data)
    }

    fn matches_anything(&self) -> bool {
        self.cla.is_any()
            && self.ins.is_any()
            && self.p1.is_any()
            && self.p2.is_any()
            && matches!(self.data, DataMatch::Any)
    }
}

/// Predicate over [`CardState`]; a rule's guards are a conjunction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    Always,
    SeoIntact,
    DfSelected,
    SeRestored,
    KeySelected,
    PinVerified,
    ChallengePairFresh,
}

impl Guard {
    fn holds(&self, state: &CardState) -> bool {
        match self {
            Guard::Always => true,
            Guard::SeoIntact => !state.seo_destroyed,
            Guard::DfSelected => state.df_selected,
            Guard::SeRestored => state.se_restored,
            Guard::KeySelected => state.key_selected.is_some(),
            Guard::PinVerified => state.pin_verified,
            Guard::ChallengePairFresh => {
                state.card_challenge.is_some() && state.host_challenge.is_some()
            }
        }
    }
}

/// State mutation applied when a rule fires with its guard held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    DirMf,
    DirDf,
    SeRestored,
    SelectKey(u8),
    PinVerified,
    /// Draw eight bytes from the card's challenge stream and remember them.
    SetCardChallenge,
    /// Remember the command's data field as the host challenge.
    SetHostChallenge,
    ConsumeChallengePair,
    DestroySeo,
    CountSignature,
}

/// What the success reply carries besides the status word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplyData {
    None,
    /// Eight challenge bytes (the ones a `SetCardChallenge` effect just
    /// drew, or a fresh draw when no such effect ran).
    Challenge,
    /// A pseudo-signature over the command data.
    Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcceptanceRule {
    pub name: String,
    pub pattern: Pattern,
    pub guards: Vec<Guard>,
    pub effects: Vec<Effect>,
    pub reply: ReplyData,
    /// Status word returned when the guard holds.
    pub sw: u16,
    /// Status word returned when the guard fails; no effects are applied.
    pub fail_sw: u16,
}

impl AcceptanceRule {
    pub fn new(name: &str, pattern: Pattern) -> Self {
        AcceptanceRule {
            name: String::from(name),
            pattern,
            guards: vec![Guard::Always],
            effects: Vec::new(),
            reply: ReplyData::None,
            sw: SW_SUCCESS,
            fail_sw: SW_INS_NOT_SUPPORTED,
        }
    }

    pub fn guards(mut self, guards: Vec<Guard>) -> Self {
        self.guards = guards;
        self
    }

    pub fn effects(mut self, effects: Vec<Effect>) -> Self {
        self.effects = effects;
        self
    }

    pub fn reply(mut self, reply: ReplyData) -> Self {
        self.reply = reply;
        self
    }

    pub fn sw(mut self, sw: u16) -> Self {
        self.sw = sw;
        self
    }

    pub fn fail_sw(mut self, sw: u16) -> Self {
        self.fail_sw = sw;
        self
    }
}

/// Directory position in the simulated file system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Dir {
    #[default]
    Mf,
    Df1400,
}

impl fmt::Display for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dir::Mf => f.write_str("MF"),
            Dir::Df1400 => f.write_str("MF/DF-1400"),
        }
    }
}

/// Per-instance mutable card state.
///
/// `seo_destroyed` is the one persistent flag: reset never clears it, only
/// creating a new instance does. `df_selected` records that the signature
/// directory was selected at some point in this session; it survives a
/// loop-back SELECT MF (which moves `current_dir` home but preserves the
/// rest of the session), and is what the MSE Restore guard checks.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CardState {
    pub current_dir: Dir,
    pub df_selected: bool,
    pub se_restored: bool,
    pub key_selected: Option<u8>,
    pub pin_verified: bool,
    pub card_challenge: Option<[u8; 8]>,
    pub host_challenge: Option<[u8; 8]>,
    pub seo_destroyed: bool,
    pub signatures_issued: u64,
    pub challenges: ByteStream,
}

impl CardState {
    fn fresh(seed: u64) -> Self {
        CardState {
            current_dir: Dir::Mf,
            df_selected: false,
            se_restored: false,
            key_selected: None,
            pin_verified: false,
            card_challenge: None,
            host_challenge: None,
            seo_destroyed: false,
            signatures_issued: 0,
            challenges: ByteStream::new(seed, LANE_CARD),
        }
    }

    /// Clears session state; the destroyed-SEO flag, the signature counter
    /// and the challenge stream position survive.
    fn reset(&mut self) {
        self.current_dir = Dir::Mf;
        self.df_selected = false;
        self.se_restored = false;
        self.key_selected = None;
        self.pin_verified = false;
        self.card_challenge = None;
        self.host_challenge = None;
    }
}

/// Declarative behavior model of one card type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CardProfile {
    pub name: String,
    pub rules: Vec<AcceptanceRule>,
    pub pin: Vec<u8>,
    pub key_ids: Vec<u8>,
    pub reset_response: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProfileError {
    NoRules,
    /// The last rule must match anything.
    MissingFallback,
    /// A match-anything rule appears before the end and would shadow
    /// everything after it.
    EarlyFallback {
        index: usize,
    },
    EmptyPin,
    /// Rules that answer with a non-success status must not mutate state.
    EffectsOnFailureReply {
        rule: String,
    },
    /// A `SelectKey` effect names a key the profile does not hold.
    UnknownKey {
        rule: String,
        key: u8,
    },
}

impl fmt::Display for ProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileError::NoRules => f.write_str("profile has no rules"),
            ProfileError::MissingFallback => {
                f.write_str("last rule must be a match-anything fallback")
            }
            ProfileError::EarlyFallback { index } => {
                write!(
                    f,
                    "match-anything rule at position {index} shadows later rules"
                )
            }
            ProfileError::EmptyPin => f.write_str("profile pin must not be empty"),
            ProfileError::EffectsOnFailureReply { rule } => {
                write!(f, "rule '{rule}' answers failure but declares effects")
            }
            ProfileError::UnknownKey { rule, key } => {
                write!(f, "rule '{rule}' selects key {key:02X} not in key_ids")
            }
        }
    }
}

impl core::error::Error for ProfileError {}

impl CardProfile {
    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Option<CardProfile> {
        match name {
            "cardos" => Some(Self::cardos()),
            "incrypto" => Some(Self::incrypto()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let Some(last) = self.rules.last() else {
            return Err(ProfileError::NoRules);
        };
        if !last.pattern.matches_anything() {
            return Err(ProfileError::MissingFallback);
        }
        for (index, rule) in self.rules[..self.rules.len() - 1].iter().enumerate() {
            if rule.pattern.matches_anything() {
                return Err(ProfileError::EarlyFallback { index });
            }
        }
        if self.pin.is_empty() {
            return Err(ProfileError::EmptyPin);
        }
        for rule in &self.rules {
            if rule.sw != SW_SUCCESS && !rule.effects.is_empty() {
                return Err(ProfileError::EffectsOnFailureReply {
                    rule: rule.name.clone(),
                });
            }
            for effect in &rule.effects {
                if let Effect::SelectKey(key) = effect {
                    if !self.key_ids.contains(key) {
                        return Err(ProfileError::UnknownKey {
                            rule: rule.name.clone(),
                            key: *key,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// The five-step signing card: exact command shapes only, challenge
    /// commands tolerated at any point.
    pub fn cardos() -> CardProfile {
        let pin = vec![0x31, 0x32, 0x33, 0x34];
        let profile = CardProfile {
            name: String::from("cardos"),
            pin: pin.clone(),
            key_ids: vec![0x31],
            reset_response: vec![
                0x3B, 0xD2, 0x18, 0x00, 0x81, 0x31, 0xFE, 0x58, 0xC9, 0x01, 0x14,
            ],
            rules: vec![
                AcceptanceRule::new(
                    "select_mf",
                    pat(0x00, 0xA4, 0x00, 0x00, DataMatch::Exact(vec![])),
                )
                .effects(vec![Effect::DirMf]),
                AcceptanceRule::new(
                    "select_unknown",
                    pat(0x00, 0xA4, 0x00, 0x00, DataMatch::Any),
                )
                .sw(SW_FILE_NOT_FOUND),
                AcceptanceRule::new(
                    "mse_restore",
                    pat(0x00, 0x22, 0xF3, 0x30, DataMatch::Exact(vec![])),
                )
                .guards(vec![Guard::SeoIntact])
                .effects(vec![Effect::SeRestored])
                .fail_sw(SW_CONDITIONS_NOT_SATISFIED),
                AcceptanceRule::new(
                    "mse_set",
                    pat(
                        0x00,
                        0x22,
                        0xF1,
                        0xB6,
                        DataMatch::Exact(vec![0x4D, 0x00, 0x83, 0x01, 0x31]),
                    ),
                )
                .guards(vec![Guard::SeRestored])
                .effects(vec![Effect::SelectKey(0x31)])
                .fail_sw(SW_CONDITIONS_NOT_SATISFIED),
                AcceptanceRule::new("mse_unknown", pat_any_p(0x00, 0x22)).sw(SW_WRONG_P1_P2),
                AcceptanceRule::new("verify", pat(0x0C, 0x20, 0x00, 0x90, DataMatch::Exact(pin)))
                    .effects(vec![Effect::PinVerified]),
                AcceptanceRule::new(
                    "verify_mismatch",
                    pat(0x0C, 0x20, 0x00, 0x90, DataMatch::Len(4)),
                )
                .sw(SW_PIN_MISMATCH),
                AcceptanceRule::new(
                    "get_challenge",
                    pat(0x00, 0x84, 0x00, 0x00, DataMatch::Exact(vec![])),
                )
                .reply(ReplyData::Challenge),
                AcceptanceRule::new(
                    "give_challenge",
                    pat(0x80, 0x86, 0x00, 0x00, DataMatch::Len(8)),
                ),
                AcceptanceRule::new("pso_cds", pat(0x0C, 0x2A, 0x9E, 0x9A, DataMatch::Len(0x75)))
                    .guards(vec![Guard::KeySelected, Guard::PinVerified])
                    .effects(vec![Effect::CountSignature])
                    .reply(ReplyData::Signature)
                    .fail_sw(SW_SECURITY_STATUS),
                fallback(),
            ],
        };
        debug_assert!(profile.validate().is_ok());
        profile
    }

    /// The ten-step secure-messaging card: loop-back SELECT, wide
    /// tolerance for challenge-class commands, and the destructive
    /// MSE Erase.
    pub fn incrypto() -> CardProfile {
        let pin = vec![0x31, 0x32, 0x33, 0x34, 0x35, 0x36, 0x37, 0x38];
        let challenge_classes = vec![0x80, 0x81, 0x8C, 0x8F];
        let profile = CardProfile {
            name: String::from("incrypto"),
            pin: pin.clone(),
            key_ids: vec![0x10],
            reset_response: vec![
                0x3B, 0xFF, 0x18, 0x00, 0xFF, 0x81, 0x31, 0xFE, 0x55, 0x00, 0x6B, 0x02, 0x09,
            ],
            rules: vec![
                // Loop-back: selecting the master file moves the directory
                // pointer home and preserves everything else.
                AcceptanceRule::new(
                    "select_mf",
                    pat(0x00, 0xA4, 0x00, 0x00, DataMatch::Exact(vec![])),
                )
                .effects(vec![Effect::DirMf]),
                AcceptanceRule::new(
                    "select_df",
                    pat(0x00, 0xA4, 0x00, 0x00, DataMatch::Exact(vec![0x14, 0x00])),
                )
                .effects(vec![Effect::DirDf]),
                AcceptanceRule::new(
                    "select_unknown",
                    pat(0x00, 0xA4, 0x00, 0x00, DataMatch::Any),
                )
                .sw(SW_FILE_NOT_FOUND),
                AcceptanceRule::new(
                    "mse_restore",
                    pat(0x00, 0x22, 0xF3, 0x03, DataMatch::Exact(vec![])),
                )
                .guards(vec![Guard::DfSelected, Guard::SeoIntact])
                .effects(vec![Effect::SeRestored])
                .fail_sw(SW_CONDITIONS_NOT_SATISFIED),
                AcceptanceRule::new(
                    "mse_set",
                    pat(
                        0x00,
                        0x22,
                        0xF1,
                        0xB6,
                        DataMatch::Exact(vec![0x83, 0x01, 0x10]),
                    ),
                )
                .guards(vec![Guard::SeRestored])
                .effects(vec![Effect::SelectKey(0x10)])
                .fail_sw(SW_CONDITIONS_NOT_SATISFIED),
                // No PIN, no PUK, no guard: anyone can erase the security
                // environment object, and nothing brings it back.
                AcceptanceRule::new(
                    "mse_erase",
                    pat(0x00, 0x22, 0xF4, 0x03, DataMatch::Exact(vec![])),
                )
                .effects(vec![Effect::DestroySeo]),
                AcceptanceRule::new("mse_unknown", pat_any_p(0x00, 0x22)).sw(SW_WRONG_P1_P2),
                // Observed tolerance: arbitrary p1/p2 on Get Challenge.
                AcceptanceRule::new(
                    "get_challenge",
                    Pattern {
                        cla: ByteMatch::Exact(0x00),
                        ins: ByteMatch::Exact(0x84),
                        p1: ByteMatch::Any,
                        p2: ByteMatch::Any,
                        data: DataMatch::Exact(vec![]),
                    },
                )
                .effects(vec![Effect::SetCardChallenge])
                .reply(ReplyData::Challenge),
                // Observed tolerance: the whole 81/8C/8F class answers like
                // Give Challenge; only an 8-byte body is actually stored.
                AcceptanceRule::new(
                    "challenge_class_give",
                    Pattern {
                        cla: ByteMatch::OneOf(challenge_classes.clone()),
                        ins: ByteMatch::Exact(0x86),
                        p1: ByteMatch::Any,
                        p2: ByteMatch::Any,
                        data: DataMatch::Len(8),
                    },
                )
                .effects(vec![Effect::SetHostChallenge]),
                AcceptanceRule::new(
                    "challenge_class_other",
                    Pattern {
                        cla: ByteMatch::OneOf(challenge_classes),
                        ins: ByteMatch::Exact(0x86),
                        p1: ByteMatch::Any,
                        p2: ByteMatch::Any,
                        data: DataMatch::Any,
                    },
                ),
                AcceptanceRule::new("verify", pat(0x0C, 0x20, 0x00, 0x9A, DataMatch::Exact(pin)))
                    .guards(vec![Guard::ChallengePairFresh])
                    .effects(vec![Effect::PinVerified, Effect::ConsumeChallengePair])
                    .fail_sw(SW_SECURITY_STATUS),
                AcceptanceRule::new(
                    "verify_mismatch",
                    pat(0x0C, 0x20, 0x00, 0x9A, DataMatch::Len(8)),
                )
                .sw(SW_PIN_MISMATCH),
                AcceptanceRule::new("pso_cds", pat(0x0C, 0x2A, 0x9E, 0x9A, DataMatch::Len(0x75)))
                    .guards(vec![
                        Guard::KeySelected,
                        Guard::PinVerified,
                        Guard::ChallengePairFresh,
                    ])
                    .effects(vec![Effect::ConsumeChallengePair, Effect::CountSignature])
                    .reply(ReplyData::Signature)
                    .fail_sw(SW_SECURITY_STATUS),
                fallback(),
            ],
        };
        debug_assert!(profile.validate().is_ok());
        profile
    }
}

fn pat(cla: u8, ins: u8, p1: u8, p2: u8, data: DataMatch) -> Pattern {
    Pattern {
        cla: ByteMatch::Exact(cla),
        ins: ByteMatch::Exact(ins),
        p1: ByteMatch::Exact(p1),
        p2: ByteMatch::Exact(p2),
        data,
    }
}

fn pat_any_p(cla: u8, ins: u8) -> Pattern {
    Pattern {
        cla: ByteMatch::Exact(cla),
        ins: ByteMatch::Exact(ins),
        p1: ByteMatch::Any,
        p2: ByteMatch::Any,
        data: DataMatch::Any,
    }
}

fn fallback() -> AcceptanceRule {
    AcceptanceRule::new(
        "fallback",
        Pattern {
            cla: ByteMatch::Any,
            ins: ByteMatch::Any,
            p1: ByteMatch::Any,
            p2: ByteMatch::Any,
            data: DataMatch::Any,
        },
    )
    .sw(SW_INS_NOT_SUPPORTED)
}

/// Deterministic stand-in for an RSA signature: a fixed-length digest
/// keyed by card type and key id.
pub fn pseudo_signature(profile_name: &str, key_id: u8, payload: &[u8]) -> Vec<u8> {
    expand(
        b"cps.signature.v1",
        &[profile_name.as_bytes(), &[key_id], payload],
        SIGNATURE_LEN,
    )
}

/// One simulated card instance.
///
/// A card is a single-threaded state machine; callers that drive one card
/// from several contexts must serialize access themselves.
#[derive(Clone, Debug)]
pub struct Card {
    profile: CardProfile,
    state: CardState,
}

impl Card {
    /// A fresh instance: all flags clear, SEO intact, challenge stream
    /// seeded. Creating a new instance is the simulated equivalent of
    /// physically replacing the card.
    pub fn create(profile: CardProfile, seed: u64) -> Card {
        Card {
            state: CardState::fresh(seed),
            profile,
        }
    }

    pub fn profile(&self) -> &CardProfile {
        &self.profile
    }

    pub fn state(&self) -> &CardState {
        &self.state
    }

    /// Clears session state (directory, security environment, key, PIN,
    /// challenges) and returns the profile's reset answer. A destroyed SEO
    /// stays destroyed.
    pub fn reset(&mut self) -> Vec<u8> {
        self.state.reset();
        self.profile.reset_response.clone()
    }

    /// Runs one command through the rule list. First matching rule wins;
    /// a failed guard answers the rule's failure status with no effects.
    pub fn execute(&mut self, cmd: &CommandApdu) -> ResponseApdu {
        let rule_index = self
            .profile
            .rules
            .iter()
            .position(|r| r.pattern.matches(cmd))
            .expect("validated profiles end in a fallback rule");
        let rule = &self.profile.rules[rule_index];

        if !rule.guards.iter().all(|g| g.holds(&self.state)) {
            return ResponseApdu::new(Vec::new(), rule.fail_sw);
        }

        let mut drawn: Option<[u8; 8]> = None;
        for effect in &rule.effects {
            match effect {
                Effect::DirMf => self.state.current_dir = Dir::Mf,
                Effect::DirDf => {
                    self.state.current_dir = Dir::Df1400;
                    self.state.df_selected = true;
                }
                Effect::SeRestored => self.state.se_restored = true,
                Effect::SelectKey(key) => self.state.key_selected = Some(*key),
                Effect::PinVerified => self.state.pin_verified = true,
                Effect::SetCardChallenge => {
                    let block = self.state.challenges.next_block();
                    self.state.card_challenge = Some(block);
                    drawn = Some(block);
                }
                Effect::SetHostChallenge => {
                    let mut block = [0u8; 8];
                    block.copy_from_slice(&cmd.data[..8]);
                    self.state.host_challenge = Some(block);
                }
                Effect::ConsumeChallengePair => {
                    self.state.card_challenge = None;
                    self.state.host_challenge = None;
                }
                Effect::DestroySeo => self.state.seo_destroyed = true,
                Effect::CountSignature => self.state.signatures_issued += 1,
            }
        }

        let data = match rule.reply {
            ReplyData::None => Vec::new(),
            ReplyData::Challenge => {
                let block = drawn.unwrap_or_else(|| self.state.challenges.next_block());
                block.to_vec()
            }
            ReplyData::Signature => pseudo_signature(
                &self.profile.name,
                self.state
                    .key_selected
                    .expect("signature rules guard on a selected key"),
                &cmd.data,
            ),
        };
        ResponseApdu::new(data, rule.sw)
    }

    /// Signs `payload` through the profile's PSO-CDS shape. Guard
    /// violations surface as the card's status word.
    pub fn sign_payload(&mut self, payload: &[u8]) -> Result<Vec<u8>, u16> {
        let cmd = CommandApdu::new(0x0C, 0x2A, 0x9E, 0x9A)
            .with_data(payload.to_vec())
            .with_le(0xFF);
        let resp = self.execute(&cmd);
        if resp.is_success() {
            Ok(resp.data)
        } else {
            Err(resp.sw())
        }
    }

    /// Value-faithful copy of the card state, challenge stream position
    /// included.
    pub fn snapshot(&self) -> CardState {
        self.state.clone()
    }

    /// Makes subsequent behavior identical to the snapshot moment.
    pub fn restore(&mut self, snapshot: CardState) {
        self.state = snapshot;
    }
}
