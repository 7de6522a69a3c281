//! Replays of the certified and the interfered command sequences against
//! the built-in card profiles, at card level and at middleware level.

use cps_core::apdu::CommandApdu;
use cps_core::card::{Card, CardProfile, SIGNATURE_LEN, SW_CONDITIONS_NOT_SATISFIED};
use cps_core::explore::loopback_variants;
use cps_core::program::{default_payload, instantiate_step, StraightLineProgram};
use cps_core::router::{Classification, FaultConfig, Router, SessionStatus};

fn cmd(cla: u8, ins: u8, p1: u8, p2: u8) -> CommandApdu {
    CommandApdu::new(cla, ins, p1, p2)
}

fn incrypto_pin() -> Vec<u8> {
    CardProfile::incrypto().pin
}

/// The sixteen-command executed sequence on the ten-step card: the
/// certified steps 1,1-1,4, 1,7 and 1,10 interleaved with five undefined
/// commands and five modified challenge commands.
fn executed_sequence() -> Vec<CommandApdu> {
    let undefined = |cla: u8| {
        cmd(cla, 0x86, 0x00, 0x00)
            .with_data(vec![0x14, 0x00])
            .with_le(0x00)
    };
    let give_modified = |rn: u8| {
        cmd(0x80, 0x86, 0xAC, 0x45)
            .with_data(vec![rn; 8])
            .with_le(0x00)
    };
    let get_modified = || cmd(0x00, 0x84, 0xBD, 0x17).with_le(0x08);
    vec![
        cmd(0x00, 0xA4, 0x00, 0x00).with_le(0xFF),
        undefined(0x81),
        undefined(0x8F),
        give_modified(0x11),
        cmd(0x00, 0xA4, 0x00, 0x00)
            .with_data(vec![0x14, 0x00])
            .with_le(0xFF),
        undefined(0x81),
        cmd(0x00, 0x22, 0xF3, 0x03).with_le(0x00),
        cmd(0x00, 0x22, 0xF1, 0xB6)
            .with_data(vec![0x83, 0x01, 0x10])
            .with_le(0x00),
        get_modified(),
        give_modified(0x22),
        cmd(0x0C, 0x20, 0x00, 0x9A)
            .with_data(incrypto_pin())
            .with_le(0x00),
        undefined(0x8C),
        get_modified(),
        give_modified(0x33),
        cmd(0x0C, 0x2A, 0x9E, 0x9A)
            .with_data(default_payload())
            .with_le(0xFF),
        undefined(0x8C),
    ]
}

fn erase_sequence() -> Vec<CommandApdu> {
    vec![
        cmd(0x00, 0xA4, 0x00, 0x00).with_le(0xFF),
        cmd(0x00, 0xA4, 0x00, 0x00)
            .with_data(vec![0x14, 0x00])
            .with_le(0xFF),
        cmd(0x00, 0x22, 0xF4, 0x03).with_le(0x00),
        cmd(0x00, 0x22, 0xF3, 0x03).with_le(0x00),
    ]
}

/// Drives a full certified program through the router against its own
/// card and returns the router for inspection.
fn run_certified(program: StraightLineProgram, profile: CardProfile, seed: u64) -> Router {
    let mut router = Router::new(seed);
    router.add_card("c1", profile, seed).unwrap();
    router.open_session("s1", program.clone(), "c1").unwrap();
    for index in 0..program.len() {
        let bindings = router.default_bindings(&program);
        let cmd = instantiate_step(&program, index, &bindings).unwrap();
        router.dispatch("s1", cmd, &FaultConfig::none()).unwrap();
    }
    router
}

#[test]
fn certified_ten_step_run_succeeds_with_signature() {
    let router = run_certified(
        StraightLineProgram::p1_incrypto(),
        CardProfile::incrypto(),
        42,
    );
    assert!(router.trace().iter().all(|r| r.response.is_success()));
    assert!(router
        .trace()
        .iter()
        .all(|r| r.verdict == Classification::CorrectTransition));
    assert_eq!(
        router.session("s1").unwrap().status,
        SessionStatus::Completed
    );
    assert_eq!(
        router.trace().last().unwrap().response.data.len(),
        SIGNATURE_LEN
    );
}

#[test]
fn certified_five_step_run_succeeds_with_signature() {
    let router = run_certified(StraightLineProgram::p2_cardos(), CardProfile::cardos(), 42);
    assert_eq!(router.trace().len(), 5);
    assert!(router.trace().iter().all(|r| r.response.is_success()));
    assert_eq!(
        router.session("s1").unwrap().status,
        SessionStatus::Completed
    );
    assert_eq!(
        router.trace().last().unwrap().response.data.len(),
        SIGNATURE_LEN
    );
}

#[test]
fn executed_sequence_terminates_without_any_error() {
    let mut card = Card::create(CardProfile::incrypto(), 42);
    for (index, command) in executed_sequence().iter().enumerate() {
        let response = card.execute(command);
        assert!(
            response.is_success(),
            "command {} answered {:04X}",
            index + 1,
            response.sw()
        );
    }
    assert_eq!(card.state().signatures_issued, 1);
}

#[test]
fn executed_sequence_classifies_ten_foreign_commands() {
    let mut router = Router::new(42);
    router.add_card("c1", CardProfile::incrypto(), 42).unwrap();
    router
        .open_session("s1", StraightLineProgram::p1_incrypto(), "c1")
        .unwrap();
    for command in executed_sequence() {
        let record = router
            .dispatch("s1", command, &FaultConfig::none())
            .unwrap();
        assert!(record.response.is_success());
    }
    let verdicts: Vec<Classification> = router.trace().iter().map(|r| r.verdict).collect();
    let anomalies = verdicts
        .iter()
        .filter(|v| **v == Classification::Anomaly)
        .count();
    let transitions = verdicts
        .iter()
        .filter(|v| **v == Classification::CorrectTransition)
        .count();
    assert_eq!(
        anomalies, 10,
        "one anomaly per undefined or modified command"
    );
    assert_eq!(transitions, 6, "the six certified rows are recognized");
    // The certified program ran to its end: Verify and PSO-CDS are
    // recognized as steps 1,7 and 1,10 even though the challenge steps
    // before them were replaced by modified look-alikes.
    assert_eq!(
        router.session("s1").unwrap().status,
        SessionStatus::Completed
    );
}

#[test]
fn challenge_interleave_classifies_five_transitions_two_anomalies() {
    let mut router = Router::new(7);
    router.add_card("c1", CardProfile::cardos(), 7).unwrap();
    router
        .open_session("s1", StraightLineProgram::p2_cardos(), "c1")
        .unwrap();

    let p2 = StraightLineProgram::p2_cardos();
    let p1 = StraightLineProgram::p1_incrypto();
    // Steps 2,1-2,3, then the foreign challenge pair 1,5-1,6, then 2,4-2,5.
    let order: [(&StraightLineProgram, usize); 7] = [
        (&p2, 0),
        (&p2, 1),
        (&p2, 2),
        (&p1, 4),
        (&p1, 5),
        (&p2, 3),
        (&p2, 4),
    ];
    for (program, index) in order {
        let bindings = router.default_bindings(program);
        let cmd = instantiate_step(program, index, &bindings).unwrap();
        let record = router.dispatch("s1", cmd, &FaultConfig::none()).unwrap();
        assert!(
            record.response.is_success(),
            "no error message is generated"
        );
    }

    let verdicts: Vec<Classification> = router.trace().iter().map(|r| r.verdict).collect();
    assert_eq!(
        verdicts,
        vec![
            Classification::CorrectTransition,
            Classification::CorrectTransition,
            Classification::CorrectTransition,
            Classification::Anomaly,
            Classification::Anomaly,
            Classification::CorrectTransition,
            Classification::CorrectTransition,
        ]
    );
    assert_eq!(
        router.session("s1").unwrap().status,
        SessionStatus::Completed
    );
    assert_eq!(
        router.trace().last().unwrap().response.data.len(),
        SIGNATURE_LEN
    );
}

#[test]
fn erase_sequence_fails_at_restore_and_destroys_the_card() {
    let mut card = Card::create(CardProfile::incrypto(), 42);
    let sequence = erase_sequence();
    for command in &sequence[..3] {
        assert!(card.execute(command).is_success());
    }
    let response = card.execute(&sequence[3]);
    assert_eq!(response.sw(), SW_CONDITIONS_NOT_SATISFIED);
    assert!(card.state().seo_destroyed);

    // Reset does not bring the card back; a fresh run dies at the same step.
    card.reset();
    assert!(card.execute(&sequence[0]).is_success());
    assert!(card.execute(&sequence[1]).is_success());
    assert_eq!(card.execute(&sequence[3]).sw(), SW_CONDITIONS_NOT_SATISFIED);

    // Only physical replacement helps.
    let mut replacement = Card::create(CardProfile::incrypto(), 42);
    assert!(replacement.execute(&sequence[0]).is_success());
    assert!(replacement.execute(&sequence[1]).is_success());
    assert!(replacement.execute(&sequence[3]).is_success());
}

#[test]
fn select_mf_loops_back_after_any_step() {
    let base = executed_sequence();
    let loop_cmd = cmd(0x00, 0xA4, 0x00, 0x00).with_le(0xFF);
    let variants: Vec<Vec<CommandApdu>> = loopback_variants(&base, &loop_cmd).collect();
    assert_eq!(variants.len(), base.len());
    for (position, variant) in variants.iter().enumerate() {
        let mut card = Card::create(CardProfile::incrypto(), 42);
        for (index, command) in variant.iter().enumerate() {
            let response = card.execute(command);
            assert!(
                response.is_success(),
                "variant {} failed at command {} with {:04X}",
                position + 1,
                index + 1,
                response.sw()
            );
        }
        assert_eq!(card.state().signatures_issued, 1);
    }
}
