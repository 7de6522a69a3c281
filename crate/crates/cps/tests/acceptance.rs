//! Acceptance suite: one test per shipped claim, each printing a PASS
//! line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The claims cover the certified runs, the interference experiments
//! (challenge interleaving, undefined/modified command acceptance,
//! loop-back, destructive erase), the interleaving explorer and its
//! strategies, the watch-dog, the codec, and daemon/in-process trace
//! equivalence.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use cps::cmdfile;
use cps::driver::{self, RunConfig};
use cps::faultfile::FaultScript;

use cps_core::apdu::{decode_command, encode_command, CommandApdu};
use cps_core::card::{Card, CardProfile, SIGNATURE_LEN};
use cps_core::explore::{
    challenge_insertion_sweep, enumerate_schedules, explore, loopback_variants, search_space_size,
    BigUint, ExplorationReport, ExploreConfig, Strategy, Terminal,
};
use cps_core::program::{instantiate_step, StraightLineProgram};
use cps_core::router::{Classification, FaultConfig, Router, SessionStatus, WatchdogPolicy};
use cps_core::stream::{ByteStream, LANE_CARD};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn replay_bundled(name: &str, config: &RunConfig) -> driver::RunOutcome {
    let script = cmdfile::load(&data(name)).expect("bundled script loads");
    driver::replay_script(&script, config).expect("replay succeeds")
}

fn verdict_counts(outcome: &driver::RunOutcome) -> (usize, usize, usize) {
    outcome.records.iter().fold((0, 0, 0), |mut acc, r| {
        match r.verdict {
            Classification::CorrectTransition => acc.0 += 1,
            Classification::DetectedError => acc.1 += 1,
            Classification::Anomaly => acc.2 += 1,
        }
        acc
    })
}

#[test]
fn criterion_01_correct_process_replay() {
    for (program, profile) in [
        (StraightLineProgram::p2_cardos(), CardProfile::cardos()),
        (StraightLineProgram::p1_incrypto(), CardProfile::incrypto()),
    ] {
        for seed in [7u64, 42, 20260810] {
            let config = RunConfig::with_seed(seed);
            let first =
                driver::run_program(&program, &profile, &FaultScript::none(), &config).unwrap();
            let second =
                driver::run_program(&program, &profile, &FaultScript::none(), &config).unwrap();

            assert!(first
                .records
                .iter()
                .all(|r| r.verdict == Classification::CorrectTransition));
            assert_eq!(first.records.len(), program.len());
            assert_eq!(first.signature().map(<[u8]>::len), Some(SIGNATURE_LEN));
            assert_eq!(first.exit_code(), 0);
            assert_eq!(first.status, SessionStatus::Completed);
            assert_eq!(
                first.trace_file().to_text(),
                second.trace_file().to_text(),
                "same seed, same trace bytes"
            );
        }
    }
    println!("ACCEPTANCE 01 correct-process replay: PASS");
}

#[test]
fn criterion_02_challenge_interleave_anomaly() {
    let outcome = replay_bundled("cmds/challenge-interleave.cmd", &RunConfig::with_seed(7));
    assert_eq!(outcome.records.len(), 7);
    assert!(
        outcome.records.iter().all(|r| r.response.is_success()),
        "no error message"
    );
    let (ok, err, anom) = verdict_counts(&outcome);
    assert_eq!(
        (ok, err, anom),
        (5, 0, 2),
        "5 correct transitions, 2 anomalies"
    );
    assert_eq!(outcome.signature().map(<[u8]>::len), Some(SIGNATURE_LEN));
    assert_eq!(outcome.exit_code(), 2);
    println!("ACCEPTANCE 02 challenge-interleave anomaly: PASS");
}

#[test]
fn criterion_03_insertion_sweep() {
    let report = challenge_insertion_sweep(
        &StraightLineProgram::p2_cardos(),
        &StraightLineProgram::p1_challenge_pair(),
        &CardProfile::cardos(),
        7,
    );
    assert_eq!(
        report.points.len(),
        6,
        "before, between and after all five steps"
    );
    for (point, terminal) in &report.points {
        assert_eq!(
            *terminal,
            Terminal::CompletedWithAnomalies(2),
            "insertion point {point}"
        );
    }
    assert!(report.all_anomalous_complete);
    println!("ACCEPTANCE 03 challenge insertion sweep: PASS");
}

#[test]
fn criterion_04_undefined_and_modified_acceptance() {
    let outcome = replay_bundled("cmds/undefined-commands.cmd", &RunConfig::with_seed(7));
    assert_eq!(outcome.records.len(), 16);
    assert!(
        outcome.records.iter().all(|r| r.response.is_success()),
        "all sixteen commands are accepted"
    );
    let (ok, err, anom) = verdict_counts(&outcome);
    assert_eq!(
        anom, 10,
        "one anomaly per foreign (undefined or modified) row"
    );
    assert_eq!(ok, 6, "the certified rows are recognized");
    assert_eq!(err, 0);
    assert!(
        outcome.anomalies > 0 && outcome.error_seq().is_none(),
        "completed with anomalies"
    );
    assert_eq!(outcome.exit_code(), 2);

    // The persisted form: 16 C lines, 16 R lines, no ERR verdict.
    let text = outcome.trace_file().to_text();
    assert_eq!(text.lines().filter(|l| l.contains(" C ")).count(), 16);
    assert_eq!(text.lines().filter(|l| l.contains(" R ")).count(), 16);
    assert!(!text.lines().any(|l| l.ends_with(" ERR")));
    println!("ACCEPTANCE 04 undefined/modified command acceptance: PASS");
}

#[test]
fn criterion_05_loopback_variants() {
    let script = cmdfile::load(&data("cmds/undefined-commands.cmd")).unwrap();
    let (profile, base) = driver::script_commands(&script, 7).unwrap();
    assert_eq!(base.len(), 16);
    let loop_cmd = CommandApdu::new(0x00, 0xA4, 0x00, 0x00).with_le(0xFF);
    let mut variants = 0;
    for variant in loopback_variants(&base, &loop_cmd) {
        let mut card = Card::create(profile.clone(), 7);
        for command in &variant {
            let response = card.execute(command);
            assert!(
                response.is_success(),
                "variant {variants}: {:04X}",
                response.sw()
            );
        }
        variants += 1;
    }
    assert_eq!(variants, 16, "one loop-back variant per step");
    println!("ACCEPTANCE 05 loop-back variants: PASS");
}

#[test]
fn criterion_06_destructive_erase_is_permanent() {
    // File route: the interleaved erase run terminates on error.
    let outcome = replay_bundled("cmds/erase-attack.cmd", &RunConfig::with_seed(7));
    assert_eq!(outcome.exit_code(), 3);
    let verdicts: Vec<Classification> = outcome.records.iter().map(|r| r.verdict).collect();
    assert_eq!(
        verdicts,
        vec![
            Classification::CorrectTransition,
            Classification::CorrectTransition,
            Classification::Anomaly,
            Classification::DetectedError,
        ],
        "success through the erase, then the restore fails"
    );

    // Same instance: even after RESET, a fresh certified run dies at the
    // restore step.
    let p1 = StraightLineProgram::p1_incrypto();
    let mut router = Router::new(7);
    router.add_card("c1", CardProfile::incrypto(), 7).unwrap();
    router.open_session("s1", p1.clone(), "c1").unwrap();
    for index in 0..2 {
        let bindings = router.default_bindings(&p1);
        let cmd = instantiate_step(&p1, index, &bindings).unwrap();
        router.dispatch("s1", cmd, &FaultConfig::none()).unwrap();
    }
    let erase = CommandApdu::new(0x00, 0x22, 0xF4, 0x03).with_le(0x00);
    router.dispatch("s1", erase, &FaultConfig::none()).unwrap();

    router.reset_card("c1").unwrap();
    router.open_session("s2", p1.clone(), "c1").unwrap();
    for index in 0..3 {
        let bindings = router.default_bindings(&p1);
        let cmd = instantiate_step(&p1, index, &bindings).unwrap();
        let record = router.dispatch("s2", cmd, &FaultConfig::none()).unwrap();
        if index < 2 {
            assert_eq!(record.verdict, Classification::CorrectTransition);
        } else {
            assert_eq!(
                record.verdict,
                Classification::DetectedError,
                "fails at step 1,3"
            );
        }
    }
    assert_eq!(
        router.session("s2").unwrap().status,
        SessionStatus::TerminatedOnError
    );

    // Replacement card: the full program succeeds again.
    let replacement = driver::run_program(
        &p1,
        &CardProfile::incrypto(),
        &FaultScript::none(),
        &RunConfig::with_seed(7),
    )
    .unwrap();
    assert_eq!(replacement.exit_code(), 0);
    println!("ACCEPTANCE 06 destructive erase permanence: PASS");
}

fn explore_p1_p2(strategy: Strategy, profile: &CardProfile, seed: u64) -> ExplorationReport {
    explore(
        &StraightLineProgram::p1_incrypto(),
        &StraightLineProgram::p2_cardos(),
        profile,
        &ExploreConfig::new(strategy, seed),
    )
    .unwrap()
}

#[test]
fn criterion_07_enumeration_count() {
    assert_eq!(enumerate_schedules(10, 5).count(), 3003);
    let first = explore_p1_p2(Strategy::Exhaustive, &CardProfile::cardos(), 7);
    let second = explore_p1_p2(Strategy::Exhaustive, &CardProfile::cardos(), 7);
    assert_eq!(first.visited, 3003, "exhaustive visits every schedule");
    assert_eq!(first.total, 3003);
    assert_eq!(
        (
            first.completed_clean,
            first.completed_with_anomalies,
            first.terminated_on_error
        ),
        (
            second.completed_clean,
            second.completed_with_anomalies,
            second.terminated_on_error
        ),
        "terminal class counts are stable across runs with one seed"
    );
    println!("ACCEPTANCE 07 enumeration count: PASS");
}

#[test]
fn criterion_08_search_space_formula() {
    // Factorial-route oracle, arbitrary precision end to end.
    let factorial = |n: u64| (1..=n).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(i));
    let binomial_20_10 = factorial(20) / (factorial(10) * factorial(10));
    assert_eq!(binomial_20_10, BigUint::from(184_756u32));

    assert_eq!(search_space_size(10, 10, 0), binomial_20_10);
    assert_eq!(
        search_space_size(10, 10, 32),
        BigUint::from(793_520_977_739_776u64),
        "binomial(20,10) * 2^32"
    );
    assert_eq!(search_space_size(10, 10, 32), binomial_20_10 << 32);
    println!("ACCEPTANCE 08 search-space formula: PASS");
}

#[test]
fn criterion_09_strategy_equivalence() {
    for profile in [CardProfile::cardos(), CardProfile::incrypto()] {
        let exhaustive = explore_p1_p2(Strategy::Exhaustive, &profile, 7);
        let prune = explore_p1_p2(Strategy::PruneOnError, &profile, 7);
        let memo = explore_p1_p2(Strategy::MemoizedByState, &profile, 7);
        assert_eq!(
            exhaustive.anomalous_schedules, prune.anomalous_schedules,
            "{}: prune agrees on the anomalous-complete set",
            profile.name
        );
        assert_eq!(
            exhaustive.anomalous_schedules, memo.anomalous_schedules,
            "{}: memoization agrees on the anomalous-complete set",
            profile.name
        );
        assert!(
            prune.visited < 3003,
            "{}: pruning skips error-subsumed schedules (visited {})",
            profile.name,
            prune.visited
        );
    }
    println!("ACCEPTANCE 09 strategy equivalence: PASS");
}

#[test]
fn criterion_10_watchdog_blocks_anomalous_chains() {
    let config = RunConfig {
        watchdog: Some(WatchdogPolicy::BlockOnFirst),
        ..RunConfig::with_seed(7)
    };
    let blocked = replay_bundled("cmds/challenge-interleave.cmd", &config);
    assert!(blocked.blocked, "the watch-dog tripped");
    assert_eq!(
        blocked.records.len(),
        4,
        "blocked at the first injected command"
    );
    assert_eq!(
        blocked.records.last().unwrap().verdict,
        Classification::Anomaly
    );
    assert!(
        blocked.signature().is_none(),
        "the signature step is never reached"
    );
    assert_eq!(blocked.exit_code(), 2);

    // Watch-dog off: the interleaved run completes with its two
    // anomalies and the signature, exactly as in criterion 2.
    let open = replay_bundled("cmds/challenge-interleave.cmd", &RunConfig::with_seed(7));
    assert_eq!(verdict_counts(&open), (5, 0, 2));
    assert!(open.signature().is_some());
    println!("ACCEPTANCE 10 watch-dog: PASS");
}

#[test]
fn criterion_11_codec_property_suite() {
    // 1000 seeded random commands across the four short cases.
    let mut stream = ByteStream::new(0xC0DEC, LANE_CARD);
    let mut next = || stream.next_block();
    for case in 0..1000u32 {
        let head = next();
        let (cla, ins, p1, p2) = (head[0], head[1], head[2], head[3]);
        let mut cmd = CommandApdu::new(cla, ins, p1, p2);
        if case % 4 >= 2 {
            // Data-bearing cases: 1..=255 bytes.
            let len = (head[4] as usize % 255) + 1;
            let mut data = Vec::with_capacity(len);
            while data.len() < len {
                let block = next();
                data.extend_from_slice(&block[..(len - data.len()).min(8)]);
            }
            cmd = cmd.with_data(data);
        }
        if case % 2 == 1 {
            cmd = cmd.with_le(head[5]);
        }
        let wire = encode_command(&cmd);
        let expected_len =
            4 + if cmd.data.is_empty() {
                0
            } else {
                1 + cmd.data.len()
            } + usize::from(cmd.le.is_some());
        assert_eq!(wire.len(), expected_len);
        assert_eq!(decode_command(&wire).unwrap(), cmd, "case {case}");
    }

    // Malformed-length corpus: every entry rejected.
    let corpus: &[&[u8]] = &[
        &[],
        &[0x00],
        &[0x00, 0xA4, 0x00],
        &[0x00, 0xA4, 0x00, 0x00, 0x00, 0x00],
        &[0x00, 0xA4, 0x00, 0x00, 0x00, 0xFF],
        &[0x00, 0xA4, 0x00, 0x00, 0x05, 0x01, 0x02],
        &[0x00, 0xA4, 0x00, 0x00, 0x01, 0xAA, 0xBB, 0xCC],
        &[0x0C, 0x2A, 0x9E, 0x9A, 0x75, 0x00],
    ];
    for (index, raw) in corpus.iter().enumerate() {
        assert!(
            decode_command(raw).is_err(),
            "corpus entry {index} must be rejected"
        );
    }
    println!("ACCEPTANCE 11 codec property suite: PASS");
}

#[test]
fn criterion_12_daemon_trace_equivalence() {
    let seed = 7u64;
    let dir = tempfile::tempdir().unwrap();

    // In-process path.
    let outcome = replay_bundled("cmds/challenge-interleave.cmd", &RunConfig::with_seed(seed));
    let in_process = outcome.trace_file().to_text();

    // Daemon path: the same seven steps as wire commands.
    let daemon_trace = dir.path().join("daemon.trace");
    let mut child = Command::new(env!("CARGO_BIN_EXE_cps"))
        .args([
            "serve",
            "--port",
            "0",
            "--seed",
            &seed.to_string(),
            "--card",
            "c1=cardos",
            "--victim",
            "c1=P2-CARDOS",
            "--trace",
            daemon_trace.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut announce = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut announce)
        .unwrap();
    let addr = announce
        .trim()
        .strip_prefix("LISTENING ")
        .unwrap()
        .to_string();

    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let steps = [
        "STEP c1 P2-CARDOS 2,1",
        "STEP c1 P2-CARDOS 2,2",
        "STEP c1 P2-CARDOS 2,3",
        "STEP c1 P1-INCRYPTO 1,5",
        "STEP c1 P1-INCRYPTO 1,6",
        "STEP c1 P2-CARDOS 2,4",
        "STEP c1 P2-CARDOS 2,5",
    ];
    for step in steps {
        writer.write_all(step.as_bytes()).unwrap();
        writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        assert!(reply.starts_with("OK "), "{reply}");
    }
    writer.write_all(b"QUIT\n").unwrap();
    let mut bye = String::new();
    reader.read_line(&mut bye).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    let via_daemon = std::fs::read_to_string(&daemon_trace).unwrap();
    assert_eq!(
        via_daemon, in_process,
        "daemon and in-process traces are byte-identical"
    );
    println!("ACCEPTANCE 12 daemon trace equivalence: PASS");
}
