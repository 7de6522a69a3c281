//! The probing daemon: a line-oriented TCP front end over the router.
//!
//! One request line in, one reply line out:
//!
//! ```text
//! RESET <card>                 -> OK <reset answer hex>
//! APDU <card> <hex>            -> OK <response data hex> <sw>
//! STEP <card> <program> <step> -> OK <response data hex> <sw>
//! STATUS <card>                -> OK <state summary>
//! QUIT                         -> OK BYE (and the connection closes)
//! ```
//!
//! Problems come back as `ERR NOCARD`, `ERR SYNTAX` or `ERR BADHEX`
//! replies, never as dropped connections. Card-level failures are status
//! words inside an `OK` reply; the protocol succeeded, the card said no.
//!
//! Cards and their victim sessions are declared at startup. Commands for
//! a card with a victim session are classified against it; other cards'
//! commands are executed and traced with verdict `-`. All card access
//! funnels through one lock, so concurrent clients serialize per command
//! exchange and the trace gets a single global order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cps_core::apdu::{decode_command, hex_format, hex_parse};
use cps_core::card::CardProfile;
use cps_core::program::{instantiate_step, StraightLineProgram};
use cps_core::router::{FaultConfig, Router, TraceRecord};

use crate::tracefile::{TraceFileRecord, TraceHeader};

/// A request line is at most this long.
pub const MAX_LINE: usize = 4096;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    /// Port to bind on 127.0.0.1; 0 picks an ephemeral port.
    pub port: u16,
    pub seed: u64,
    pub cards: Vec<(String, CardProfile)>,
    /// card id -> program classified against that card's session.
    pub victims: Vec<(String, StraightLineProgram)>,
    pub trace_path: Option<PathBuf>,
    pub latency: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub close: bool,
}

impl Reply {
    fn ok(text: String) -> Reply {
        Reply { text, close: false }
    }

    fn err(kind: &str, message: impl std::fmt::Display) -> Reply {
        Reply {
            text: format!("ERR {kind} {message}"),
            close: false,
        }
    }
}

struct SessionBinding {
    id: String,
    classified: bool,
}

struct TraceSink {
    file: File,
}

impl TraceSink {
    fn open(path: &PathBuf, header: &TraceHeader) -> std::io::Result<TraceSink> {
        let mut file = File::create(path)?;
        file.write_all(header.to_line().as_bytes())?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(TraceSink { file })
    }

    fn append(&mut self, record: &TraceFileRecord) -> std::io::Result<()> {
        let (c, r) = record.to_lines();
        self.file.write_all(c.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.write_all(r.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()
    }
}

pub struct DaemonState {
    router: Router,
    bindings: BTreeMap<String, SessionBinding>,
    sink: Option<TraceSink>,
    latency: Duration,
}

impl DaemonState {
    pub fn new(config: &ServeConfig) -> std::io::Result<DaemonState> {
        let mut router = Router::new(config.seed);
        for (id, profile) in &config.cards {
            router
                .add_card(id, profile.clone(), config.seed)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }

        let mut bindings = BTreeMap::new();
        for (index, (card_id, program)) in config.victims.iter().enumerate() {
            let session_id = format!("s{}", index + 1);
            router
                .open_session(&session_id, program.clone(), card_id)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            bindings.insert(
                card_id.clone(),
                SessionBinding {
                    id: session_id,
                    classified: true,
                },
            );
        }
        for (card_id, profile) in &config.cards {
            if bindings.contains_key(card_id) {
                continue;
            }
            // No victim program: classify against nothing, trace with '-'.
            let session_id = format!("u{}", bindings.len() + 1);
            let empty = StraightLineProgram {
                id: "-".to_string(),
                card_type: profile.name.clone(),
                steps: vec![],
            };
            router
                .open_session(&session_id, empty, card_id)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            bindings.insert(
                card_id.clone(),
                SessionBinding {
                    id: session_id,
                    classified: false,
                },
            );
        }

        let sink = match &config.trace_path {
            Some(path) => Some(TraceSink::open(
                path,
                &TraceHeader::new(config.seed, router.card_ids()),
            )?),
            None => None,
        };
        Ok(DaemonState {
            router,
            bindings,
            sink,
            latency: config.latency,
        })
    }

    pub fn handle_line(&mut self, line: &str) -> Reply {
        if line.len() > MAX_LINE {
            return Reply::err("SYNTAX", format!("line exceeds {MAX_LINE} bytes"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["RESET", card] => match self.router.reset_card(card) {
                Ok(answer) => Reply::ok(format!("OK {}", hex_format(&answer))),
                Err(_) => Reply::err("NOCARD", card),
            },
            ["APDU", card, hex] => {
                let raw = match hex_parse(hex) {
                    Ok(raw) => raw,
                    Err(e) => return Reply::err("BADHEX", e),
                };
                let cmd = match decode_command(&raw) {
                    Ok(cmd) => cmd,
                    Err(e) => return Reply::err("BADHEX", e),
                };
                self.execute(card, cmd)
            }
            ["STEP", card, program, step] => {
                let Some(program) = StraightLineProgram::builtin(program) else {
                    return Reply::err("SYNTAX", format!("unknown program {program}"));
                };
                let Some(index) = program.find_step(step) else {
                    return Reply::err("SYNTAX", format!("no step {step} in {}", program.id));
                };
                if !self.bindings.contains_key(*card) {
                    return Reply::err("NOCARD", card);
                }
                let bindings = self.router.default_bindings(&program);
                match instantiate_step(&program, index, &bindings) {
                    Ok(cmd) => self.execute(card, cmd),
                    Err(e) => Reply::err("SYNTAX", e),
                }
            }
            ["STATUS", card] => match self.router.card(card) {
                Some(card) => {
                    let s = card.state();
                    Reply::ok(format!(
                        "OK dir={} df={} se={} key={} pin={} chal={}{} seo={} sigs={}",
                        s.current_dir,
                        u8::from(s.df_selected),
                        u8::from(s.se_restored),
                        s.key_selected
                            .map_or("-".to_string(), |k| format!("{k:02X}")),
                        u8::from(s.pin_verified),
                        u8::from(s.card_challenge.is_some()),
                        u8::from(s.host_challenge.is_some()),
                        if s.seo_destroyed {
                            "destroyed"
                        } else {
                            "intact"
                        },
                        s.signatures_issued,
                    ))
                }
                None => Reply::err("NOCARD", card),
            },
            ["QUIT"] => Reply {
                text: "OK BYE".to_string(),
                close: true,
            },
            [] => Reply::err("SYNTAX", "empty line"),
            ["RESET", ..] => Reply::err("SYNTAX", "usage: RESET <card>"),
            ["APDU", ..] => Reply::err("SYNTAX", "usage: APDU <card> <hex>"),
            ["STEP", ..] => Reply::err("SYNTAX", "usage: STEP <card> <program> <step>"),
            ["STATUS", ..] => Reply::err("SYNTAX", "usage: STATUS <card>"),
            ["QUIT", ..] => Reply::err("SYNTAX", "usage: QUIT"),
            [verb, ..] => Reply::err("SYNTAX", format!("unknown verb {verb}")),
        }
    }

    fn execute(&mut self, card: &str, cmd: cps_core::apdu::CommandApdu) -> Reply {
        let Some(binding) = self.bindings.get(card) else {
            return Reply::err("NOCARD", card);
        };
        let session_id = binding.id.clone();
        let classified = binding.classified;
        let record = match self.router.dispatch(&session_id, cmd, &FaultConfig::none()) {
            Ok(record) => record,
            // No watch-dog runs in the daemon, so only lookup errors remain.
            Err(e) => return Reply::err("SYNTAX", e),
        };
        self.trace(&record, classified);
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        Reply::ok(format!(
            "OK {} {:04X}",
            hex_format(&record.response.data),
            record.response.sw()
        ))
    }

    fn trace(&mut self, record: &TraceRecord, classified: bool) {
        if let Some(sink) = &mut self.sink {
            let row = TraceFileRecord::from_core(record, classified);
            if let Err(e) = sink.append(&row) {
                eprintln!("trace write failed, tracing disabled: {e}");
                self.sink = None;
            }
        }
    }
}

/// Binds, announces `LISTENING <addr>` on stdout and serves clients until
/// the process is killed. Bind failures surface as the returned error.
pub fn serve(config: ServeConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(("127.0.0.1", config.port))?;
    let addr = listener.local_addr()?;
    let state = Arc::new(Mutex::new(DaemonState::new(&config)?));
    println!("LISTENING {addr}");
    std::io::stdout().flush()?;

    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let state = Arc::clone(&state);
        thread::spawn(move || client_loop(stream, state));
    }
    Ok(())
}

fn client_loop(stream: TcpStream, state: Arc<Mutex<DaemonState>>) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let reader = BufReader::new(read_half);
    let mut writer = stream;
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let reply = {
            let mut state = state.lock().expect("daemon state lock");
            state.handle_line(line.trim_end_matches('\r'))
        };
        if writer
            .write_all(reply.text.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .is_err()
        {
            break;
        }
        if reply.close {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> DaemonState {
        DaemonState::new(&ServeConfig {
            port: 0,
            seed: 7,
            cards: vec![
                ("c1".into(), CardProfile::cardos()),
                ("c2".into(), CardProfile::incrypto()),
            ],
            victims: vec![("c1".into(), StraightLineProgram::p2_cardos())],
            trace_path: None,
            latency: Duration::ZERO,
        })
        .unwrap()
    }

    #[test]
    fn apdu_replies_match_the_documented_shape() {
        let mut state = state();
        // Empty response data leaves an empty field: two spaces.
        assert_eq!(state.handle_line("APDU c1 00A40000FF").text, "OK  9000");
        let challenge = state.handle_line("APDU c1 0084000008").text;
        assert_eq!(challenge.len(), "OK ".len() + 16 + " 9000".len());
    }

    #[test]
    fn erase_then_restore_over_the_wire() {
        let mut state = state();
        assert_eq!(state.handle_line("APDU c2 0022F403").text, "OK  9000");
        assert_eq!(state.handle_line("STEP c2 P1 MSE_RESTORE").text, "OK  6985");
        let status = state.handle_line("STATUS c2").text;
        assert!(status.contains("seo=destroyed"), "{status}");
    }

    #[test]
    fn error_replies_never_close_the_connection() {
        let mut state = state();
        assert_eq!(
            state.handle_line("FROB c1").text,
            "ERR SYNTAX unknown verb FROB"
        );
        assert!(state
            .handle_line("APDU c9 00A40000")
            .text
            .starts_with("ERR NOCARD"));
        assert!(state
            .handle_line("APDU c1 00 22")
            .text
            .starts_with("ERR SYNTAX"));
        assert!(state
            .handle_line("APDU c1 0a22")
            .text
            .starts_with("ERR BADHEX"));
        assert!(state
            .handle_line("APDU c1 00A4000000FF")
            .text
            .starts_with("ERR BADHEX"));
        assert!(state
            .handle_line("STEP c1 P9 MF")
            .text
            .starts_with("ERR SYNTAX"));

        let quit = state.handle_line("QUIT");
        assert_eq!(quit.text, "OK BYE");
        assert!(quit.close);
    }

    #[test]
    fn reset_answers_the_profile_bytes() {
        let mut state = state();
        let reply = state.handle_line("RESET c1").text;
        assert_eq!(
            reply,
            format!("OK {}", hex_format(&CardProfile::cardos().reset_response))
        );
    }

    #[test]
    fn oversized_lines_are_rejected() {
        let mut state = state();
        let line = format!("APDU c1 {}", "00".repeat(MAX_LINE));
        assert!(state.handle_line(&line).text.starts_with("ERR SYNTAX"));
    }
}
