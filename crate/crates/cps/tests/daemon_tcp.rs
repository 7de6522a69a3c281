//! TCP-level daemon behavior: connection lifecycle and per-card
//! serialization under concurrent clients.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::thread;

struct DaemonProc {
    child: Child,
    addr: String,
}

impl DaemonProc {
    fn spawn(args: &[&str]) -> DaemonProc {
        let mut child = Command::new(env!("CARGO_BIN_EXE_cps"))
            .args(["serve", "--port", "0"])
            .args(args)
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn daemon");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = String::new();
        BufReader::new(stdout)
            .read_line(&mut line)
            .expect("read LISTENING line");
        let addr = line
            .trim()
            .strip_prefix("LISTENING ")
            .unwrap_or_else(|| panic!("unexpected announcement: {line}"))
            .to_string();
        DaemonProc { child, addr }
    }

    fn connect(&self) -> (BufReader<TcpStream>, TcpStream) {
        let stream = TcpStream::connect(&self.addr).expect("connect");
        (BufReader::new(stream.try_clone().expect("clone")), stream)
    }
}

impl Drop for DaemonProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn roundtrip(reader: &mut BufReader<TcpStream>, writer: &mut TcpStream, line: &str) -> String {
    writer.write_all(line.as_bytes()).unwrap();
    writer.write_all(b"\n").unwrap();
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    reply.trim_end().to_string()
}

#[test]
fn quit_closes_only_that_connection() {
    let daemon = DaemonProc::spawn(&["--seed", "5"]);

    let (mut r1, mut w1) = daemon.connect();
    let (mut r2, mut w2) = daemon.connect();

    assert_eq!(
        roundtrip(&mut r1, &mut w1, "APDU c1 00A40000FF"),
        "OK  9000"
    );
    assert_eq!(roundtrip(&mut r1, &mut w1, "QUIT"), "OK BYE");
    let mut rest = String::new();
    assert_eq!(
        r1.read_line(&mut rest).unwrap(),
        0,
        "first connection closed"
    );

    // The second client keeps working.
    assert_eq!(
        roundtrip(&mut r2, &mut w2, "STATUS c1"),
        "OK dir=MF df=0 se=0 key=- pin=0 chal=00 seo=intact sigs=0"
    );
    assert_eq!(roundtrip(&mut r2, &mut w2, "QUIT"), "OK BYE");
}

#[test]
fn concurrent_clients_serialize_per_command() {
    let daemon = DaemonProc::spawn(&["--seed", "5"]);

    let mut handles = Vec::new();
    for _ in 0..4 {
        let (mut reader, mut writer) = daemon.connect();
        handles.push(thread::spawn(move || {
            let mut replies = Vec::new();
            for _ in 0..25 {
                replies.push(roundtrip(&mut reader, &mut writer, "APDU c1 0084000008"));
            }
            let _ = roundtrip(&mut reader, &mut writer, "QUIT");
            replies
        }));
    }

    let mut challenges = Vec::new();
    for handle in handles {
        for reply in handle.join().unwrap() {
            // Every exchange is a complete, well-formed reply: no torn
            // responses under concurrency.
            assert!(reply.starts_with("OK "), "{reply}");
            assert!(reply.ends_with(" 9000"), "{reply}");
            let hex = &reply[3..reply.len() - 5];
            assert_eq!(hex.len(), 16, "{reply}");
            challenges.push(hex.to_string());
        }
    }
    // 100 draws from one stream: all distinct, so no two commands shared
    // a draw.
    challenges.sort();
    challenges.dedup();
    assert_eq!(challenges.len(), 100);
}

#[test]
fn bind_failure_exits_nonzero() {
    let daemon = DaemonProc::spawn(&[]);
    let port = daemon.addr.rsplit(':').next().unwrap().to_string();
    let status = Command::new(env!("CARGO_BIN_EXE_cps"))
        .args(["serve", "--port", &port])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
}
