use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use orc::model::{StateDef, StateMachineDef};
use orc::remote::{Client, CommandMessage, EventKind, Role, ServerFrame, Verb};
use orc::storage;

const T: Duration = Duration::from_secs(20);

fn orc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_orc"))
}

fn write(m: &StateMachineDef) -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    storage::save(m, d.path()).unwrap();
    d
}

fn h_ab(b_script: &str) -> StateMachineDef {
    let a = StateDef::execution("A", "return \"success\"");
    let b = StateDef::execution("B", b_script);
    StateMachineDef::new("m", StateDef::sequence("rootH", vec![a, b]))
}

fn interrupt(child: &Child) {
    let ok = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap().success();
    assert!(ok, "kill -INT failed");
}

fn wait_exit(child: &mut Child) -> i32 {
    let deadline = Instant::now() + T;
    loop {
        if let Some(s) = child.try_wait().unwrap() {
            return s.code().expect("exited normally");
        }
        assert!(Instant::now() < deadline, "orc did not exit");
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn serve(dir: &Path, extra: &[&str], env_bind: Option<&str>) -> (Child, String) {
    let mut cmd = orc();
    cmd.arg("serve").arg(dir).args(extra).stdout(Stdio::piped()).stderr(Stdio::piped());
    match env_bind {
        Some(b) => cmd.env("ORC_BIND", b),
        None => cmd.env_remove("ORC_BIND"),
    };
    let mut child = cmd.spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("banner: {line:?}")).to_string();
    (child, url)
}

#[test]
fn run_prints_one_event_per_line() {
    let d = write(&h_ab("log(\"info\", \"noise\")\nreturn \"success\""));
    let out = orc().arg("run").arg(d.path()).env("RUST_LOG", "debug").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let re = |l: &str| {
        let mut parts = l.splitn(4, ' ');
        let seq = parts.next().unwrap();
        let event = parts.next().unwrap_or("");
        let path = parts.next().unwrap_or("");
        !seq.is_empty()
            && seq.bytes().all(|b| b.is_ascii_digit())
            && ["Entered", "Exited", "ScriptError", "Preempted", "SteppedBack"].contains(&event)
            && !path.is_empty()
    };
    assert!(stdout.lines().all(re), "{stdout}");
    assert!(stdout.ends_with("Exited rootH success\n"), "{stdout}");
}

#[test]
fn sigint_during_run_drains_and_exits_zero() {
    let d = write(&h_ab("wait(60000)\nreturn \"success\""));
    let mut child = orc().arg("run").arg(d.path()).stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut seen = String::new();
    while !seen.contains("Entered rootH/B") {
        let mut line = String::new();
        assert!(out.read_line(&mut line).unwrap() > 0, "stdout closed early: {seen}");
        seen.push_str(&line);
    }
    interrupt(&child);
    assert_eq!(wait_exit(&mut child), 0);
    out.read_to_string(&mut seen).unwrap();
    assert!(seen.contains("Preempted rootH/B"), "{seen}");
    assert!(seen.trim_end().ends_with("Exited rootH preempted"), "{seen}");
}

#[test]
fn serve_accepts_a_remote_start() {
    let d = write(&h_ab("return \"success\""));
    let (mut child, url) = serve(d.path(), &["--bind", "127.0.0.1:0"], None);
    let mut c = Client::connect(&url, Role::Controller, None).unwrap();
    c.request(&CommandMessage::new(1, Verb::Subscribe), T).unwrap();
    c.request(&CommandMessage::new(2, Verb::Start), T).unwrap();
    let deadline = Instant::now() + T;
    loop {
        assert!(Instant::now() < deadline, "no finish event");
        if let Some(ServerFrame::Event(e)) = c.recv(Duration::from_millis(200)).unwrap() {
            if e.kind == EventKind::Status && e.payload["status"] == "finished" {
                assert_eq!(e.payload["detail"], "success");
                break;
            }
        }
    }
    c.close();
    interrupt(&child);
    assert_eq!(wait_exit(&mut child), 0);
}

#[test]
fn bind_conflict_exits_nonzero() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let d = write(&h_ab("return \"success\""));
    let out = orc().arg("serve").arg(d.path()).args(["--bind", &addr]).env_remove("ORC_BIND").output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BIND_ERROR"));
}

#[test]
fn env_bind_overrides_flag() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let taken = held.local_addr().unwrap().to_string();
    let d = write(&h_ab("return \"success\""));
    // The flag names a taken port; the environment wins, so serving still succeeds.
    let (mut child, url) = serve(d.path(), &["--bind", &taken], Some("127.0.0.1:0"));
    assert!(!url.contains(&taken), "{url}");
    interrupt(&child);
    assert_eq!(wait_exit(&mut child), 0);
}

#[test]
fn usage_errors_exit_one() {
    let out = orc().args(["generate", "--states", "0", "--out", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = orc().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let help = orc().args(["run", "--help"]).output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("(Entered|Exited|ScriptError|Preempted|SteppedBack)"));
}
