use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::Objective;
use crate::error::{Error, ObjectiveError, Result};
use crate::space::format::ConfigDocRef;
use crate::space::AnchorConfiguration;

const POLL: Duration = Duration::from_millis(5);

#[derive(Serialize)]
struct Request<'a> {
    config: ConfigDocRef<'a>,
    budget_index: usize,
    seed: u64,
}

/// The exact bytes written to the command's standard input.
pub fn request_line(config: &AnchorConfiguration, budget_index: usize, seed: u64) -> String {
    let mut line = serde_json::to_string(&Request { config: config.doc(), budget_index, seed }).expect("plain data serializes");
    line.push('\n');
    line
}

/// Counting semaphore bounding live child processes.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Objective backed by a child process: one JSON request line on stdin,
/// one decimal reward on stdout, exit status 0.
pub struct ExternalCommand {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    slots: Slots,
}

impl ExternalCommand {
    /// `command` is split on whitespace into program and arguments.
    pub fn new(command: &str, timeout: Duration, max_concurrent: usize) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| Error::InvalidInput("empty command".into()))?;
        if max_concurrent == 0 {
            return Err(Error::InvalidInput("max_concurrent must be at least 1".into()));
        }
        Ok(Self { program, args: parts.collect(), timeout, slots: Slots { free: Mutex::new(max_concurrent), cv: Condvar::new() } })
    }

    fn run(&self, input: &str) -> Result<String, ObjectiveError> {
        let _slot = self.slots.acquire();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ObjectiveError::Failed(format!("cannot start {}: {e}", self.program)))?;

        if let Some(mut stdin) = child.stdin.take() {
            // A command that ignores its input may close the pipe early.
            let _ = stdin.write_all(input.as_bytes());
        }
        let stdout = spawn_reader(child.stdout.take());
        let stderr = spawn_reader(child.stderr.take());

        let status = wait_with_timeout(&mut child, self.timeout)?;
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        if !status.success() {
            let tail: String = err.trim().chars().rev().take(200).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(ObjectiveError::ExitStatus(if tail.is_empty() { status.to_string() } else { format!("{status}: {tail}") }));
        }
        Ok(out)
    }
}

fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = String::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_string(&mut buf);
        }
        buf
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> Result<std::process::ExitStatus, ObjectiveError> {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(status),
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ObjectiveError::Timeout(timeout));
            }
            Ok(None) => thread::sleep(POLL),
            Err(e) => return Err(ObjectiveError::Failed(e.to_string())),
        }
    }
}

impl Objective for ExternalCommand {
    fn evaluate(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Result<f64, ObjectiveError> {
        let out = self.run(&request_line(config, budget_index, seed))?;
        let text = out.trim();
        let r: f64 = text.parse().map_err(|_| ObjectiveError::Parse(text.to_owned()))?;
        if !r.is_finite() {
            return Err(ObjectiveError::NonFinite(r));
        }
        Ok(r)
    }

    fn describe(&self) -> String {
        let mut s = format!("cmd:{}", self.program);
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::space::ScaleRatio;

    fn config() -> AnchorConfiguration {
        AnchorConfiguration::new(vec![vec![ScaleRatio { scale: 2.5, ratio: 0.5 }], vec![ScaleRatio { scale: 4.0, ratio: 1.0 }]])
    }

    fn sh(script: &str, timeout_ms: u64) -> ExternalCommand {
        let mut cmd = ExternalCommand::new("sh -c", Duration::from_millis(timeout_ms), 2).unwrap();
        cmd.args.push(script.into());
        cmd
    }

    #[test]
    fn request_bytes() {
        assert_eq!(
            request_line(&config(), 3, 17),
            "{\"config\":{\"schema\":\"aabo-config/1\",\"levels\":[[{\"scale\":2.5,\"ratio\":0.5}],[{\"scale\":4.0,\"ratio\":1.0}]]},\"budget_index\":3,\"seed\":17}\n"
        );
    }

    #[test]
    fn reads_reward() {
        assert_eq!(sh("cat > /dev/null; echo 0.5", 5000).evaluate(&config(), 1, 0).unwrap(), 0.5);
    }

    #[test]
    fn command_sees_request() {
        let cmd = sh("grep -q '\"budget_index\":7' && echo 1 || echo 0", 5000);
        assert_eq!(cmd.evaluate(&config(), 7, 0).unwrap(), 1.0);
        assert_eq!(cmd.evaluate(&config(), 6, 0).unwrap(), 0.0);
    }

    #[test]
    fn parse_error() {
        let e = sh("echo abc", 5000).evaluate(&config(), 1, 0).unwrap_err();
        assert_eq!(e, ObjectiveError::Parse("abc".into()));
        assert!(matches!(sh("echo inf", 5000).evaluate(&config(), 1, 0), Err(ObjectiveError::NonFinite(_))));
    }

    #[test]
    fn exit_status() {
        let e = sh("echo boom >&2; exit 3", 5000).evaluate(&config(), 1, 0).unwrap_err();
        match e {
            ObjectiveError::ExitStatus(msg) => assert!(msg.contains("boom"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeout() {
        let start = Instant::now();
        let e = sh("exec sleep 5", 200).evaluate(&config(), 1, 0).unwrap_err();
        assert_eq!(e, ObjectiveError::Timeout(Duration::from_millis(200)));
        assert!(start.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn missing_program() {
        let cmd = ExternalCommand::new("/nonexistent/prog", Duration::from_secs(1), 1).unwrap();
        assert!(matches!(cmd.evaluate(&config(), 1, 0), Err(ObjectiveError::Failed(_))));
        assert!(ExternalCommand::new("  ", Duration::from_secs(1), 1).is_err());
    }
}
