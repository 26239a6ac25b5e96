//! Runs model-written scripts in a fresh working directory under a wall-clock
//! timeout.
//!
//! Isolation is best effort: the script runs in a private temp directory and
//! a Python audit hook denies file writes outside it and process spawning.
//! There is no network isolation and no memory ceiling.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;
pub const DEFAULT_INTERPRETER: &str = "python3";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok,
    Nonzero,
    Timeout,
    LaunchFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_status: ExitStatus,
    pub elapsed_ms: u64,
    pub extracted_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub timeout_ms: u64,
    /// Install the Python audit hook that confines writes and blocks spawning.
    pub confine: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: DEFAULT_INTERPRETER.to_string(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            confine: true,
        }
    }
}

const BOOTSTRAP: &str = r#"import os, sys, runpy
_root = os.path.realpath(os.getcwd())
def _inside(p):
    try:
        p = os.path.realpath(os.fsdecode(p))
    except Exception:
        return False
    return p == _root or p.startswith(_root + os.sep)
def _hook(event, args):
    if event == "open":
        path, mode = args[0], args[1]
        if isinstance(path, int):
            return
        if mode and any(c in str(mode) for c in "wax+") and not _inside(path):
            raise PermissionError("sandbox: write outside working directory")
    elif event in ("os.remove", "os.unlink", "os.rmdir", "os.mkdir", "shutil.rmtree", "os.truncate", "os.chmod"):
        if args and not _inside(args[0]):
            raise PermissionError("sandbox: modification outside working directory")
    elif event in ("os.rename", "os.replace", "os.link", "os.symlink"):
        if not all(_inside(a) for a in args[:2]):
            raise PermissionError("sandbox: modification outside working directory")
    elif event in ("subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "os.forkpty"):
        raise PermissionError("sandbox: process creation is disabled")
sys.addaudithook(_hook)
sys.argv = ["main.py"]
runpy.run_path("main.py", run_name="__main__")
"#;

fn last_nonempty_line(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

fn launch_failure(started: Instant, message: String) -> SandboxResult {
    SandboxResult {
        stdout: String::new(),
        stderr: message,
        exit_status: ExitStatus::LaunchFailure,
        elapsed_ms: started.elapsed().as_millis() as u64,
        extracted_answer: None,
    }
}

pub fn run_sandbox(script: &str, timeout_ms: u64) -> SandboxResult {
    run_sandbox_with(
        script,
        &SandboxConfig {
            timeout_ms,
            ..SandboxConfig::default()
        },
    )
}

pub fn run_sandbox_with(script: &str, cfg: &SandboxConfig) -> SandboxResult {
    let started = Instant::now();
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return launch_failure(started, format!("tempdir: {e}")),
    };
    if let Err(e) = std::fs::write(dir.path().join("main.py"), script) {
        return launch_failure(started, format!("write script: {e}"));
    }
    let mut cmd = Command::new(&cfg.interpreter);
    cmd.arg("-B");
    if cfg.confine {
        cmd.arg("-c").arg(BOOTSTRAP);
    } else {
        cmd.arg("main.py");
    }
    cmd.current_dir(dir.path())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONIOENCODING", "utf-8")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return launch_failure(started, format!("spawn {}: {e}", cfg.interpreter)),
    };

    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let status = match child.wait_timeout(Duration::from_millis(cfg.timeout_ms)) {
        Ok(Some(status)) => Some(status),
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            return launch_failure(started, format!("wait: {e}"));
        }
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    let elapsed_ms = started.elapsed().as_millis() as u64;

    let exit_status = match status {
        None => ExitStatus::Timeout,
        Some(s) if s.success() => ExitStatus::Ok,
        Some(_) => ExitStatus::Nonzero,
    };
    let extracted_answer = match exit_status {
        ExitStatus::Ok => last_nonempty_line(&stdout),
        _ => None,
    };
    SandboxResult {
        stdout,
        stderr,
        exit_status,
        elapsed_ms,
        extracted_answer,
    }
}
