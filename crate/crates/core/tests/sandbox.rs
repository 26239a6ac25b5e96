//! Confinement of generated scripts: canary files outside the sandbox must
//! never appear.

use reflect_core::engines::sandbox::{run_sandbox, ExitStatus};

fn python_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok()
}

fn canary() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("canary.txt");
    (dir, path)
}

#[test]
fn write_outside_is_denied() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let (_dir, path) = canary();
    let script = format!("open({:?}, 'w').write('x')\nprint('wrote')", path.display().to_string());
    let r = run_sandbox(&script, 5000);
    assert_eq!(r.exit_status, ExitStatus::Nonzero, "{r:?}");
    assert!(r.stderr.contains("PermissionError"), "{}", r.stderr);
    assert!(!path.exists());
}

#[test]
fn spawning_is_denied() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let (_dir, path) = canary();
    for call in [
        format!("import subprocess\nsubprocess.run(['touch', {:?}])", path.display().to_string()),
        format!("import os\nos.system('touch {}')", path.display()),
    ] {
        let r = run_sandbox(&call, 5000);
        assert_eq!(r.exit_status, ExitStatus::Nonzero, "{r:?}");
        assert!(!path.exists(), "canary created by {call:?}");
    }
}

#[test]
fn rename_and_remove_outside_are_denied() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let (_dir, path) = canary();
    std::fs::write(&path, "keep").unwrap();
    let r = run_sandbox(&format!("import os\nos.remove({:?})", path.display().to_string()), 5000);
    assert_eq!(r.exit_status, ExitStatus::Nonzero);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "keep");
}

#[test]
fn scratch_files_inside_work() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let r = run_sandbox("open('scratch.txt', 'w').write('7')\nprint(open('scratch.txt').read())", 5000);
    assert_eq!(r.exit_status, ExitStatus::Ok, "{r:?}");
    assert_eq!(r.extracted_answer.as_deref(), Some("7"));
}
