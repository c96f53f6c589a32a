#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub fn autolab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autolab"))
}

pub fn evaluator_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autolab-evaluator"))
}

pub fn agent_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autolab-agent"))
}

pub fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").canonicalize().unwrap()
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.env_remove("AUTOLAB_SERVER_ADDR").env_remove("AUTOLAB_TOKEN").env("RUST_LOG", "warn").output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A `autolab serve` child process, killed on drop.
pub struct Serve {
    pub child: Child,
    pub url: String,
}

impl Serve {
    /// Starts a server on `addr` and waits for its "listening on" line.
    pub fn start(data_dir: &Path, addr: &str, token: Option<&str>) -> Serve {
        let mut cmd = autolab();
        cmd.args(["serve", "--addr", addr, "--data-dir"])
            .arg(data_dir)
            .env_remove("AUTOLAB_TOKEN")
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(t) = token {
            cmd.args(["--token", t]);
        }
        let mut child = cmd.spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}"));
        Serve { url: url.to_string(), child }
    }

    pub fn addr(&self) -> &str {
        self.url.trim_start_matches("http://")
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Serve {
    fn drop(&mut self) {
        self.kill();
    }
}
