use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::protocol::transport::{FifoPair, TcpRendezvous};

pub const MANIFEST_NAME: &str = "agent.toml";
pub const BUILTIN_PREFIX: &str = "builtin:";
const STDERR_KEEP: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown built-in agent {0:?}")]
    UnknownBuiltin(String),
    #[error("cannot read agent bundle {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad agent manifest: {0}")]
    Manifest(String),
    #[error("agent bundle digest {got} does not match expected {expected}")]
    DigestMismatch { expected: String, got: String },
    #[error("cannot start agent: {0}")]
    Launch(String),
}

/// Where an agent comes from: compiled into the evaluator or a bundle
/// directory holding `agent.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentRef {
    Builtin(String),
    Bundle(PathBuf),
}

impl FromStr for AgentRef {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix(BUILTIN_PREFIX) {
            Some("baseline") => Ok(AgentRef::Builtin("baseline".into())),
            Some(other) => Err(AgentError::UnknownBuiltin(other.into())),
            None => Ok(AgentRef::Bundle(PathBuf::from(s))),
        }
    }
}

impl std::fmt::Display for AgentRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentRef::Builtin(n) => write!(f, "{BUILTIN_PREFIX}{n}"),
            AgentRef::Bundle(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Fifo,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Command and arguments; a relative path containing `/` is taken
    /// relative to the bundle.
    pub entry: Vec<String>,
    #[serde(default)]
    pub channel: Channel,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub digest: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AgentError + '_ {
    move |source| AgentError::Io { path: path.to_path_buf(), source }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), AgentError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let kind = entry.file_type().map_err(io_err(&path))?;
        if kind.is_dir() {
            collect_files(root, &path, out)?;
        } else if kind.is_file() {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every regular file of the bundle in path order, each as
/// its relative path, a zero byte, its length (8 bytes big-endian) and its
/// contents.
pub fn bundle_digest(dir: &Path) -> Result<String, AgentError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).map_err(io_err(&rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_be_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl AgentBundle {
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| AgentError::Manifest(e.to_string()))?;
        if manifest.entry.is_empty() {
            return Err(AgentError::Manifest("entry is empty".into()));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, digest: bundle_digest(dir)? })
    }

    pub fn verify(&self, expected: &str) -> Result<(), AgentError> {
        if self.digest == expected {
            Ok(())
        } else {
            Err(AgentError::DigestMismatch { expected: expected.into(), got: self.digest.clone() })
        }
    }
}

/// An agent ready to be run, with the digest that identifies it.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedAgent {
    Baseline,
    Bundle(AgentBundle),
}

impl ResolvedAgent {
    pub fn resolve(r: &AgentRef) -> Result<Self, AgentError> {
        match r {
            AgentRef::Builtin(n) if n == "baseline" => Ok(ResolvedAgent::Baseline),
            AgentRef::Builtin(n) => Err(AgentError::UnknownBuiltin(n.clone())),
            AgentRef::Bundle(p) => Ok(ResolvedAgent::Bundle(AgentBundle::load(p)?)),
        }
    }

    pub fn digest(&self) -> String {
        match self {
            ResolvedAgent::Baseline => sha256_hex(b"builtin:baseline"),
            ResolvedAgent::Bundle(b) => b.digest.clone(),
        }
    }
}

/// How agent subprocesses are started.
#[derive(Debug, Clone)]
pub struct Launcher {
    /// Directories searched first for a bare entry command.
    pub search_path: Vec<PathBuf>,
    pub open_timeout: Duration,
    pub exit_timeout: Duration,
}

impl Default for Launcher {
    fn default() -> Self {
        Self {
            search_path: Vec::new(),
            open_timeout: Duration::from_secs(10),
            exit_timeout: Duration::from_secs(3),
        }
    }
}

/// A started agent process and the host ends of its channel.
pub struct RunningAgent {
    child: Child,
    stderr_path: PathBuf,
    _scratch: tempfile::TempDir,
    exit_timeout: Duration,
}

pub type HostChannel = (Box<dyn Read + Send>, Box<dyn Write + Send>);

impl Launcher {
    fn program(&self, bundle: &AgentBundle) -> PathBuf {
        let cmd = &bundle.manifest.entry[0];
        let p = Path::new(cmd);
        if p.is_absolute() {
            return p.to_path_buf();
        }
        if cmd.contains('/') {
            return bundle.dir.join(p);
        }
        self.search_path
            .iter()
            .map(|d| d.join(cmd))
            .find(|c| c.is_file())
            .unwrap_or_else(|| p.to_path_buf())
    }

    /// Starts the bundle's entry command with the channel locations in its
    /// environment. Standard input and output are closed; standard error is
    /// kept for the run log.
    pub fn spawn(&self, bundle: &AgentBundle) -> Result<(RunningAgent, HostChannel), AgentError> {
        let scratch = tempfile::tempdir().map_err(|e| AgentError::Launch(e.to_string()))?;
        let stderr_path = scratch.path().join("stderr.txt");
        let stderr = File::create(&stderr_path).map_err(|e| AgentError::Launch(e.to_string()))?;
        let mut cmd = Command::new(self.program(bundle));
        cmd.args(&bundle.manifest.entry[1..])
            .current_dir(&bundle.dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::from(stderr));
        if !self.search_path.is_empty() {
            let mut dirs = self.search_path.clone();
            if let Some(p) = std::env::var_os("PATH") {
                dirs.extend(std::env::split_paths(&p));
            }
            if let Ok(joined) = std::env::join_paths(dirs) {
                cmd.env("PATH", joined);
            }
        }
        let launch = |e: io::Error| AgentError::Launch(e.to_string());
        match bundle.manifest.channel {
            Channel::Fifo => {
                let pair = FifoPair::create(scratch.path()).map_err(launch)?;
                cmd.envs(pair.node_env());
                let child = cmd.spawn().map_err(launch)?;
                let mut agent = RunningAgent { child, stderr_path, _scratch: scratch, exit_timeout: self.exit_timeout };
                let opened = {
                    let child = &mut agent.child;
                    pair.open_host(|| matches!(child.try_wait(), Ok(None)), self.open_timeout)
                };
                match opened {
                    Ok((r, w)) => Ok((agent, (Box::new(r), Box::new(w)))),
                    Err(e) => Err(AgentError::Launch(format!("{e}; stderr: {}", agent.finish().1))),
                }
            }
            Channel::Tcp => {
                let rv = TcpRendezvous::bind_local().map_err(launch)?;
                cmd.envs(rv.node_env().map_err(launch)?);
                let child = cmd.spawn().map_err(launch)?;
                let mut agent = RunningAgent { child, stderr_path, _scratch: scratch, exit_timeout: self.exit_timeout };
                let accepted = {
                    let child = &mut agent.child;
                    rv.accept(|| matches!(child.try_wait(), Ok(None)), self.open_timeout)
                };
                match accepted {
                    Ok((r, w)) => Ok((agent, (Box::new(r), Box::new(w)))),
                    Err(e) => Err(AgentError::Launch(format!("{e}; stderr: {}", agent.finish().1))),
                }
            }
        }
    }
}

impl RunningAgent {
    /// Waits briefly for the process to exit, kills it otherwise, and
    /// returns its exit status text and the tail of its standard error.
    pub fn finish(mut self) -> (String, String) {
        let deadline = Instant::now() + self.exit_timeout;
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(s)) => break s.to_string(),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break "killed".to_string();
                }
            }
        };
        let bytes = fs::read(&self.stderr_path).unwrap_or_default();
        let tail = &bytes[bytes.len().saturating_sub(STDERR_KEEP)..];
        (status, String::from_utf8_lossy(tail).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refs_parse() {
        assert_eq!("builtin:baseline".parse::<AgentRef>().unwrap(), AgentRef::Builtin("baseline".into()));
        assert!("builtin:magic".parse::<AgentRef>().is_err());
        assert_eq!("agents/x".parse::<AgentRef>().unwrap(), AgentRef::Bundle("agents/x".into()));
    }

    #[test]
    fn digest_covers_names_and_contents() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join(MANIFEST_NAME), "entry = [\"./run.sh\"]\n").unwrap();
        fs::create_dir(d.path().join("lib")).unwrap();
        fs::write(d.path().join("lib/a.txt"), "one").unwrap();
        let a = AgentBundle::load(d.path()).unwrap();
        assert_eq!(a.manifest.channel, Channel::Fifo);
        a.verify(&a.digest).unwrap();
        fs::write(d.path().join("lib/a.txt"), "two").unwrap();
        let b = bundle_digest(d.path()).unwrap();
        assert_ne!(a.digest, b);
        assert!(matches!(a.verify(&b), Err(AgentError::DigestMismatch { .. })));
        fs::rename(d.path().join("lib/a.txt"), d.path().join("lib/b.txt")).unwrap();
        assert_ne!(b, bundle_digest(d.path()).unwrap());
    }

    #[test]
    fn missing_manifest_and_empty_entry() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(AgentBundle::load(d.path()), Err(AgentError::Io { .. })));
        fs::write(d.path().join(MANIFEST_NAME), "entry = []\n").unwrap();
        assert!(matches!(AgentBundle::load(d.path()), Err(AgentError::Manifest(_))));
    }

    #[test]
    fn process_that_exits_at_once_fails_to_connect() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join(MANIFEST_NAME), "entry = [\"sh\", \"-c\", \"echo boom >&2; exit 3\"]\n").unwrap();
        let bundle = AgentBundle::load(d.path()).unwrap();
        let launcher = Launcher { open_timeout: Duration::from_secs(5), ..Default::default() };
        match launcher.spawn(&bundle) {
            Err(AgentError::Launch(msg)) => assert!(msg.contains("boom"), "{msg}"),
            Ok(_) => panic!("connected to a dead process"),
            Err(e) => panic!("{e}"),
        }
    }
}
