//! On-disk run logs: one directory with the run metadata, per-episode
//! capture and trajectory files, and a manifest of file digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::RunLog;
use super::EvalError;
use crate::digest::{canonical_json, sha256_hex};
use crate::simworld::{ConditionSample, Trajectory};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path to SHA-256 of the file.
    pub files: BTreeMap<String, String>,
}

fn episode_dir(k: usize) -> String {
    format!("episode-{k:03}")
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data");
    s.push('\n');
    s.into_bytes()
}

/// Every file of the log directory with its contents.
pub fn log_files(log: &RunLog) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    files.insert("run.json".to_string(), json(log));
    for (k, ep) in log.episodes.iter().enumerate() {
        let d = episode_dir(k);
        let truth: BTreeMap<String, &Trajectory> = ep.truth.iter().map(|(id, t)| (id.to_string(), t)).collect();
        files.insert(format!("{d}/capture.bin"), ep.capture.clone());
        files.insert(format!("{d}/truth.json"), json(&truth));
        files.insert(format!("{d}/estimate.json"), json(&ep.estimate));
        files.insert(format!("{d}/conditions.json"), json(&ep.conditions));
        files.insert(format!("{d}/stderr.txt"), ep.agent_stderr.clone().into_bytes());
    }
    files
}

fn manifest_of(files: &BTreeMap<String, Vec<u8>>) -> Manifest {
    Manifest { files: files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect() }
}

/// Digest identifying the whole log.
pub fn log_digest(log: &RunLog) -> String {
    sha256_hex(canonical_json(&manifest_of(&log_files(log))).as_bytes())
}

/// Writes the log under `dir` and returns its digest.
pub fn write_run_log(log: &RunLog, dir: &Path) -> Result<String, EvalError> {
    let files = log_files(log);
    let manifest = manifest_of(&files);
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    for (name, bytes) in &files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(&path, bytes).map_err(io)?;
    }
    fs::write(dir.join(MANIFEST), json(&manifest)).map_err(io)?;
    Ok(sha256_hex(canonical_json(&manifest).as_bytes()))
}

/// Reads a log back, checking every file against the manifest.
pub fn read_run_log(dir: &Path) -> Result<RunLog, EvalError> {
    let read = |name: &str| fs::read(dir.join(name)).map_err(|e| EvalError::Io(format!("{name}: {e}")));
    let parse = |name: &str, e: serde_json::Error| EvalError::Io(format!("{name}: {e}"));
    let manifest: Manifest = serde_json::from_slice(&read(MANIFEST)?).map_err(|e| parse(MANIFEST, e))?;
    let mut files = BTreeMap::new();
    for (name, digest) in &manifest.files {
        let bytes = read(name)?;
        if sha256_hex(&bytes) != *digest {
            return Err(EvalError::Io(format!("{name}: contents do not match the manifest")));
        }
        files.insert(name.clone(), bytes);
    }
    let get = |name: &str| files.get(name).ok_or_else(|| EvalError::Io(format!("{name} missing from manifest")));
    let mut log: RunLog = serde_json::from_slice(get("run.json")?).map_err(|e| parse("run.json", e))?;
    for (k, ep) in log.episodes.iter_mut().enumerate() {
        let d = episode_dir(k);
        let name = |f: &str| format!("{d}/{f}");
        ep.capture = get(&name("capture.bin"))?.clone();
        let truth: BTreeMap<String, Trajectory> =
            serde_json::from_slice(get(&name("truth.json"))?).map_err(|e| parse("truth.json", e))?;
        ep.truth = truth
            .into_iter()
            .map(|(id, t)| id.parse().map(|id| (id, t)).map_err(|_| EvalError::Io(format!("bad robot id {id:?}"))))
            .collect::<Result<_, _>>()?;
        ep.estimate = serde_json::from_slice(get(&name("estimate.json"))?).map_err(|e| parse("estimate.json", e))?;
        let c: Vec<ConditionSample> =
            serde_json::from_slice(get(&name("conditions.json"))?).map_err(|e| parse("conditions.json", e))?;
        ep.conditions = c;
        ep.agent_stderr = String::from_utf8_lossy(get(&name("stderr.txt"))?).into_owned();
    }
    Ok(log)
}
