//! Append-only JSON-lines event log.
//!
//! Each line is `{"seq":N,"sum":"<hex>","event":{...}}` where `sum` is the
//! SHA-256 of `"<seq>:<event text>"`. Sequence numbers start at 1 and have
//! no gaps. On open, the first entry that is torn, unparsable, out of
//! sequence or fails its checksum ends the log: it and everything after it
//! are cut off.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::value::RawValue;

use autolab_core::digest::sha256_hex;

use crate::state::Event;

#[derive(Deserialize)]
struct Line<'a> {
    seq: u64,
    sum: &'a str,
    #[serde(borrow)]
    event: &'a RawValue,
}

fn checksum(seq: u64, event_text: &str) -> String {
    sha256_hex(format!("{seq}:{event_text}").as_bytes())
}

/// Serializes one log line, newline included.
pub fn encode_line(seq: u64, event: &Event) -> String {
    let text = serde_json::to_string(event).expect("events serialize");
    format!("{{\"seq\":{seq},\"sum\":\"{}\",\"event\":{text}}}\n", checksum(seq, &text))
}

/// What was cut off the end of a log while opening it.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    /// Sequence number the bad entry should have had.
    pub at_seq: u64,
    pub offset: u64,
    pub dropped_bytes: u64,
    pub reason: String,
}

fn parse_line(line: &str, expected: u64) -> Result<Event, String> {
    let l: Line = serde_json::from_str(line).map_err(|e| format!("unparsable entry: {e}"))?;
    if l.seq != expected {
        return Err(format!("sequence {} where {expected} was expected", l.seq));
    }
    if checksum(l.seq, l.event.get()) != l.sum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(l.event.get()).map_err(|e| format!("unreadable event: {e}"))
}

/// Parses log bytes into events, stopping at the first bad entry.
pub fn parse_log(bytes: &[u8]) -> (Vec<Event>, Option<Truncation>) {
    let mut events = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let expected = events.len() as u64 + 1;
        let fail = |reason: String| Truncation {
            at_seq: expected,
            offset: offset as u64,
            dropped_bytes: (bytes.len() - offset) as u64,
            reason,
        };
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return (events, Some(fail("torn final entry".into())));
        };
        let parsed = std::str::from_utf8(&bytes[offset..offset + nl])
            .map_err(|_| "entry is not UTF-8".to_string())
            .and_then(|line| parse_line(line, expected));
        match parsed {
            Ok(ev) => events.push(ev),
            Err(reason) => return (events, Some(fail(reason))),
        }
        offset += nl + 1;
    }
    (events, None)
}

pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
    sync: bool,
}

impl EventLog {
    /// Opens or creates the log, cutting off a corrupt tail, and returns
    /// the events it holds.
    pub fn open(path: &Path) -> io::Result<(Self, Vec<Event>, Option<Truncation>)> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (events, cut) = parse_log(&bytes);
        if let Some(t) = &cut {
            log::warn!(
                "event log {}: dropping {} bytes from entry {} on: {}",
                path.display(),
                t.dropped_bytes,
                t.at_seq,
                t.reason
            );
            file.set_len(t.offset)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let log = Self { path: path.to_path_buf(), file, next_seq: events.len() as u64 + 1, sync: true };
        Ok((log, events, cut))
    }

    /// Skips fsync after each append. Faster, and still safe against a
    /// killed process, but not against power loss.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sequence number of the last appended event.
    pub fn seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Writes one event and returns its sequence number.
    pub fn append(&mut self, event: &Event) -> io::Result<u64> {
        let seq = self.next_seq;
        self.file.write_all(encode_line(seq, event).as_bytes())?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(i: usize) -> Event {
        Event::EvaluatorRegistered { id: format!("e{i}"), caps: vec!["sim".into()] }
    }

    #[test]
    fn lines_round_trip() {
        let text: String = (1..=3).map(|i| encode_line(i as u64, &ev(i))).collect();
        let (events, cut) = parse_log(text.as_bytes());
        assert!(cut.is_none());
        assert_eq!(events, (1..=3).map(ev).collect::<Vec<_>>());
    }

    #[test]
    fn bad_entries_end_the_log() {
        let good: String = (1..=2).map(|i| encode_line(i as u64, &ev(i))).collect();
        let third = encode_line(3, &ev(3));
        let cases = [
            (format!("{good}{}", &third[..third.len() - 5]), "torn"),
            (format!("{good}{}", third.replace("e3", "e4")), "checksum"),
            (format!("{good}{}", encode_line(4, &ev(3))), "sequence"),
            (format!("{good}{{oops\n"), "unparsable"),
        ];
        for (text, why) in cases {
            let (events, cut) = parse_log(text.as_bytes());
            assert_eq!(events.len(), 2, "{why}");
            let cut = cut.unwrap();
            assert_eq!(cut.offset as usize, good.len(), "{why}");
            assert!(cut.reason.contains(why), "{why}: {}", cut.reason);
        }
    }

    #[test]
    fn open_truncates_and_appends_after_the_good_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let good: String = (1..=2).map(|i| encode_line(i as u64, &ev(i))).collect();
        std::fs::write(&path, format!("{good}{{\"seq\":3,\"su")).unwrap();
        let (mut log, events, cut) = EventLog::open(&path).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(cut.unwrap().at_seq, 3);
        assert_eq!(log.append(&ev(9)).unwrap(), 3);
        drop(log);
        let (_, events, cut) = EventLog::open(&path).unwrap();
        assert!(cut.is_none());
        assert_eq!(events[2], ev(9));
    }
}
