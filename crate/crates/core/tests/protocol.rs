use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use serde_json::Value as Json;

use autolab_core::protocol::cbor::{INT_MAX, INT_MIN};
use autolab_core::protocol::transport::{connect, Endpoint, FifoPair, TcpRendezvous};
use autolab_core::protocol::{
    decode_body, decode_capture, encode_envelope, read_frame, MessageEnvelope, ProtocolError, Value, MAX_FRAME_LEN,
};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/fixtures/protocol")
}

fn session_bytes() -> Vec<u8> {
    std::fs::read(fixture_dir().join("session.bin")).unwrap()
}

fn typed(v: &Json) -> Value {
    let (tag, inner) = v.as_object().unwrap().iter().next().unwrap();
    match tag.as_str() {
        "null" => Value::Null,
        "bool" => Value::Bool(inner.as_bool().unwrap()),
        "int" => Value::Int(inner.as_str().unwrap().parse().unwrap()),
        "float" => Value::Float(f64::from_bits(u64::from_str_radix(inner.as_str().unwrap(), 16).unwrap())),
        "text" => Value::Text(inner.as_str().unwrap().to_string()),
        "bytes" => Value::Bytes(hex::decode(inner.as_str().unwrap()).unwrap()),
        "array" => Value::Array(inner.as_array().unwrap().iter().map(typed).collect()),
        "map" => Value::Map(inner.as_object().unwrap().iter().map(|(k, v)| (k.clone(), typed(v))).collect()),
        other => panic!("unknown tag {other}"),
    }
}

fn recorded_session() -> Vec<MessageEnvelope> {
    let text = std::fs::read_to_string(fixture_dir().join("session.json")).unwrap();
    let doc: Json = serde_json::from_str(&text).unwrap();
    doc.as_array()
        .unwrap()
        .iter()
        .map(|e| MessageEnvelope {
            topic: e["topic"].as_str().unwrap().to_string(),
            seq: e["seq"].as_u64().unwrap(),
            stamp: f64::from_bits(u64::from_str_radix(e["stamp"].as_str().unwrap(), 16).unwrap()),
            payload: e["payload"].as_object().unwrap().iter().map(|(k, v)| (k.clone(), typed(v))).collect(),
        })
        .collect()
}

/// Byte-level equality, so `-0.0` and `0.0` differ.
fn same_bits(a: &MessageEnvelope, b: &MessageEnvelope) -> bool {
    encode_envelope(a).unwrap() == encode_envelope(b).unwrap() && a == b
}

#[test]
fn archived_session_decodes_to_the_recorded_values() {
    let got = decode_capture(&session_bytes()).unwrap();
    let want = recorded_session();
    assert_eq!(got.len(), 8);
    for (g, w) in got.iter().zip(&want) {
        assert!(same_bits(g, w), "{g:?} != {w:?}");
    }
    let Value::Float(z) = got[1].payload["signed_zero"] else { panic!() };
    assert!(z == 0.0 && z.is_sign_negative());
}

#[test]
fn archived_session_reencodes_byte_for_byte() {
    let bytes = session_bytes();
    let mut out = Vec::new();
    for env in decode_capture(&bytes).unwrap() {
        out.extend(encode_envelope(&env).unwrap());
    }
    assert_eq!(out, bytes);
}

/// Writes `bytes` in uneven chunks so frames straddle reads.
fn dribble(w: &mut impl Write, bytes: &[u8]) {
    let mut rest = bytes;
    let mut k = 1;
    while !rest.is_empty() {
        let n = (k * 7 % 61 + 1).min(rest.len());
        w.write_all(&rest[..n]).unwrap();
        w.flush().unwrap();
        rest = &rest[n..];
        k += 1;
    }
}

fn read_all_frames(r: &mut impl Read) -> Vec<MessageEnvelope> {
    let mut out = Vec::new();
    while let Some(body) = read_frame(r).unwrap() {
        out.push(decode_body(&body).unwrap());
    }
    out
}

/// The node echoes the fixture back to the host; the host decodes it.
fn over_channel(host: impl FnOnce() -> (Box<dyn Read>, Box<dyn Write>), node_in: Endpoint, node_out: Endpoint) -> Vec<MessageEnvelope> {
    let bytes = session_bytes();
    let node = thread::spawn(move || {
        let (mut r, mut w) = connect(&node_in, &node_out).unwrap();
        let mut got = Vec::new();
        while let Some(body) = read_frame(&mut r).unwrap() {
            got.push(body);
        }
        for body in got {
            let mut frame = (body.len() as u32).to_be_bytes().to_vec();
            frame.extend(body);
            dribble(&mut w, &frame);
        }
    });
    let (mut r, mut w) = host();
    dribble(&mut w, &bytes);
    drop(w);
    let out = read_all_frames(&mut r);
    node.join().unwrap();
    out
}

#[test]
fn fifo_and_tcp_deliver_identical_envelopes() {
    let want = recorded_session();
    let dir = tempfile::tempdir().unwrap();
    let pair = FifoPair::create(dir.path()).unwrap();
    let (to, from) = (pair.to_node.clone(), pair.from_node.clone());
    let fifo = over_channel(
        move || {
            let (r, w) = pair.open_host(|| true, Duration::from_secs(10)).unwrap();
            (Box::new(r), Box::new(w))
        },
        Endpoint::Path(to),
        Endpoint::Path(from),
    );
    let rv = TcpRendezvous::bind_local().unwrap();
    let addr = rv.addr().unwrap();
    let tcp = over_channel(
        move || {
            let (r, w) = rv.accept(|| true, Duration::from_secs(10)).unwrap();
            // half-close so the node sees the end of the capture
            let w = HalfClose(w);
            (Box::new(r), Box::new(w))
        },
        Endpoint::Tcp(addr),
        Endpoint::Tcp(addr),
    );
    assert_eq!(fifo.len(), want.len());
    assert_eq!(tcp.len(), want.len());
    for ((f, t), w) in fifo.iter().zip(&tcp).zip(&want) {
        assert!(same_bits(f, w));
        assert!(same_bits(t, w));
    }
}

struct HalfClose(std::net::TcpStream);

impl Write for HalfClose {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

impl Drop for HalfClose {
    fn drop(&mut self) {
        let _ = self.0.shutdown(std::net::Shutdown::Write);
    }
}

/// Counts how far a reader got.
struct Counting<'a> {
    inner: &'a [u8],
    pos: usize,
}

impl Read for Counting<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = buf.len().min(self.inner.len() - self.pos);
        buf[..n].copy_from_slice(&self.inner[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn frame_offsets(bytes: &[u8]) -> Vec<usize> {
    let mut at = 0;
    let mut out = Vec::new();
    while at < bytes.len() {
        out.push(at);
        at += 4 + u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    }
    out
}

#[test]
fn oversize_prefix_reads_only_the_prefix() {
    for len in [MAX_FRAME_LEN + 1, u32::MAX] {
        let mut bytes = len.to_be_bytes().to_vec();
        bytes.extend(session_bytes());
        let mut r = Counting { inner: &bytes, pos: 0 };
        assert!(matches!(read_frame(&mut r), Err(ProtocolError::Oversize(_))));
        assert_eq!(r.pos, 4);
    }
}

fn value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (INT_MIN..=INT_MAX).prop_map(Value::Int),
        any::<i64>().prop_map(|i| Value::Int(i as i128)),
        any::<f64>().prop_filter("NaN never equals itself", |f| !f.is_nan()).prop_map(Value::Float),
        ".{0,40}".prop_map(Value::Text),
        proptest::collection::vec(any::<u8>(), 0..300).prop_map(Value::Bytes),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            proptest::collection::btree_map(".{0,12}", inner, 0..6).prop_map(Value::Map),
        ]
    })
}

fn envelope() -> impl Strategy<Value = MessageEnvelope> {
    (".{1,24}", any::<u64>(), any::<f64>().prop_filter("finite", |f| !f.is_nan()), proptest::collection::btree_map(".{0,12}", value(), 0..8))
        .prop_map(|(topic, seq, stamp, payload): (String, u64, f64, BTreeMap<String, Value>)| MessageEnvelope { topic, seq, stamp, payload })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn random_envelopes_round_trip(env in envelope()) {
        let frame = encode_envelope(&env).unwrap();
        let mut r = &frame[..];
        let body = read_frame(&mut r).unwrap().unwrap();
        prop_assert!(r.is_empty());
        let back = decode_body(&body).unwrap();
        prop_assert_eq!(encode_envelope(&back).unwrap(), frame);
        prop_assert_eq!(back, env);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, ..ProptestConfig::default() })]

    #[test]
    fn corrupted_length_prefix_stops_the_stream(k in 0usize..8, len in any::<u32>()) {
        let mut bytes = session_bytes();
        let offsets = frame_offsets(&bytes);
        let original = u32::from_be_bytes(bytes[offsets[k]..offsets[k] + 4].try_into().unwrap());
        prop_assume!(len != original);
        bytes[offsets[k]..offsets[k] + 4].copy_from_slice(&len.to_be_bytes());
        let want = recorded_session();

        let mut r = Counting { inner: &bytes, pos: 0 };
        let mut decoded = Vec::new();
        let failure = loop {
            let before = r.pos;
            match read_frame(&mut r) {
                Ok(Some(body)) => {
                    prop_assert!(r.pos - before == 4 + body.len());
                    match decode_body(&body) {
                        Ok(env) => decoded.push(env),
                        Err(e) => break Some(e),
                    }
                }
                Ok(None) => break None,
                Err(e) => {
                    prop_assert!(r.pos - before <= 4 + len as usize);
                    break Some(e);
                }
            }
        };
        prop_assert!(failure.is_some(), "corrupt stream decoded cleanly");
        prop_assert!(r.pos <= bytes.len());
        prop_assert_eq!(decoded.len(), k, "frames after the corruption were accepted");
        for (d, w) in decoded.iter().zip(&want) {
            prop_assert!(same_bits(d, w));
        }
        prop_assert!(decode_capture(&bytes).is_err());
    }

    #[test]
    fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let mut r = Counting { inner: &bytes, pos: 0 };
        while let Ok(Some(body)) = read_frame(&mut r) {
            let _ = decode_body(&body);
        }
        prop_assert!(r.pos <= bytes.len());
        let _ = decode_capture(&bytes);
    }
}
