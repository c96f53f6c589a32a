use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use super::cbor::{self, Value};
use super::ProtocolError;

/// Largest accepted frame body. A prefix of `0x0100_0000` (16 MiB) or more is
/// rejected before anything is allocated.
pub const MAX_FRAME_LEN: u32 = (16 << 20) - 1;

pub type Payload = BTreeMap<String, Value>;

/// One protocol message. Payload keys the receiver does not know are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub topic: String,
    pub seq: u64,
    pub stamp: f64,
    pub payload: Payload,
}

pub mod topics {
    pub const EPISODE_START: &str = "episode_start";
    pub const OBSERVATION: &str = "observation";
    pub const COMMAND: &str = "command";
    pub const EPISODE_END: &str = "episode_end";
}

impl MessageEnvelope {
    pub fn new(topic: impl Into<String>, seq: u64, stamp: f64, payload: Payload) -> Self {
        Self {
            topic: topic.into(),
            seq,
            stamp,
            payload,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.payload.get(key)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.payload.get(key).and_then(Value::as_f64)
    }

    fn to_value(&self) -> Value {
        let mut m = BTreeMap::new();
        m.insert("topic".to_owned(), Value::Text(self.topic.clone()));
        m.insert("seq".to_owned(), Value::Int(self.seq as i128));
        m.insert("stamp".to_owned(), Value::Float(self.stamp));
        m.insert("payload".to_owned(), Value::Map(self.payload.clone()));
        Value::Map(m)
    }

    fn from_value(value: Value) -> Result<Self, ProtocolError> {
        let Value::Map(mut m) = value else {
            return Err(ProtocolError::Malformed("envelope is not a map".into()));
        };
        let topic = match m.remove("topic") {
            Some(Value::Text(t)) if !t.is_empty() => t,
            _ => return Err(ProtocolError::Malformed("missing or empty topic".into())),
        };
        let seq = m
            .remove("seq")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ProtocolError::Malformed("missing or invalid seq".into()))?;
        let stamp = m
            .remove("stamp")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| ProtocolError::Malformed("missing or invalid stamp".into()))?;
        let payload = match m.remove("payload") {
            Some(Value::Map(p)) => p,
            _ => return Err(ProtocolError::Malformed("missing payload map".into())),
        };
        Ok(Self {
            topic,
            seq,
            stamp,
            payload,
        })
    }
}

/// Encodes one envelope as a complete frame: 4-byte big-endian length
/// followed by the canonical CBOR body.
pub fn encode_envelope(env: &MessageEnvelope) -> Result<Vec<u8>, ProtocolError> {
    if env.topic.is_empty() {
        return Err(ProtocolError::EmptyTopic);
    }
    let mut out = vec![0u8; 4];
    cbor::encode_into(&env.to_value(), &mut out)?;
    let len = out.len() - 4;
    if len > MAX_FRAME_LEN as usize {
        return Err(ProtocolError::Oversize(len as u64));
    }
    out[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(out)
}

/// Decodes a frame body (without the length prefix).
pub fn decode_body(body: &[u8]) -> Result<MessageEnvelope, ProtocolError> {
    MessageEnvelope::from_value(cbor::decode(body)?)
}

/// Reads up to `buf.len()` bytes, returning how many arrived before EOF.
fn read_full(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one raw frame body. Returns `Ok(None)` on a clean end of stream at
/// a frame boundary.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut prefix = [0u8; 4];
    match read_full(reader, &mut prefix)? {
        0 => return Ok(None),
        4 => {}
        got => {
            return Err(ProtocolError::Truncated {
                expected: 4,
                got: got as u64,
            })
        }
    }
    let len = u32::from_be_bytes(prefix);
    if len == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::Oversize(len as u64));
    }
    let mut body = Vec::new();
    let got = reader.take(len as u64).read_to_end(&mut body)?;
    if got < len as usize {
        return Err(ProtocolError::Truncated {
            expected: len as u64,
            got: got as u64,
        });
    }
    Ok(Some(body))
}

/// Consumes exactly one frame from `reader` and decodes it.
pub fn decode_envelope(reader: &mut impl Read) -> Result<MessageEnvelope, ProtocolError> {
    match read_frame(reader)? {
        Some(body) => decode_body(&body),
        None => Err(ProtocolError::Closed),
    }
}

pub fn write_envelope(writer: &mut impl Write, env: &MessageEnvelope) -> Result<(), ProtocolError> {
    let frame = encode_envelope(env)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

/// Splits a byte capture into its frames. Any framing error is fatal.
pub fn decode_capture(mut bytes: &[u8]) -> Result<Vec<MessageEnvelope>, ProtocolError> {
    let mut out = Vec::new();
    while let Some(body) = read_frame(&mut bytes)? {
        out.push(decode_body(&body)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_env() -> MessageEnvelope {
        MessageEnvelope::new("t", 0, 0.0, Payload::new())
    }

    #[test]
    fn minimal_envelope_matches_hand_assembled_bytes() {
        // Assembled by hand from the CBOR major-type table; map keys in
        // bytewise order of their encodings: "seq", "stamp", "topic", "payload".
        #[rustfmt::skip]
        let body: Vec<u8> = vec![
            0xa4,                                     // map(4)
            0x63, b's', b'e', b'q',                   // "seq"
            0x00,                                     // 0
            0x65, b's', b't', b'a', b'm', b'p',       // "stamp"
            0xfb, 0, 0, 0, 0, 0, 0, 0, 0,             // 0.0 (binary64)
            0x65, b't', b'o', b'p', b'i', b'c',       // "topic"
            0x61, b't',                               // "t"
            0x67, b'p', b'a', b'y', b'l', b'o', b'a', b'd', // "payload"
            0xa0,                                     // {}
        ];
        let mut expected = (body.len() as u32).to_be_bytes().to_vec();
        expected.extend_from_slice(&body);
        assert_eq!(body.len(), 38);
        assert_eq!(encode_envelope(&empty_env()).unwrap(), expected);
        assert_eq!(decode_envelope(&mut expected.as_slice()).unwrap(), empty_env());
    }

    #[test]
    fn unknown_payload_keys_pass_through() {
        let mut p = Payload::new();
        p.insert("x".into(), Value::Int(1));
        p.insert("vendor_ext".into(), Value::Text("v".into()));
        let env = MessageEnvelope::new("observation", 3, 0.3, p.clone());
        let bytes = encode_envelope(&env).unwrap();
        let back = decode_envelope(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.payload, p);
    }

    #[test]
    fn empty_topic_rejected() {
        let env = MessageEnvelope::new("", 0, 0.0, Payload::new());
        assert!(matches!(encode_envelope(&env), Err(ProtocolError::EmptyTopic)));
    }

    #[test]
    fn truncated_body() {
        let mut bytes = 10u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&[0xa0, 0, 0, 0, 0]);
        assert!(matches!(
            decode_envelope(&mut bytes.as_slice()),
            Err(ProtocolError::Truncated { expected: 10, got: 5 })
        ));
    }

    #[test]
    fn truncated_prefix() {
        assert!(matches!(
            decode_envelope(&mut [0u8, 0].as_slice()),
            Err(ProtocolError::Truncated { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn oversize_prefix() {
        let bytes = [0x01, 0x00, 0x00, 0x00, 0xa0];
        assert!(matches!(
            decode_envelope(&mut bytes.as_slice()),
            Err(ProtocolError::Oversize(0x0100_0000))
        ));
    }

    #[test]
    fn zero_length_frame() {
        assert!(matches!(
            decode_envelope(&mut [0u8, 0, 0, 0].as_slice()),
            Err(ProtocolError::EmptyFrame)
        ));
    }

    #[test]
    fn clean_eof_is_closed() {
        assert!(matches!(
            decode_envelope(&mut [0u8; 0].as_slice()),
            Err(ProtocolError::Closed)
        ));
    }

    #[test]
    fn consumes_exactly_one_frame() {
        let a = encode_envelope(&empty_env()).unwrap();
        let b = encode_envelope(&MessageEnvelope::new("u", 1, 0.1, Payload::new())).unwrap();
        let stream = [a, b].concat();
        let mut r = stream.as_slice();
        assert_eq!(decode_envelope(&mut r).unwrap().topic, "t");
        assert_eq!(decode_envelope(&mut r).unwrap().topic, "u");
        assert!(r.is_empty());
    }
}
