//! Canonical CBOR for the envelope data model.
//!
//! Only the subset the envelopes need is supported: unsigned/negative
//! integers, byte and text strings, arrays, string-keyed maps, booleans,
//! null and floats. The encoder always emits definite lengths, the shortest
//! integer argument, 64-bit floats, and map entries sorted bytewise by their
//! encoded key. The decoder accepts any definite-length encoding of the same
//! data model (half/single floats are widened) and rejects everything else.

use std::collections::BTreeMap;

use thiserror::Error;

/// Maximum nesting of arrays/maps accepted by the decoder.
pub const MAX_DEPTH: usize = 64;

const MAJOR_UNSIGNED: u8 = 0;
const MAJOR_NEGATIVE: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_TAG: u8 = 6;
const MAJOR_SIMPLE: u8 = 7;

/// A self-describing payload value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    /// Any integer in `-2^64 ..= 2^64 - 1`.
    Int(i128),
    Float(f64),
    Text(String),
    Bytes(Vec<u8>),
    Array(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

pub const INT_MIN: i128 = -(1i128 << 64);
pub const INT_MAX: i128 = (1i128 << 64) - 1;

#[derive(Debug, Error, PartialEq)]
pub enum CborError {
    #[error("integer {0} is outside the CBOR integer range")]
    IntegerRange(i128),
    #[error("nesting deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("unexpected end of input at byte {0}")]
    UnexpectedEnd(usize),
    #[error("unsupported item at byte {offset}: {what}")]
    Unsupported { offset: usize, what: &'static str },
    #[error("map key at byte {0} is not a text string")]
    NonTextKey(usize),
    #[error("duplicate map key {0:?}")]
    DuplicateKey(String),
    #[error("invalid UTF-8 in text string at byte {0}")]
    InvalidUtf8(usize),
    #[error("{0} trailing bytes after the top-level item")]
    TrailingBytes(usize),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_i128(&self) -> Option<i128> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        self.as_i128().and_then(|i| u64::try_from(i).ok())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v as i128)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i128)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

fn write_head(out: &mut Vec<u8>, major: u8, arg: u64) {
    let m = major << 5;
    if arg < 24 {
        out.push(m | arg as u8);
    } else if arg <= u8::MAX as u64 {
        out.push(m | 24);
        out.push(arg as u8);
    } else if arg <= u16::MAX as u64 {
        out.push(m | 25);
        out.extend_from_slice(&(arg as u16).to_be_bytes());
    } else if arg <= u32::MAX as u64 {
        out.push(m | 26);
        out.extend_from_slice(&(arg as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&arg.to_be_bytes());
    }
}

fn write_text(out: &mut Vec<u8>, s: &str) {
    write_head(out, MAJOR_TEXT, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

/// Appends the canonical encoding of `value` to `out`.
pub fn encode_into(value: &Value, out: &mut Vec<u8>) -> Result<(), CborError> {
    encode_at(value, out, 0)
}

pub fn encode(value: &Value) -> Result<Vec<u8>, CborError> {
    let mut out = Vec::new();
    encode_into(value, &mut out)?;
    Ok(out)
}

fn encode_at(value: &Value, out: &mut Vec<u8>, depth: usize) -> Result<(), CborError> {
    if depth > MAX_DEPTH {
        return Err(CborError::TooDeep);
    }
    match value {
        Value::Null => out.push(0xf6),
        Value::Bool(false) => out.push(0xf4),
        Value::Bool(true) => out.push(0xf5),
        Value::Int(i) => {
            let i = *i;
            if !(INT_MIN..=INT_MAX).contains(&i) {
                return Err(CborError::IntegerRange(i));
            }
            if i >= 0 {
                write_head(out, MAJOR_UNSIGNED, i as u64);
            } else {
                write_head(out, MAJOR_NEGATIVE, (-1 - i) as u64);
            }
        }
        Value::Float(f) => {
            out.push(0xfb);
            out.extend_from_slice(&f.to_bits().to_be_bytes());
        }
        Value::Text(s) => write_text(out, s),
        Value::Bytes(b) => {
            write_head(out, MAJOR_BYTES, b.len() as u64);
            out.extend_from_slice(b);
        }
        Value::Array(items) => {
            write_head(out, MAJOR_ARRAY, items.len() as u64);
            for item in items {
                encode_at(item, out, depth + 1)?;
            }
        }
        Value::Map(map) => {
            // Canonical order is bytewise over the encoded keys, which for
            // text keys means shorter keys first, then lexicographic.
            let mut entries: Vec<(Vec<u8>, &Value)> = map
                .iter()
                .map(|(k, v)| {
                    let mut key = Vec::with_capacity(k.len() + 1);
                    write_text(&mut key, k);
                    (key, v)
                })
                .collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            write_head(out, MAJOR_MAP, entries.len() as u64);
            for (key, v) in entries {
                out.extend_from_slice(&key);
                encode_at(v, out, depth + 1)?;
            }
        }
    }
    Ok(())
}

/// Decodes exactly one item occupying the whole of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Value, CborError> {
    let mut dec = Decoder { bytes, pos: 0 };
    let value = dec.item(0)?;
    if dec.pos != bytes.len() {
        return Err(CborError::TrailingBytes(bytes.len() - dec.pos));
    }
    Ok(value)
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CborError::UnexpectedEnd(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, CborError> {
        Ok(self.take(1)?[0])
    }

    fn argument(&mut self, info: u8, offset: usize) -> Result<u64, CborError> {
        Ok(match info {
            0..=23 => info as u64,
            24 => self.byte()? as u64,
            25 => u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64,
            26 => u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64,
            27 => u64::from_be_bytes(self.take(8)?.try_into().unwrap()),
            31 => {
                return Err(CborError::Unsupported {
                    offset,
                    what: "indefinite length",
                })
            }
            _ => {
                return Err(CborError::Unsupported {
                    offset,
                    what: "reserved additional information",
                })
            }
        })
    }

    /// Length of a string/container, checked against the bytes left so a
    /// hostile length can never trigger a large allocation.
    fn length(&mut self, info: u8, offset: usize, min_item_size: usize) -> Result<usize, CborError> {
        let len = self.argument(info, offset)?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if len.saturating_mul(min_item_size as u64) > remaining {
            return Err(CborError::UnexpectedEnd(self.bytes.len()));
        }
        Ok(len as usize)
    }

    fn item(&mut self, depth: usize) -> Result<Value, CborError> {
        if depth > MAX_DEPTH {
            return Err(CborError::TooDeep);
        }
        let offset = self.pos;
        let initial = self.byte()?;
        let major = initial >> 5;
        let info = initial & 0x1f;
        match major {
            MAJOR_UNSIGNED => Ok(Value::Int(self.argument(info, offset)? as i128)),
            MAJOR_NEGATIVE => Ok(Value::Int(-1 - self.argument(info, offset)? as i128)),
            MAJOR_BYTES => {
                let len = self.length(info, offset, 1)?;
                Ok(Value::Bytes(self.take(len)?.to_vec()))
            }
            MAJOR_TEXT => {
                let len = self.length(info, offset, 1)?;
                let raw = self.take(len)?;
                std::str::from_utf8(raw)
                    .map(|s| Value::Text(s.to_owned()))
                    .map_err(|_| CborError::InvalidUtf8(offset))
            }
            MAJOR_ARRAY => {
                let len = self.length(info, offset, 1)?;
                let mut items = Vec::with_capacity(len);
                for _ in 0..len {
                    items.push(self.item(depth + 1)?);
                }
                Ok(Value::Array(items))
            }
            MAJOR_MAP => {
                let len = self.length(info, offset, 2)?;
                let mut map = BTreeMap::new();
                for _ in 0..len {
                    let key_offset = self.pos;
                    let key = match self.item(depth + 1)? {
                        Value::Text(k) => k,
                        _ => return Err(CborError::NonTextKey(key_offset)),
                    };
                    let value = self.item(depth + 1)?;
                    if map.contains_key(&key) {
                        return Err(CborError::DuplicateKey(key));
                    }
                    map.insert(key, value);
                }
                Ok(Value::Map(map))
            }
            MAJOR_TAG => Err(CborError::Unsupported {
                offset,
                what: "tagged item",
            }),
            MAJOR_SIMPLE => match info {
                20 => Ok(Value::Bool(false)),
                21 => Ok(Value::Bool(true)),
                22 => Ok(Value::Null),
                25 => {
                    let bits = u16::from_be_bytes(self.take(2)?.try_into().unwrap());
                    Ok(Value::Float(half_to_f64(bits)))
                }
                26 => {
                    let bits = u32::from_be_bytes(self.take(4)?.try_into().unwrap());
                    Ok(Value::Float(f32::from_bits(bits) as f64))
                }
                27 => {
                    let bits = u64::from_be_bytes(self.take(8)?.try_into().unwrap());
                    Ok(Value::Float(f64::from_bits(bits)))
                }
                31 => Err(CborError::Unsupported {
                    offset,
                    what: "break outside indefinite item",
                }),
                _ => Err(CborError::Unsupported {
                    offset,
                    what: "simple value",
                }),
            },
            _ => unreachable!("major type is three bits"),
        }
    }
}

fn half_to_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x03ff) as f64;
    let magnitude = match exp {
        0 => frac * 2f64.powi(-24),
        31 if frac == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    };
    sign * magnitude
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(entries: &[(&str, Value)]) -> Value {
        Value::Map(entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }

    #[test]
    fn shortest_integer_heads() {
        assert_eq!(encode(&Value::Int(0)).unwrap(), [0x00]);
        assert_eq!(encode(&Value::Int(23)).unwrap(), [0x17]);
        assert_eq!(encode(&Value::Int(24)).unwrap(), [0x18, 0x18]);
        assert_eq!(encode(&Value::Int(255)).unwrap(), [0x18, 0xff]);
        assert_eq!(encode(&Value::Int(256)).unwrap(), [0x19, 0x01, 0x00]);
        assert_eq!(encode(&Value::Int(65536)).unwrap(), [0x1a, 0, 1, 0, 0]);
        assert_eq!(encode(&Value::Int(-1)).unwrap(), [0x20]);
        assert_eq!(encode(&Value::Int(-25)).unwrap(), [0x38, 0x18]);
        assert_eq!(
            encode(&Value::Int(INT_MAX)).unwrap(),
            [0x1b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]
        );
        assert_eq!(
            encode(&Value::Int(INT_MIN)).unwrap(),
            [0x3b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]
        );
    }

    #[test]
    fn out_of_range_integer_is_unencodable() {
        assert_eq!(
            encode(&Value::Int(INT_MAX + 1)),
            Err(CborError::IntegerRange(INT_MAX + 1))
        );
    }

    #[test]
    fn map_keys_sorted_length_first() {
        let v = map(&[("bb", Value::Int(1)), ("a", Value::Int(2)), ("c", Value::Int(3))]);
        let bytes = encode(&v).unwrap();
        assert_eq!(
            bytes,
            [0xa3, 0x61, b'a', 0x02, 0x61, b'c', 0x03, 0x62, b'b', b'b', 0x01]
        );
    }

    #[test]
    fn simple_values_and_floats() {
        assert_eq!(encode(&Value::Null).unwrap(), [0xf6]);
        assert_eq!(encode(&Value::Bool(true)).unwrap(), [0xf5]);
        assert_eq!(
            encode(&Value::Float(1.5)).unwrap(),
            [0xfb, 0x3f, 0xf8, 0, 0, 0, 0, 0, 0]
        );
        // half and single precision are widened on decode
        assert_eq!(decode(&[0xf9, 0x3c, 0x00]).unwrap(), Value::Float(1.0));
        assert_eq!(decode(&[0xfa, 0x3f, 0xc0, 0, 0]).unwrap(), Value::Float(1.5));
        assert_eq!(decode(&[0xf9, 0x7c, 0x00]).unwrap(), Value::Float(f64::INFINITY));
    }

    #[test]
    fn rejects_indefinite_and_tags() {
        assert!(matches!(
            decode(&[0x9f, 0x01, 0xff]),
            Err(CborError::Unsupported { .. })
        ));
        assert!(matches!(
            decode(&[0xd9, 0xd9, 0xf7, 0x01]),
            Err(CborError::Unsupported { .. })
        ));
    }

    #[test]
    fn hostile_lengths_fail_without_allocation() {
        // array claiming 2^64-1 items
        let bytes = [0x9b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(decode(&bytes), Err(CborError::UnexpectedEnd(_))));
        let bytes = [0x7a, 0x7f, 0xff, 0xff, 0xff, b'a'];
        assert!(matches!(decode(&bytes), Err(CborError::UnexpectedEnd(_))));
    }

    #[test]
    fn non_text_keys_and_duplicates_rejected() {
        assert_eq!(decode(&[0xa1, 0x01, 0x02]), Err(CborError::NonTextKey(1)));
        assert_eq!(
            decode(&[0xa2, 0x61, b'a', 0x01, 0x61, b'a', 0x02]),
            Err(CborError::DuplicateKey("a".into()))
        );
    }

    #[test]
    fn depth_limit() {
        let mut bytes = vec![0x81; MAX_DEPTH + 2];
        bytes.push(0x00);
        assert_eq!(decode(&bytes), Err(CborError::TooDeep));
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert_eq!(decode(&[0x01, 0x02]), Err(CborError::TrailingBytes(1)));
    }
}
