//! Self-describing binary encoding for inter-agent payloads.
//!
//! Layout: one version byte, then a single tagged value. Every variable-size
//! item is prefixed with a little-endian `u32` length. Map keys are written
//! in sorted order, so equal values always encode to identical bytes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dynamics::Vec3;

pub const FORMAT_VERSION: u8 = 1;

const TAG_NULL: u8 = 0;
const TAG_BOOL: u8 = 1;
const TAG_INT: u8 = 2;
const TAG_FLOAT: u8 = 3;
const TAG_STR: u8 = 4;
const TAG_BYTES: u8 = 5;
const TAG_VECTOR: u8 = 6;
const TAG_LIST: u8 = 7;
const TAG_MAP: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    /// Dense numeric vector (positions, velocities, ...).
    Vector(Vec<f64>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, Value)>) -> Self {
        Value::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        match self {
            Value::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(x) => Some(*x),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_vec3(&self) -> Option<Vec3> {
        match self {
            Value::Vector(v) if v.len() == 3 => Some(Vec3::new(v[0], v[1], v[2])),
            _ => None,
        }
    }
}

impl From<Vec3> for Value {
    fn from(v: Vec3) -> Self {
        Value::Vector(vec![v.x, v.y, v.z])
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Int(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("unknown tag {0}")]
    UnknownTag(u8),
    #[error("invalid boolean byte {0}")]
    InvalidBool(u8),
    #[error("invalid utf-8")]
    InvalidUtf8,
    #[error("map keys out of order or duplicated")]
    KeyOrder,
    #[error("trailing bytes")]
    Trailing,
    #[error("nesting too deep")]
    TooDeep,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

const MAX_DEPTH: usize = 64;

pub fn encode(value: &Value) -> Vec<u8> {
    let mut out = vec![FORMAT_VERSION];
    write_value(value, &mut out);
    out
}

fn write_len(len: usize, out: &mut Vec<u8>) {
    let len = u32::try_from(len).expect("payload item longer than u32::MAX");
    out.extend_from_slice(&len.to_le_bytes());
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.push(TAG_NULL),
        Value::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(u8::from(*b));
        }
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_le_bytes());
        }
        Value::Float(x) => {
            out.push(TAG_FLOAT);
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        Value::Str(s) => {
            out.push(TAG_STR);
            write_len(s.len(), out);
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            write_len(b.len(), out);
            out.extend_from_slice(b);
        }
        Value::Vector(v) => {
            out.push(TAG_VECTOR);
            write_len(v.len(), out);
            for x in v {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        Value::List(items) => {
            out.push(TAG_LIST);
            write_len(items.len(), out);
            for item in items {
                write_value(item, out);
            }
        }
        Value::Map(m) => {
            out.push(TAG_MAP);
            write_len(m.len(), out);
            for (k, v) in m {
                write_len(k.len(), out);
                out.extend_from_slice(k.as_bytes());
                write_value(v, out);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.pos,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(DecodeErrorKind::Truncated));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let start = self.pos;
        let n = self.len()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError {
            offset: start,
            kind: DecodeErrorKind::InvalidUtf8,
        })
    }

    fn value(&mut self, depth: usize) -> Result<Value, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(self.err(DecodeErrorKind::TooDeep));
        }
        let tag_at = self.pos;
        let tag = self.byte()?;
        Ok(match tag {
            TAG_NULL => Value::Null,
            TAG_BOOL => match self.byte()? {
                0 => Value::Bool(false),
                1 => Value::Bool(true),
                b => {
                    return Err(DecodeError {
                        offset: self.pos - 1,
                        kind: DecodeErrorKind::InvalidBool(b),
                    })
                }
            },
            TAG_INT => Value::Int(self.u64()? as i64),
            TAG_FLOAT => Value::Float(f64::from_bits(self.u64()?)),
            TAG_STR => Value::Str(self.string()?),
            TAG_BYTES => {
                let n = self.len()?;
                Value::Bytes(self.take(n)?.to_vec())
            }
            TAG_VECTOR => {
                let n = self.len()?;
                if n.checked_mul(8)
                    .is_none_or(|b| b > self.buf.len() - self.pos)
                {
                    return Err(self.err(DecodeErrorKind::Truncated));
                }
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(f64::from_bits(self.u64()?));
                }
                Value::Vector(v)
            }
            TAG_LIST => {
                let n = self.len()?;
                let mut items = Vec::with_capacity(n.min(self.buf.len() - self.pos));
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                Value::List(items)
            }
            TAG_MAP => {
                let n = self.len()?;
                let mut m = BTreeMap::new();
                let mut last: Option<String> = None;
                for _ in 0..n {
                    let key_at = self.pos;
                    let k = self.string()?;
                    if last.as_ref().is_some_and(|l| *l >= k) {
                        return Err(DecodeError {
                            offset: key_at,
                            kind: DecodeErrorKind::KeyOrder,
                        });
                    }
                    let v = self.value(depth + 1)?;
                    last = Some(k.clone());
                    m.insert(k, v);
                }
                Value::Map(m)
            }
            other => {
                return Err(DecodeError {
                    offset: tag_at,
                    kind: DecodeErrorKind::UnknownTag(other),
                })
            }
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Value, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.byte()?;
    if version != FORMAT_VERSION {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::Version(version),
        });
    }
    let v = r.value(0)?;
    if r.pos != bytes.len() {
        return Err(r.err(DecodeErrorKind::Trailing));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_map_round_trips() {
        let v = Value::Map(BTreeMap::new());
        let bytes = encode(&v);
        assert_eq!(bytes, vec![FORMAT_VERSION, TAG_MAP, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), v);
    }

    #[test]
    fn state_message_round_trips_bit_exact() {
        let v = Value::map([
            ("position", Value::from(Vec3::new(1.5, -2.0, 0.25))),
            ("velocity", Value::from(Vec3::zeros())),
        ]);
        let bytes = encode(&v);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(encode(&back), bytes);
        assert_eq!(
            back.get("position").unwrap().as_vec3(),
            Some(Vec3::new(1.5, -2.0, 0.25))
        );
    }

    #[test]
    fn malformed_input_reports_offset() {
        assert_eq!(
            decode(&[]).unwrap_err(),
            DecodeError {
                offset: 0,
                kind: DecodeErrorKind::Truncated
            }
        );
        assert_eq!(
            decode(&[9, 0]).unwrap_err().kind,
            DecodeErrorKind::Version(9)
        );
        let err = decode(&[FORMAT_VERSION, 42]).unwrap_err();
        assert_eq!(
            err,
            DecodeError {
                offset: 1,
                kind: DecodeErrorKind::UnknownTag(42)
            }
        );

        let mut bytes = encode(&Value::Str("hello".into()));
        bytes.truncate(bytes.len() - 2);
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Truncated);
        assert_eq!(err.offset, 6);

        let mut bytes = encode(&Value::Null);
        bytes.push(0);
        assert_eq!(
            decode(&bytes).unwrap_err(),
            DecodeError {
                offset: 2,
                kind: DecodeErrorKind::Trailing
            }
        );

        // claimed vector length far beyond the buffer
        let err = decode(&[FORMAT_VERSION, TAG_VECTOR, 255, 255, 255, 255]).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Truncated);
    }

    #[test]
    fn unsorted_map_keys_rejected() {
        let mut bytes = vec![FORMAT_VERSION, TAG_MAP, 2, 0, 0, 0];
        for key in ["b", "a"] {
            bytes.extend_from_slice(&[1, 0, 0, 0]);
            bytes.extend_from_slice(key.as_bytes());
            bytes.push(TAG_NULL);
        }
        assert_eq!(decode(&bytes).unwrap_err().kind, DecodeErrorKind::KeyOrder);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::Int),
            any::<f64>().prop_map(Value::Float),
            ".{0,12}".prop_map(Value::Str),
            prop::collection::vec(any::<u8>(), 0..16).prop_map(Value::Bytes),
            prop::collection::vec(any::<f64>(), 0..6).prop_map(Value::Vector),
        ];
        leaf.prop_recursive(4, 64, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..6).prop_map(Value::List),
                prop::collection::btree_map(".{0,8}", inner, 0..6).prop_map(Value::Map),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // Comparing re-encoded bytes makes the check bit-exact, NaN payloads included.
        #[test]
        fn random_values_round_trip(v in arb_value()) {
            let bytes = encode(&v);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }

        #[test]
        fn truncation_never_panics(v in arb_value(), cut in 0usize..64) {
            let bytes = encode(&v);
            let cut = cut.min(bytes.len().saturating_sub(1));
            prop_assert!(decode(&bytes[..cut]).is_err());
        }
    }
}
