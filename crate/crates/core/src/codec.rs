//! Canonical self-describing binary encoding.
//!
//! Every item is a one-byte tag followed by its payload; variable-length
//! payloads carry a little-endian `u32` length prefix. Maps are encoded in key
//! order, so equal values always encode to equal bytes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::value::{Datum, Value};

const TAG_NULL: u8 = 0x00;
const TAG_INT: u8 = 0x01;
const TAG_FLOAT: u8 = 0x02;
const TAG_TEXT: u8 = 0x03;
const TAG_BOOL: u8 = 0x04;
const TAG_TS: u8 = 0x05;
const TAG_DATUM_VALUE: u8 = 0x10;
const TAG_DATUM_LIST: u8 = 0x11;
const TAG_MAP: u8 = 0x20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unknown tag {tag:#04x} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("invalid utf-8 in text payload")]
    InvalidUtf8,
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn tag(&mut self, tag: u8) -> &mut Self {
        self.buf.push(tag);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn value(&mut self, v: &Value) -> &mut Self {
        match v {
            Value::Null => {
                self.buf.push(TAG_NULL);
            }
            Value::Int64(i) => {
                self.buf.push(TAG_INT);
                self.buf.extend_from_slice(&i.to_le_bytes());
            }
            Value::Float64(f) => {
                self.buf.push(TAG_FLOAT);
                self.buf.extend_from_slice(&f.to_bits().to_le_bytes());
            }
            Value::Text(s) => {
                self.buf.push(TAG_TEXT);
                self.str(s);
            }
            Value::Bool(b) => {
                self.buf.push(TAG_BOOL);
                self.buf.push(*b as u8);
            }
            Value::Timestamp(t) => {
                self.buf.push(TAG_TS);
                self.buf.extend_from_slice(&t.to_le_bytes());
            }
        }
        self
    }

    pub fn values(&mut self, vs: &[Value]) -> &mut Self {
        self.u32(vs.len() as u32);
        for v in vs {
            self.value(v);
        }
        self
    }

    pub fn datum(&mut self, d: &Datum) -> &mut Self {
        match d {
            Datum::Value(v) => {
                self.buf.push(TAG_DATUM_VALUE);
                self.value(v);
            }
            Datum::List(l) => {
                self.buf.push(TAG_DATUM_LIST);
                self.values(l);
            }
        }
        self
    }

    pub fn named(&mut self, map: &BTreeMap<String, Datum>) -> &mut Self {
        self.buf.push(TAG_MAP);
        self.u32(map.len() as u32);
        for (k, v) in map {
            self.str(k);
            self.datum(v);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn tag(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn expect(&mut self, tag: u8) -> Result<(), CodecError> {
        let offset = self.pos;
        let got = self.tag()?;
        if got != tag {
            return Err(CodecError::UnknownTag { tag: got, offset });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn value(&mut self) -> Result<Value, CodecError> {
        let offset = self.pos;
        Ok(match self.tag()? {
            TAG_NULL => Value::Null,
            TAG_INT => Value::Int64(i64::from_le_bytes(self.array()?)),
            TAG_FLOAT => Value::Float64(f64::from_bits(u64::from_le_bytes(self.array()?))),
            TAG_TEXT => Value::Text(self.str()?),
            TAG_BOOL => Value::Bool(self.tag()? != 0),
            TAG_TS => Value::Timestamp(u64::from_le_bytes(self.array()?)),
            tag => return Err(CodecError::UnknownTag { tag, offset }),
        })
    }

    pub fn values(&mut self) -> Result<Vec<Value>, CodecError> {
        let n = self.u32()? as usize;
        // each value is at least one byte
        if n > self.buf.len() - self.pos {
            return Err(CodecError::Truncated(self.pos));
        }
        (0..n).map(|_| self.value()).collect()
    }

    pub fn datum(&mut self) -> Result<Datum, CodecError> {
        let offset = self.pos;
        match self.tag()? {
            TAG_DATUM_VALUE => Ok(Datum::Value(self.value()?)),
            TAG_DATUM_LIST => Ok(Datum::List(self.values()?)),
            tag => Err(CodecError::UnknownTag { tag, offset }),
        }
    }

    pub fn named(&mut self) -> Result<BTreeMap<String, Datum>, CodecError> {
        self.expect(TAG_MAP)?;
        let n = self.u32()? as usize;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let k = self.str()?;
            let v = self.datum()?;
            out.insert(k, v);
        }
        Ok(out)
    }
}

pub fn encode_named(map: &BTreeMap<String, Datum>) -> Vec<u8> {
    let mut e = Encoder::new();
    e.named(map);
    e.finish()
}

pub fn decode_named(bytes: &[u8]) -> Result<BTreeMap<String, Datum>, CodecError> {
    let mut d = Decoder::new(bytes);
    let out = d.named()?;
    d.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            any::<i64>().prop_map(Value::Int64),
            any::<f64>().prop_map(Value::Float64),
            ".{0,12}".prop_map(Value::Text),
            any::<bool>().prop_map(Value::Bool),
            any::<u64>().prop_map(Value::Timestamp),
        ]
    }

    fn arb_datum() -> impl Strategy<Value = Datum> {
        prop_oneof![
            arb_value().prop_map(Datum::Value),
            prop::collection::vec(arb_value(), 0..5).prop_map(Datum::List),
        ]
    }

    proptest! {
        #[test]
        fn named_outputs_round_trip(map in prop::collection::btree_map("[a-z]{1,6}", arb_datum(), 0..6)) {
            let bytes = encode_named(&map);
            prop_assert_eq!(decode_named(&bytes).unwrap(), map.clone());
            // canonical: re-encoding gives identical bytes
            prop_assert_eq!(encode_named(&decode_named(&bytes).unwrap()), bytes);
        }

        #[test]
        fn truncation_is_an_error_not_a_panic(map in prop::collection::btree_map("[a-z]{1,4}", arb_datum(), 1..4), cut in 0usize..64) {
            let bytes = encode_named(&map);
            let cut = cut.min(bytes.len() - 1);
            prop_assert!(decode_named(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn layout_is_tag_then_payload() {
        let mut e = Encoder::new();
        e.value(&Value::Text("ab".into()));
        assert_eq!(e.finish(), vec![TAG_TEXT, 2, 0, 0, 0, b'a', b'b']);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_named(&BTreeMap::new());
        bytes.push(0);
        assert_eq!(decode_named(&bytes), Err(CodecError::Trailing(1)));
    }
}
