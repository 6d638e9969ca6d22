//! Canonical byte encoding used for hashing, signing and the simulated wire.
//!
//! Rules:
//!
//! * integers are fixed-width big-endian (`u8`, `u32`, `u64`);
//! * reals are the IEEE-754 binary64 bit pattern, written as a big-endian `u64`;
//! * booleans are a single byte, `0x00` or `0x01`;
//! * public keys and digests are their 32 raw bytes;
//! * signatures and all other sequences carry a `u32` length prefix
//!   (byte count for signatures, element count for sequences);
//! * struct fields are written in declaration order, with no padding or tags
//!   beyond what each type documents.
//!
//! The full per-type layout is catalogued in the guide's wire format chapter.

use crate::crypto::{Digest, PublicKey, Signature, DIGEST_LEN, PUBLIC_KEY_LEN};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid tag {tag:#04x} for {what}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("length {0} exceeds remaining input")]
    Length(u32),
}

/// Append-only byte sink for canonical encoding.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn public_key(&mut self, pk: &PublicKey) -> &mut Self {
        self.buf.extend_from_slice(pk.as_bytes());
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn signature(&mut self, sig: &Signature) -> &mut Self {
        self.bytes(sig.as_bytes())
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(len_u32(b.len()));
        self.buf.extend_from_slice(b);
        self
    }

    /// Length-prefixed sequence of canonical values.
    pub fn seq<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u32(len_u32(items.len()));
        for item in items {
            item.encode(self);
        }
        self
    }

    pub fn value<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode(self);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("canonical sequences are limited to u32::MAX elements")
}

/// Cursor over canonical bytes.
#[derive(Debug)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated(self.pos))?;
        if end > self.input.len() {
            return Err(DecodeError::Truncated(self.pos));
        }
        let out = &self.input[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::BadTag { what: "bool", tag }),
        }
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn public_key(&mut self) -> Result<PublicKey, DecodeError> {
        Ok(PublicKey::from_bytes(self.take(PUBLIC_KEY_LEN)?.try_into().unwrap()))
    }

    pub fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest::from_bytes(self.take(DIGEST_LEN)?.try_into().unwrap()))
    }

    pub fn signature(&mut self) -> Result<Signature, DecodeError> {
        Ok(Signature::from_bytes(self.bytes()?.to_vec()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()?;
        if n as usize > self.remaining() {
            return Err(DecodeError::Length(n));
        }
        self.take(n as usize)
    }

    pub fn seq<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let n = self.u32()?;
        // Every element is at least one byte, which bounds hostile prefixes.
        if n as usize > self.remaining() {
            return Err(DecodeError::Length(n));
        }
        (0..n).map(|_| T::decode(self)).collect()
    }

    pub fn value<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode(self)
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// A type with a single canonical byte encoding.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder);
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    /// Decodes a value that must span all of `bytes`.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.public_key(self);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.public_key()
    }
}

/// Shared values encode exactly like the value itself.
impl<T: Canonical> Canonical for std::sync::Arc<T> {
    fn encode(&self, enc: &mut Encoder) {
        self.as_ref().encode(enc);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        T::decode(dec).map(std::sync::Arc::new)
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(self);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.digest()
    }
}
