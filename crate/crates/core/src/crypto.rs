//! Node identities, signatures and the one-way hash.
//!
//! Signatures are Ed25519 and the hash is SHA-256. Key pairs are derived
//! deterministically from a 64-bit seed so that every simulation replays
//! bit-identically.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use ed25519_dalek::{Signer, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Length in bytes of a [`PublicKey`].
pub const PUBLIC_KEY_LEN: usize = 32;
/// Length in bytes of a well-formed [`Signature`].
pub const SIGNATURE_LEN: usize = 64;
/// Length in bytes of a [`Digest`].
pub const DIGEST_LEN: usize = 32;

const KEYGEN_DOMAIN: &[u8] = b"por/keygen/v1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("refusing to sign an empty message")]
    EmptyMessage,
    #[error("malformed hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

/// A node identity (`pk_i`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub const fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Ok(Self(decode_fixed(s)?))
    }

    /// First four bytes as hex, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// The signing half of a key pair (`sk_i`). Never printed.
#[derive(Clone)]
pub struct SecretKey(SigningKey);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    pub fn sign(&self, message: &[u8]) -> Result<Signature, CryptoError> {
        sign(&self.secret, message)
    }
}

/// Opaque signature bytes.
///
/// Any byte string can be wrapped, so that truncated or otherwise malformed
/// signatures coming off the wire are representable; they simply never verify.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(Arc<[u8]>);

impl Signature {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "Signature({}..; {} bytes)", hex::encode(&self.0[..n]), self.0.len())
    }
}

/// Output of the one-way hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    /// The all-zeros digest used as the genesis predecessor.
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Ok(Self(decode_fixed(s)?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", hex::encode(&self.0[..4]))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], CryptoError> {
    let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
    bytes.as_slice().try_into().map_err(|_| CryptoError::Length { expected: N, got: bytes.len() })
}

/// Derives a key pair from `seed`. The same seed always yields the same pair.
pub fn generate_keypair(seed: u64) -> KeyPair {
    let mut h = Sha256::new();
    h.update(KEYGEN_DOMAIN);
    h.update(seed.to_be_bytes());
    let secret_bytes: [u8; 32] = h.finalize().into();
    let signing = SigningKey::from_bytes(&secret_bytes);
    KeyPair { public: PublicKey(signing.verifying_key().to_bytes()), secret: SecretKey(signing) }
}

pub fn sign(secret: &SecretKey, message: &[u8]) -> Result<Signature, CryptoError> {
    if message.is_empty() {
        return Err(CryptoError::EmptyMessage);
    }
    Ok(Signature(secret.0.sign(message).to_bytes().as_slice().into()))
}

/// Returns true iff `sig` was produced by the secret key paired with `public`
/// over exactly `message`. Malformed keys or signatures yield false.
pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(sig_bytes) = <[u8; SIGNATURE_LEN]>::try_from(sig.as_bytes()) else {
        return false;
    };
    let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
    key.verify(message, &sig).is_ok()
}

pub fn hash(message: &[u8]) -> Digest {
    Digest(Sha256::digest(message).into())
}

/// Streaming form of [`hash`] for callers that assemble input piecewise.
#[derive(Clone, Default)]
pub struct Hasher(Sha256);

impl Hasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

/// Signature verification strategy.
///
/// Verification is a pure function, so a simulation hosting many nodes in one
/// process may share a memoizing verifier between them without changing any
/// outcome.
pub trait SignatureVerifier {
    fn verify(&self, public: &PublicKey, message: &[u8], sig: &Signature) -> bool;
}

/// Calls [`verify`] every time.
#[derive(Clone, Copy, Debug, Default)]
pub struct DirectVerifier;

impl SignatureVerifier for DirectVerifier {
    fn verify(&self, public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        verify(public, message, sig)
    }
}

/// Memoizes [`verify`] keyed by a digest of (key, signature, message).
#[derive(Debug, Default)]
pub struct CachingVerifier {
    memo: Mutex<HashMap<Digest, bool>>,
}

impl CachingVerifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.memo.lock().expect("verifier cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SignatureVerifier for CachingVerifier {
    fn verify(&self, public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        let mut h = Hasher::new();
        h.update(public.as_bytes());
        h.update(&(sig.as_bytes().len() as u32).to_be_bytes());
        h.update(sig.as_bytes());
        h.update(message);
        let key = h.finish();
        if let Some(&hit) = self.memo.lock().expect("verifier cache poisoned").get(&key) {
            return hit;
        }
        let ok = verify(public, message, sig);
        self.memo.lock().expect("verifier cache poisoned").insert(key, ok);
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn keygen_is_deterministic() {
        assert_eq!(generate_keypair(42).public, generate_keypair(42).public);
        assert_ne!(generate_keypair(1).public, generate_keypair(2).public);
    }

    #[test]
    fn thousand_seeds_give_thousand_keys() {
        let keys: HashSet<_> = (0..1000u64).map(|s| generate_keypair(s).public).collect();
        assert_eq!(keys.len(), 1000);
    }

    #[test]
    fn sign_verify_roundtrip_and_binding() {
        let a = generate_keypair(7);
        let b = generate_keypair(8);
        let msg = b"rating payload".to_vec();
        let sig = a.sign(&msg).unwrap();
        assert!(verify(&a.public, &msg, &sig));

        let mut flipped = msg.clone();
        flipped[3] ^= 0x01;
        assert!(!verify(&a.public, &flipped, &sig));
        assert!(!verify(&b.public, &msg, &sig));
    }

    #[test]
    fn empty_message_is_rejected_for_signing() {
        let a = generate_keypair(1);
        assert_eq!(a.sign(&[]), Err(CryptoError::EmptyMessage));
    }

    #[test]
    fn truncated_signature_does_not_verify() {
        let a = generate_keypair(3);
        let sig = a.sign(b"m").unwrap();
        let short = Signature::from_bytes(sig.as_bytes()[..63].to_vec());
        assert!(!verify(&a.public, b"m", &short));
        assert!(!verify(&a.public, b"m", &Signature::from_bytes(vec![])));
    }

    #[test]
    fn invalid_public_key_bytes_do_not_verify() {
        let a = generate_keypair(3);
        let sig = a.sign(b"m").unwrap();
        // Not a valid curve point encoding.
        let bogus = PublicKey::from_bytes([0xff; 32]);
        assert!(!verify(&bogus, b"m", &sig));
    }

    #[test]
    fn hash_of_empty_is_defined() {
        let d = hash(&[]);
        assert_eq!(d.to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn hash_changes_under_single_bit_flip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let len = rng.gen_range(1..256);
            let x: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut y = x.clone();
            let bit = rng.gen_range(0..len * 8);
            y[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(hash(&x), hash(&y));
        }
    }

    #[test]
    fn caching_verifier_agrees_with_direct() {
        let a = generate_keypair(5);
        let cache = CachingVerifier::new();
        let sig = a.sign(b"vote").unwrap();
        assert!(cache.verify(&a.public, b"vote", &sig));
        assert!(cache.verify(&a.public, b"vote", &sig));
        assert!(!cache.verify(&a.public, b"vote!", &sig));
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn hex_roundtrip() {
        let pk = generate_keypair(11).public;
        assert_eq!(PublicKey::from_hex(&pk.to_hex()).unwrap(), pk);
        assert!(PublicKey::from_hex("abcd").is_err());
    }
}
