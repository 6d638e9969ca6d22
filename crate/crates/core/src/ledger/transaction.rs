use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{DirectVerifier, KeyPair, PublicKey, Signature, SignatureVerifier};
use crate::reputation::{is_open_unit, Rating};

use super::LedgerError;

/// Domain tag prefixed to the signed payload of a rating transaction.
pub const TX_SIGNING_TAG: u8 = 0x01;

/// A signed rating: `origin` judges `recipient` with `rating` in round `round`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingTransaction {
    pub origin: PublicKey,
    pub recipient: PublicKey,
    pub rating: f64,
    pub round: u64,
    pub signature: Signature,
}

impl RatingTransaction {
    /// Bytes covered by the origin's signature:
    /// `0x01 | origin | recipient | rating: f64 | round: u64`.
    pub fn signing_payload(origin: &PublicKey, recipient: &PublicKey, rating: f64, round: u64) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(81);
        enc.u8(TX_SIGNING_TAG).public_key(origin).public_key(recipient).f64(rating).u64(round);
        enc.finish()
    }

    pub fn payload(&self) -> Vec<u8> {
        Self::signing_payload(&self.origin, &self.recipient, self.rating, self.round)
    }

    /// The rating carried by this transaction, unchecked.
    pub fn as_rating(&self) -> Rating {
        Rating { origin: self.origin, target: self.recipient, value: self.rating, round: self.round }
    }

    /// Canonical ordering key inside a block.
    pub fn order_key(&self) -> (PublicKey, PublicKey) {
        (self.origin, self.recipient)
    }
}

impl Canonical for RatingTransaction {
    /// `origin | recipient | rating: f64 | round: u64 | signature`.
    fn encode(&self, enc: &mut Encoder) {
        enc.public_key(&self.origin)
            .public_key(&self.recipient)
            .f64(self.rating)
            .u64(self.round)
            .signature(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            origin: dec.public_key()?,
            recipient: dec.public_key()?,
            rating: dec.f64()?,
            round: dec.u64()?,
            signature: dec.signature()?,
        })
    }
}

/// Why a transaction failed validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxRejection {
    BadSignature,
    Range,
    SelfRating,
}

impl TxRejection {
    pub fn code(&self) -> &'static str {
        match self {
            TxRejection::BadSignature => "BAD_SIGNATURE",
            TxRejection::Range => "RANGE",
            TxRejection::SelfRating => "SELF_RATING",
        }
    }
}

impl std::fmt::Display for TxRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Builds and signs a rating of `recipient` by the holder of `keys`.
pub fn create_transaction(
    keys: &KeyPair,
    recipient: PublicKey,
    rating: f64,
    round: u64,
) -> Result<RatingTransaction, LedgerError> {
    if !is_open_unit(rating) {
        return Err(LedgerError::Rejected(TxRejection::Range));
    }
    if recipient == keys.public {
        return Err(LedgerError::Rejected(TxRejection::SelfRating));
    }
    let payload = RatingTransaction::signing_payload(&keys.public, &recipient, rating, round);
    let signature = keys.sign(&payload).expect("transaction payload is never empty");
    Ok(RatingTransaction { origin: keys.public, recipient, rating, round, signature })
}

pub fn validate_transaction(tx: &RatingTransaction) -> Result<(), TxRejection> {
    validate_transaction_with(tx, &DirectVerifier)
}

/// Range, self-rating and signature checks, cheapest first.
pub fn validate_transaction_with(tx: &RatingTransaction, verifier: &dyn SignatureVerifier) -> Result<(), TxRejection> {
    if !is_open_unit(tx.rating) {
        return Err(TxRejection::Range);
    }
    if tx.origin == tx.recipient {
        return Err(TxRejection::SelfRating);
    }
    if !verifier.verify(&tx.origin, &tx.payload(), &tx.signature) {
        return Err(TxRejection::BadSignature);
    }
    Ok(())
}

/// Transactions waiting to be packaged, at most one per (round, origin, recipient).
#[derive(Clone, Debug, Default)]
pub struct TransactionPool {
    pending: BTreeMap<(u64, PublicKey, PublicKey), RatingTransaction>,
}

impl TransactionPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects a second rating for the same (origin, recipient) in one round.
    pub fn insert(&mut self, tx: RatingTransaction) -> Result<(), LedgerError> {
        let key = (tx.round, tx.origin, tx.recipient);
        if self.pending.contains_key(&key) {
            return Err(LedgerError::DuplicatePending { origin: tx.origin, recipient: tx.recipient, round: tx.round });
        }
        self.pending.insert(key, tx);
        Ok(())
    }

    pub fn contains(&self, tx: &RatingTransaction) -> bool {
        self.pending.get(&(tx.round, tx.origin, tx.recipient)).is_some_and(|p| p == tx)
    }

    /// Pending entries of `round` in canonical (origin, recipient) order.
    pub fn for_round(&self, round: u64) -> impl Iterator<Item = &RatingTransaction> {
        self.pending
            .range((round, PublicKey::from_bytes([0; 32]), PublicKey::from_bytes([0; 32]))..)
            .take_while(move |((r, _, _), _)| *r == round)
            .map(|(_, tx)| tx)
    }

    /// Drops everything for rounds up to and including `round`.
    pub fn prune_through(&mut self, round: u64) {
        self.pending =
            self.pending.split_off(&(round + 1, PublicKey::from_bytes([0; 32]), PublicKey::from_bytes([0; 32])));
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RatingTransaction> {
        self.pending.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    #[test]
    fn created_transaction_validates() {
        let a = generate_keypair(1);
        let b = generate_keypair(2);
        let tx = create_transaction(&a, b.public, 0.7, 3).unwrap();
        assert_eq!(validate_transaction(&tx), Ok(()));
    }

    #[test]
    fn creation_rejects_range_and_self() {
        let a = generate_keypair(1);
        let b = generate_keypair(2);
        assert_eq!(create_transaction(&a, b.public, 1.0, 0), Err(LedgerError::Rejected(TxRejection::Range)));
        assert_eq!(create_transaction(&a, b.public, 0.0, 0), Err(LedgerError::Rejected(TxRejection::Range)));
        assert_eq!(create_transaction(&a, a.public, 0.5, 0), Err(LedgerError::Rejected(TxRejection::SelfRating)));
    }

    #[test]
    fn flipped_rating_byte_breaks_signature() {
        let a = generate_keypair(1);
        let b = generate_keypair(2);
        let tx = create_transaction(&a, b.public, 0.7, 3).unwrap();
        let mut bytes = tx.to_canonical_bytes();
        // Lowest byte of the rating's bit pattern: value stays inside (0, 1).
        bytes[64 + 7] ^= 0x01;
        let tampered = RatingTransaction::from_canonical_bytes(&bytes).unwrap();
        assert!(is_open_unit(tampered.rating));
        assert_eq!(validate_transaction(&tampered), Err(TxRejection::BadSignature));
    }

    #[test]
    fn forgery_in_victims_name_fails() {
        let victim = generate_keypair(10);
        let forger = generate_keypair(11);
        let target = generate_keypair(12);
        // Signed by the forger, claims the victim as origin.
        let payload = RatingTransaction::signing_payload(&victim.public, &target.public, 0.99, 1);
        let forged = RatingTransaction {
            origin: victim.public,
            recipient: target.public,
            rating: 0.99,
            round: 1,
            signature: forger.sign(&payload).unwrap(),
        };
        assert_eq!(validate_transaction(&forged), Err(TxRejection::BadSignature));
        let unsigned = RatingTransaction { signature: Signature::from_bytes(vec![0; 64]), ..forged };
        assert_eq!(validate_transaction(&unsigned), Err(TxRejection::BadSignature));
    }

    #[test]
    fn pool_rejects_duplicates_and_prunes() {
        let a = generate_keypair(1);
        let b = generate_keypair(2);
        let mut pool = TransactionPool::new();
        pool.insert(create_transaction(&a, b.public, 0.5, 1).unwrap()).unwrap();
        assert!(matches!(
            pool.insert(create_transaction(&a, b.public, 0.6, 1).unwrap()),
            Err(LedgerError::DuplicatePending { .. })
        ));
        pool.insert(create_transaction(&a, b.public, 0.6, 2).unwrap()).unwrap();
        pool.insert(create_transaction(&b, a.public, 0.6, 2).unwrap()).unwrap();
        assert_eq!(pool.for_round(1).count(), 1);
        assert_eq!(pool.for_round(2).count(), 2);
        pool.prune_through(1);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.for_round(1).count(), 0);
    }
}
