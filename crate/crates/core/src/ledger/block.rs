use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{hash, Digest, DirectVerifier, SignatureVerifier};
use crate::reputation::ReputationList;

use super::transaction::{validate_transaction_with, RatingTransaction, TransactionPool, TxRejection};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub round: u64,
    pub previous_hash: Digest,
    /// Simulated milliseconds.
    pub timestamp: u64,
    /// Digest of the block body (transactions, or the reputation list).
    pub transactions_hash: Digest,
}

impl Canonical for BlockHeader {
    /// `round: u64 | previous_hash | timestamp: u64 | transactions_hash`.
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.round).digest(&self.previous_hash).u64(self.timestamp).digest(&self.transactions_hash);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            round: dec.u64()?,
            previous_hash: dec.digest()?,
            timestamp: dec.u64()?,
            transactions_hash: dec.digest()?,
        })
    }
}

/// A transaction-chain block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<RatingTransaction>,
}

impl Block {
    /// Sorts `transactions` into canonical order and computes the body hash.
    pub fn assemble(
        round: u64,
        previous_hash: Digest,
        timestamp: u64,
        mut transactions: Vec<RatingTransaction>,
    ) -> Self {
        transactions.sort_by_key(RatingTransaction::order_key);
        let transactions_hash = transactions_hash(&transactions);
        Self { header: BlockHeader { round, previous_hash, timestamp, transactions_hash }, transactions }
    }

    pub fn round(&self) -> u64 {
        self.header.round
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_canonical_bytes())
    }

    /// Structural checks that need no signatures: body hash, canonical order
    /// with distinct (origin, recipient) pairs, and every transaction in this round.
    pub fn check_body(&self) -> Result<(), BodyFault> {
        if transactions_hash(&self.transactions) != self.header.transactions_hash {
            return Err(BodyFault::HashMismatch);
        }
        if self.transactions.windows(2).any(|w| w[0].order_key() >= w[1].order_key()) {
            return Err(BodyFault::NonCanonicalOrder);
        }
        if self.transactions.iter().any(|tx| tx.round != self.header.round) {
            return Err(BodyFault::ForeignRound);
        }
        Ok(())
    }

    /// Body checks plus validation of every transaction.
    pub fn validate(&self, verifier: &dyn SignatureVerifier) -> Result<(), BlockFault> {
        self.check_body().map_err(BlockFault::Body)?;
        for (index, tx) in self.transactions.iter().enumerate() {
            validate_transaction_with(tx, verifier).map_err(|reason| BlockFault::Transaction { index, reason })?;
        }
        Ok(())
    }
}

impl Canonical for Block {
    /// `header | count: u32 | transaction*`.
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.header).seq(&self.transactions);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { header: dec.value()?, transactions: dec.seq()? })
    }
}

/// Digest over `count: u32 | transaction*`.
pub fn transactions_hash(transactions: &[RatingTransaction]) -> Digest {
    let mut enc = Encoder::with_capacity(4 + transactions.len() * 156);
    enc.seq(transactions);
    hash(&enc.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BodyFault {
    HashMismatch,
    NonCanonicalOrder,
    ForeignRound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockFault {
    Body(BodyFault),
    Transaction { index: usize, reason: TxRejection },
}

/// A reputation side-chain block; its body hash covers the encoded list.
#[derive(Clone, Debug, PartialEq)]
pub struct ReputationBlock {
    pub header: BlockHeader,
    pub reputation_list: ReputationList,
}

impl ReputationBlock {
    pub fn assemble(previous_hash: Digest, timestamp: u64, reputation_list: ReputationList) -> Self {
        Self {
            header: BlockHeader {
                round: reputation_list.round(),
                previous_hash,
                timestamp,
                transactions_hash: hash(&reputation_list.to_canonical_bytes()),
            },
            reputation_list,
        }
    }

    pub fn round(&self) -> u64 {
        self.header.round
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_canonical_bytes())
    }

    pub fn list_digest(&self) -> Digest {
        hash(&self.reputation_list.to_canonical_bytes())
    }

    pub fn check_body(&self) -> Result<(), BodyFault> {
        if self.list_digest() != self.header.transactions_hash {
            return Err(BodyFault::HashMismatch);
        }
        if self.reputation_list.round() != self.header.round {
            return Err(BodyFault::ForeignRound);
        }
        Ok(())
    }
}

impl Canonical for ReputationBlock {
    /// `header | reputation list`.
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.header).value(&self.reputation_list);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { header: dec.value()?, reputation_list: dec.value()? })
    }
}

/// Result of packaging: the block and whatever pending entries were left out.
#[derive(Clone, Debug)]
pub struct PackagedBlock {
    pub block: Block,
    pub excluded: Vec<(RatingTransaction, TxRejection)>,
}

pub fn package_block(pool: &TransactionPool, round: u64, previous_hash: Digest, now: u64) -> PackagedBlock {
    package_block_with(pool, round, previous_hash, now, &DirectVerifier)
}

/// Packages every valid pending transaction of `round`; invalid ones are reported.
pub fn package_block_with(
    pool: &TransactionPool,
    round: u64,
    previous_hash: Digest,
    now: u64,
    verifier: &dyn SignatureVerifier,
) -> PackagedBlock {
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for tx in pool.for_round(round) {
        match validate_transaction_with(tx, verifier) {
            Ok(()) => included.push(tx.clone()),
            Err(reason) => excluded.push((tx.clone(), reason)),
        }
    }
    PackagedBlock { block: Block::assemble(round, previous_hash, now, included), excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_keypair, Signature};
    use crate::ledger::create_transaction;

    fn pool_with(n: usize, round: u64) -> TransactionPool {
        let keys: Vec<_> = (0..4).map(|i| generate_keypair(50 + i)).collect();
        let mut pool = TransactionPool::new();
        let mut added = 0;
        'outer: for a in &keys {
            for b in &keys {
                if a.public != b.public {
                    pool.insert(create_transaction(a, b.public, 0.5, round).unwrap()).unwrap();
                    added += 1;
                    if added == n {
                        break 'outer;
                    }
                }
            }
        }
        pool
    }

    #[test]
    fn packages_all_valid_in_canonical_order() {
        let pool = pool_with(3, 1);
        let packaged = package_block(&pool, 1, Digest::ZERO, 10);
        assert_eq!(packaged.block.transactions.len(), 3);
        assert!(packaged.excluded.is_empty());
        assert_eq!(packaged.block.check_body(), Ok(()));
        assert_eq!(packaged.block.validate(&DirectVerifier), Ok(()));
    }

    #[test]
    fn excludes_bad_signature() {
        let mut pool = pool_with(2, 1);
        let a = generate_keypair(90);
        let b = generate_keypair(91);
        let mut tx = create_transaction(&a, b.public, 0.5, 1).unwrap();
        tx.signature = Signature::from_bytes(vec![7; 64]);
        pool.insert(tx).unwrap();
        let packaged = package_block(&pool, 1, Digest::ZERO, 10);
        assert_eq!(packaged.block.transactions.len(), 2);
        assert_eq!(packaged.excluded.len(), 1);
        assert_eq!(packaged.excluded[0].1, TxRejection::BadSignature);
    }

    #[test]
    fn empty_pool_gives_empty_block() {
        let prev = hash(b"head");
        let packaged = package_block(&TransactionPool::new(), 4, prev, 99);
        assert!(packaged.block.transactions.is_empty());
        assert_eq!(packaged.block.header.previous_hash, prev);
        assert_eq!(packaged.block.header.transactions_hash, transactions_hash(&[]));
    }

    #[test]
    fn packaging_ignores_other_rounds() {
        let mut pool = pool_with(3, 1);
        for tx in pool_with(2, 2).iter() {
            pool.insert(tx.clone()).unwrap();
        }
        assert_eq!(package_block(&pool, 2, Digest::ZERO, 0).block.transactions.len(), 2);
    }

    #[test]
    fn packaging_is_byte_deterministic() {
        let pool = pool_with(6, 1);
        let a = package_block(&pool, 1, Digest::ZERO, 5).block.to_canonical_bytes();
        let b = package_block(&pool.clone(), 1, Digest::ZERO, 5).block.to_canonical_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn block_roundtrips() {
        let block = package_block(&pool_with(3, 1), 1, Digest::ZERO, 10).block;
        assert_eq!(Block::from_canonical_bytes(&block.to_canonical_bytes()).unwrap(), block);
    }
}
