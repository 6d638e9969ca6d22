use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest, DirectVerifier, PublicKey, SignatureVerifier};
use crate::reputation::ReputationList;

use super::block::{Block, BlockFault, BodyFault, ReputationBlock};
use super::transaction::TxRejection;

/// The transaction chain and the reputation side chain, paired by round.
///
/// Blocks are reference counted so that many simulated nodes holding the
/// same history share one copy.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPair {
    transaction_chain: Vec<Arc<Block>>,
    reputation_chain: Vec<Arc<ReputationBlock>>,
}

/// What went wrong at a given chain position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    RoundMismatch,
    LinkMismatch,
    /// Transaction or reputation body does not match its header hash.
    BodyHashMismatch,
    NonCanonicalOrder,
    /// Paired blocks disagree on timestamp, or time runs backwards.
    TimestampMismatch,
    InvalidTransaction(TxRejection),
    /// The two chains have different lengths.
    LengthMismatch,
    Empty,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::RoundMismatch => f.write_str("ROUND_MISMATCH"),
            FaultKind::LinkMismatch => f.write_str("LINK_MISMATCH"),
            FaultKind::BodyHashMismatch => f.write_str("BODY_HASH_MISMATCH"),
            FaultKind::NonCanonicalOrder => f.write_str("NON_CANONICAL_ORDER"),
            FaultKind::TimestampMismatch => f.write_str("TIMESTAMP_MISMATCH"),
            FaultKind::InvalidTransaction(r) => write!(f, "INVALID_TRANSACTION({r})"),
            FaultKind::LengthMismatch => f.write_str("LENGTH_MISMATCH"),
            FaultKind::Empty => f.write_str("EMPTY"),
        }
    }
}

/// First failure found along a chain, with its position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("chain fault at round {round}: {kind}")]
pub struct ChainFault {
    pub round: u64,
    pub kind: FaultKind,
}

impl From<BodyFault> for FaultKind {
    fn from(f: BodyFault) -> Self {
        match f {
            BodyFault::HashMismatch => FaultKind::BodyHashMismatch,
            BodyFault::NonCanonicalOrder => FaultKind::NonCanonicalOrder,
            BodyFault::ForeignRound => FaultKind::RoundMismatch,
        }
    }
}

impl ChainPair {
    /// Round 0: an empty block and every node at `initial_reputation`.
    pub fn genesis<'a>(nodes: impl IntoIterator<Item = &'a PublicKey>, initial_reputation: f64) -> Self {
        let block = Block::assemble(0, Digest::ZERO, 0, Vec::new());
        let rep = ReputationBlock::assemble(Digest::ZERO, 0, ReputationList::uniform(nodes, initial_reputation));
        Self { transaction_chain: vec![Arc::new(block)], reputation_chain: vec![Arc::new(rep)] }
    }

    /// Wraps existing chains without checking them; see [`validate_chain`].
    pub fn from_parts(transaction_chain: Vec<Block>, reputation_chain: Vec<ReputationBlock>) -> Self {
        Self {
            transaction_chain: transaction_chain.into_iter().map(Arc::new).collect(),
            reputation_chain: reputation_chain.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn into_parts(self) -> (Vec<Block>, Vec<ReputationBlock>) {
        (
            self.transaction_chain.into_iter().map(Arc::unwrap_or_clone).collect(),
            self.reputation_chain.into_iter().map(Arc::unwrap_or_clone).collect(),
        )
    }

    /// Number of committed rounds including genesis; also the next round index.
    pub fn len(&self) -> usize {
        self.transaction_chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transaction_chain.is_empty()
    }

    pub fn next_round(&self) -> u64 {
        self.len() as u64
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.transaction_chain
    }

    pub fn reputation_blocks(&self) -> &[Arc<ReputationBlock>] {
        &self.reputation_chain
    }

    pub fn head_block(&self) -> &Block {
        self.transaction_chain.last().expect("chain has genesis")
    }

    pub fn head_reputation_block(&self) -> &ReputationBlock {
        self.reputation_chain.last().expect("chain has genesis")
    }

    /// The latest committed reputation list.
    pub fn reputation(&self) -> &ReputationList {
        &self.head_reputation_block().reputation_list
    }

    /// Digests of both heads, in (transaction, reputation) order.
    pub fn head_digests(&self) -> (Digest, Digest) {
        (self.head_block().digest(), self.head_reputation_block().digest())
    }

    /// Extends both chains by one round after structural checks.
    ///
    /// Transaction signatures are not checked here: a block arrives with a
    /// quorum certificate and full validation is the voters' job.
    pub fn append_round(
        &mut self,
        block: impl Into<Arc<Block>>,
        rep_block: impl Into<Arc<ReputationBlock>>,
    ) -> Result<(), ChainFault> {
        let (block, rep_block) = (block.into(), rep_block.into());
        let round = self.next_round();
        let fault = |kind| ChainFault { round, kind };
        if block.header.round != round || rep_block.header.round != round {
            return Err(fault(FaultKind::RoundMismatch));
        }
        let (tx_head, rep_head) = self.head_digests();
        if block.header.previous_hash != tx_head || rep_block.header.previous_hash != rep_head {
            return Err(fault(FaultKind::LinkMismatch));
        }
        block.check_body().map_err(|f| fault(f.into()))?;
        rep_block.check_body().map_err(|f| fault(f.into()))?;
        if block.header.timestamp != rep_block.header.timestamp
            || block.header.timestamp < self.head_block().header.timestamp
        {
            return Err(fault(FaultKind::TimestampMismatch));
        }
        self.transaction_chain.push(block);
        self.reputation_chain.push(rep_block);
        Ok(())
    }

    /// Drops every round after `round`; genesis is always kept.
    pub fn truncate(&mut self, round: u64) {
        let keep = (round as usize + 1).max(1);
        self.transaction_chain.truncate(keep);
        self.reputation_chain.truncate(keep);
    }

    /// True when `other` extends `self` or vice versa.
    pub fn is_prefix_compatible(&self, other: &ChainPair) -> bool {
        self.first_divergence(other).is_none()
    }

    /// First round at which the two chain pairs hold different blocks.
    pub fn first_divergence(&self, other: &ChainPair) -> Option<u64> {
        let n = self.len().min(other.len());
        (0..n)
            .find(|&i| {
                let (a, b) = (&self.transaction_chain[i], &other.transaction_chain[i]);
                let (ra, rb) = (&self.reputation_chain[i], &other.reputation_chain[i]);
                !(Arc::ptr_eq(a, b) || a == b) || !(Arc::ptr_eq(ra, rb) || ra == rb)
            })
            .map(|i| i as u64)
    }
}

impl Canonical for ChainPair {
    /// `count: u32 | block* | count: u32 | reputation block*`.
    fn encode(&self, enc: &mut Encoder) {
        enc.seq(&self.transaction_chain).seq(&self.reputation_chain);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { transaction_chain: dec.seq()?, reputation_chain: dec.seq()? })
    }
}

pub fn validate_chain(chains: &ChainPair) -> Result<(), ChainFault> {
    validate_chain_with(chains, &DirectVerifier)
}

/// Full audit from genesis to head: rounds, hash links, bodies, timestamps
/// and every transaction. Reports the first failing round.
pub fn validate_chain_with(chains: &ChainPair, verifier: &dyn SignatureVerifier) -> Result<(), ChainFault> {
    let blocks = &chains.transaction_chain;
    let reps = &chains.reputation_chain;
    if blocks.is_empty() && reps.is_empty() {
        return Err(ChainFault { round: 0, kind: FaultKind::Empty });
    }
    let mut prev: Option<(Digest, Digest, u64)> = None;
    for (i, (block, rep)) in blocks.iter().zip(reps.iter()).enumerate() {
        let round = i as u64;
        let fault = |kind| ChainFault { round, kind };
        if block.header.round != round || rep.header.round != round || rep.reputation_list.round() != round {
            return Err(fault(FaultKind::RoundMismatch));
        }
        let (tx_link, rep_link, prev_ts) = prev.unwrap_or((Digest::ZERO, Digest::ZERO, 0));
        if block.header.previous_hash != tx_link || rep.header.previous_hash != rep_link {
            return Err(fault(FaultKind::LinkMismatch));
        }
        rep.check_body().map_err(|f| fault(f.into()))?;
        match block.validate(verifier) {
            Ok(()) => {}
            Err(BlockFault::Body(f)) => return Err(fault(f.into())),
            Err(BlockFault::Transaction { reason, .. }) => return Err(fault(FaultKind::InvalidTransaction(reason))),
        }
        if block.header.timestamp != rep.header.timestamp || block.header.timestamp < prev_ts {
            return Err(fault(FaultKind::TimestampMismatch));
        }
        prev = Some((block.digest(), rep.digest(), block.header.timestamp));
    }
    if blocks.len() != reps.len() {
        return Err(ChainFault { round: blocks.len().min(reps.len()) as u64, kind: FaultKind::LengthMismatch });
    }
    Ok(())
}
