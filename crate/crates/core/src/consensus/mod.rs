//! One round of agreement: pick the group, pick a leader, propose, verify, tally.
//!
//! The group for round `k` is the shortest prefix of nodes, ordered by
//! reputation at `k - 1` (descending, then by key bytes), whose summed
//! reputation is strictly more than half the network total. Each member's
//! vote weighs its reputation, and a proposal commits once the weight of
//! distinct valid votes is strictly greater than two thirds of the group
//! weight.

mod messages;
pub mod node;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crypto::{Digest, Hasher, KeyPair, PublicKey, SignatureVerifier};
use crate::ledger::{package_block_with, Block, BlockFault, ChainPair, ReputationBlock, TransactionPool, TxRejection};
use crate::reputation::{next_reputation, ReputationError, ReputationList, ReputationParams};

pub use messages::{
    BlockFinal, CommitMessage, LeaderAnnounce, VerifyMessage, WireMessage, ANNOUNCE_SIGNING_TAG, LEADER_SIGNING_TAG,
    VOTE_SIGNING_TAG,
};

/// Members recompute the reputation list and accept it within this distance.
pub const REPUTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConsensusError {
    #[error("reputation list is empty")]
    EmptyReputation,
    #[error("total reputation is zero; no group can be formed")]
    ZeroReputation,
    #[error("consensus group is empty")]
    EmptyGroup,
    #[error(transparent)]
    Reputation(#[from] ReputationError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsensusGroup {
    /// The round this group decides.
    pub round: u64,
    /// In selection order: reputation descending, key ascending.
    pub members: Vec<PublicKey>,
    pub weights: BTreeMap<PublicKey, f64>,
    pub quota: f64,
}

impl ConsensusGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: &PublicKey) -> bool {
        self.weights.contains_key(node)
    }

    pub fn weight(&self, node: &PublicKey) -> Option<f64> {
        self.weights.get(node).copied()
    }

    /// Summed in member order.
    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|m| self.weights[m]).sum()
    }

    /// Share of the group weight held by `nodes`.
    pub fn weight_fraction<'a>(&self, nodes: impl IntoIterator<Item = &'a PublicKey>) -> f64 {
        let set: BTreeSet<_> = nodes.into_iter().collect();
        let held: f64 = self.members.iter().filter(|m| set.contains(m)).map(|m| self.weights[m]).sum();
        held / self.total_weight()
    }
}

/// Forms the group for round `reputation.round() + 1`.
pub fn select_group(reputation: &ReputationList) -> Result<ConsensusGroup, ConsensusError> {
    if reputation.is_empty() {
        return Err(ConsensusError::EmptyReputation);
    }
    let total = reputation.total();
    if total.is_nan() || total <= 0.0 {
        return Err(ConsensusError::ZeroReputation);
    }
    let mut ranked: Vec<(PublicKey, f64)> = reputation.iter().map(|(k, v)| (*k, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut members = Vec::new();
    let mut weights = BTreeMap::new();
    let mut cumulative = 0.0;
    for (pk, w) in ranked {
        members.push(pk);
        weights.insert(pk, w);
        cumulative += w;
        if 2.0 * cumulative > total {
            break;
        }
    }
    Ok(ConsensusGroup { round: reputation.round() + 1, members, weights, quota: 2.0 / 3.0 * cumulative })
}

/// Uniform choice among the members.
pub fn select_leader<R: Rng + ?Sized>(group: &ConsensusGroup, rng: &mut R) -> Result<PublicKey, ConsensusError> {
    if group.is_empty() {
        return Err(ConsensusError::EmptyGroup);
    }
    Ok(group.members[rng.gen_range(0..group.members.len())])
}

/// The common coin every node derives for one (round, attempt).
///
/// Mixing in the digest of the previous reputation block means the leader
/// of round `k + 1` cannot be known before round `k` commits.
pub fn leader_rng(sim_seed: u64, round: u64, prev_rep_digest: &Digest, attempt: u64) -> ChaCha8Rng {
    let mut h = Hasher::new();
    h.update(b"por/leader");
    h.update(&sim_seed.to_be_bytes());
    h.update(&round.to_be_bytes());
    h.update(prev_rep_digest.as_bytes());
    h.update(&attempt.to_be_bytes());
    ChaCha8Rng::from_seed(*h.finish().as_bytes())
}

/// Group and leader for the next round on top of `chains`.
pub fn elect(chains: &ChainPair, sim_seed: u64, attempt: u64) -> Result<(ConsensusGroup, PublicKey), ConsensusError> {
    let group = select_group(chains.reputation())?;
    let mut rng = leader_rng(sim_seed, group.round, &chains.head_reputation_block().digest(), attempt);
    let leader = select_leader(&group, &mut rng)?;
    Ok((group, leader))
}

/// The group's decision on one proposal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundDecision {
    pub value: bool,
    pub accumulated_weight: f64,
    pub voters: BTreeSet<PublicKey>,
}

/// Sums the weight of distinct valid votes for the given proposal.
///
/// A vote counts if its signature verifies, the voter is a member, and it
/// names this round and exactly these digests. The decision is positive
/// when the sum is strictly greater than the quota.
pub fn tally_votes<'a>(
    group: &ConsensusGroup,
    block_digest: &Digest,
    rep_list_digest: &Digest,
    votes: impl IntoIterator<Item = &'a VerifyMessage>,
    verifier: &dyn SignatureVerifier,
) -> RoundDecision {
    let mut voters = BTreeSet::new();
    for v in votes {
        if voters.contains(&v.voter)
            || !group.contains(&v.voter)
            || v.round != group.round
            || v.block_digest != *block_digest
            || v.rep_list_digest != *rep_list_digest
            || !v.signature_valid(verifier)
        {
            continue;
        }
        voters.insert(v.voter);
    }
    let accumulated_weight: f64 = group.members.iter().filter(|m| voters.contains(m)).map(|m| group.weights[m]).sum();
    RoundDecision { value: accumulated_weight > group.quota, accumulated_weight, voters }
}

/// Packages the pool for the next round, runs the reputation engine over the
/// block and signs the result.
pub fn leader_propose(
    pool: &TransactionPool,
    chains: &ChainPair,
    params: &ReputationParams,
    keys: &KeyPair,
    now: u64,
    verifier: &dyn SignatureVerifier,
) -> Result<CommitMessage, ConsensusError> {
    let (tx_head, _) = chains.head_digests();
    let block = package_block_with(pool, chains.next_round(), tx_head, now, verifier).block;
    let ratings: Vec<_> = block.transactions.iter().map(|t| t.as_rating()).collect();
    let list = next_reputation(chains.reputation(), &ratings, params)?;
    Ok(assemble_commit(block, list, chains, keys))
}

/// Wraps an arbitrary block and list as a signed proposal on top of `chains`.
pub fn assemble_commit(block: Block, list: ReputationList, chains: &ChainPair, keys: &KeyPair) -> CommitMessage {
    let rep_block = ReputationBlock::assemble(chains.head_reputation_block().digest(), block.header.timestamp, list);
    let block_hash_sig =
        keys.sign(&CommitMessage::signing_payload(&block.digest())).expect("signing payload is non-empty");
    CommitMessage { block: Arc::new(block), rep_block: Arc::new(rep_block), leader: keys.public, block_hash_sig }
}

/// Why a member declines to vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifyFault {
    WrongLeader,
    BadLeaderSignature,
    /// Wrong round, broken link, body hash, order or timestamps.
    Structure,
    InvalidTransaction {
        index: usize,
        reason: TxRejection,
    },
    /// Recomputed list differs in node set or by more than the tolerance.
    ReputationMismatch,
}

/// The checks a member runs on a proposal, in order: leader identity,
/// leader signature, fit with the local chain, every transaction, and the
/// reputation list against a local recomputation.
pub fn check_commit(
    msg: &CommitMessage,
    expected_leader: &PublicKey,
    chains: &ChainPair,
    params: &ReputationParams,
    verifier: &dyn SignatureVerifier,
) -> Result<(), VerifyFault> {
    if msg.leader != *expected_leader {
        return Err(VerifyFault::WrongLeader);
    }
    if !msg.leader_signature_valid(verifier) {
        return Err(VerifyFault::BadLeaderSignature);
    }
    let (block, rep) = (&msg.block, &msg.rep_block);
    let round = chains.next_round();
    let (tx_head, rep_head) = chains.head_digests();
    if block.header.round != round
        || rep.header.round != round
        || block.header.previous_hash != tx_head
        || rep.header.previous_hash != rep_head
        || block.header.timestamp != rep.header.timestamp
        || block.header.timestamp < chains.head_block().header.timestamp
        || rep.check_body().is_err()
    {
        return Err(VerifyFault::Structure);
    }
    match block.validate(verifier) {
        Ok(()) => {}
        Err(BlockFault::Body(_)) => return Err(VerifyFault::Structure),
        Err(BlockFault::Transaction { index, reason }) => {
            return Err(VerifyFault::InvalidTransaction { index, reason })
        }
    }
    let ratings: Vec<_> = block.transactions.iter().map(|t| t.as_rating()).collect();
    let expected =
        next_reputation(chains.reputation(), &ratings, params).map_err(|_| VerifyFault::ReputationMismatch)?;
    if !expected.approx_eq(&rep.reputation_list, REPUTATION_TOLERANCE) {
        return Err(VerifyFault::ReputationMismatch);
    }
    Ok(())
}

/// A signed vote if every check of [`check_commit`] passes, nothing otherwise.
pub fn member_verify(
    msg: &CommitMessage,
    expected_leader: &PublicKey,
    chains: &ChainPair,
    params: &ReputationParams,
    keys: &KeyPair,
    verifier: &dyn SignatureVerifier,
) -> Option<VerifyMessage> {
    check_commit(msg, expected_leader, chains, params, verifier).ok().map(|()| VerifyMessage::for_commit(keys, msg))
}
