//! Faulty behaviour: Byzantine strategies, sleepy nodes, eclipse, and the
//! offline safety audit.
//!
//! Byzantine nodes share one [`Coalition`] value, which stands for an
//! adversary that coordinates them instantly. No strategy takes compute
//! power as an input, because nothing in the protocol rewards it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consensus::{assemble_commit, leader_propose, CommitMessage, ConsensusError};
use crate::crypto::{KeyPair, PublicKey, Signature, SignatureVerifier};
use crate::ledger::{
    create_transaction, package_block_with, validate_chain_with, Block, ChainPair, LedgerError, RatingTransaction,
    TransactionPool,
};
use crate::netsim::{LinkOverride, NetworkConfig};
use crate::reputation::{next_reputation, ReputationParams};

/// Rating a Byzantine node gives to its own coalition.
pub const COALITION_RATING: f64 = 0.99;
/// Rating a Byzantine node gives to everyone else.
pub const HONEST_TARGET_RATING: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    UnfairRating,
    ForgeBlock,
    InflateReputation,
    WithholdVotes,
    Eclipse,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::UnfairRating,
        Strategy::ForgeBlock,
        Strategy::InflateReputation,
        Strategy::WithholdVotes,
        Strategy::Eclipse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::UnfairRating => "UNFAIR_RATING",
            Strategy::ForgeBlock => "FORGE_BLOCK",
            Strategy::InflateReputation => "INFLATE_REPUTATION",
            Strategy::WithholdVotes => "WITHHOLD_VOTES",
            Strategy::Eclipse => "ECLIPSE",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown strategy `{0}`")]
pub struct UnknownStrategy(String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    /// Accepts `FORGE_BLOCK`, `forge_block` and `forge-block`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Strategy::ALL.into_iter().find(|st| st.name() == norm).ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// The faulty set of one run, fixed at configuration time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub byzantine: BTreeSet<PublicKey>,
    pub sleepy: BTreeSet<PublicKey>,
    pub strategy: Strategy,
    /// Only used by [`Strategy::Eclipse`].
    pub eclipse_victims: Vec<PublicKey>,
    pub coordination: bool,
}

impl AdversaryConfig {
    /// `f`, the number of faulty nodes of either kind.
    pub fn faulty(&self) -> usize {
        self.byzantine.len() + self.sleepy.len()
    }

    /// True when `3f + 1 > n`. Such runs are allowed and flagged.
    pub fn bound_violated(&self, n: usize) -> bool {
        3 * self.faulty() + 1 > n
    }

    pub fn coalition(&self) -> Coalition {
        Coalition { members: self.byzantine.clone(), strategy: self.strategy, coordination: self.coordination }
    }
}

/// State shared by every Byzantine node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coalition {
    pub members: BTreeSet<PublicKey>,
    pub strategy: Strategy,
    pub coordination: bool,
}

impl Coalition {
    pub fn contains(&self, node: &PublicKey) -> bool {
        self.members.contains(node)
    }
}

/// Rating a Byzantine node gives `target`.
pub fn unfair_rating_value(target: &PublicKey, coalition: &Coalition) -> f64 {
    if coalition.contains(target) {
        COALITION_RATING
    } else {
        HONEST_TARGET_RATING
    }
}

/// Signed ratings from `keys` to every target except itself.
pub fn byzantine_rate<'a>(
    keys: &KeyPair,
    coalition: &Coalition,
    targets: impl IntoIterator<Item = &'a PublicKey>,
    round: u64,
) -> Result<Vec<RatingTransaction>, LedgerError> {
    targets
        .into_iter()
        .filter(|t| **t != keys.public)
        .map(|t| create_transaction(keys, *t, unfair_rating_value(t, coalition), round))
        .collect()
}

/// How a Byzantine member answers a proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteChoice {
    /// Sign without checking.
    Endorse,
    Withhold,
    /// Run the honest checks.
    Honest,
}

pub fn vote_choice(coalition: &Coalition, proposer: &PublicKey) -> VoteChoice {
    if coalition.strategy == Strategy::WithholdVotes {
        VoteChoice::Withhold
    } else if coalition.coordination {
        if coalition.contains(proposer) {
            VoteChoice::Endorse
        } else {
            VoteChoice::Withhold
        }
    } else {
        VoteChoice::Honest
    }
}

/// Proposal of a Byzantine leader.
///
/// `FORGE_BLOCK` adds an unsigned rating that claims to come from an honest
/// node, and computes the reputation list honestly over the doctored block.
/// `INFLATE_REPUTATION` packages honestly, then raises its own entry to the
/// largest reachable value and halves every honest entry. Other strategies
/// lead honestly.
#[allow(clippy::too_many_arguments)]
pub fn byzantine_lead(
    coalition: &Coalition,
    pool: &TransactionPool,
    chains: &ChainPair,
    params: &ReputationParams,
    keys: &KeyPair,
    now: u64,
    verifier: &dyn SignatureVerifier,
) -> Result<CommitMessage, ConsensusError> {
    let round = chains.next_round();
    let (tx_head, _) = chains.head_digests();
    match coalition.strategy {
        Strategy::ForgeBlock => {
            let honest = package_block_with(pool, round, tx_head, now, verifier).block;
            let victim = chains.reputation().nodes().find(|n| !coalition.contains(n) && **n != keys.public).copied();
            let Some(victim) = victim else {
                return leader_propose(pool, chains, params, keys, now, verifier);
            };
            let mut txs: Vec<_> = honest
                .transactions
                .into_iter()
                .filter(|t| !(t.origin == victim && t.recipient == keys.public))
                .collect();
            txs.push(RatingTransaction {
                origin: victim,
                recipient: keys.public,
                rating: COALITION_RATING,
                round,
                signature: Signature::from_bytes(Vec::new()),
            });
            let block = Block::assemble(round, tx_head, now, txs);
            let ratings: Vec<_> = block.transactions.iter().map(|t| t.as_rating()).collect();
            let list = next_reputation(chains.reputation(), &ratings, params)?;
            Ok(assemble_commit(block, list, chains, keys))
        }
        Strategy::InflateReputation => {
            let block = package_block_with(pool, round, tx_head, now, verifier).block;
            let ratings: Vec<_> = block.transactions.iter().map(|t| t.as_rating()).collect();
            let mut list = next_reputation(chains.reputation(), &ratings, params)?;
            let peak = if params.apply_clamp { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            let honest: Vec<_> = list.nodes().filter(|n| !coalition.contains(n)).copied().collect();
            for n in honest {
                let v = list.get(&n).unwrap_or(0.0);
                list.set(n, v * 0.5);
            }
            list.set(keys.public, peak);
            Ok(assemble_commit(block, list, chains, keys))
        }
        _ => leader_propose(pool, chains, params, keys, now, verifier),
    }
}

/// Cuts every link to and from `victim` except those with coalition members.
///
/// Disables the synchrony check, since dropped links break the delay bound.
pub fn eclipse<'a>(
    victim: &PublicKey,
    coalition: &BTreeSet<PublicKey>,
    nodes: impl IntoIterator<Item = &'a PublicKey>,
    mut config: NetworkConfig,
) -> NetworkConfig {
    let cut = LinkOverride { delay_ms: None, drop_probability: Some(1.0) };
    for n in nodes {
        if n == victim || coalition.contains(n) {
            continue;
        }
        config.per_link_overrides.insert((*victim, *n), cut);
        config.per_link_overrides.insert((*n, *victim), cut);
    }
    config.synchrony = false;
    config
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    ForgedBlock,
    Fork,
    ReputationTampered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    /// Caller-supplied node label.
    pub node: usize,
    pub round: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyDetails {
    /// Committed rounds per audited node, genesis excluded.
    pub committed_rounds: BTreeMap<usize, u64>,
    pub findings: Vec<Finding>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub forged_block_committed: bool,
    pub honest_fork_detected: bool,
    pub reputation_tampered: bool,
    pub details: SafetyDetails,
}

impl SafetyVerdict {
    pub fn is_safe(&self) -> bool {
        !(self.forged_block_committed || self.honest_fork_detected || self.reputation_tampered)
    }
}

/// Audits the chains held by honest nodes, each labelled by the caller.
///
/// Each distinct chain is fully validated and its reputation history is
/// recomputed from genesis; then every chain is compared with the longest.
pub fn audit_safety(
    chains: &[(usize, &ChainPair)],
    params: &ReputationParams,
    verifier: &dyn SignatureVerifier,
) -> SafetyVerdict {
    let mut verdict = SafetyVerdict::default();
    let mut seen = BTreeSet::new();
    for &(node, chain) in chains {
        verdict.details.committed_rounds.insert(node, chain.len().saturating_sub(1) as u64);
        if chain.is_empty() || !seen.insert((chain.len(), chain.head_digests())) {
            continue;
        }
        if let Err(fault) = validate_chain_with(chain, verifier) {
            verdict.forged_block_committed = true;
            verdict.details.findings.push(Finding {
                kind: FindingKind::ForgedBlock,
                node,
                round: fault.round,
                detail: fault.kind.to_string(),
            });
        }
        if let Some((round, detail)) = reputation_mismatch(chain, params) {
            verdict.reputation_tampered = true;
            verdict.details.findings.push(Finding { kind: FindingKind::ReputationTampered, node, round, detail });
        }
    }
    if let Some(&(_, longest)) = chains.iter().max_by_key(|(_, c)| c.len()) {
        for &(node, chain) in chains {
            if let Some(round) = chain.first_divergence(longest) {
                verdict.honest_fork_detected = true;
                verdict.details.findings.push(Finding {
                    kind: FindingKind::Fork,
                    node,
                    round,
                    detail: "diverges from the longest honest chain".into(),
                });
            }
        }
    }
    verdict
}

/// First round whose stored list differs from a recomputation.
pub fn reputation_mismatch(chain: &ChainPair, params: &ReputationParams) -> Option<(u64, String)> {
    let reps = chain.reputation_blocks();
    let genesis = &reps.first()?.reputation_list;
    if genesis.iter().any(|(_, v)| *v != params.initial_reputation) {
        return Some((0, "genesis list is not uniform at the initial reputation".into()));
    }
    for (k, block) in chain.blocks().iter().enumerate().skip(1) {
        let Some(stored) = reps.get(k) else { break };
        let ratings: Vec<_> = block.transactions.iter().map(|t| t.as_rating()).collect();
        match next_reputation(&reps[k - 1].reputation_list, &ratings, params) {
            Ok(expected) => match expected.max_abs_diff(&stored.reputation_list) {
                Some(d) if d <= crate::consensus::REPUTATION_TOLERANCE => {}
                Some(d) => return Some((k as u64, format!("max deviation {d:e}"))),
                None => return Some((k as u64, "node sets differ".into())),
            },
            Err(e) => return Some((k as u64, e.to_string())),
        }
    }
    None
}
