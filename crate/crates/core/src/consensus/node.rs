//! A node's protocol state machine.
//!
//! The machine is driven from outside: the caller starts each attempt,
//! delivers messages and fires timers, and carries out the returned
//! [`Action`]s on the network. Nodes never read the clock themselves.
//!
//! Flow of one attempt at height `h`:
//!
//! 1. every node derives the group and leader from its own chain and joins
//!    the attempt's group topic if it is a member;
//! 2. the leader announces itself, waits out the collection window, then
//!    sends COMMIT and its own VERIFY to the group;
//! 3. members check the proposal and send VERIFY to the group;
//! 4. once the leader's tally passes the quota it appends the block and sends
//!    BLOCK_FINAL with the certificate to everyone;
//! 5. other nodes append a BLOCK_FINAL that carries a valid certificate for
//!    their own view of the group.
//!
//! Processing is charged as simulated time: messages that follow block
//! packaging or verification leave after [`ProcessingCost::for_block`].

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversary::{byzantine_lead, vote_choice, Coalition, VoteChoice};
use crate::crypto::{Digest, KeyPair, PublicKey, SignatureVerifier};
use crate::ledger::{validate_transaction_with, ChainPair, RatingTransaction, TransactionPool};
use crate::netsim::Topic;
use crate::reputation::ReputationParams;

use super::{
    check_commit, elect, leader_propose, tally_votes, BlockFinal, CommitMessage, ConsensusGroup, LeaderAnnounce,
    RoundDecision, VerifyFault, VerifyMessage, WireMessage,
};

/// Topic every node subscribes to.
pub const ALL_TOPIC: &str = "all";

/// Timer tag that makes a leader propose.
pub const TIMER_PROPOSE: u64 = 1;

/// Margin under the quota at which the leader runs the exact tally.
const QUOTA_SLACK: f64 = 1e-9;

/// Topic of the group deciding (height, attempt).
pub fn group_topic(height: u64, attempt: u64) -> Topic {
    Topic::new(format!("group/{height}/{attempt}"))
}

#[derive(Clone, Debug)]
pub enum Behavior {
    Honest,
    /// Receives everything, sends nothing.
    Sleepy,
    Byzantine(Arc<Coalition>),
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::Sleepy => "sleepy",
            Behavior::Byzantine(_) => "byzantine",
        }
    }
}

/// Simulated cost of handling a block of `n` transactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessingCost {
    pub tx_validate_ms: u64,
    pub reputation_ms_per_rating: u64,
}

impl Default for ProcessingCost {
    fn default() -> Self {
        Self { tx_validate_ms: 12, reputation_ms_per_rating: 6 }
    }
}

impl ProcessingCost {
    pub fn for_block(&self, n: usize) -> u64 {
        n as u64 * (self.tx_validate_ms + self.reputation_ms_per_rating)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub params: ReputationParams,
    pub sim_seed: u64,
    pub cost: ProcessingCost,
    /// How long a leader collects transactions before packaging.
    pub collect_window_ms: u64,
}

#[derive(Clone, Debug)]
pub enum Action {
    Publish { at: u64, topic: Topic, message: WireMessage },
    Subscribe(Topic),
    Timer { at: u64, tag: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub txs_accepted: u64,
    pub txs_rejected: u64,
    pub votes_cast: u64,
    pub proposals_refused: u64,
    pub finals_applied: u64,
    pub finals_rejected: u64,
    pub forged_announcements: u64,
}

/// What a node knows about the current attempt.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub height: u64,
    pub attempt: u64,
    pub group: ConsensusGroup,
    pub leader: PublicKey,
    pub announced: Option<PublicKey>,
    /// The proposal this node sent or endorsed.
    pub proposal: Option<Arc<CommitMessage>>,
    /// Every distinct vote received or cast, in arrival order.
    pub votes: Vec<VerifyMessage>,
    /// The leader's tally once it passed the quota.
    pub decision: Option<RoundDecision>,
    pub refusal: Option<VerifyFault>,
    pub commit_sent_at: Option<u64>,
    pub quota_at: Option<u64>,
    pub finalized: bool,
    voted: bool,
    /// Block and list digests of `proposal`.
    digests: Option<(Digest, Digest)>,
    seen: BTreeSet<(PublicKey, Digest, Digest)>,
    /// Leader only: voters already counted and their summed weight, in
    /// arrival order.
    counted: BTreeSet<PublicKey>,
    running_weight: f64,
}

impl RoundState {
    /// Tally of the received votes for the held proposal.
    pub fn tally(&self, verifier: &dyn SignatureVerifier) -> Option<RoundDecision> {
        let (bd, ld) = self.digests?;
        Some(tally_votes(&self.group, &bd, &ld, &self.votes, verifier))
    }

    fn record(&mut self, vote: &VerifyMessage) -> bool {
        let fresh = self.seen.insert((vote.voter, vote.block_digest, vote.rep_list_digest));
        if fresh {
            self.votes.push(vote.clone());
        }
        fresh
    }

    fn hold(&mut self, proposal: Arc<CommitMessage>) {
        self.digests = Some((proposal.block_digest(), proposal.rep_list_digest()));
        self.proposal = Some(proposal);
    }
}

pub struct Node {
    keys: KeyPair,
    behavior: Behavior,
    chains: ChainPair,
    pool: TransactionPool,
    config: NodeConfig,
    verifier: Arc<dyn SignatureVerifier + Send + Sync>,
    round: Option<RoundState>,
    stats: NodeStats,
}

impl Node {
    pub fn new(
        keys: KeyPair,
        behavior: Behavior,
        genesis: ChainPair,
        config: NodeConfig,
        verifier: Arc<dyn SignatureVerifier + Send + Sync>,
    ) -> Self {
        Self {
            keys,
            behavior,
            chains: genesis,
            pool: TransactionPool::new(),
            config,
            verifier,
            round: None,
            stats: NodeStats::default(),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    pub fn chains(&self) -> &ChainPair {
        &self.chains
    }

    pub fn pool(&self) -> &TransactionPool {
        &self.pool
    }

    pub fn round_state(&self) -> Option<&RoundState> {
        self.round.as_ref()
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    fn sends(&self) -> bool {
        !matches!(self.behavior, Behavior::Sleepy)
    }

    /// Keeps an own rating in the pool and broadcasts it.
    pub fn submit(&mut self, tx: RatingTransaction, now: u64) -> Vec<Action> {
        if !self.sends() || tx.origin != self.keys.public || self.pool.insert(tx.clone()).is_err() {
            return Vec::new();
        }
        vec![Action::Publish { at: now, topic: Topic::new(ALL_TOPIC), message: WireMessage::Transaction(tx) }]
    }

    /// Starts attempt `attempt` at the node's next height.
    pub fn begin_attempt(&mut self, attempt: u64, now: u64) -> Vec<Action> {
        let Ok((group, leader)) = elect(&self.chains, self.config.sim_seed, attempt) else {
            self.round = None;
            return Vec::new();
        };
        let height = group.round;
        let topic = group_topic(height, attempt);
        let mut actions = Vec::new();
        let member = group.contains(&self.keys.public);
        if member {
            actions.push(Action::Subscribe(topic.clone()));
        }
        if leader == self.keys.public && self.sends() {
            let announce = LeaderAnnounce::sign(&self.keys, height, attempt);
            actions.push(Action::Publish { at: now, topic, message: WireMessage::LeaderAnnounce(announce) });
            actions.push(Action::Timer { at: now + self.config.collect_window_ms, tag: TIMER_PROPOSE });
        }
        self.round = Some(RoundState {
            height,
            attempt,
            group,
            leader,
            announced: None,
            proposal: None,
            votes: Vec::new(),
            decision: None,
            refusal: None,
            commit_sent_at: None,
            quota_at: None,
            finalized: false,
            voted: false,
            digests: None,
            seen: BTreeSet::new(),
            counted: BTreeSet::new(),
            running_weight: 0.0,
        });
        actions
    }

    pub fn on_timer(&mut self, tag: u64, now: u64) -> Vec<Action> {
        if tag == TIMER_PROPOSE {
            self.propose(now)
        } else {
            Vec::new()
        }
    }

    pub fn on_message(&mut self, now: u64, msg: &WireMessage) -> Vec<Action> {
        match msg {
            WireMessage::Transaction(tx) => {
                if tx.round == self.chains.next_round() && !self.pool.contains(tx) {
                    if validate_transaction_with(tx, self.verifier.as_ref()).is_ok() {
                        self.stats.txs_accepted += 1;
                        let _ = self.pool.insert(tx.clone());
                    } else {
                        self.stats.txs_rejected += 1;
                    }
                }
                Vec::new()
            }
            WireMessage::LeaderAnnounce(a) => {
                let verifier = self.verifier.clone();
                if let Some(rs) = self.round.as_mut() {
                    if a.round == rs.height && a.attempt == rs.attempt && a.signature_valid(verifier.as_ref()) {
                        if a.leader != rs.leader {
                            self.stats.forged_announcements += 1;
                        } else {
                            rs.announced = Some(a.leader);
                        }
                    }
                }
                Vec::new()
            }
            WireMessage::Commit(c) => self.on_commit(now, c),
            WireMessage::Verify(v) => self.on_verify(now, v),
            WireMessage::BlockFinal(f) => {
                self.on_final(f);
                Vec::new()
            }
        }
    }

    fn current(&self) -> Option<&RoundState> {
        self.round.as_ref().filter(|rs| rs.height == self.chains.next_round() && !rs.finalized)
    }

    fn propose(&mut self, now: u64) -> Vec<Action> {
        let Some(rs) = self.current() else { return Vec::new() };
        if rs.leader != self.keys.public || rs.proposal.is_some() || !self.sends() {
            return Vec::new();
        }
        let topic = group_topic(rs.height, rs.attempt);
        let pending = self.pool.for_round(rs.height).count();
        let send_at = now + self.config.cost.for_block(pending);
        let verifier = self.verifier.as_ref();
        let proposal = match &self.behavior {
            Behavior::Byzantine(c) => {
                byzantine_lead(c, &self.pool, &self.chains, &self.config.params, &self.keys, send_at, verifier)
            }
            _ => leader_propose(&self.pool, &self.chains, &self.config.params, &self.keys, send_at, verifier),
        };
        let Ok(proposal) = proposal else { return Vec::new() };
        let proposal = Arc::new(proposal);
        let own_vote = match &self.behavior {
            Behavior::Byzantine(c) if vote_choice(c, &self.keys.public) == VoteChoice::Withhold => None,
            _ => Some(VerifyMessage::for_commit(&self.keys, &proposal)),
        };
        let rs = self.round.as_mut().expect("checked above");
        rs.hold(proposal.clone());
        rs.commit_sent_at = Some(send_at);
        let mut actions =
            vec![Action::Publish { at: send_at, topic: topic.clone(), message: WireMessage::Commit(proposal) }];
        if let Some(v) = own_vote {
            rs.voted = true;
            self.stats.votes_cast += 1;
            actions.push(Action::Publish { at: send_at, topic, message: WireMessage::Verify(v.clone()) });
            actions.extend(self.on_verify(send_at, &v));
        }
        actions
    }

    fn on_commit(&mut self, now: u64, msg: &Arc<CommitMessage>) -> Vec<Action> {
        let Some(rs) = self.current() else { return Vec::new() };
        if msg.round() != rs.height || !rs.group.contains(&self.keys.public) || rs.voted || !self.sends() {
            return Vec::new();
        }
        let endorse = match &self.behavior {
            Behavior::Byzantine(c) => match vote_choice(c, &msg.leader) {
                VoteChoice::Endorse => Ok(()),
                VoteChoice::Withhold => return Vec::new(),
                VoteChoice::Honest => self.check(msg, rs),
            },
            _ => self.check(msg, rs),
        };
        let topic = group_topic(rs.height, rs.attempt);
        let rs = self.round.as_mut().expect("checked above");
        match endorse {
            Err(fault) => {
                rs.refusal = Some(fault);
                self.stats.proposals_refused += 1;
                Vec::new()
            }
            Ok(()) => {
                let vote = VerifyMessage::for_commit(&self.keys, msg);
                rs.voted = true;
                rs.hold(msg.clone());
                rs.record(&vote);
                self.stats.votes_cast += 1;
                let send_at = now + self.config.cost.for_block(msg.block.transactions.len());
                vec![Action::Publish { at: send_at, topic, message: WireMessage::Verify(vote) }]
            }
        }
    }

    fn check(&self, msg: &CommitMessage, rs: &RoundState) -> Result<(), VerifyFault> {
        check_commit(msg, &rs.leader, &self.chains, &self.config.params, self.verifier.as_ref())
    }

    fn on_verify(&mut self, now: u64, vote: &VerifyMessage) -> Vec<Action> {
        let me = self.keys.public;
        let verifier = self.verifier.clone();
        let Some(rs) = self.round.as_mut() else { return Vec::new() };
        if vote.round != rs.height || !rs.record(vote) || rs.leader != me || rs.finalized {
            return Vec::new();
        }
        let Some((bd, ld)) = rs.digests else { return Vec::new() };
        let Some(w) = rs.group.weight(&vote.voter) else { return Vec::new() };
        if vote.block_digest != bd
            || vote.rep_list_digest != ld
            || rs.counted.contains(&vote.voter)
            || !vote.signature_valid(verifier.as_ref())
        {
            return Vec::new();
        }
        rs.counted.insert(vote.voter);
        rs.running_weight += w;
        // The running sum only gates the exact tally, which sums in member order.
        if rs.running_weight + QUOTA_SLACK <= rs.group.quota {
            return Vec::new();
        }
        self.try_finalize(now)
    }

    /// Leader only: commit and disseminate once the quota is passed.
    fn try_finalize(&mut self, now: u64) -> Vec<Action> {
        if self.current().is_none() {
            return Vec::new();
        }
        let verifier = self.verifier.clone();
        let rs = self.round.as_mut().expect("checked above");
        let (Some(p), Some(d)) = (rs.proposal.clone(), rs.tally(verifier.as_ref())) else { return Vec::new() };
        if !d.value || rs.leader != self.keys.public {
            return Vec::new();
        }
        let (bd, ld) = rs.digests.expect("held with the proposal");
        let mut certificate: Vec<VerifyMessage> = rs
            .votes
            .iter()
            .filter(|v| d.voters.contains(&v.voter) && v.block_digest == bd && v.rep_list_digest == ld)
            .cloned()
            .collect();
        certificate.sort_by_key(|v| v.voter);
        certificate.dedup_by_key(|v| v.voter);
        rs.decision = Some(d);
        rs.quota_at = Some(now);
        rs.finalized = true;
        if self.chains.append_round(p.block.clone(), p.rep_block.clone()).is_err() {
            return Vec::new();
        }
        self.pool.prune_through(p.round());
        self.stats.finals_applied += 1;
        let fin = BlockFinal { commit: (*p).clone(), certificate };
        vec![Action::Publish { at: now, topic: Topic::new(ALL_TOPIC), message: WireMessage::BlockFinal(Arc::new(fin)) }]
    }

    /// Appends a finalized block vouched for by a certificate that passes the
    /// quota of this node's own view of the group.
    fn on_final(&mut self, fin: &BlockFinal) {
        let Some(rs) = self.current() else { return };
        let c = &fin.commit;
        if c.round() != rs.height {
            return;
        }
        let verifier = self.verifier.as_ref();
        let ok = c.leader == rs.leader
            && c.leader_signature_valid(verifier)
            && tally_votes(&rs.group, &c.block_digest(), &c.rep_list_digest(), &fin.certificate, verifier).value;
        if !ok || self.chains.append_round(c.block.clone(), c.rep_block.clone()).is_err() {
            self.stats.finals_rejected += 1;
            return;
        }
        self.pool.prune_through(c.round());
        self.stats.finals_applied += 1;
        if let Some(rs) = self.round.as_mut() {
            rs.finalized = true;
        }
    }
}
