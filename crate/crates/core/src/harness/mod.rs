//! Experiment driver: builds the nodes, feeds them a rating workload, runs
//! consensus attempts over the simulated network and reports.
//!
//! Each of the configured `rounds` is one attempt. An attempt runs until the
//! network is quiet. If nothing was committed, the clock is moved to the
//! attempt deadline and the next attempt retries the same height with a new
//! leader; pending ratings stay in the pools.

mod sweep;
mod workload;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{audit_safety, eclipse, AdversaryConfig, Coalition, SafetyVerdict, Strategy};
use crate::consensus::node::{Action, Behavior, Node, NodeConfig, NodeStats, ProcessingCost, ALL_TOPIC};
use crate::consensus::{elect, WireMessage};
use crate::crypto::{generate_keypair, hash, CachingVerifier, Digest, KeyPair, PublicKey};
use crate::ledger::ChainPair;
use crate::netsim::{NetError, NetStats, Network, NetworkConfig, Step, Topic};
use crate::reputation::{ReputationError, ReputationParams};

pub use sweep::{sweep, AggregateRow, RoundRow, SweepParam, SweepPoint};
pub use workload::{generate_workload, sample_pairs, ProfileMode, RatingProfile, Role, Roster};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Reputation(#[from] ReputationError),
}

/// Faulty nodes by count; indices refer to genesis key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarySetup {
    pub strategy: Strategy,
    /// Byzantine nodes are the first `byzantine` nodes in key order.
    pub byzantine: usize,
    /// Sleepy nodes follow the Byzantine ones.
    pub sleepy: usize,
    pub eclipse: Vec<usize>,
    pub coordination: bool,
}

impl Default for AdversarySetup {
    fn default() -> Self {
        Self { strategy: Strategy::WithholdVotes, byzantine: 0, sleepy: 0, eclipse: Vec::new(), coordination: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_nodes: usize,
    pub rounds: usize,
    pub txs_per_round: usize,
    pub alpha: f64,
    pub initial_reputation: f64,
    pub rtt_ms: u64,
    pub delta_ms: u64,
    pub seed: u64,
    pub adversary: Option<AdversarySetup>,
    pub clamp_enabled: bool,
    pub profile: RatingProfile,
    /// The last `favored` nodes in key order get the favored rating range.
    pub favored: usize,
    pub cost: ProcessingCost,
    pub jitter: bool,
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    /// Keep the text event trace.
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_nodes: 50,
            rounds: 30,
            txs_per_round: 100,
            alpha: 0.6,
            initial_reputation: 0.2,
            rtt_ms: 200,
            delta_ms: 150,
            seed: 1,
            adversary: None,
            clamp_enabled: true,
            profile: RatingProfile::default(),
            favored: 0,
            cost: ProcessingCost::default(),
            jitter: true,
            drop_probability: 0.0,
            duplicate_probability: 0.0,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn params(&self) -> ReputationParams {
        ReputationParams {
            alpha: self.alpha,
            initial_reputation: self.initial_reputation,
            apply_clamp: self.clamp_enabled,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.num_nodes == 0 {
            return bad("num_nodes must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        let pairs = self.num_nodes * (self.num_nodes - 1);
        if self.txs_per_round > pairs {
            return bad(format!("txs_per_round {} exceeds the {pairs} possible pairs", self.txs_per_round));
        }
        self.params().validate()?;
        self.profile.validate()?;
        let faulty = self.adversary.as_ref().map_or(0, |a| a.byzantine + a.sleepy);
        if faulty + self.favored > self.num_nodes {
            return bad(format!("{faulty} faulty and {} favored nodes exceed {} nodes", self.favored, self.num_nodes));
        }
        if let Some(a) = &self.adversary {
            if let Some(v) = a.eclipse.iter().find(|v| **v >= self.num_nodes) {
                return bad(format!("eclipse victim {v} out of range"));
            }
            if !a.eclipse.is_empty() && a.strategy != Strategy::Eclipse {
                return bad("eclipse victims require the ECLIPSE strategy".into());
            }
        }
        self.network_config(0).validate()?;
        Ok(())
    }

    fn network_config(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            delta_ms: self.delta_ms,
            rtt_ms: self.rtt_ms,
            drop_probability: self.drop_probability,
            duplicate_probability: self.duplicate_probability,
            jitter: self.jitter,
            synchrony: true,
            per_link_overrides: BTreeMap::new(),
            seed,
        }
    }

    /// Time charged to an attempt that commits nothing.
    pub fn attempt_timeout_ms(&self, pending: usize) -> u64 {
        self.delta_ms + 1 + 2 * self.cost.for_block(pending) + 4 * self.delta_ms + 100
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent sub-seed for one purpose of a run.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    splitmix64(seed ^ splitmix64(domain))
}

const DOMAIN_NET: u64 = 1 << 40;
const DOMAIN_WORKLOAD: u64 = 2 << 40;
const DOMAIN_KEYS: u64 = 3 << 40;

/// Key pairs for `n` nodes, sorted by public key.
pub fn node_keys(seed: u64, n: usize) -> Result<Vec<KeyPair>, ConfigError> {
    let mut keys: Vec<_> = (0..n as u64).map(|i| generate_keypair(derive_seed(seed, DOMAIN_KEYS + i))).collect();
    keys.sort_by_key(|k| k.public);
    if keys.windows(2).any(|w| w[0].public == w[1].public) {
        return Err(ConfigError::Invalid("public key collision".into()));
    }
    Ok(keys)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based attempt slot.
    pub round: usize,
    /// Chain height the attempt tried to fill.
    pub height: u64,
    pub attempt: u64,
    pub committed: bool,
    pub tx_count: usize,
    pub block_time_ms: Option<u64>,
    pub consensus_time_ms: Option<u64>,
    pub group_size: usize,
    pub leader: PublicKey,
    pub leader_role: Role,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Share of the group weight held by Byzantine members.
    pub byzantine_group_weight_fraction: f64,
    pub votes_refused: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub num_nodes: usize,
    pub faulty: usize,
    /// `3f + 1 > N`.
    pub global_bound_violated: bool,
    pub max_byzantine_group_weight_fraction: f64,
    /// Some attempt had Byzantine group weight of at least one third.
    pub group_bound_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub rounds: Vec<RoundMetrics>,
    pub committed_rounds: usize,
    pub total_committed_txs: u64,
    pub total_simulated_ms: u64,
    pub throughput_tps: f64,
    pub avg_block_time_ms: Option<f64>,
    pub avg_consensus_time_ms: Option<f64>,
    /// Hex key to value, from the longest honest chain.
    pub final_reputation: BTreeMap<String, f64>,
    pub safety: SafetyVerdict,
    pub bounds: BoundReport,
    pub network: NetStats,
    pub trace_digest: Digest,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run produces.
pub struct RunOutput {
    pub report: RunReport,
    pub roster: Roster,
    /// Final chains, indexed like the roster.
    pub chains: Vec<ChainPair>,
    pub node_stats: Vec<NodeStats>,
    pub trace_lines: Option<Vec<String>>,
}

impl RunOutput {
    /// The longest chain held by an honest node.
    pub fn reference_chain(&self) -> &ChainPair {
        &self.chains[reference_index(&self.roster.roles, self.chains.iter())]
    }
}

fn reference_index<'a>(roles: &[Role], chains: impl Iterator<Item = &'a ChainPair>) -> usize {
    let mut best: Option<(bool, usize, usize)> = None;
    for (i, c) in chains.enumerate() {
        let key = (roles[i].is_honest(), c.len(), usize::MAX - i);
        if best.is_none_or(|b| key > b) {
            best = Some(key);
        }
    }
    usize::MAX - best.expect("at least one node").2
}

struct Sim {
    nodes: Vec<Node>,
    net: Network,
    index: HashMap<PublicKey, usize>,
    decoded: HashMap<Digest, Arc<WireMessage>>,
}

impl Sim {
    fn execute(&mut self, from: usize, actions: Vec<Action>) {
        let pk = self.nodes[from].public_key();
        for action in actions {
            match action {
                Action::Publish { at, topic, message } => {
                    let payload = message.to_payload();
                    let kind = message.kind();
                    self.decoded.entry(hash(&payload)).or_insert_with(|| Arc::new(message));
                    self.net.publish_at(at, pk, &topic, kind, payload).expect("nodes publish only on live topics");
                }
                Action::Subscribe(topic) => self.net.subscribe(pk, &topic).expect("node is registered"),
                Action::Timer { at, tag } => self.net.schedule_timer(pk, at, tag),
            }
        }
    }

    fn run_until_quiet(&mut self) {
        loop {
            match self.net.step() {
                Step::Quiescent => break,
                Step::Timer { node, tag, at } => {
                    let i = self.index[&node];
                    let actions = self.nodes[i].on_timer(tag, at);
                    self.execute(i, actions);
                }
                Step::Deliver(env) => {
                    let msg = match self.decoded.get(&env.payload_digest) {
                        Some(m) => m.clone(),
                        None => match WireMessage::from_payload(env.kind, &env.payload) {
                            Ok(m) => Arc::new(m),
                            Err(_) => continue,
                        },
                    };
                    let i = self.index[&env.to];
                    let actions = self.nodes[i].on_message(env.deliver_time, &msg);
                    self.execute(i, actions);
                }
            }
        }
    }

    fn reference(&self, roles: &[Role]) -> usize {
        reference_index(roles, self.nodes.iter().map(|n| n.chains()))
    }
}

fn resolve_adversary(config: &SimConfig, roster_keys: &[KeyPair]) -> (Vec<Role>, Option<AdversaryConfig>) {
    let n = config.num_nodes;
    let mut roles = vec![Role::Honest; n];
    for r in roles.iter_mut().skip(n - config.favored) {
        *r = Role::Favored;
    }
    let Some(a) = &config.adversary else { return (roles, None) };
    for r in roles.iter_mut().take(a.byzantine) {
        *r = Role::Byzantine;
    }
    for r in roles.iter_mut().skip(a.byzantine).take(a.sleepy) {
        *r = Role::Sleepy;
    }
    let pick =
        |role: Role| roster_keys.iter().zip(&roles).filter(|(_, r)| **r == role).map(|(k, _)| k.public).collect();
    let adv = AdversaryConfig {
        byzantine: pick(Role::Byzantine),
        sleepy: pick(Role::Sleepy),
        strategy: a.strategy,
        eclipse_victims: a.eclipse.iter().map(|i| roster_keys[*i].public).collect(),
        coordination: a.coordination,
    };
    (roles, Some(adv))
}

/// Runs one simulation end to end. Deterministic in `config`.
pub fn run_simulation(config: &SimConfig) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    let n = config.num_nodes;
    let params = config.params();
    let keys = node_keys(config.seed, n)?;
    let (roles, adversary) = resolve_adversary(config, &keys);
    let coalition: Option<Coalition> = adversary.as_ref().filter(|a| !a.byzantine.is_empty()).map(|a| a.coalition());
    let shared_coalition = coalition.clone().map(Arc::new);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DOMAIN_WORKLOAD));
    let roster = Roster::new(keys, roles.clone(), coalition.clone(), config.profile, &mut rng);
    let pks: Vec<PublicKey> = roster.keys.iter().map(|k| k.public).collect();

    let mut net_cfg = config.network_config(derive_seed(config.seed, DOMAIN_NET));
    if let Some(a) = &adversary {
        for victim in &a.eclipse_victims {
            net_cfg = eclipse(victim, &a.byzantine, &pks, net_cfg);
        }
    }
    let mut net = Network::new(net_cfg)?;
    if config.trace {
        net.enable_trace_lines();
    }
    let all = Topic::new(ALL_TOPIC);
    for pk in &pks {
        net.register(*pk);
        net.subscribe(*pk, &all)?;
    }

    let verifier = Arc::new(CachingVerifier::new());
    let genesis = ChainPair::genesis(&pks, config.initial_reputation);
    let node_cfg =
        NodeConfig { params, sim_seed: config.seed, cost: config.cost, collect_window_ms: config.delta_ms + 1 };
    let nodes = roster
        .keys
        .iter()
        .zip(&roles)
        .map(|(k, role)| {
            let behavior = match role {
                Role::Byzantine => Behavior::Byzantine(shared_coalition.clone().expect("coalition exists")),
                Role::Sleepy => Behavior::Sleepy,
                _ => Behavior::Honest,
            };
            Node::new(k.clone(), behavior, genesis.clone(), node_cfg, verifier.clone())
        })
        .collect();
    let index = pks.iter().enumerate().map(|(i, pk)| (*pk, i)).collect();
    let mut sim = Sim { nodes, net, index, decoded: HashMap::new() };

    let mut metrics = Vec::with_capacity(config.rounds);
    let mut attempt = 0u64;
    let mut workload_height = 0u64;
    let mut pending = 0usize;
    for slot in 1..=config.rounds {
        let t0 = sim.net.now();
        let reference = sim.reference(&roles);
        let before = sim.nodes[reference].chains().clone();
        let height = before.next_round();
        if height != workload_height {
            workload_height = height;
            attempt = 0;
            let txs = generate_workload(&roster, config.txs_per_round, height, &mut rng)?;
            pending = txs.len();
            for tx in txs {
                let origin = sim.index[&tx.origin];
                let actions = sim.nodes[origin].submit(tx, t0);
                sim.execute(origin, actions);
            }
        } else {
            attempt += 1;
        }
        for i in 0..n {
            let actions = sim.nodes[i].begin_attempt(attempt, t0);
            sim.execute(i, actions);
        }
        sim.run_until_quiet();
        sim.decoded.clear();

        let (group, leader) = elect(&before, config.seed, attempt).expect("genesis reputation is positive");
        let leader_node = &sim.nodes[sim.index[&leader]];
        let after = sim.nodes[sim.reference(&roles)].chains();
        let committed = after.len() > before.len();
        let tx_count = if committed { after.blocks()[height as usize].transactions.len() } else { 0 };
        let timing = leader_node.round_state().filter(|rs| rs.height == height && rs.attempt == attempt);
        let quota_at = timing.and_then(|rs| rs.quota_at).filter(|_| committed);
        let block_time_ms = quota_at.map(|q| q - t0);
        let consensus_time_ms = quota_at.zip(timing.and_then(|rs| rs.commit_sent_at)).map(|(q, c)| q - c);
        let votes_refused = sim
            .nodes
            .iter()
            .filter_map(|nd| nd.round_state())
            .filter(|rs| rs.height == height && rs.attempt == attempt && rs.refusal.is_some())
            .count() as u64;
        let byz_fraction = coalition.as_ref().map_or(0.0, |c| group.weight_fraction(&c.members));
        if !committed {
            sim.net.advance_to(t0 + config.attempt_timeout_ms(pending));
        }
        metrics.push(RoundMetrics {
            round: slot,
            height,
            attempt,
            committed,
            tx_count,
            block_time_ms,
            consensus_time_ms,
            group_size: group.len(),
            leader,
            leader_role: roles[sim.index[&leader]],
            start_ms: t0,
            end_ms: sim.net.now(),
            byzantine_group_weight_fraction: byz_fraction,
            votes_refused,
        });
    }

    let chains: Vec<ChainPair> = sim.nodes.iter().map(|nd| nd.chains().clone()).collect();
    let honest: Vec<(usize, &ChainPair)> = chains.iter().enumerate().filter(|(i, _)| roles[*i].is_honest()).collect();
    let safety = audit_safety(&honest, &params, verifier.as_ref());
    let reference = &chains[reference_index(&roles, chains.iter())];
    let report = build_report(config, metrics, reference, safety, adversary.as_ref(), &sim.net);
    let trace_lines = sim.net.trace_lines().map(<[String]>::to_vec);
    let node_stats = sim.nodes.iter().map(Node::stats).collect();
    Ok(RunOutput { report, roster, chains, node_stats, trace_lines })
}

fn build_report(
    config: &SimConfig,
    rounds: Vec<RoundMetrics>,
    reference: &ChainPair,
    safety: SafetyVerdict,
    adversary: Option<&AdversaryConfig>,
    net: &Network,
) -> RunReport {
    let committed: Vec<&RoundMetrics> = rounds.iter().filter(|r| r.committed).collect();
    let total_committed_txs: u64 = committed.iter().map(|r| r.tx_count as u64).sum();
    let total_simulated_ms = net.now();
    let throughput_tps =
        if total_simulated_ms == 0 { 0.0 } else { total_committed_txs as f64 / (total_simulated_ms as f64 / 1000.0) };
    let mean = |xs: Vec<u64>| (!xs.is_empty()).then(|| xs.iter().sum::<u64>() as f64 / xs.len() as f64);
    let max_fraction = rounds.iter().map(|r| r.byzantine_group_weight_fraction).fold(0.0, f64::max);
    let faulty = adversary.map_or(0, AdversaryConfig::faulty);
    RunReport {
        config: config.clone(),
        committed_rounds: committed.len(),
        total_committed_txs,
        total_simulated_ms,
        throughput_tps,
        avg_block_time_ms: mean(committed.iter().filter_map(|r| r.block_time_ms).collect()),
        avg_consensus_time_ms: mean(committed.iter().filter_map(|r| r.consensus_time_ms).collect()),
        final_reputation: reference
            .reputation()
            .iter()
            .map(|(k, v)| (k.to_hex(), crate::decimal::round_significant(*v, 12)))
            .collect(),
        safety,
        bounds: BoundReport {
            num_nodes: config.num_nodes,
            faulty,
            global_bound_violated: 3 * faulty + 1 > config.num_nodes,
            max_byzantine_group_weight_fraction: max_fraction,
            group_bound_violated: max_fraction >= 1.0 / 3.0,
        },
        network: net.stats(),
        trace_digest: net.trace_digest(),
        rounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimConfig {
        SimConfig { num_nodes: 10, rounds: 4, txs_per_round: 5, seed, ..SimConfig::default() }
    }

    #[test]
    fn honest_run_commits_every_round() {
        let out = run_simulation(&small(3)).unwrap();
        assert_eq!(out.report.committed_rounds, 4);
        let head = out.chains[0].head_digests();
        assert!(out.chains.iter().all(|c| c.head_digests() == head && c.len() == 5));
        assert!(out.report.safety.is_safe());
        for r in &out.report.rounds {
            assert!(r.consensus_time_ms.unwrap() <= r.block_time_ms.unwrap());
            assert_eq!(r.tx_count, 5);
        }
    }

    #[test]
    fn sleepy_leader_fails_then_retries() {
        let mut cfg = small(5);
        cfg.rounds = 12;
        cfg.adversary = Some(AdversarySetup { sleepy: 1, ..AdversarySetup::default() });
        let out = run_simulation(&cfg).unwrap();
        let r = &out.report;
        let failed: Vec<_> = r.rounds.iter().filter(|m| !m.committed).collect();
        assert!(failed.iter().all(|m| m.leader_role == Role::Sleepy));
        for m in &failed {
            let next = r.rounds.iter().find(|x| x.round == m.round + 1);
            if let Some(next) = next {
                assert_eq!(next.height, m.height);
                assert_eq!(next.attempt, m.attempt + 1);
            }
        }
        assert!(!failed.is_empty());
        assert!(r.safety.is_safe());
        assert_eq!(r.committed_rounds + failed.len(), 12);
    }

    #[test]
    fn all_sleepy_commits_nothing() {
        let mut cfg = small(6);
        cfg.txs_per_round = 0;
        cfg.adversary = Some(AdversarySetup { sleepy: 10, ..AdversarySetup::default() });
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.report.committed_rounds, 0);
        assert!(out.chains.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn config_errors_surface_early() {
        let mut cfg = small(1);
        cfg.txs_per_round = 91;
        assert!(run_simulation(&cfg).is_err());
        let cfg = SimConfig { num_nodes: 0, ..small(1) };
        assert!(run_simulation(&cfg).is_err());
        let cfg = SimConfig { alpha: 0.0, ..small(1) };
        assert!(matches!(run_simulation(&cfg), Err(ConfigError::Reputation(_))));
    }

    #[test]
    fn reference_prefers_longest_honest() {
        let roles = [Role::Byzantine, Role::Honest, Role::Honest];
        let k: Vec<_> = (0..2).map(|i| generate_keypair(i).public).collect();
        let g = ChainPair::genesis(&k, 0.2);
        assert_eq!(reference_index(&roles, [&g, &g, &g].into_iter()), 1);
    }
}
