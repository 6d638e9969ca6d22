use por_core::adversary::Strategy;
use por_core::consensus::{leader_rng, select_group, select_leader};
use por_core::harness::{run_simulation, AdversarySetup, ProfileMode, RatingProfile, Role, RunOutput, SimConfig};
use por_core::reputation::{next_reputation, Rating, ReputationList, ReputationParams};

fn run(cfg: &SimConfig) -> RunOutput {
    run_simulation(cfg).unwrap()
}

fn eclipse_config(num_nodes: usize, victims: Vec<usize>) -> SimConfig {
    SimConfig {
        num_nodes,
        rounds: 6,
        txs_per_round: 40,
        seed: 21,
        adversary: Some(AdversarySetup { strategy: Strategy::Eclipse, eclipse: victims, ..Default::default() }),
        ..SimConfig::default()
    }
}

#[test]
fn eclipsed_outsider_does_not_stall_the_group() {
    let n = 20;
    let out = run(&eclipse_config(n, vec![n - 1]));
    let r = &out.report;
    assert!(r.safety.is_safe());
    assert_eq!(r.committed_rounds, r.rounds.len());
    assert_eq!(out.chains[n - 1].len(), 1, "the victim hears nothing past genesis");
    assert_eq!(out.reference_chain().len(), r.rounds.len() + 1);
}

#[test]
fn eclipsing_a_quorum_halts_without_forking() {
    let out = run(&eclipse_config(25, (0..5).collect()));
    let r = &out.report;
    assert_eq!(r.committed_rounds, 0);
    assert!(r.safety.is_safe());
    assert!(out.chains.iter().all(|c| c.len() == 1));
}

#[test]
fn empty_eclipse_matches_the_honest_run() {
    let attacked = run(&eclipse_config(12, Vec::new())).report;
    let honest = run(&SimConfig { adversary: None, ..eclipse_config(12, Vec::new()) }).report;
    assert_eq!(attacked.trace_digest, honest.trace_digest);
    assert_eq!(attacked.rounds, honest.rounds);
}

/// Guessing the leader two rounds ahead, using the last known reputation
/// digest in place of the one not yet committed, is right at chance rate.
#[test]
fn leader_cannot_be_predicted_a_round_early() {
    let (mut hits, mut trials, mut chance) = (0usize, 0usize, 0.0f64);
    for seed in 1..=6 {
        let cfg = SimConfig { num_nodes: 30, rounds: 40, txs_per_round: 60, seed, ..SimConfig::default() };
        let out = run(&cfg);
        let reps = out.reference_chain().reputation_blocks();
        for m in out.report.rounds.iter().filter(|m| m.committed && m.attempt == 0 && m.height >= 2) {
            let k = m.height as usize;
            let group = select_group(&reps[k - 1].reputation_list).unwrap();
            let stale = reps[k - 2].digest();
            let guess = select_leader(&group, &mut leader_rng(seed, group.round, &stale, 0)).unwrap();
            hits += usize::from(guess == m.leader);
            trials += 1;
            chance += 1.0 / group.len() as f64;
        }
    }
    // Binomial with p about 1/group size; five standard deviations.
    let sd = chance.sqrt();
    assert!(trials > 200);
    assert!((hits as f64 - chance).abs() < 5.0 * sd, "hits {hits} against {chance:.1} expected by chance");
}

/// With fixed per-node quality and many ratings per round, the top decile
/// settles and its order stops changing.
#[test]
fn top_decile_order_is_stationary() {
    let profile = RatingProfile { mode: ProfileMode::PerNode, ..RatingProfile::default() };
    let cfg = SimConfig { num_nodes: 50, rounds: 30, txs_per_round: 1000, seed: 4, profile, ..SimConfig::default() };
    let out = run(&cfg);
    let reps = out.reference_chain().reputation_blocks();
    assert_eq!(reps.len(), 31);
    let top = |k: usize| {
        let mut v: Vec<_> = reps[k].reputation_list.iter().map(|(pk, r)| (*pk, *r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().take(5).map(|(pk, _)| pk).collect::<Vec<_>>()
    };
    let settled = top(20);
    for k in 21..reps.len() {
        assert_eq!(top(k), settled, "top decile reordered at round {k}");
    }
}

/// About twenty ratings per node per round, so no honest node depends on
/// the coalition's votes alone.
#[test]
fn unfair_raters_sink_below_every_honest_node() {
    for seed in 1..=4 {
        let cfg = SimConfig {
            num_nodes: 30,
            rounds: 10,
            txs_per_round: 600,
            seed,
            adversary: Some(AdversarySetup { strategy: Strategy::UnfairRating, byzantine: 4, ..Default::default() }),
            ..SimConfig::default()
        };
        let out = run(&cfg);
        let list = &out.reference_chain().head_reputation_block().reputation_list;
        let (mut byz, mut honest) = (f64::NEG_INFINITY, f64::INFINITY);
        for (key, role) in out.roster.keys.iter().zip(&out.roster.roles) {
            let r = list.get(&key.public).unwrap();
            match role {
                Role::Byzantine => byz = byz.max(r),
                _ => honest = honest.min(r),
            }
        }
        assert!(byz < honest, "seed {seed}: byzantine max {byz} against honest min {honest}");
    }
}

#[test]
fn byzantine_leaders_never_commit_bad_blocks() {
    for strategy in [Strategy::ForgeBlock, Strategy::InflateReputation] {
        let mut led = 0;
        for seed in 1..=10 {
            let cfg = SimConfig {
                num_nodes: 12,
                rounds: 6,
                txs_per_round: 30,
                seed,
                adversary: Some(AdversarySetup { strategy, byzantine: 2, ..Default::default() }),
                ..SimConfig::default()
            };
            let r = run(&cfg).report;
            assert!(r.safety.is_safe(), "{strategy:?} seed {seed}");
            for m in r.rounds.iter().filter(|m| m.leader_role == Role::Byzantine) {
                assert!(!m.committed, "{strategy:?} seed {seed} round {}", m.round);
                led += 1;
            }
        }
        assert!(led > 0, "{strategy:?} never led a round");
    }
}

/// Unclamped, with each node rated by a single fixed peer, the distance to
/// the fixed point shrinks by exactly 1 - alpha per round.
#[test]
fn reputation_decays_geometrically() {
    let alpha = 0.35;
    let params = ReputationParams::new(alpha, 0.2, false).unwrap();
    let mut k: Vec<_> = (0..4).map(|i| por_core::crypto::generate_keypair(70 + i).public).collect();
    k.sort();
    let mut list = ReputationList::new(0, k.iter().map(|pk| (*pk, 0.9)).collect());
    let values = [0.3, 0.8, 0.5, 0.6];
    let mut history = vec![list.clone()];
    for round in 1..=12u64 {
        let ratings: Vec<Rating> =
            (0..4).map(|i| Rating::new(k[i], k[(i + 1) % 4], values[i], round).unwrap()).collect();
        list = next_reputation(&list, &ratings, &params).unwrap();
        history.push(list.clone());
    }
    // Each target's rank is its one rating shifted by the round minimum and
    // scaled by the spread plus one.
    let span = 0.8 - 0.3 + 1.0;
    for (i, v) in values.iter().enumerate() {
        let pk = &k[(i + 1) % 4];
        let fixed = (v - 0.3 + 1.0) / span;
        for w in history.windows(2) {
            let (a, b) = (w[0].get(pk).unwrap() - fixed, w[1].get(pk).unwrap() - fixed);
            assert!((b - (1.0 - alpha) * a).abs() < 1e-9);
        }
    }
}
