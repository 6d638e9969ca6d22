use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{unfair_rating_value, Coalition, Strategy};
use crate::crypto::{KeyPair, PublicKey};
use crate::ledger::{create_transaction, RatingTransaction};

use super::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    Byzantine,
    Sleepy,
    /// Honest, and consistently rated well by honest peers.
    Favored,
}

impl Role {
    pub fn is_honest(self) -> bool {
        matches!(self, Role::Honest | Role::Favored)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Every rating is a fresh draw from the target's range.
    PerInteraction,
    /// Each target has a fixed quality drawn once; ratings add small noise.
    PerNode,
}

/// How honest nodes rate, by the role of the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatingProfile {
    pub honest: (f64, f64),
    pub byzantine: (f64, f64),
    pub favored: (f64, f64),
    pub mode: ProfileMode,
    /// Half-width of the noise in [`ProfileMode::PerNode`].
    pub noise: f64,
}

impl Default for RatingProfile {
    fn default() -> Self {
        Self {
            honest: (0.6, 0.95),
            byzantine: (0.05, 0.4),
            favored: (0.9, 0.99),
            mode: ProfileMode::PerInteraction,
            noise: 0.02,
        }
    }
}

impl RatingProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, (lo, hi)) in [("honest", self.honest), ("byzantine", self.byzantine), ("favored", self.favored)] {
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return Err(ConfigError::Invalid(format!("{name} rating range [{lo}, {hi}] must lie inside (0, 1)")));
            }
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(ConfigError::Invalid(format!("profile noise {} not in [0, 0.5)", self.noise)));
        }
        Ok(())
    }

    fn range(&self, role: Role) -> (f64, f64) {
        match role {
            Role::Byzantine => self.byzantine,
            Role::Favored => self.favored,
            Role::Honest | Role::Sleepy => self.honest,
        }
    }
}

/// Identities, roles and rating behaviour of one run, in genesis key order.
#[derive(Clone, Debug)]
pub struct Roster {
    pub keys: Vec<KeyPair>,
    pub roles: Vec<Role>,
    pub coalition: Option<Coalition>,
    pub profile: RatingProfile,
    /// Per-target quality, used in [`ProfileMode::PerNode`].
    pub qualities: Vec<f64>,
}

impl Roster {
    pub fn new<R: Rng + ?Sized>(
        keys: Vec<KeyPair>,
        roles: Vec<Role>,
        coalition: Option<Coalition>,
        profile: RatingProfile,
        rng: &mut R,
    ) -> Self {
        let qualities = roles
            .iter()
            .map(|r| {
                let (lo, hi) = profile.range(*r);
                rng.gen_range(lo..=hi)
            })
            .collect();
        Self { keys, roles, coalition, profile, qualities }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn public_key(&self, i: usize) -> PublicKey {
        self.keys[i].public
    }

    fn rating<R: Rng + ?Sized>(&self, origin: usize, target: usize, rng: &mut R) -> f64 {
        if let (Role::Byzantine, Some(c)) = (self.roles[origin], &self.coalition) {
            if c.strategy == Strategy::UnfairRating {
                return unfair_rating_value(&self.keys[target].public, c);
            }
        }
        let (lo, hi) = self.profile.range(self.roles[target]);
        match self.profile.mode {
            ProfileMode::PerInteraction => rng.gen_range(lo..=hi),
            ProfileMode::PerNode => {
                let noise = self.profile.noise;
                let v = self.qualities[target] + rng.gen_range(-noise..=noise);
                v.clamp(0.001, 0.999)
            }
        }
    }
}

/// `count` distinct ordered pairs (origin, target), origin ≠ target, drawn
/// uniformly without replacement.
pub fn sample_pairs<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>, ConfigError> {
    let total = n * n.saturating_sub(1);
    if count > total {
        return Err(ConfigError::Invalid(format!("{count} interactions requested but {n} nodes allow only {total}")));
    }
    let mut pairs: Vec<_> = index::sample(rng, total, count)
        .into_iter()
        .map(|i| {
            let origin = i / (n - 1);
            let t = i % (n - 1);
            (origin, if t < origin { t } else { t + 1 })
        })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Signed ratings for one round: `txs_per_round` distinct pairs, each rated
/// according to the roster's profile or the origin's strategy.
pub fn generate_workload<R: Rng + ?Sized>(
    roster: &Roster,
    txs_per_round: usize,
    round: u64,
    rng: &mut R,
) -> Result<Vec<RatingTransaction>, ConfigError> {
    let pairs = sample_pairs(roster.len(), txs_per_round, rng)?;
    pairs
        .into_iter()
        .map(|(o, t)| {
            let value = roster.rating(o, t, rng);
            create_transaction(&roster.keys[o], roster.keys[t].public, value, round)
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::crypto::generate_keypair;
    use crate::ledger::validate_transaction;

    fn roster(n: u64) -> Roster {
        let keys: Vec<_> = (0..n).map(|i| generate_keypair(9000 + i)).collect();
        let roles = vec![Role::Honest; n as usize];
        Roster::new(keys, roles, None, RatingProfile::default(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn small_workload_shape() {
        let r = roster(4);
        let txs = generate_workload(&r, 3, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(txs.len(), 3);
        let pairs: BTreeSet<_> = txs.iter().map(|t| (t.origin, t.recipient)).collect();
        assert_eq!(pairs.len(), 3);
        for t in &txs {
            assert!(t.rating > 0.0 && t.rating < 1.0);
            assert_ne!(t.origin, t.recipient);
            assert_eq!(validate_transaction(t), Ok(()));
        }
    }

    #[test]
    fn empty_and_infeasible() {
        let r = roster(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(generate_workload(&r, 0, 1, &mut rng).unwrap().is_empty());
        assert!(generate_workload(&r, 12, 1, &mut rng).unwrap().len() == 12);
        assert!(generate_workload(&r, 13, 1, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_workload() {
        let r = roster(6);
        let a = generate_workload(&r, 10, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_workload(&r, 10, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unfair_origin_uses_extremes() {
        let mut r = roster(4);
        r.roles[0] = Role::Byzantine;
        r.coalition = Some(Coalition {
            members: [r.keys[0].public].into_iter().collect(),
            strategy: Strategy::UnfairRating,
            coordination: true,
        });
        let txs = generate_workload(&r, 12, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for t in txs.iter().filter(|t| t.origin == r.keys[0].public) {
            assert_eq!(t.rating, 0.01);
        }
        for t in txs.iter().filter(|t| t.recipient == r.keys[0].public) {
            assert!(t.rating <= 0.4);
        }
    }
}
