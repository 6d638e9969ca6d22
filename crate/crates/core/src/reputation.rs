//! Liquid-rank reputation engine.
//!
//! One round of reputation turns the round's ratings into a new
//! [`ReputationList`] in four steps:
//!
//! 1. [`normalize_ratings`]: every raw rating `v` becomes
//!    `((v - vmin) + 1) / ((vmax - vmin) + 1)` where `vmin`/`vmax` range over
//!    all ratings of the round. The `+ 1` keeps a round whose ratings are all
//!    equal well defined, and the largest rating maps to exactly 1.
//! 2. [`blend_ranks`]: each rated node's rank `P_i` is the average of its
//!    normalized ratings weighted by the raters' previous reputations. A node
//!    nobody rated keeps its previous value as its rank.
//! 3. [`update_reputation`]: `raw_i = alpha * P_i + (1 - alpha) * prev_i`.
//! 4. [`clamp`]: optionally `raw / sqrt(1 + raw^2)`, which damps jumps and
//!    bounds values from unit-interval inputs by `1/sqrt(2)`.
//!
//! [`next_reputation`] chains all four.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::PublicKey;
use crate::decimal::round_significant;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReputationError {
    #[error("rating {value} from {origin:?} to {target:?} is outside the open interval (0, 1)")]
    OutOfRange { origin: PublicKey, target: PublicKey, value: f64 },
    #[error("node {0:?} rated itself")]
    SelfRating(PublicKey),
    #[error("rating for round {got} in a batch for round {expected}")]
    MixedRounds { expected: u64, got: u64 },
    #[error("second rating from {origin:?} to {target:?} in one round")]
    DuplicateRating { origin: PublicKey, target: PublicKey },
    #[error("node {0:?} is not registered in the reputation list")]
    Unregistered(PublicKey),
    #[error("rank vector and reputation list cover different node sets")]
    NodeSetMismatch,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cannot clamp {0}: reputations are non-negative")]
    NegativeInput(f64),
}

/// A single judgment of `target` by `origin` in round `round`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub origin: PublicKey,
    pub target: PublicKey,
    pub value: f64,
    pub round: u64,
}

impl Rating {
    pub fn new(origin: PublicKey, target: PublicKey, value: f64, round: u64) -> Result<Self, ReputationError> {
        let r = Self { origin, target, value, round };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<(), ReputationError> {
        if !is_open_unit(self.value) {
            return Err(ReputationError::OutOfRange { origin: self.origin, target: self.target, value: self.value });
        }
        if self.origin == self.target {
            return Err(ReputationError::SelfRating(self.origin));
        }
        Ok(())
    }
}

/// True for `0 < x < 1` (false for NaN).
pub fn is_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Normalized ratings of one round, keyed by `(target, origin)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingMatrix {
    round: u64,
    entries: BTreeMap<(PublicKey, PublicKey), f64>,
}

impl RatingMatrix {
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, target: &PublicKey, origin: &PublicKey) -> Option<f64> {
        self.entries.get(&(*target, *origin)).copied()
    }

    /// `((target, origin), value)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&(PublicKey, PublicKey), &f64)> {
        self.entries.iter()
    }
}

/// Reputation of every registered node after some round.
#[derive(Clone, Debug, PartialEq)]
pub struct ReputationList {
    round: u64,
    values: BTreeMap<PublicKey, f64>,
}

impl ReputationList {
    pub fn new(round: u64, values: BTreeMap<PublicKey, f64>) -> Self {
        Self { round, values }
    }

    /// Every node starts at `initial`.
    pub fn uniform<'a>(nodes: impl IntoIterator<Item = &'a PublicKey>, initial: f64) -> Self {
        Self { round: 0, values: nodes.into_iter().map(|pk| (*pk, initial)).collect() }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn get(&self, node: &PublicKey) -> Option<f64> {
        self.values.get(node).copied()
    }

    pub fn contains(&self, node: &PublicKey) -> bool {
        self.values.contains_key(node)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PublicKey, &f64)> {
        self.values.iter()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PublicKey> {
        self.values.keys()
    }

    pub fn values(&self) -> &BTreeMap<PublicKey, f64> {
        &self.values
    }

    /// Overwrites one entry. Only adversarial leaders need this.
    pub fn set(&mut self, node: PublicKey, value: f64) {
        self.values.insert(node, value);
    }

    /// Sum over all nodes, in key order.
    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }

    /// Largest absolute per-node difference, or `None` when the node sets differ.
    pub fn max_abs_diff(&self, other: &ReputationList) -> Option<f64> {
        if self.values.len() != other.values.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for ((a, x), (b, y)) in self.values.iter().zip(other.values.iter()) {
            if a != b {
                return None;
            }
            let d = (x - y).abs();
            if d.is_nan() {
                return Some(f64::INFINITY);
            }
            worst = worst.max(d);
        }
        Some(worst)
    }

    /// Equal rounds, equal node sets and every value within `tol`.
    pub fn approx_eq(&self, other: &ReputationList, tol: f64) -> bool {
        self.round == other.round && self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }

    /// JSON export: lowercase hex key to value rounded to 12 significant digits.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .values
            .iter()
            .map(|(pk, v)| (pk.to_hex(), serde_json::json!(round_significant(*v, 12))))
            .collect::<serde_json::Map<_, _>>();
        serde_json::json!({ "round": self.round, "values": map })
    }
}

impl Canonical for ReputationList {
    /// `round: u64 | count: u32 | (key: 32 bytes, value: f64)*` in key order.
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.round).u32(self.values.len() as u32);
        for (pk, v) in &self.values {
            enc.public_key(pk).f64(*v);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let round = dec.u64()?;
        let n = dec.u32()?;
        if n as usize > dec.remaining() {
            return Err(DecodeError::Length(n));
        }
        let mut values = BTreeMap::new();
        let mut last: Option<PublicKey> = None;
        for _ in 0..n {
            let pk = dec.public_key()?;
            let v = dec.f64()?;
            // Canonical form is strictly ascending; anything else is a different encoding.
            if last.is_some_and(|l| l >= pk) {
                return Err(DecodeError::BadTag { what: "reputation list order", tag: 0 });
            }
            last = Some(pk);
            values.insert(pk, v);
        }
        Ok(Self { round, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationParams {
    /// Weight of the current round's rank against the previous reputation.
    pub alpha: f64,
    pub initial_reputation: f64,
    pub apply_clamp: bool,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self { alpha: 0.6, initial_reputation: 0.2, apply_clamp: true }
    }
}

impl ReputationParams {
    pub fn new(alpha: f64, initial_reputation: f64, apply_clamp: bool) -> Result<Self, ReputationError> {
        let p = Self { alpha, initial_reputation, apply_clamp };
        p.validate()?;
        Ok(p)
    }

    /// `alpha` may be exactly 1 (rank only); the initial reputation must lie in (0, 1).
    pub fn validate(&self) -> Result<(), ReputationError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ReputationError::InvalidParams(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !is_open_unit(self.initial_reputation) {
            return Err(ReputationError::InvalidParams(format!(
                "initial reputation {} not in (0, 1)",
                self.initial_reputation
            )));
        }
        Ok(())
    }
}

/// Per-node rank `P` for one round.
pub type RankVector = BTreeMap<PublicKey, f64>;

/// Validates a round's ratings and rescales them with the global min/max.
pub fn normalize_ratings(round: u64, raw: &[Rating]) -> Result<RatingMatrix, ReputationError> {
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for r in raw {
        r.check()?;
        if r.round != round {
            return Err(ReputationError::MixedRounds { expected: round, got: r.round });
        }
        vmin = vmin.min(r.value);
        vmax = vmax.max(r.value);
    }
    let span = (vmax - vmin) + 1.0;
    let mut entries = BTreeMap::new();
    for r in raw {
        let normalized = ((r.value - vmin) + 1.0) / span;
        if entries.insert((r.target, r.origin), normalized).is_some() {
            return Err(ReputationError::DuplicateRating { origin: r.origin, target: r.target });
        }
    }
    Ok(RatingMatrix { round, entries })
}

/// Reputation-weighted average of each target's normalized ratings.
///
/// Every node of `prev` appears in the output. If all raters of a target
/// have zero reputation the plain mean is used.
pub fn blend_ranks(matrix: &RatingMatrix, prev: &ReputationList) -> Result<RankVector, ReputationError> {
    // (weighted sum, weight sum, plain sum, count) per target
    let mut acc: BTreeMap<PublicKey, (f64, f64, f64, usize)> = BTreeMap::new();
    for (&(target, origin), &s) in &matrix.entries {
        let w = prev.get(&origin).ok_or(ReputationError::Unregistered(origin))?;
        if !prev.contains(&target) {
            return Err(ReputationError::Unregistered(target));
        }
        let e = acc.entry(target).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += s * w;
        e.1 += w;
        e.2 += s;
        e.3 += 1;
    }
    Ok(prev
        .iter()
        .map(|(pk, &carried)| {
            let p = match acc.get(pk) {
                None => carried,
                Some(&(ws, w, _, _)) if w > 0.0 => ws / w,
                Some(&(_, _, plain, n)) => plain / n as f64,
            };
            (*pk, p)
        })
        .collect())
}

/// Blends each rank with the previous reputation and optionally clamps.
pub fn update_reputation(
    ranks: &RankVector,
    prev: &ReputationList,
    params: &ReputationParams,
) -> Result<ReputationList, ReputationError> {
    params.validate()?;
    if ranks.len() != prev.len() {
        return Err(ReputationError::NodeSetMismatch);
    }
    let mut values = BTreeMap::new();
    for ((pk, &p), (prev_pk, &r)) in ranks.iter().zip(prev.iter()) {
        if pk != prev_pk {
            return Err(ReputationError::NodeSetMismatch);
        }
        let raw = params.alpha * p + (1.0 - params.alpha) * r;
        let v = if params.apply_clamp { clamp(raw)? } else { raw };
        values.insert(*pk, v);
    }
    Ok(ReputationList { round: prev.round + 1, values })
}

/// `x / sqrt(1 + x^2)` for non-negative `x`.
pub fn clamp(x: f64) -> Result<f64, ReputationError> {
    if x.is_nan() || x < 0.0 {
        return Err(ReputationError::NegativeInput(x));
    }
    Ok(x / (1.0 + x * x).sqrt())
}

/// Runs one full round of the engine: normalize, blend, update.
///
/// `ratings` must belong to round `prev.round() + 1`.
pub fn next_reputation(
    prev: &ReputationList,
    ratings: &[Rating],
    params: &ReputationParams,
) -> Result<ReputationList, ReputationError> {
    let matrix = normalize_ratings(prev.round + 1, ratings)?;
    let ranks = blend_ranks(&matrix, prev)?;
    update_reputation(&ranks, prev, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    const TOL: f64 = 1e-9;

    fn keys(n: u64) -> Vec<PublicKey> {
        let mut v: Vec<_> = (0..n).map(|i| generate_keypair(1000 + i).public).collect();
        v.sort();
        v
    }

    fn rating(o: PublicKey, t: PublicKey, v: f64) -> Rating {
        Rating::new(o, t, v, 1).unwrap()
    }

    #[test]
    fn normalize_three_values() {
        let k = keys(4);
        let raw = [rating(k[0], k[3], 0.2), rating(k[1], k[3], 0.5), rating(k[2], k[3], 0.8)];
        let m = normalize_ratings(1, &raw).unwrap();
        assert!((m.get(&k[3], &k[0]).unwrap() - 0.625).abs() < TOL);
        assert!((m.get(&k[3], &k[1]).unwrap() - 0.8125).abs() < TOL);
        assert_eq!(m.get(&k[3], &k[2]).unwrap(), 1.0);
    }

    #[test]
    fn normalize_equal_values_map_to_one() {
        let k = keys(3);
        let m = normalize_ratings(1, &[rating(k[0], k[2], 0.4), rating(k[1], k[2], 0.4)]).unwrap();
        assert!(m.iter().all(|(_, v)| *v == 1.0));
        let single = normalize_ratings(1, &[rating(k[0], k[1], 0.9)]).unwrap();
        assert_eq!(single.get(&k[1], &k[0]), Some(1.0));
    }

    #[test]
    fn normalize_empty_and_errors() {
        assert!(normalize_ratings(1, &[]).unwrap().is_empty());
        let k = keys(2);
        let bad = Rating { origin: k[0], target: k[1], value: 1.0, round: 1 };
        assert!(matches!(normalize_ratings(1, &[bad]), Err(ReputationError::OutOfRange { value, .. }) if value == 1.0));
        let nan = Rating { value: f64::NAN, ..bad };
        assert!(normalize_ratings(1, &[nan]).is_err());
        let other_round = Rating { value: 0.5, round: 2, ..bad };
        assert_eq!(normalize_ratings(1, &[other_round]), Err(ReputationError::MixedRounds { expected: 1, got: 2 }));
        let dup = [rating(k[0], k[1], 0.3), rating(k[0], k[1], 0.6)];
        assert!(matches!(normalize_ratings(1, &dup), Err(ReputationError::DuplicateRating { .. })));
        assert_eq!(Rating::new(k[0], k[0], 0.5, 1), Err(ReputationError::SelfRating(k[0])));
    }

    fn list(pairs: &[(PublicKey, f64)]) -> ReputationList {
        ReputationList::new(0, pairs.iter().copied().collect())
    }

    #[test]
    fn blend_single_rater() {
        let k = keys(2);
        let prev = list(&[(k[0], 0.5), (k[1], 0.3)]);
        let m = normalize_ratings(1, &[rating(k[0], k[1], 0.7)]).unwrap();
        let p = blend_ranks(&m, &prev).unwrap();
        assert!((p[&k[1]] - 1.0).abs() < TOL);
        // k[0] was not rated: carried forward.
        assert_eq!(p[&k[0]], 0.5);
    }

    #[test]
    fn blend_two_raters_weighted() {
        let k = keys(3);
        let prev = list(&[(k[0], 0.2), (k[1], 0.6), (k[2], 0.4)]);
        // Raw 0.9 and 0.1 normalize (vmin .1, vmax .9) to 1.0 and 1/1.8; build
        // the normalized values directly instead so the example stays exact.
        let mut entries = BTreeMap::new();
        entries.insert((k[2], k[0]), 1.0);
        entries.insert((k[2], k[1]), 0.5);
        let m = RatingMatrix { round: 1, entries };
        let p = blend_ranks(&m, &prev).unwrap();
        assert!((p[&k[2]] - 0.625).abs() < TOL);
    }

    #[test]
    fn blend_rejects_unregistered_rater() {
        let k = keys(3);
        let prev = list(&[(k[1], 0.2), (k[2], 0.2)]);
        let m = normalize_ratings(1, &[rating(k[0], k[1], 0.5)]).unwrap();
        assert_eq!(blend_ranks(&m, &prev), Err(ReputationError::Unregistered(k[0])));
    }

    #[test]
    fn blend_zero_weight_raters_fall_back_to_mean() {
        let k = keys(3);
        let prev = list(&[(k[0], 0.0), (k[1], 0.0), (k[2], 0.3)]);
        let mut entries = BTreeMap::new();
        entries.insert((k[2], k[0]), 1.0);
        entries.insert((k[2], k[1]), 0.5);
        let p = blend_ranks(&RatingMatrix { round: 1, entries }, &prev).unwrap();
        assert!((p[&k[2]] - 0.75).abs() < TOL);
    }

    #[test]
    fn update_example() {
        let k = keys(1);
        let prev = list(&[(k[0], 0.5)]);
        let ranks: RankVector = [(k[0], 0.8)].into_iter().collect();
        let params = ReputationParams { alpha: 0.6, initial_reputation: 0.2, apply_clamp: true };
        let next = update_reputation(&ranks, &prev, &params).unwrap();
        let expected = 0.68 / (1.0f64 + 0.68 * 0.68).sqrt();
        assert!((next.get(&k[0]).unwrap() - expected).abs() < TOL);
        assert!((next.get(&k[0]).unwrap() - 0.5623).abs() < 1e-4);
        assert_eq!(next.round(), 1);

        let raw = update_reputation(&ranks, &prev, &ReputationParams { apply_clamp: false, ..params }).unwrap();
        assert!((raw.get(&k[0]).unwrap() - 0.68).abs() < TOL);
    }

    #[test]
    fn alpha_one_takes_rank_exactly() {
        let k = keys(2);
        let prev = list(&[(k[0], 0.9), (k[1], 0.1)]);
        let ranks: RankVector = [(k[0], 0.37), (k[1], 0.55)].into_iter().collect();
        let params = ReputationParams { alpha: 1.0, initial_reputation: 0.2, apply_clamp: false };
        let next = update_reputation(&ranks, &prev, &params).unwrap();
        assert_eq!(next.get(&k[0]), Some(0.37));
        assert_eq!(next.get(&k[1]), Some(0.55));
    }

    #[test]
    fn update_rejects_mismatched_sets() {
        let k = keys(2);
        let prev = list(&[(k[0], 0.5), (k[1], 0.5)]);
        let ranks: RankVector = [(k[0], 0.8)].into_iter().collect();
        assert_eq!(
            update_reputation(&ranks, &prev, &ReputationParams::default()),
            Err(ReputationError::NodeSetMismatch)
        );
    }

    #[test]
    fn clamp_values() {
        assert_eq!(clamp(0.0).unwrap(), 0.0);
        assert!((clamp(1.0).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < TOL);
        assert!((clamp(0.68).unwrap() - 0.56230).abs() < 5e-5);
        assert!((clamp(0.68).unwrap() - 0.562_310_021_407_279_1).abs() < TOL);
        assert_eq!(clamp(-0.1), Err(ReputationError::NegativeInput(-0.1)));
        assert!(clamp(f64::NAN).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ReputationParams::new(0.0, 0.2, true).is_err());
        assert!(ReputationParams::new(1.2, 0.2, true).is_err());
        assert!(ReputationParams::new(0.6, 1.0, true).is_err());
        assert!(ReputationParams::new(1.0, 0.2, true).is_ok());
    }

    #[test]
    fn list_encoding_roundtrip_and_order_check() {
        let k = keys(3);
        let l = ReputationList::new(4, k.iter().map(|pk| (*pk, 0.25)).collect());
        let bytes = l.to_canonical_bytes();
        assert_eq!(bytes.len(), 8 + 4 + 3 * 40);
        assert_eq!(ReputationList::from_canonical_bytes(&bytes).unwrap(), l);

        // Swap the first two entries: no longer canonical.
        let mut swapped = bytes.clone();
        let (a, b) = (12, 52);
        let first: Vec<u8> = swapped[a..a + 40].to_vec();
        let second: Vec<u8> = swapped[b..b + 40].to_vec();
        swapped[a..a + 40].copy_from_slice(&second);
        swapped[b..b + 40].copy_from_slice(&first);
        assert!(ReputationList::from_canonical_bytes(&swapped).is_err());
    }

    #[test]
    fn json_export_uses_hex_and_twelve_digits() {
        let k = keys(1);
        let l = ReputationList::new(2, [(k[0], 1.0 / 3.0)].into_iter().collect());
        let json = l.to_json().to_string();
        assert!(json.contains(&k[0].to_hex()));
        assert!(json.contains("0.333333333333"));
        assert!(!json.contains("0.3333333333333"));
    }
}
