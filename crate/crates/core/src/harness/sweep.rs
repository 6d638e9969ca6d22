use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_simulation, ConfigError, RunReport, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NumNodes,
    TxsPerRound,
    Alpha,
    RttMs,
    ClampEnabled,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] =
        [SweepParam::NumNodes, SweepParam::TxsPerRound, SweepParam::Alpha, SweepParam::RttMs, SweepParam::ClampEnabled];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NumNodes => "num_nodes",
            SweepParam::TxsPerRound => "txs_per_round",
            SweepParam::Alpha => "alpha",
            SweepParam::RttMs => "rtt_ms",
            SweepParam::ClampEnabled => "clamp_enabled",
        }
    }

    /// `base` with this parameter set to `value`.
    ///
    /// Changing `num_nodes` keeps the number of ratings per node constant.
    pub fn apply(self, value: &str, base: &SimConfig) -> Result<SimConfig, ConfigError> {
        let bad = || ConfigError::Invalid(format!("bad value `{value}` for {}", self.name()));
        let mut cfg = base.clone();
        match self {
            SweepParam::NumNodes => {
                let n: usize = value.trim().parse().map_err(|_| bad())?;
                let per_node = base.txs_per_round as f64 / base.num_nodes.max(1) as f64;
                cfg.num_nodes = n;
                cfg.txs_per_round = ((per_node * n as f64).round() as usize).min(n * n.saturating_sub(1));
            }
            SweepParam::TxsPerRound => cfg.txs_per_round = value.trim().parse().map_err(|_| bad())?,
            SweepParam::Alpha => cfg.alpha = value.trim().parse().map_err(|_| bad())?,
            SweepParam::RttMs => cfg.rtt_ms = value.trim().parse().map_err(|_| bad())?,
            SweepParam::ClampEnabled => {
                cfg.clamp_enabled = match value.trim() {
                    "true" | "1" | "on" => true,
                    "false" | "0" | "off" => false,
                    _ => return Err(bad()),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown sweep parameter `{s}`")))
    }
}

/// Golden-ratio increment used to spread sweep seeds.
const SEED_STRIDE: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seed of the `index`-th sweep point; index 0 keeps the base seed.
pub fn sweep_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(SEED_STRIDE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: SweepParam,
    pub value: String,
    pub seed: u64,
    pub report: RunReport,
}

/// One run per value, in parallel; results come back in input order.
pub fn sweep(param: SweepParam, values: &[String], base: &SimConfig) -> Result<Vec<SweepPoint>, ConfigError> {
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut cfg = param.apply(v, base)?;
            cfg.seed = sweep_seed(base.seed, i);
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    configs
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(cfg, v)| {
            let report = run_simulation(&cfg)?.report;
            Ok(SweepPoint { parameter: param, value: v.clone(), seed: cfg.seed, report })
        })
        .collect()
}

/// One CSV row per attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub committed: bool,
    pub tx_count: usize,
    pub block_time_ms: Option<u64>,
    pub consensus_time_ms: Option<u64>,
    pub group_size: usize,
    pub leader: String,
}

/// One CSV row per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub parameter: String,
    pub value: String,
    pub seed: u64,
    pub rounds: usize,
    pub committed_rounds: usize,
    pub total_committed_txs: u64,
    pub total_simulated_ms: u64,
    pub throughput_tps: f64,
    pub avg_block_time_ms: Option<f64>,
    pub avg_consensus_time_ms: Option<f64>,
    pub safe: bool,
}

impl RunReport {
    pub fn round_rows(&self) -> Vec<RoundRow> {
        self.rounds
            .iter()
            .map(|r| RoundRow {
                round: r.round,
                committed: r.committed,
                tx_count: r.tx_count,
                block_time_ms: r.block_time_ms,
                consensus_time_ms: r.consensus_time_ms,
                group_size: r.group_size,
                leader: r.leader.to_hex(),
            })
            .collect()
    }

    pub fn aggregate_row(&self, parameter: &str, value: &str) -> AggregateRow {
        AggregateRow {
            parameter: parameter.to_string(),
            value: value.to_string(),
            seed: self.config.seed,
            rounds: self.rounds.len(),
            committed_rounds: self.committed_rounds,
            total_committed_txs: self.total_committed_txs,
            total_simulated_ms: self.total_simulated_ms,
            throughput_tps: self.throughput_tps,
            avg_block_time_ms: self.avg_block_time_ms,
            avg_consensus_time_ms: self.avg_consensus_time_ms,
            safe: self.safety.is_safe(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_names() {
        for p in SweepParam::ALL {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert_eq!("txs-per-round".parse::<SweepParam>().unwrap(), SweepParam::TxsPerRound);
        assert!("delta".parse::<SweepParam>().is_err());
    }

    #[test]
    fn node_sweep_keeps_per_node_workload() {
        let base = SimConfig { num_nodes: 100, txs_per_round: 100, ..SimConfig::default() };
        let cfg = SweepParam::NumNodes.apply("300", &base).unwrap();
        assert_eq!((cfg.num_nodes, cfg.txs_per_round), (300, 300));
        assert!(SweepParam::ClampEnabled.apply("maybe", &base).is_err());
        assert!(!SweepParam::ClampEnabled.apply("false", &base).unwrap().clamp_enabled);
    }

    #[test]
    fn single_value_sweep_equals_a_run() {
        let base = SimConfig { num_nodes: 8, rounds: 2, txs_per_round: 6, seed: 11, ..SimConfig::default() };
        let points = sweep(SweepParam::TxsPerRound, &["6".to_string()], &base).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].report, run_simulation(&base).unwrap().report);
        assert_eq!(sweep_seed(11, 0), 11);
    }
}
