use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use por_core::adversary::Strategy;
use por_core::harness::{AdversarySetup, SimConfig};
use serde::Deserialize;

/// Simulation settings shared by `run` and `sweep`. Each flag overrides the
/// matching key of `--config`.
#[derive(Args, Clone, Debug, Default)]
pub struct SimArgs {
    /// TOML file with any of the keys below, in snake_case.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub txs_per_round: Option<usize>,
    /// Weight of the current round's rank against the previous reputation.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub initial_reputation: Option<f64>,
    #[arg(long)]
    pub rtt_ms: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "STRATEGY")]
    pub adversary: Option<Strategy>,
    #[arg(long, value_name = "COUNT")]
    pub byzantine: Option<usize>,
    #[arg(long, value_name = "COUNT")]
    pub sleepy: Option<usize>,
    /// Node index to cut off from honest peers; repeatable.
    #[arg(long, value_name = "NODE_INDEX")]
    pub eclipse: Vec<usize>,
    /// Skip the clamp on updated reputation values.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write the reference node's chains as JSON.
    #[arg(long)]
    pub dump_chains: bool,
    /// Record every network event.
    #[arg(long)]
    pub trace: bool,
}

/// Same keys as [`SimArgs`].
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub nodes: Option<usize>,
    pub rounds: Option<usize>,
    pub txs_per_round: Option<usize>,
    pub alpha: Option<f64>,
    pub initial_reputation: Option<f64>,
    pub rtt_ms: Option<u64>,
    pub seed: Option<u64>,
    pub adversary: Option<String>,
    pub byzantine: Option<usize>,
    pub sleepy: Option<usize>,
    pub eclipse: Option<Vec<usize>>,
    pub no_clamp: Option<bool>,
    pub out: Option<PathBuf>,
    pub dump_chains: Option<bool>,
    pub trace: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Everything a command needs after merging flags over the file.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub sim: SimConfig,
    pub out: PathBuf,
    pub dump_chains: bool,
}

impl SimArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let file_strategy =
            file.adversary.as_deref().map(str::parse::<Strategy>).transpose().context("config key `adversary`")?;

        let mut sim = SimConfig::default();
        sim.num_nodes = self.nodes.or(file.nodes).unwrap_or(sim.num_nodes);
        sim.rounds = self.rounds.or(file.rounds).unwrap_or(sim.rounds);
        sim.txs_per_round = self.txs_per_round.or(file.txs_per_round).unwrap_or(sim.txs_per_round);
        sim.alpha = self.alpha.or(file.alpha).unwrap_or(sim.alpha);
        sim.initial_reputation = self.initial_reputation.or(file.initial_reputation).unwrap_or(sim.initial_reputation);
        sim.rtt_ms = self.rtt_ms.or(file.rtt_ms).unwrap_or(sim.rtt_ms);
        sim.seed = self.seed.or(file.seed).unwrap_or(sim.seed);
        sim.clamp_enabled = !(self.no_clamp || file.no_clamp.unwrap_or(false));
        sim.trace = self.trace || file.trace.unwrap_or(false);

        let strategy = self.adversary.or(file_strategy);
        let byzantine = self.byzantine.or(file.byzantine);
        let sleepy = self.sleepy.or(file.sleepy);
        let eclipse = if self.eclipse.is_empty() { file.eclipse.unwrap_or_default() } else { self.eclipse.clone() };
        if strategy.is_some() || byzantine.is_some() || sleepy.is_some() || !eclipse.is_empty() {
            let default_strategy =
                if eclipse.is_empty() { AdversarySetup::default().strategy } else { Strategy::Eclipse };
            sim.adversary = Some(AdversarySetup {
                strategy: strategy.unwrap_or(default_strategy),
                byzantine: byzantine.unwrap_or(0),
                sleepy: sleepy.unwrap_or(0),
                eclipse,
                ..AdversarySetup::default()
            });
        }
        sim.validate()?;

        Ok(Resolved {
            sim,
            out: self.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            dump_chains: self.dump_chains || file.dump_chains.unwrap_or(false),
        })
    }
}
