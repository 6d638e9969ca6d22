mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use por_core::adversary::reputation_mismatch;
use por_core::harness::{run_simulation, sweep, RunReport, SweepParam};
use por_core::ledger::{validate_chain, ChainDump};

use config::SimArgs;

#[derive(Parser)]
#[command(name = "por", version, about = "Proof-of-Reputation consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its CSVs and JSON report.
    Run(SimArgs),
    /// Run one simulation per value of a parameter.
    Sweep {
        /// num_nodes, txs_per_round, alpha, rtt_ms or clamp_enabled.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Validate a chain dump and recompute its reputation lists.
    Audit {
        dump: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Average aggregate CSVs across seeds.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run(args) => run(&args),
        Command::Sweep { param, values, sim } => run_sweep(param, &values, &sim),
        Command::Audit { dump, sim } => audit(&dump, &sim),
        Command::Report { inputs, out } => report(&inputs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn summary_line(label: &str, r: &RunReport) -> String {
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.0} ms"));
    format!(
        "{label}: {}/{} rounds committed, {:.2} tx/s, block {}, consensus {}, {}",
        r.committed_rounds,
        r.rounds.len(),
        r.throughput_tps,
        ms(r.avg_block_time_ms),
        ms(r.avg_consensus_time_ms),
        if r.safety.is_safe() { "safe" } else { "UNSAFE" },
    )
}

fn run(args: &SimArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let out = run_simulation(&cfg.sim)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let report = &out.report;
    output::write_rounds(&cfg.out.join("rounds.csv"), &report.round_rows())?;
    output::write_csv(&cfg.out.join("aggregate.csv"), &[report.aggregate_row("run", "")])?;
    output::write_text(&cfg.out.join("report.json"), &report.to_json_pretty())?;
    if cfg.dump_chains {
        let dump = ChainDump::from_chains(out.reference_chain());
        output::write_text(&cfg.out.join("chain.json"), &dump.to_json_pretty())?;
    }
    if let Some(lines) = &out.trace_lines {
        let mut text = lines.join("\n");
        text.push('\n');
        output::write_text(&cfg.out.join("trace.log"), &text)?;
    }
    println!("{}", summary_line("run", report));
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn run_sweep(param: SweepParam, values: &[String], args: &SimArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if cfg.dump_chains || cfg.sim.trace {
        bail!("--dump-chains and --trace apply to `run` only");
    }
    let points = sweep(param, values, &cfg.sim)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut aggregates = Vec::new();
    for p in &points {
        let name = format!("rounds-{}-{}.csv", param.name(), output::slug(&p.value));
        output::write_rounds(&cfg.out.join(name), &p.report.round_rows())?;
        aggregates.push(p.report.aggregate_row(param.name(), &p.value));
        println!("{}", summary_line(&format!("{param}={}", p.value), &p.report));
    }
    output::write_csv(&cfg.out.join("aggregate.csv"), &aggregates)?;
    output::write_text(&cfg.out.join("reports.json"), &serde_json::to_string_pretty(&points)?)?;
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn audit(path: &Path, args: &SimArgs) -> Result<()> {
    let params = args.resolve()?.sim.params();
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let chains = ChainDump::from_json(&text)?.to_chains()?;
    validate_chain(&chains)?;
    if let Some((round, detail)) = reputation_mismatch(&chains, &params) {
        bail!("reputation list of round {round} does not follow from the ratings: {detail}");
    }
    println!("ok: {} blocks, signatures, links and reputation lists verified", chains.len());
    Ok(())
}

fn report(inputs: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let summary = output::summarize(&output::read_aggregates(inputs)?);
    match out {
        Some(path) => output::write_csv(&path, &summary),
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in &summary {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
