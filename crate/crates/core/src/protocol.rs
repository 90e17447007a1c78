//! Round-by-round protocol simulation: per round, draw an environment,
//! allocate resources, account latency, and mark stragglers — the clients
//! whose main-stage latency exceeded the tolerance and are therefore excluded
//! from this round's aggregation (they still receive the new global model).
//!
//! Also builds the aggregation plan: which side holds each global layer for
//! each client, which layers are *common* (client-side for some clients,
//! server-side for others, requiring the edge/main server parameter exchange
//! before a consistent average), and the dataset-proportional weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, EnvStats, EnvironmentSample};
use crate::error::{Error, Result};
use crate::latency::{per_round_latency, Allocation, LatencyBreakdown};
use crate::profile::{ModelProfile, SystemProfile};

const ROUND_STREAM: u64 = 0xE72;

/// Which copy of a layer a client contributes to aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Held client-side (layer index at most the client's cut).
    Client,
    /// Held in the client's server-side model at the main server.
    Server,
}

/// Per-layer ownership map and aggregation weights for a cut vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub num_layers: usize,
    /// Dataset-proportional weight per client; sums to 1 and applies to
    /// every layer (all K clients contribute to every layer, one side each).
    pub weights: Vec<f64>,
    /// `sources[layer][client]`, layers 0-based.
    pub sources: Vec<Vec<Side>>,
    /// 1-based indices of common layers: `min_cut < j <= max_cut`.
    pub common_layers: Vec<usize>,
}

/// Builds the plan for a feasible cut vector. Layer `j` (1-based) is held
/// client-side by exactly the clients with `cut >= j`; the main server holds
/// it for the rest, so every layer receives all `K` contributions.
pub fn build_aggregation_plan(
    cuts: &[usize],
    num_layers: usize,
    dataset_size: &[u64],
) -> Result<AggregationPlan> {
    if cuts.is_empty() || cuts.len() != dataset_size.len() {
        return Err(Error::Domain(format!(
            "{} cuts for {} dataset sizes",
            cuts.len(),
            dataset_size.len()
        )));
    }
    if let Some(&bad) = cuts.iter().find(|c| **c > num_layers) {
        return Err(Error::Domain(format!(
            "cut {bad} exceeds layer count {num_layers}"
        )));
    }
    let total: u64 = dataset_size.iter().sum();
    if total == 0 {
        return Err(Error::Domain("dataset sizes sum to zero".into()));
    }
    let weights: Vec<f64> = dataset_size
        .iter()
        .map(|&d| d as f64 / total as f64)
        .collect();
    let min_cut = *cuts.iter().min().unwrap();
    let max_cut = *cuts.iter().max().unwrap();
    let sources: Vec<Vec<Side>> = (1..=num_layers)
        .map(|layer| {
            cuts.iter()
                .map(|&c| if c >= layer { Side::Client } else { Side::Server })
                .collect()
        })
        .collect();
    let common_layers: Vec<usize> = (1..=num_layers)
        .filter(|&j| j > min_cut && j <= max_cut)
        .collect();
    Ok(AggregationPlan {
        num_layers,
        weights,
        sources,
        common_layers,
    })
}

/// Everything recorded about one simulated round.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub allocation: Allocation,
    pub breakdown: LatencyBreakdown,
    /// Clients aggregated this round (everyone not in the straggler set).
    pub participating: Vec<usize>,
    /// Sum of round totals up to and including this round.
    pub cumulative_latency: f64,
}

impl RoundRecord {
    pub fn stragglers(&self) -> &[usize] {
        &self.breakdown.stragglers
    }
}

/// Evaluates one round: latency breakdown, straggler exclusion, cumulative
/// accounting. Infeasible allocations propagate the named-constraint error.
pub fn run_round(
    round: u64,
    alloc: Allocation,
    env: &EnvironmentSample,
    model: &ModelProfile,
    sys: &SystemProfile,
    cumulative_before: f64,
) -> Result<RoundRecord> {
    let breakdown = per_round_latency(model, sys, &alloc, env)?;
    let participating: Vec<usize> = (0..sys.num_clients)
        .filter(|k| !breakdown.stragglers.contains(k))
        .collect();
    let cumulative_latency = cumulative_before + breakdown.round_total;
    Ok(RoundRecord {
        round,
        allocation: alloc,
        breakdown,
        participating,
        cumulative_latency,
    })
}

/// Runs `rounds` rounds: the cut vector is fixed for the whole run (chosen by
/// the policy's long-timescale rule before round 0), while `allocate` builds
/// the short-timescale decision against each round's fresh environment draw.
/// Deterministic in `seed`.
pub fn run_training<F>(
    rounds: u64,
    stats: &EnvStats,
    model: &ModelProfile,
    sys: &SystemProfile,
    seed: u64,
    cuts: &[usize],
    mut allocate: F,
) -> Result<Vec<RoundRecord>>
where
    F: FnMut(&[usize], &EnvironmentSample) -> Result<Allocation>,
{
    let mut records = Vec::with_capacity(rounds as usize);
    let mut cumulative = 0.0;
    let round_seed = derive_seed(seed, ROUND_STREAM);
    for a in 0..rounds {
        let env = stats.sample(derive_seed(round_seed, a));
        let alloc = allocate(cuts, &env)?;
        let record = run_round(a, alloc, &env, model, sys, cumulative)?;
        cumulative = record.cumulative_latency;
        records.push(record);
    }
    Ok(records)
}

/// One JSON object per line.
pub fn write_round_log<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Summary CSV: round, total, straggler count, cumulative.
pub fn write_round_summary_csv<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    writeln!(out, "round,round_total,stragglers,cumulative_latency")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.round,
            r.breakdown.round_total,
            r.stragglers().len(),
            r.cumulative_latency
        )?;
    }
    Ok(())
}
