//! Experiment runner: expand a config into (axis, value, policy, seed) jobs,
//! run them, and emit tidy result rows. Jobs are independent and run on a
//! worker pool; rows are sorted deterministically before writing, and the
//! same seed is reused across sweep points (common random numbers), so two
//! runs of the same config produce byte-identical CSVs.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::config::{ConfigFile, Overrides};
use crate::error::Result;
use crate::policy::{choose_cuts, simulate_with_cuts, CutRule, PipelineBudgets, Policy, OPT};

/// Which knob a result row varied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepAxis {
    /// The configured operating point, no override.
    Base,
    Bandwidth,
    ServerFreq,
    ServerPower,
    Heterogeneity,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Base => "base",
            SweepAxis::Bandwidth => "bandwidth",
            SweepAxis::ServerFreq => "server_freq",
            SweepAxis::ServerPower => "server_power",
            SweepAxis::Heterogeneity => "heterogeneity",
        }
    }
}

/// One (axis, value, policy, seed) result.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub policy: &'static str,
    pub seed: u64,
    pub mean_round_latency: f64,
    pub cumulative_latency: f64,
    /// "ok" or the error that killed this run; failures never abort the
    /// experiment.
    pub status: String,
}

fn overrides_for(axis: SweepAxis, value: f64) -> Overrides {
    let mut ov = Overrides::default();
    match axis {
        SweepAxis::Base => {}
        SweepAxis::Bandwidth => ov.subchannel_bandwidth = Some(value),
        SweepAxis::ServerFreq => ov.server_freq = Some(value),
        SweepAxis::ServerPower => ov.server_power = Some(value),
        SweepAxis::Heterogeneity => ov.heterogeneity = Some(value),
    }
    ov
}

/// Cache key: runs with identical overrides share results across axes.
fn job_key(ov: &Overrides, policy: &str, seed: u64) -> (u64, u64, u64, u64, String, u64) {
    let bits = |v: Option<f64>| v.map(f64::to_bits).unwrap_or(u64::MAX);
    (
        bits(ov.subchannel_bandwidth),
        bits(ov.server_freq),
        bits(ov.server_power),
        bits(ov.heterogeneity),
        policy.to_string(),
        seed,
    )
}

pub fn budgets_from(cfg: &ConfigFile) -> PipelineBudgets {
    PipelineBudgets {
        freq_max_iters: cfg.solver.freq_max_iters,
        round_power_nodes: cfg.solver.power_max_nodes,
        fitness_power_nodes: cfg.solver.fitness_power_max_nodes,
        fp_sweeps: cfg.solver.fp_sweeps,
        fitness_fp_sweeps: 1,
    }
}

pub fn ga_from(cfg: &ConfigFile) -> crate::cutlayer::GaConfig {
    crate::cutlayer::GaConfig {
        population_size: cfg.ga.population_size,
        stagnation_generations: cfg.ga.stagnation_generations,
        crossover_rate: cfg.ga.crossover_rate,
        mutation_rate: cfg.ga.mutation_rate,
        max_generations: cfg.ga.max_generations,
        seed: 0,
        saa_samples: cfg.ga.saa_samples,
    }
}

/// Runs every (axis point, policy, seed) combination in the config and
/// returns rows sorted by (axis, value, policy, seed).
pub fn run_experiment(cfg: &ConfigFile) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let policies: Vec<Policy> = cfg
        .experiment
        .policies
        .iter()
        .map(|n| Policy::by_name(n))
        .collect::<Result<_>>()?;
    let budgets = budgets_from(cfg);
    let ga = ga_from(cfg);

    let sweeps = &cfg.experiment.sweeps;
    let mut points: Vec<(SweepAxis, f64)> = Vec::new();
    for &v in &sweeps.bandwidth {
        points.push((SweepAxis::Bandwidth, v));
    }
    for &v in &sweeps.server_freq {
        points.push((SweepAxis::ServerFreq, v));
    }
    for &v in &sweeps.server_power {
        points.push((SweepAxis::ServerPower, v));
    }
    for &v in &sweeps.heterogeneity {
        points.push((SweepAxis::Heterogeneity, v));
    }
    if points.is_empty() {
        points.push((SweepAxis::Base, 0.0));
    }

    // identical overrides may appear on several axes; compute each distinct
    // (overrides, policy, seed) job once
    let mut unique: Vec<(Overrides, Policy, u64)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(axis, value) in &points {
        let ov = overrides_for(axis, value);
        for &policy in &policies {
            for &seed in &cfg.experiment.seeds {
                if seen.insert(job_key(&ov, policy.name, seed)) {
                    unique.push((ov, policy, seed));
                }
            }
        }
    }

    // phase 1: the optimized cut rule scores candidates with the same
    // fitness pipeline for every policy that uses it, so one GA run per
    // (overrides, seed) serves them all
    let ga_key = |ov: &Overrides, seed: u64| job_key(ov, "", seed);
    let mut ga_jobs: Vec<(Overrides, u64)> = Vec::new();
    let mut ga_seen = std::collections::HashSet::new();
    for (ov, policy, seed) in &unique {
        if policy.cut == CutRule::Optimized && ga_seen.insert(ga_key(ov, *seed)) {
            ga_jobs.push((*ov, *seed));
        }
    }
    type CutsOutcome = std::result::Result<Vec<usize>, String>;
    let ga_choices: HashMap<_, CutsOutcome> = ga_jobs
        .into_par_iter()
        .map(|(ov, seed)| {
            let outcome = cfg
                .instance(&ov)
                .and_then(|inst| {
                    choose_cuts(OPT, &ga, &inst.stats, &inst.model, &inst.sys, &budgets, seed)
                })
                .map(|choice| choice.cuts)
                .map_err(|e| e.to_string());
            (ga_key(&ov, seed), outcome)
        })
        .collect();

    // phase 2: per-policy simulations
    type Outcome = std::result::Result<(f64, f64), String>;
    let results: HashMap<_, Outcome> = unique
        .into_par_iter()
        .map(|(ov, policy, seed)| {
            let outcome = cfg
                .instance(&ov)
                .and_then(|inst| {
                    let cuts = match policy.cut {
                        CutRule::Optimized => match &ga_choices[&ga_key(&ov, seed)] {
                            Ok(cuts) => cuts.clone(),
                            Err(msg) => {
                                return Err(crate::error::Error::InvalidConfig(msg.clone()))
                            }
                        },
                        _ => {
                            choose_cuts(
                                policy, &ga, &inst.stats, &inst.model, &inst.sys, &budgets, seed,
                            )?
                            .cuts
                        }
                    };
                    simulate_with_cuts(
                        policy, cuts, &inst.stats, &inst.model, &inst.sys, &budgets, seed,
                    )
                })
                .map(|run| (run.mean_round_latency(), run.cumulative_latency()))
                .map_err(|e| e.to_string());
            (job_key(&ov, policy.name, seed), outcome)
        })
        .collect();

    let mut rows = Vec::new();
    for &(axis, value) in &points {
        let ov = overrides_for(axis, value);
        for &policy in &policies {
            for &seed in &cfg.experiment.seeds {
                let row = match &results[&job_key(&ov, policy.name, seed)] {
                    Ok((mean, cumulative)) => ResultRow {
                        axis,
                        value,
                        policy: policy.name,
                        seed,
                        mean_round_latency: *mean,
                        cumulative_latency: *cumulative,
                        status: "ok".into(),
                    },
                    Err(msg) => ResultRow {
                        axis,
                        value,
                        policy: policy.name,
                        seed,
                        mean_round_latency: f64::NAN,
                        cumulative_latency: f64::NAN,
                        status: format!("error: {msg}"),
                    },
                };
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| {
        a.axis
            .cmp(&b.axis)
            .then(a.value.partial_cmp(&b.value).unwrap())
            .then(a.policy.cmp(b.policy))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

/// Tidy CSV, one row per (axis, value, policy, seed).
pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "axis,value,policy,seed,mean_round_latency,cumulative_latency,status"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.policy,
            r.seed,
            r.mean_round_latency,
            r.cumulative_latency,
            r.status
        )?;
    }
    Ok(())
}

/// Mean (over seeds) of the mean single-round latency for one policy at each
/// point of an axis, sorted by the axis value. Rows with errors are skipped.
pub fn policy_curve(rows: &[ResultRow], axis: SweepAxis, policy: &str) -> Vec<(f64, f64)> {
    let mut by_value: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows {
        if r.axis != axis || r.policy != policy || r.status != "ok" {
            continue;
        }
        match by_value.iter_mut().find(|(v, _)| *v == r.value) {
            Some((_, acc)) => acc.push(r.mean_round_latency),
            None => by_value.push((r.value, vec![r.mean_round_latency])),
        }
    }
    by_value.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    by_value
        .into_iter()
        .map(|(v, acc)| (v, acc.iter().sum::<f64>() / acc.len() as f64))
        .collect()
}
