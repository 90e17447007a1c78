//! Allocation policies: the full optimization pipeline and the one-axis
//! baselines it is compared against.
//!
//! A policy decomposes into four rules, one per decision dimension. Each
//! baseline overrides exactly one rule and keeps the optimized solvers for
//! the rest:
//!
//! | name | cut layers            | server freq | subchannels      | downlink power |
//! |------|-----------------------|-------------|------------------|----------------|
//! | OPT  | GA over SAA fitness   | Lagrangian  | branch and bound | bisection      |
//! | RCLS | uniform random        | Lagrangian  | branch and bound | bisection      |
//! | SCLS | min of max cuts       | Lagrangian  | branch and bound | bisection      |
//! | ECFA | GA                    | even split  | branch and bound | bisection      |
//! | GTRA | GA                    | Lagrangian  | greedy best gain | bisection      |
//! | ETRA | GA                    | Lagrangian  | branch and bound | even split     |
//!
//! The short-timescale solve alternates: round-robin provisional
//! transmission -> frequency shares -> edge-uplink, main-stage, and
//! edge-downlink power stages (each stage seeing the latencies fixed so far
//! as constant offsets) -> optionally repeat -> keep the candidate with the
//! best realized round latency.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cutlayer::{optimize_cuts, CutSolution, GaConfig};
use crate::env::{derive_seed, EnvStats, EnvironmentSample, Link, LinkMap};
use crate::error::{Error, Result};
use crate::freq::{solve_freq, solve_freq_traced, DualState, FreqSubproblem, FreqTraceRow};
use crate::latency::{self, Allocation};
use crate::power::{
    evaluate_assignment, solve_power_with, DownlinkRule, LinkInstance, LinkPowerCap,
    PowerSubproblem, SearchEvent, SearchOptions,
};
use crate::profile::{ModelProfile, SystemProfile};
use crate::protocol::{run_training, RoundRecord};

const RCLS_STREAM: u64 = 0x6C5;
const CUT_STREAM: u64 = 0xC07;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutRule {
    /// GA over the SAA latency estimate.
    Optimized,
    /// Uniform random feasible cut per client.
    RandomFeasible,
    /// Everyone uses the minimum of the per-client maximum cuts.
    ShallowestCommon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqRule {
    Lagrangian,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignRule {
    BranchAndBound,
    /// Each subchannel goes to its best-gain client, then starved loaded
    /// clients steal their best subchannel from owners that can spare one.
    GreedyBestGain,
}

/// A named policy: one rule per decision dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub name: &'static str,
    pub cut: CutRule,
    pub freq: FreqRule,
    pub assign: AssignRule,
    pub down_power: DownlinkRule,
}

pub const OPT: Policy = Policy {
    name: "OPT",
    cut: CutRule::Optimized,
    freq: FreqRule::Lagrangian,
    assign: AssignRule::BranchAndBound,
    down_power: DownlinkRule::Bisection,
};

pub const ALL_POLICIES: [Policy; 6] = [
    OPT,
    Policy {
        name: "RCLS",
        cut: CutRule::RandomFeasible,
        ..OPT
    },
    Policy {
        name: "SCLS",
        cut: CutRule::ShallowestCommon,
        ..OPT
    },
    Policy {
        name: "ECFA",
        freq: FreqRule::Even,
        ..OPT
    },
    Policy {
        name: "GTRA",
        assign: AssignRule::GreedyBestGain,
        ..OPT
    },
    Policy {
        name: "ETRA",
        down_power: DownlinkRule::EvenSplit,
        ..OPT
    },
];

impl Policy {
    pub fn by_name(name: &str) -> Result<Policy> {
        ALL_POLICIES
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .copied()
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown policy {name:?}; known: {}",
                    ALL_POLICIES.map(|p| p.name).join(", ")
                ))
            })
    }
}

/// Iteration and node budgets for the short-timescale solvers. GA fitness
/// evaluation solves the pipeline thousands of times, so it gets its own
/// (cheaper) knobs.
#[derive(Debug, Clone, Copy)]
pub struct PipelineBudgets {
    pub freq_max_iters: usize,
    pub round_power_nodes: Option<u64>,
    pub fitness_power_nodes: Option<u64>,
    pub fp_sweeps: usize,
    pub fitness_fp_sweeps: usize,
}

impl Default for PipelineBudgets {
    fn default() -> Self {
        PipelineBudgets {
            freq_max_iters: 10_000,
            round_power_nodes: Some(2_000),
            fitness_power_nodes: Some(96),
            fp_sweeps: 2,
            fitness_fp_sweeps: 1,
        }
    }
}

/// Solver internals captured by [`RoundAllocator::allocate_traced`]:
/// frequency iterates (all sweeps concatenated) and the branch-and-bound
/// events of each transmission stage.
#[derive(Debug, Clone, Default)]
pub struct PipelineTrace {
    pub freq: Vec<FreqTraceRow>,
    pub power: Vec<(&'static str, Vec<SearchEvent>)>,
}

/// Short-timescale allocator: builds a full [`Allocation`] for one round
/// given the cut vector and the round's environment draw.
pub struct RoundAllocator<'a> {
    pub model: &'a ModelProfile,
    pub sys: &'a SystemProfile,
    pub freq: FreqRule,
    pub assign: AssignRule,
    pub down_power: DownlinkRule,
    pub power_nodes: Option<u64>,
    pub freq_max_iters: usize,
    pub fp_sweeps: usize,
}

impl<'a> RoundAllocator<'a> {
    pub fn for_policy(
        policy: Policy,
        model: &'a ModelProfile,
        sys: &'a SystemProfile,
        budgets: &PipelineBudgets,
    ) -> Self {
        RoundAllocator {
            model,
            sys,
            freq: policy.freq,
            assign: policy.assign,
            down_power: policy.down_power,
            power_nodes: budgets.round_power_nodes,
            freq_max_iters: budgets.freq_max_iters,
            fp_sweeps: budgets.fp_sweeps,
        }
    }

    /// Round-robin subchannels, cap uplink powers, even downlink split: the
    /// provisional decision the pipeline starts from.
    pub fn initial_allocation(&self, cuts: &[usize]) -> Allocation {
        let k = self.sys.num_clients;
        let assign: Vec<Option<usize>> = (0..self.sys.subchannel_count)
            .map(|i| Some(i % k))
            .collect();
        Allocation {
            cut: cuts.to_vec(),
            server_freq_share: vec![self.sys.server_freq / k as f64; k],
            subchannel_assign: LinkMap::uniform(assign),
            power: LinkMap::from_fn(|link| {
                if link.is_uplink() {
                    self.sys.client_power_cap.clone()
                } else {
                    let budget = match link {
                        Link::MsDown => self.sys.ms_power_cap,
                        _ => self.sys.es_power_cap,
                    };
                    vec![budget / k as f64; k]
                }
            }),
        }
    }

    /// Full alternating solve; returns the best candidate seen. The first
    /// pass refines the transmission stages at the initial even frequency
    /// split (so the even-frequency candidate is always in the pool and the
    /// frequency solve sees realistic transmission latencies in its
    /// constants), then frequency and power alternate.
    pub fn allocate(&self, cuts: &[usize], env: &EnvironmentSample) -> Result<Allocation> {
        self.allocate_impl(cuts, env, None)
    }

    /// As [`RoundAllocator::allocate`], recording the frequency-solver
    /// iterates and the power-search events of every stage.
    pub fn allocate_traced(
        &self,
        cuts: &[usize],
        env: &EnvironmentSample,
    ) -> Result<(Allocation, PipelineTrace)> {
        let mut trace = PipelineTrace::default();
        let alloc = self.allocate_impl(cuts, env, Some(&mut trace))?;
        Ok((alloc, trace))
    }

    fn allocate_impl(
        &self,
        cuts: &[usize],
        env: &EnvironmentSample,
        mut trace: Option<&mut PipelineTrace>,
    ) -> Result<Allocation> {
        let mut alloc = self.initial_allocation(cuts);
        let mut best = alloc.clone();
        let mut best_total =
            latency::per_round_latency(self.model, self.sys, &alloc, env)?.round_total;
        let consider =
            |alloc: &Allocation, best: &mut Allocation, best_total: &mut f64| -> Result<()> {
                let total =
                    latency::per_round_latency(self.model, self.sys, alloc, env)?.round_total;
                if total < *best_total {
                    *best_total = total;
                    *best = alloc.clone();
                }
                Ok(())
            };
        self.solve_power_stages(&mut alloc, env, trace.as_deref_mut())?;
        consider(&alloc, &mut best, &mut best_total)?;
        for _ in 0..self.fp_sweeps.max(1) {
            self.solve_freq_stage(&mut alloc, env, trace.as_deref_mut())?;
            self.solve_power_stages(&mut alloc, env, trace.as_deref_mut())?;
            consider(&alloc, &mut best, &mut best_total)?;
        }
        Ok(best)
    }

    /// Round latency under this allocator; infeasible solves fall back to
    /// the provisional allocation so a sample always yields its capped
    /// latency instead of aborting an SAA mean.
    pub fn round_latency_or_fallback(&self, cuts: &[usize], env: &EnvironmentSample) -> f64 {
        let total = self
            .allocate(cuts, env)
            .and_then(|a| latency::per_round_latency(self.model, self.sys, &a, env))
            .map(|b| b.round_total);
        match total {
            Ok(t) => t,
            Err(_) => {
                let fallback = self.initial_allocation(cuts);
                latency::per_round_latency(self.model, self.sys, &fallback, env)
                    .map(|b| b.round_total)
                    .unwrap_or(f64::INFINITY)
            }
        }
    }

    fn solve_freq_stage(
        &self,
        alloc: &mut Allocation,
        env: &EnvironmentSample,
        trace: Option<&mut PipelineTrace>,
    ) -> Result<()> {
        let k = self.sys.num_clients;
        match self.freq {
            FreqRule::Even => {
                alloc.server_freq_share = vec![self.sys.server_freq / k as f64; k];
            }
            FreqRule::Lagrangian => {
                let batches = self.sys.batches_per_round as f64;
                let b = self.sys.batch_size as f64;
                let mut m = Vec::with_capacity(k);
                let mut n = Vec::with_capacity(k);
                for c in 0..k {
                    let tc =
                        latency::client_compute_latency(self.model, self.sys, env, c, alloc.cut[c])?;
                    let ms_up = latency::smashed_uplink_latency(self.model, self.sys, alloc, env, c)?;
                    let ms_down =
                        latency::gradient_downlink_latency(self.model, self.sys, alloc, env, c)?;
                    let (es_up, es_down) =
                        latency::aggregation_latencies(self.model, self.sys, alloc, env, c)?;
                    m.push(batches * (tc + ms_up + ms_down) + es_up + es_down);
                    let cut = alloc.cut[c];
                    n.push(
                        b * (self.model.server_fp_flops[cut] + self.model.server_bp_flops[cut])
                            / self.sys.server_intensity,
                    );
                }
                let sub = FreqSubproblem {
                    m,
                    n,
                    budget: self.sys.server_freq,
                };
                let dual0 = DualState::defaults(k);
                let sol = match trace {
                    Some(t) => solve_freq_traced(&sub, &dual0, self.freq_max_iters, &mut t.freq)?,
                    None => solve_freq(&sub, &dual0, self.freq_max_iters)?,
                };
                alloc.server_freq_share = sol.shares;
            }
        }
        Ok(())
    }

    /// The three transmission stages, in dependency order: edge uplink
    /// (model upload), then the main stage pair (smashed up + gradients
    /// down, whose objective includes the now-fixed edge-uplink term), then
    /// the edge downlink distribution.
    fn solve_power_stages(
        &self,
        alloc: &mut Allocation,
        env: &EnvironmentSample,
        mut trace: Option<&mut PipelineTrace>,
    ) -> Result<()> {
        let k = self.sys.num_clients;
        let b = self.sys.batch_size as f64;
        let batches = self.sys.batches_per_round as f64;

        let compute_offsets: Vec<f64> = (0..k)
            .map(|c| {
                let tc =
                    latency::client_compute_latency(self.model, self.sys, env, c, alloc.cut[c])?;
                let ts = latency::server_compute_latency(self.model, self.sys, alloc, c)?;
                Ok(batches * (tc + ts))
            })
            .collect::<Result<_>>()?;

        // stage 1: edge uplink
        let es_up_loads: Vec<f64> = (0..k).map(|c| self.model.model_bits[alloc.cut[c]]).collect();
        let stage1 = PowerSubproblem {
            bandwidth: self.sys.subchannel_bandwidth,
            noise_psd: self.sys.noise_psd,
            offsets: compute_offsets.clone(),
            links: vec![LinkInstance {
                link: Link::EsUp,
                loads: es_up_loads,
                gains: env.gain[Link::EsUp].clone(),
                cap: LinkPowerCap::PerClient(self.sys.client_power_cap.clone()),
            }],
        };
        self.apply_stage(alloc, &stage1, "es_up", trace.as_deref_mut())?;

        // stage 2: main-stage pair, with the realized edge-uplink latency in
        // the offsets
        let offsets2: Vec<f64> = (0..k)
            .map(|c| {
                let (es_up, _) =
                    latency::aggregation_latencies(self.model, self.sys, alloc, env, c)?;
                Ok(compute_offsets[c] + es_up)
            })
            .collect::<Result<_>>()?;
        let stage2 = PowerSubproblem {
            bandwidth: self.sys.subchannel_bandwidth,
            noise_psd: self.sys.noise_psd,
            offsets: offsets2,
            links: vec![
                LinkInstance {
                    link: Link::MsUp,
                    loads: (0..k)
                        .map(|c| batches * b * self.model.smashed_bits[alloc.cut[c]])
                        .collect(),
                    gains: env.gain[Link::MsUp].clone(),
                    cap: LinkPowerCap::PerClient(self.sys.client_power_cap.clone()),
                },
                LinkInstance {
                    link: Link::MsDown,
                    loads: (0..k)
                        .map(|c| batches * b * self.model.gradient_bits[alloc.cut[c]])
                        .collect(),
                    gains: env.gain[Link::MsDown].clone(),
                    cap: LinkPowerCap::Shared {
                        budget: self.sys.ms_power_cap,
                        rule: self.down_power,
                    },
                },
            ],
        };
        self.apply_stage(alloc, &stage2, "ms_pair", trace.as_deref_mut())?;

        // stage 3: edge downlink (outside the straggler cap, so solved for
        // its own bottleneck)
        let stage3 = PowerSubproblem {
            bandwidth: self.sys.subchannel_bandwidth,
            noise_psd: self.sys.noise_psd,
            offsets: vec![0.0; k],
            links: vec![LinkInstance {
                link: Link::EsDown,
                loads: (0..k).map(|c| self.model.model_bits[alloc.cut[c]]).collect(),
                gains: env.gain[Link::EsDown].clone(),
                cap: LinkPowerCap::Shared {
                    budget: self.sys.es_power_cap,
                    rule: self.down_power,
                },
            }],
        };
        self.apply_stage(alloc, &stage3, "es_down", trace.as_deref_mut())?;
        Ok(())
    }

    /// Solves one stage under the assignment rule and writes the result into
    /// the allocation.
    fn apply_stage(
        &self,
        alloc: &mut Allocation,
        sub: &PowerSubproblem,
        stage: &'static str,
        trace: Option<&mut PipelineTrace>,
    ) -> Result<()> {
        let greedy = greedy_assignment(sub);
        let (assignment, powers) = match self.assign {
            AssignRule::GreedyBestGain => {
                let (powers, _) = evaluate_assignment(sub, &greedy);
                (greedy, powers)
            }
            AssignRule::BranchAndBound => {
                // greedy seeds the incumbent, so a truncated search is never
                // worse than the greedy baseline
                let opts = SearchOptions {
                    max_nodes: self.power_nodes,
                    record_events: trace.is_some(),
                    seed_assignment: Some(greedy),
                };
                let mut sol = solve_power_with(sub, &opts)?;
                if let Some(t) = trace {
                    t.power.push((stage, std::mem::take(&mut sol.events)));
                }
                (sol.assignment, sol.powers)
            }
        };
        for (li, link_inst) in sub.links.iter().enumerate() {
            alloc.subchannel_assign[link_inst.link] =
                assignment[li].iter().map(|&c| Some(c)).collect();
            alloc.power[link_inst.link] = powers[li].clone();
        }
        Ok(())
    }
}

/// Best-gain greedy with coverage repair, per link.
pub fn greedy_assignment(sub: &PowerSubproblem) -> Vec<Vec<usize>> {
    let k = sub.num_clients();
    sub.links
        .iter()
        .map(|li| {
            let mut assign: Vec<usize> = li
                .gains
                .iter()
                .map(|row| {
                    let mut best = 0usize;
                    for (c, g) in row.iter().enumerate() {
                        if *g > row[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            // starved loaded clients steal their best subchannel from an
            // owner that keeps coverage (more than one subchannel, or no
            // load of its own)
            loop {
                let mut counts = vec![0usize; k];
                for &owner in &assign {
                    counts[owner] += 1;
                }
                let starving = (0..k).find(|&c| li.loads[c] > 0.0 && counts[c] == 0);
                let Some(c) = starving else { break };
                let mut candidate: Option<usize> = None;
                for (s, &owner) in assign.iter().enumerate() {
                    let spare = counts[owner] > 1 || li.loads[owner] == 0.0;
                    if spare
                        && candidate
                            .map(|cur| li.gains[s][c] > li.gains[cur][c])
                            .unwrap_or(true)
                    {
                        candidate = Some(s);
                    }
                }
                match candidate {
                    Some(s) => assign[s] = c,
                    None => break,
                }
            }
            assign
        })
        .collect()
}

/// The long-timescale decision plus its provenance.
#[derive(Debug, Clone)]
pub struct CutChoice {
    pub cuts: Vec<usize>,
    /// GA details when the optimized cut rule ran.
    pub ga: Option<CutSolution>,
}

/// Applies the policy's long-timescale rule. The optimized rule always
/// scores candidates with the fully optimized short-timescale pipeline; the
/// baselines only change round-time behavior.
pub fn choose_cuts(
    policy: Policy,
    ga_cfg: &GaConfig,
    stats: &EnvStats,
    model: &ModelProfile,
    sys: &SystemProfile,
    budgets: &PipelineBudgets,
    seed: u64,
) -> Result<CutChoice> {
    match policy.cut {
        CutRule::ShallowestCommon => {
            let common = *sys.max_cut.iter().min().unwrap();
            Ok(CutChoice {
                cuts: vec![common; sys.num_clients],
                ga: None,
            })
        }
        CutRule::RandomFeasible => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RCLS_STREAM));
            let cuts = sys
                .max_cut
                .iter()
                .map(|&m| rng.random_range(0..=m))
                .collect();
            Ok(CutChoice { cuts, ga: None })
        }
        CutRule::Optimized => {
            let fitness_allocator = RoundAllocator {
                model,
                sys,
                freq: OPT.freq,
                assign: OPT.assign,
                down_power: OPT.down_power,
                power_nodes: budgets.fitness_power_nodes,
                freq_max_iters: budgets.freq_max_iters,
                fp_sweeps: budgets.fitness_fp_sweeps,
            };
            let cfg = GaConfig {
                seed: derive_seed(seed, CUT_STREAM),
                ..ga_cfg.clone()
            };
            let sol = optimize_cuts(&cfg, stats, &sys.max_cut, |cuts, env| {
                fitness_allocator.round_latency_or_fallback(cuts, env)
            })?;
            Ok(CutChoice {
                cuts: sol.cuts.clone(),
                ga: Some(sol),
            })
        }
    }
}

/// A complete policy run over `sys.total_rounds` rounds.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: &'static str,
    pub cuts: Vec<usize>,
    pub records: Vec<RoundRecord>,
}

impl PolicyRun {
    pub fn cumulative_latency(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.cumulative_latency)
            .unwrap_or(0.0)
    }

    pub fn mean_round_latency(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.cumulative_latency() / self.records.len() as f64
    }
}

/// Chooses the cut vector once, then simulates every round under the
/// policy's short-timescale rules. Deterministic in `seed`.
pub fn train_policy(
    policy: Policy,
    ga_cfg: &GaConfig,
    stats: &EnvStats,
    model: &ModelProfile,
    sys: &SystemProfile,
    budgets: &PipelineBudgets,
    seed: u64,
) -> Result<PolicyRun> {
    let choice = choose_cuts(policy, ga_cfg, stats, model, sys, budgets, seed)?;
    simulate_with_cuts(policy, choice.cuts, stats, model, sys, budgets, seed)
}

/// Simulates every round under the policy's short-timescale rules with a
/// long-timescale decision already made. Lets callers share one GA result
/// across the policies whose cut rule is the optimized one.
pub fn simulate_with_cuts(
    policy: Policy,
    cuts: Vec<usize>,
    stats: &EnvStats,
    model: &ModelProfile,
    sys: &SystemProfile,
    budgets: &PipelineBudgets,
    seed: u64,
) -> Result<PolicyRun> {
    let allocator = RoundAllocator::for_policy(policy, model, sys, budgets);
    let records = run_training(sys.total_rounds, stats, model, sys, seed, &cuts, |c, env| {
        allocator.allocate(c, env)
    })?;
    Ok(PolicyRun {
        policy: policy.name,
        cuts,
        records,
    })
}
