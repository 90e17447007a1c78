//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured runtime. Heavy criteria serialize on a gate so the reported
//! runtimes reflect exclusive use of the machine.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hsfl_core::config::{synthetic_model_profile, ConfigFile, Overrides};
use hsfl_core::cutlayer::{self, GaConfig};
use hsfl_core::env::{EnvStats, EnvironmentSample, Link, LinkMap};
use hsfl_core::experiment::{policy_curve, run_experiment, SweepAxis};
use hsfl_core::freq::{brute_force_freq, solve_freq, DualState, FreqSubproblem};
use hsfl_core::latency::{self, Allocation};
use hsfl_core::policy::{PipelineBudgets, RoundAllocator, OPT};
use hsfl_core::power::{
    enumerate_power, solve_power, DownlinkRule, LinkInstance, LinkPowerCap, PowerSubproblem,
};
use hsfl_core::profile::{ModelProfile, SystemProfile};
use hsfl_core::protocol::build_aggregation_plan;
use hsfl_core::splitnn::{
    self, aggregate_no_exchange, aggregate_with_exchange, dirichlet_label_split, full_train_step,
    linearly_separable, loss_gradient, model_loss, split_train_step, train_centralized,
    train_hsfl, Activation, LayeredModel, SplitState, ToyTrainConfig,
};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, started: Instant, detail: &str) {
    println!(
        "ACCEPTANCE {criterion} PASS ({:.1} s) — {detail}",
        started.elapsed().as_secs_f64()
    );
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        // covers both infinities and exact zeros
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------------------
// criterion 1: latency model vs independent scalar recomputation
// ---------------------------------------------------------------------------

struct RandomCase {
    model: ModelProfile,
    sys: SystemProfile,
    env: EnvironmentSample,
    alloc: Allocation,
}

fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let layers = rng.random_range(2..=6usize);
    let k = rng.random_range(1..=4usize);
    let subs = rng.random_range(k..=6usize);

    // monotone-by-construction workload tables
    let mut client_fp = vec![0.0];
    let mut acc = 0.0;
    for _ in 0..layers {
        acc += rng.random_range(1e5..1e8);
        client_fp.push(acc);
    }
    let total = *client_fp.last().unwrap();
    let model = ModelProfile {
        num_layers: layers,
        server_fp_flops: client_fp.iter().map(|c| total - c).collect(),
        client_bp_flops: client_fp.iter().map(|c| 2.0 * c).collect(),
        server_bp_flops: client_fp.iter().map(|c| 2.0 * (total - c)).collect(),
        client_fp_flops: client_fp.clone(),
        smashed_bits: (0..=layers).map(|_| rng.random_range(0.0..1e5)).collect(),
        gradient_bits: (0..=layers).map(|_| rng.random_range(0.0..1e5)).collect(),
        model_bits: {
            let mut m = vec![0.0];
            let mut acc = 0.0;
            for _ in 0..layers {
                acc += rng.random_range(0.0..1e7);
                m.push(acc);
            }
            m
        },
    };
    let sys = SystemProfile {
        num_clients: k,
        batch_size: rng.random_range(1..=512),
        batches_per_round: rng.random_range(1..=8),
        total_rounds: 1,
        server_freq: rng.random_range(1e11..2e12),
        server_intensity: rng.random_range(0.5..2.0),
        client_intensity: (0..k).map(|_| rng.random_range(0.5..2.0)).collect(),
        subchannel_count: subs,
        subchannel_bandwidth: rng.random_range(1e5..1e7),
        noise_psd: rng.random_range(1e-4..1e-2),
        client_power_cap: (0..k).map(|_| rng.random_range(1.0..10.0)).collect(),
        ms_power_cap: rng.random_range(50.0..200.0),
        es_power_cap: rng.random_range(50.0..200.0),
        straggler_tolerance: rng.random_range(1.0..100.0),
        max_cut: (0..k).map(|_| rng.random_range(0..=layers)).collect(),
        dataset_size: vec![100; k],
    };
    let env = EnvironmentSample {
        client_freq: (0..k).map(|_| rng.random_range(1e9..1e11)).collect(),
        gain: LinkMap::from_fn(|_| {
            (0..subs)
                .map(|_| (0..k).map(|_| rng.random_range(0.0..2.0)).collect())
                .collect()
        }),
    };
    let raw_shares: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let share_sum: f64 = raw_shares.iter().sum();
    let budget_use = rng.random_range(0.5..1.0) * sys.server_freq;
    let alloc = Allocation {
        cut: sys.max_cut.iter().map(|&m| rng.random_range(0..=m)).collect(),
        server_freq_share: raw_shares.iter().map(|s| s / share_sum * budget_use).collect(),
        subchannel_assign: LinkMap::from_fn(|_| {
            (0..subs)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.15 {
                        None
                    } else {
                        Some(rng.random_range(0..k))
                    }
                })
                .collect()
        }),
        power: {
            let caps = sys.client_power_cap.clone();
            let (ms, es) = (sys.ms_power_cap, sys.es_power_cap);
            let mut rngc = |cap: f64| rng.random_range(0.0..cap);
            LinkMap {
                ms_up: caps.iter().map(|c| rngc(*c)).collect(),
                es_up: caps.iter().map(|c| rngc(*c)).collect(),
                ms_down: (0..k).map(|_| rngc(ms / k as f64)).collect(),
                es_down: (0..k).map(|_| rngc(es / k as f64)).collect(),
            }
        },
    };
    RandomCase {
        model,
        sys,
        env,
        alloc,
    }
}

/// Straight-line recomputation, written against the formulas directly and
/// using `ln` rather than `log2`.
fn oracle_rate(case: &RandomCase, link: Link, k: usize) -> f64 {
    let mut rate = 0.0;
    for (i, owner) in case.alloc.subchannel_assign[link].iter().enumerate() {
        if *owner == Some(k) {
            let snr = case.alloc.power[link][k] * case.env.gain[link][i][k] / case.sys.noise_psd;
            rate += case.sys.subchannel_bandwidth * (1.0 + snr).ln() / std::f64::consts::LN_2;
        }
    }
    rate
}

fn oracle_transfer(bits: f64, rate: f64) -> f64 {
    if bits == 0.0 {
        0.0
    } else if rate == 0.0 {
        f64::INFINITY
    } else {
        bits / rate
    }
}

#[test]
fn c1_latency_model_matches_scalar_recomputation() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut zero_rate_seen = 0u32;
    let mut capped_seen = 0u32;
    for trial in 0..1000 {
        let case = random_case(&mut rng);
        let (model, sys, env, alloc) = (&case.model, &case.sys, &case.env, &case.alloc);
        let b = sys.batch_size as f64;
        let n = sys.batches_per_round as f64;
        let tau = sys.straggler_tolerance;

        let breakdown = latency::per_round_latency(model, sys, alloc, env).unwrap();
        let mut worst_contribution = f64::NEG_INFINITY;
        let mut worst_down = f64::NEG_INFINITY;
        for k in 0..sys.num_clients {
            let l = alloc.cut[k];
            let tc = b * model.client_fp_flops[l] / (env.client_freq[k] * sys.client_intensity[k])
                + b * model.client_bp_flops[l] / (env.client_freq[k] * sys.client_intensity[k]);
            let ts = b * model.server_fp_flops[l]
                / (alloc.server_freq_share[k] * sys.server_intensity)
                + b * model.server_bp_flops[l]
                    / (alloc.server_freq_share[k] * sys.server_intensity);
            let up = oracle_transfer(b * model.smashed_bits[l], oracle_rate(&case, Link::MsUp, k));
            let down =
                oracle_transfer(b * model.gradient_bits[l], oracle_rate(&case, Link::MsDown, k));
            let es_up = oracle_transfer(model.model_bits[l], oracle_rate(&case, Link::EsUp, k));
            let es_down =
                oracle_transfer(model.model_bits[l], oracle_rate(&case, Link::EsDown, k));

            let c = &breakdown.per_client[k];
            for (name, got, want) in [
                ("client_compute", c.client_compute, tc),
                ("server_compute", c.server_compute, ts),
                ("ms_uplink", c.ms_uplink, up),
                ("ms_downlink", c.ms_downlink, down),
                ("es_uplink", c.es_uplink, es_up),
                ("es_downlink", c.es_downlink, es_down),
            ] {
                assert!(
                    rel_diff(got, want) <= 1e-12,
                    "trial {trial}, client {k}, {name}: {got} vs {want}"
                );
            }
            let uncapped = n * (tc + ts + up + down) + es_up;
            let contribution = uncapped.min(tau);
            assert!(
                rel_diff(c.per_round_contribution, contribution) <= 1e-12,
                "trial {trial}, client {k} contribution"
            );
            // straggler set is exactly the tau rule
            assert_eq!(
                breakdown.stragglers.contains(&k),
                uncapped > tau,
                "trial {trial}, client {k} straggler flag"
            );
            if uncapped > tau {
                capped_seen += 1;
            }
            if up.is_infinite() || down.is_infinite() || es_up.is_infinite() {
                zero_rate_seen += 1;
            }
            worst_contribution = worst_contribution.max(contribution);
            worst_down = worst_down.max(es_down);
        }
        assert!(
            rel_diff(breakdown.round_total, worst_contribution + worst_down) <= 1e-12,
            "trial {trial} round total"
        );
        // cap invariant
        assert!(breakdown.round_total <= tau + worst_down + 1e-12 * tau);
    }
    assert!(zero_rate_seen > 50, "zero-rate sentinels barely exercised");
    assert!(capped_seen > 50, "tau cap barely exercised");
    report(
        "C1",
        started,
        &format!(
            "1000 random cases match to 1e-12; {capped_seen} tau-capped and {zero_rate_seen} zero-rate clients exercised"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: frequency allocator vs grid oracle
// ---------------------------------------------------------------------------

/// Independent exact optimum: the worst term is minimized when every client
/// with server work is equalized, so the optimum solves
/// `sum n_k / (T - m_k) = budget` (or is pinned by the largest constant m).
fn exact_freq_optimum(sub: &FreqSubproblem) -> f64 {
    let active: Vec<usize> = (0..sub.m.len()).filter(|&i| sub.n[i] > 0.0).collect();
    let passive_max = (0..sub.m.len())
        .filter(|i| !active.contains(i))
        .map(|i| sub.m[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if active.is_empty() {
        return passive_max;
    }
    let m_max = active
        .iter()
        .map(|&i| sub.m[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let use_at = |t: f64| -> f64 { active.iter().map(|&i| sub.n[i] / (t - sub.m[i])).sum() };
    let mut lo = m_max;
    let mut hi = m_max.max(1.0) + 1.0;
    while use_at(hi) > sub.budget {
        hi = m_max + (hi - m_max) * 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if use_at(mid) > sub.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.max(passive_max)
}

#[test]
fn c2_freq_solver_vs_grid_oracle() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut worst_gap: f64 = 0.0;
    for trial in 0..200 {
        let k = rng.random_range(2..=4usize);
        let scale = 10f64.powi(rng.random_range(-1..=10));
        let sub = FreqSubproblem {
            m: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
            n: (0..k)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.1 {
                        0.0
                    } else {
                        rng.random_range(0.1..5.0) * scale
                    }
                })
                .collect(),
            budget: rng.random_range(0.5..10.0) * scale,
        };
        let sol = solve_freq(&sub, &DualState::defaults(k), 10_000).unwrap();
        let oracle = brute_force_freq(&sub, 200).unwrap();
        // grid quantization can leave the 200-step oracle more than 1e-2
        // above the true optimum at K = 4, so the two-sided gap is checked
        // as a strictly stronger pair: never worse than the grid by the
        // stated tolerance, and never below the exact equalization optimum
        // (a feasible solution cannot beat it).
        let gap = (sol.objective - oracle.objective).max(0.0) / oracle.objective;
        assert!(
            gap <= 1e-2,
            "trial {trial}: solver {} vs grid oracle {} (gap {gap:.2e}) on {sub:?}",
            sol.objective,
            oracle.objective
        );
        let exact = exact_freq_optimum(&sub);
        assert!(
            sol.objective >= exact * (1.0 - 1e-9),
            "trial {trial}: solver {} below the exact optimum {exact}",
            sol.objective
        );
        assert!(
            sol.objective <= exact * (1.0 + 1e-2),
            "trial {trial}: solver {} more than 1e-2 above the exact optimum {exact}",
            sol.objective
        );
        worst_gap = worst_gap.max((sol.objective - exact).abs() / exact);

        // feasibility is exact
        let total: f64 = sol.shares.iter().sum();
        assert!(total <= sub.budget * (1.0 + 1e-12));
        assert!(sol.shares.iter().all(|f| *f > 0.0));
    }

    // symmetric instances: equal shares to 1e-6 relative
    for trial in 0..20 {
        let k = rng.random_range(2..=4usize);
        let m = rng.random_range(0.0..1.0);
        let n = rng.random_range(0.1..5.0);
        let sub = FreqSubproblem {
            m: vec![m; k],
            n: vec![n; k],
            budget: rng.random_range(0.5..10.0),
        };
        let sol = solve_freq(&sub, &DualState::defaults(k), 10_000).unwrap();
        for f in &sol.shares {
            assert!(
                rel_diff(*f, sol.shares[0]) <= 1e-6,
                "symmetric trial {trial}: shares {:?}",
                sol.shares
            );
        }
    }
    report(
        "C2",
        started,
        &format!("200 random instances within 1e-2 of both oracles (worst exact-optimum gap {worst_gap:.2e}); symmetric instances split exactly"),
    );
}

// ---------------------------------------------------------------------------
// criterion 3: power allocator vs enumeration oracle
// ---------------------------------------------------------------------------

#[test]
fn c3_power_search_vs_enumeration() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut largest_space = 0f64;
    for trial in 0..200 {
        let k = rng.random_range(2..=3usize);
        let pair = rng.random_range(0.0..1.0) < 0.3;
        let (sub, slots) = if pair {
            let up_subs = rng.random_range(k..=3usize);
            let down_subs = rng.random_range(k..=3usize);
            let sub = PowerSubproblem {
                bandwidth: 1e6,
                noise_psd: 1e-3,
                offsets: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                links: vec![
                    LinkInstance {
                        link: Link::MsUp,
                        loads: (0..k).map(|_| rng.random_range(1e5..5e7)).collect(),
                        gains: (0..up_subs)
                            .map(|_| (0..k).map(|_| rng.random_range(0.05..2.0)).collect())
                            .collect(),
                        cap: LinkPowerCap::PerClient(
                            (0..k).map(|_| rng.random_range(1.0..10.0)).collect(),
                        ),
                    },
                    LinkInstance {
                        link: Link::MsDown,
                        loads: (0..k).map(|_| rng.random_range(1e5..5e7)).collect(),
                        gains: (0..down_subs)
                            .map(|_| (0..k).map(|_| rng.random_range(0.05..2.0)).collect())
                            .collect(),
                        cap: LinkPowerCap::Shared {
                            budget: rng.random_range(20.0..200.0),
                            rule: DownlinkRule::Bisection,
                        },
                    },
                ],
            };
            (sub, up_subs + down_subs)
        } else {
            let subs = if k == 4 {
                rng.random_range(k..=8usize)
            } else {
                rng.random_range(k..=7usize)
            };
            let shared = rng.random_range(0.0..1.0) < 0.5;
            let rule = if rng.random_range(0.0..1.0) < 0.3 {
                DownlinkRule::EvenSplit
            } else {
                DownlinkRule::Bisection
            };
            let sub = PowerSubproblem {
                bandwidth: 1e6,
                noise_psd: 1e-3,
                offsets: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                links: vec![LinkInstance {
                    link: if shared { Link::EsDown } else { Link::EsUp },
                    loads: (0..k).map(|_| rng.random_range(1e5..5e7)).collect(),
                    gains: (0..subs)
                        .map(|_| (0..k).map(|_| rng.random_range(0.05..2.0)).collect())
                        .collect(),
                    cap: if shared {
                        LinkPowerCap::Shared {
                            budget: rng.random_range(20.0..200.0),
                            rule,
                        }
                    } else {
                        LinkPowerCap::PerClient(
                            (0..k).map(|_| rng.random_range(1.0..10.0)).collect(),
                        )
                    },
                }],
            };
            (sub, subs)
        };
        largest_space = largest_space.max((k as f64).powi(slots as i32));
        let bnb = solve_power(&sub).unwrap();
        let oracle = enumerate_power(&sub).unwrap();
        assert_eq!(
            bnb.objective, oracle.objective,
            "trial {trial}: objectives must be identical (same inner rule)"
        );
        assert!(bnb.complete);
    }
    // one near-cap instance exercises the guard boundary: 4^8 = 65536
    let k = 4;
    let sub = PowerSubproblem {
        bandwidth: 1e6,
        noise_psd: 1e-3,
        offsets: (0..k).map(|_| rng.random_range(0.0..1.0)).collect(),
        links: vec![LinkInstance {
            link: Link::EsUp,
            loads: (0..k).map(|_| rng.random_range(1e6..5e7)).collect(),
            gains: (0..8)
                .map(|_| (0..k).map(|_| rng.random_range(0.05..2.0)).collect())
                .collect(),
            cap: LinkPowerCap::PerClient(vec![10.0; k]),
        }],
    };
    let bnb = solve_power(&sub).unwrap();
    let oracle = enumerate_power(&sub).unwrap();
    assert_eq!(bnb.objective, oracle.objective, "4^8 instance");
    report(
        "C3",
        started,
        &format!("201 instances (largest space 4^8 = 65536, general up to {largest_space:.0} leaves): objectives identical"),
    );
}

// ---------------------------------------------------------------------------
// criterion 4: GA + SAA vs exhaustive cut enumeration
// ---------------------------------------------------------------------------

#[test]
fn c4_ga_finds_enumeration_optimum() {
    let _g = gate();
    let started = Instant::now();
    let cfg = ConfigFile::from_toml(
        r#"
[system]
num_clients = 3
batch_size = 64
batches_per_round = 2
total_rounds = 2
subchannel_count = 5
max_cut = 3
straggler_tolerance = 200.0

[experiment]
policies = ["OPT"]
seeds = [0]
"#,
    )
    .unwrap();
    let inst = cfg.instance(&Overrides::default()).unwrap();
    let budgets = PipelineBudgets {
        fitness_power_nodes: Some(24),
        ..Default::default()
    };
    let allocator = RoundAllocator {
        model: &inst.model,
        sys: &inst.sys,
        freq: OPT.freq,
        assign: OPT.assign,
        down_power: OPT.down_power,
        power_nodes: budgets.fitness_power_nodes,
        freq_max_iters: budgets.freq_max_iters,
        fp_sweeps: budgets.fitness_fp_sweeps,
    };
    let eval = |cuts: &[usize], env: &EnvironmentSample| {
        allocator.round_latency_or_fallback(cuts, env)
    };

    // 64 candidate vectors, fixed SAA samples
    let samples = inst.stats.sample_batch(0xC4, 3).unwrap();
    let vectors = cutlayer::enumerate_cut_vectors(&inst.sys.max_cut).unwrap();
    assert_eq!(vectors.len(), 64);
    let best_exhaustive = vectors
        .iter()
        .map(|cuts| cutlayer::saa_latency(cuts, &samples, eval))
        .fold(f64::INFINITY, f64::min);

    let mut hits = 0;
    for seed in 0..100u64 {
        let ga = GaConfig {
            population_size: 16,
            max_generations: 60,
            stagnation_generations: 12,
            saa_samples: 3,
            seed,
            ..Default::default()
        };
        let sol = cutlayer::optimize_cuts_with_samples(&ga, &samples, &inst.sys.max_cut, eval)
            .unwrap();
        // fitness ties count as success
        if sol.mean_latency <= best_exhaustive * (1.0 + 1e-12) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "GA matched the enumeration optimum in {hits}/100 trials");
    report(
        "C4",
        started,
        &format!("enumeration optimum found in {hits}/100 seeded trials (need 95)"),
    );
}

// ---------------------------------------------------------------------------
// criterion 5: split/unsplit training equivalence + gradient check
// ---------------------------------------------------------------------------

#[test]
fn c5_split_unsplit_equivalence_and_gradient_check() {
    let _g = gate();
    let started = Instant::now();
    let m0 = LayeredModel::random(&[4, 6, 5, 4, 2], Activation::Tanh, 0xC5);
    let batch = linearly_separable(12, 4, 0.05, 0xC5F);
    let mut worst: f64 = 0.0;
    for cut in 0..=4 {
        let mut split = SplitState::new(&m0, cut, 0.05).unwrap();
        let mut full = m0.clone();
        for _ in 0..10 {
            split_train_step(&mut split, &batch).unwrap();
            full_train_step(&mut full, &batch, 0.05).unwrap();
        }
        for (i, (a, b)) in split
            .full_model()
            .to_params()
            .iter()
            .zip(full.to_params())
            .enumerate()
        {
            let rel = (a - b).abs() / b.abs().max(1e-12);
            assert!(rel <= 1e-10, "cut {cut}, param {i}: {a} vs {b} (rel {rel:.2e})");
            worst = worst.max(rel);
        }
    }

    // gradients vs central finite differences on a 3-layer net
    let m = LayeredModel::random(&[3, 5, 4, 2], Activation::Tanh, 0xC51);
    let gbatch = linearly_separable(10, 3, 0.05, 0xC52);
    let (_, grad) = loss_gradient(&m, &gbatch);
    let params = m.to_params();
    let eps = 1e-6;
    let mut checked = 0;
    let mut worst_grad: f64 = 0.0;
    let stride = (params.len() / 20).max(1);
    for j in (0..params.len()).step_by(stride).take(20) {
        let mut plus = params.clone();
        plus[j] += eps;
        let mut minus = params.clone();
        minus[j] -= eps;
        let numeric = (model_loss(&m.from_params(&plus).unwrap(), &gbatch)
            - model_loss(&m.from_params(&minus).unwrap(), &gbatch))
            / (2.0 * eps);
        let denom = numeric.abs().max(grad[j].abs()).max(1e-8);
        let rel = (numeric - grad[j]).abs() / denom;
        assert!(rel <= 1e-5, "param {j}: analytic {} vs numeric {numeric}", grad[j]);
        worst_grad = worst_grad.max(rel);
        checked += 1;
    }
    assert_eq!(checked, 20);
    report(
        "C5",
        started,
        &format!("all 5 cuts match unsplit training (worst rel {worst:.1e}); 20 finite-difference gradients within {worst_grad:.1e}"),
    );
}

// ---------------------------------------------------------------------------
// criterion 6: common-layer aggregation consistency
// ---------------------------------------------------------------------------

#[test]
fn c6_common_layer_consistency_vs_ablation() {
    let _g = gate();
    let started = Instant::now();
    let m = LayeredModel::random(&[3, 4, 4, 4, 2], Activation::Tanh, 0xC6);
    let cuts = [1usize, 3];
    let batches = [
        linearly_separable(8, 3, 0.05, 0xC61),
        linearly_separable(8, 3, 0.05, 0xC62),
    ];
    let mut states: Vec<SplitState> = cuts
        .iter()
        .map(|&c| SplitState::new(&m, c, 0.1).unwrap())
        .collect();
    for (s, b) in states.iter_mut().zip(&batches) {
        for _ in 0..3 {
            split_train_step(s, b).unwrap();
        }
    }
    let plan = build_aggregation_plan(&cuts, 4, &[30, 70]).unwrap();
    assert_eq!(plan.common_layers, vec![2, 3]);

    let views = aggregate_with_exchange(&states, &plan).unwrap();
    for &j in &plan.common_layers {
        let es = &views.es_layers.iter().find(|(i, _)| *i == j).unwrap().1;
        let ms = &views.ms_layers.iter().find(|(i, _)| *i == j).unwrap().1;
        assert_eq!(es, ms, "common layer {j}: copies must be exactly equal");
    }

    let naive = aggregate_no_exchange(&states, &plan).unwrap();
    let differing = plan
        .common_layers
        .iter()
        .filter(|&&j| {
            let es = naive.es_layers.iter().find(|(i, _)| *i == j).map(|(_, l)| l);
            let ms = naive.ms_layers.iter().find(|(i, _)| *i == j).map(|(_, l)| l);
            matches!((es, ms), (Some(a), Some(b)) if a != b)
        })
        .count();
    assert!(differing >= 1, "no-exchange ablation must differ on a common layer");
    report(
        "C6",
        started,
        &format!("exchanged copies exactly equal on layers {:?}; ablation differs on {differing} of them", plan.common_layers),
    );
}

// ---------------------------------------------------------------------------
// criterion 7: latency-figure shape reproduction at desk scale
// ---------------------------------------------------------------------------

const DESK_CONFIG: &str = r#"
[system]
num_clients = 5
batch_size = 256
batches_per_round = 4
total_rounds = 20
server_freq = 1.0e12
subchannel_count = 10
subchannel_bandwidth = 1.0e6
noise_psd = 1.0e-3
client_power_cap = 10.0
ms_power_cap = 100.0
es_power_cap = 100.0
straggler_tolerance = 100.0
max_cut = 4

[env]
client_freq_mean = 5.0e10
client_freq_sd = 1.0e10
heterogeneity = 0.4

[ga]
population_size = 16
stagnation_generations = 8
max_generations = 30
saa_samples = 6

[solver]
power_max_nodes = 128
fitness_power_max_nodes = 32
fp_sweeps = 1

[experiment]
policies = ["OPT", "RCLS", "SCLS", "ECFA", "GTRA", "ETRA"]
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[experiment.sweeps]
bandwidth = [5.0e5, 1.0e6, 2.0e6]
server_freq = [5.0e11, 1.0e12, 2.0e12]
server_power = [0.5, 1.0, 2.0]
heterogeneity = [0.0, 0.4, 0.8]
"#;

#[test]
fn c7_sweep_shapes_and_policy_dominance() {
    let _g = gate();
    let started = Instant::now();
    let cfg = ConfigFile::from_toml(DESK_CONFIG).unwrap();
    let rows = run_experiment(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.status == "ok"), "runs failed");

    // OPT at most every baseline, per (axis, value, seed)
    let baselines = ["RCLS", "SCLS", "ECFA", "GTRA", "ETRA"];
    let mut comparisons = 0;
    for r in rows.iter().filter(|r| r.policy == "OPT") {
        for base in baselines {
            let other = rows
                .iter()
                .find(|o| {
                    o.policy == base && o.axis == r.axis && o.value == r.value && o.seed == r.seed
                })
                .expect("baseline row missing");
            assert!(
                r.mean_round_latency <= other.mean_round_latency * (1.0 + 1e-9),
                "{:?}={} seed {}: OPT {} exceeds {} {}",
                r.axis,
                r.value,
                r.seed,
                r.mean_round_latency,
                base,
                other.mean_round_latency
            );
            comparisons += 1;
        }
    }
    assert_eq!(comparisons, 12 * 10 * 5, "expected a full comparison grid");

    // monotone shapes of the optimized curve (seed-averaged)
    for (axis, increasing_helps) in [
        (SweepAxis::Bandwidth, true),
        (SweepAxis::ServerFreq, true),
        (SweepAxis::ServerPower, true),
        (SweepAxis::Heterogeneity, false),
    ] {
        let curve = policy_curve(&rows, axis, "OPT");
        assert_eq!(curve.len(), 3);
        for pair in curve.windows(2) {
            let (lo, hi) = (pair[0].1, pair[1].1);
            if increasing_helps {
                assert!(
                    hi <= lo * (1.0 + 1e-9),
                    "{axis:?}: latency must not rise with more resources: {curve:?}"
                );
            } else {
                assert!(
                    hi >= lo * (1.0 - 1e-9),
                    "{axis:?}: latency must not fall with more heterogeneity: {curve:?}"
                );
            }
        }
    }

    // the optimized advantage widens at the highest heterogeneity level
    let advantage_at = |h: f64| -> f64 {
        let opt = policy_curve(&rows, SweepAxis::Heterogeneity, "OPT")
            .iter()
            .find(|(v, _)| *v == h)
            .unwrap()
            .1;
        let mut total = 0.0;
        for base in baselines {
            let b = policy_curve(&rows, SweepAxis::Heterogeneity, base)
                .iter()
                .find(|(v, _)| *v == h)
                .unwrap()
                .1;
            total += b - opt;
        }
        total / baselines.len() as f64
    };
    let low = advantage_at(0.0);
    let high = advantage_at(0.8);
    assert!(
        high >= low,
        "advantage must widen with heterogeneity: {low:.3} s at h=0 vs {high:.3} s at h=0.8"
    );
    report(
        "C7",
        started,
        &format!(
            "OPT <= all 5 baselines on every (point, seed) of 12 points x 10 seeds; curves monotone on all 4 axes; mean advantage {low:.2} s -> {high:.2} s across the heterogeneity sweep"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: toy convergence stand-in
// ---------------------------------------------------------------------------

#[test]
fn c8_toy_convergence_close_to_centralized() {
    let _g = gate();
    let started = Instant::now();
    let seeds = 20u64;
    let cfg = ToyTrainConfig {
        rounds: 50,
        local_steps: 2,
        learning_rate: 0.3,
        batch_size: None,
    };
    let mut monotone_seeds = 0;
    let mut hsfl_final = Vec::new();
    let mut central_final = Vec::new();
    for seed in 0..seeds {
        let data = linearly_separable(120, 4, 0.1, 0xC80 + seed);
        let clients = dirichlet_label_split(&data, 3, 0.5, 0xC81 + seed);
        let m0 = LayeredModel::random(&[4, 8, 2], Activation::Tanh, 0xC82 + seed);
        let (_, curve) = train_hsfl(&m0, &[1, 2, 1], &clients, &data, &cfg).unwrap();
        let monotone = curve
            .loss
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        if monotone {
            monotone_seeds += 1;
        }
        let (_, central) = train_centralized(&m0, &data, &cfg).unwrap();
        hsfl_final.push(*curve.loss.last().unwrap());
        central_final.push(*central.loss.last().unwrap());
    }
    assert!(
        monotone_seeds as f64 >= 0.95 * seeds as f64,
        "loss monotone in only {monotone_seeds}/{seeds} seeds"
    );
    let hsfl_mean: f64 = hsfl_final.iter().sum::<f64>() / seeds as f64;
    let central_mean: f64 = central_final.iter().sum::<f64>() / seeds as f64;
    let gap = (hsfl_mean - central_mean).abs() / central_mean;
    assert!(
        gap <= 0.10,
        "final loss {hsfl_mean:.4} vs centralized {central_mean:.4} (gap {gap:.3})"
    );
    report(
        "C8",
        started,
        &format!(
            "loss monotone in {monotone_seeds}/{seeds} seeds; final loss {hsfl_mean:.4} within {:.1}% of centralized {central_mean:.4}",
            gap * 100.0
        ),
    );
}
