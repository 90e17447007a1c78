//! `hsfl` — run the latency optimizer, simulate training rounds, sweep
//! baselines, or verify the solvers against their oracles.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hsfl_core::config::{ConfigFile, Instance, Overrides};
use hsfl_core::cutlayer::{self, GaConfig};
use hsfl_core::env::Link;
use hsfl_core::experiment::{run_experiment, write_results_csv};
use hsfl_core::freq::{brute_force_freq, solve_freq, DualState, FreqSubproblem};
use hsfl_core::policy::{
    choose_cuts, train_policy, PipelineBudgets, Policy, RoundAllocator, OPT,
};
use hsfl_core::power::{enumerate_power, solve_power, LinkInstance, LinkPowerCap, PowerSubproblem};
use hsfl_core::protocol::{write_round_log, write_round_summary_csv};
use hsfl_core::splitnn;

#[derive(Parser)]
#[command(name = "hsfl", about = "Latency simulator and optimizer for split federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose cut layers, frequency shares, and transmission resources for
    /// one environment draw and print the decision.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for ga_progress.csv (and solver traces with --trace).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump freq_trace.csv and power_events.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Simulate a full training run under one policy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "OPT")]
        policy: String,
        /// Directory for rounds.jsonl and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (policy, sweep point, seed) combination from the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for results.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the solver-vs-oracle and protocol-semantics suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the toy training curves CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Optimize {
            config,
            seed,
            out,
            trace,
        } => optimize(&config, seed, out.as_deref(), trace),
        Command::Simulate {
            config,
            seed,
            policy,
            out,
        } => simulate(&config, seed, &policy, out.as_deref()),
        Command::Sweep { config, seed, out } => sweep(&config, seed, &out),
        Command::Verify { seed, out } => verify(seed, out.as_deref()),
    }
}

fn load(config: &Path) -> Result<(ConfigFile, Instance)> {
    let cfg = ConfigFile::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    let instance = cfg.instance(&Overrides::default())?;
    Ok((cfg, instance))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn optimize(config: &Path, seed: u64, out: Option<&Path>, trace: bool) -> Result<()> {
    let (cfg, inst) = load(config)?;
    let budgets = hsfl_core::experiment::budgets_from(&cfg);
    let mut ga = hsfl_core::experiment::ga_from(&cfg);
    ga.seed = seed;
    let choice = choose_cuts(OPT, &ga, &inst.stats, &inst.model, &inst.sys, &budgets, seed)?;
    let allocator = RoundAllocator::for_policy(OPT, &inst.model, &inst.sys, &budgets);
    let env = inst.stats.sample(seed);
    let (alloc, pipeline_trace) = allocator.allocate_traced(&choice.cuts, &env)?;
    let breakdown = hsfl_core::latency::per_round_latency(&inst.model, &inst.sys, &alloc, &env)?;

    println!("cut layers      : {:?}", alloc.cut);
    if let Some(ga_sol) = &choice.ga {
        println!(
            "saa latency     : {:.6} s over {} samples ({} generations, {} vectors scored)",
            ga_sol.mean_latency, cfg.ga.saa_samples, ga_sol.generations, ga_sol.evaluations
        );
        println!(
            "est. total towards {} rounds: {:.3} s",
            inst.sys.total_rounds,
            ga_sol.mean_latency * inst.sys.total_rounds as f64
        );
    }
    println!(
        "freq shares     : {:?} (budget {:.3e} cycles/s)",
        alloc
            .server_freq_share
            .iter()
            .map(|f| format!("{f:.3e}"))
            .collect::<Vec<_>>(),
        inst.sys.server_freq
    );
    for link in Link::ALL {
        println!(
            "{:<16}: subchannels {:?}, powers {:?} W",
            link.name(),
            alloc.subchannel_assign[link]
                .iter()
                .map(|o| o.map(|c| c.to_string()).unwrap_or_else(|| "-".into()))
                .collect::<Vec<_>>(),
            alloc.power[link]
                .iter()
                .map(|p| format!("{p:.3}"))
                .collect::<Vec<_>>()
        );
    }
    println!("round latency   : {:.6} s (draw seed {seed})", breakdown.round_total);

    if let Some(dir) = out {
        ensure_dir(dir)?;
        if let Some(ga_sol) = &choice.ga {
            let mut f = fs::File::create(dir.join("ga_progress.csv"))?;
            writeln!(f, "generation,best_fitness,mean_fitness")?;
            for row in &ga_sol.progress {
                writeln!(f, "{},{},{}", row.generation, row.best_fitness, row.mean_fitness)?;
            }
        }
        if trace {
            let mut f = fs::File::create(dir.join("freq_trace.csv"))?;
            writeln!(f, "iteration,objective,lambda,share_sum")?;
            for row in &pipeline_trace.freq {
                writeln!(f, "{},{},{},{}", row.iteration, row.objective, row.lambda, row.share_sum)?;
            }
            let mut f = fs::File::create(dir.join("power_events.csv"))?;
            writeln!(f, "stage,node,depth,event,value,prefix")?;
            for (stage, events) in &pipeline_trace.power {
                for e in events {
                    writeln!(
                        f,
                        "{stage},{},{},{:?},{},{}",
                        e.node,
                        e.depth,
                        e.kind,
                        e.value,
                        e.prefix
                            .iter()
                            .map(|c| c.to_string())
                            .collect::<Vec<_>>()
                            .join("|")
                    )?;
                }
            }
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn simulate(config: &Path, seed: u64, policy: &str, out: Option<&Path>) -> Result<()> {
    let (cfg, inst) = load(config)?;
    let policy = Policy::by_name(policy)?;
    let budgets = hsfl_core::experiment::budgets_from(&cfg);
    let ga = hsfl_core::experiment::ga_from(&cfg);
    let run = train_policy(policy, &ga, &inst.stats, &inst.model, &inst.sys, &budgets, seed)?;
    let straggler_rounds = run
        .records
        .iter()
        .filter(|r| !r.stragglers().is_empty())
        .count();
    println!(
        "{}: cuts {:?}, {} rounds, mean {:.6} s/round, cumulative {:.3} s, {} rounds with stragglers",
        run.policy,
        run.cuts,
        run.records.len(),
        run.mean_round_latency(),
        run.cumulative_latency(),
        straggler_rounds
    );
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_round_log(&run.records, fs::File::create(dir.join("rounds.jsonl"))?)?;
        write_round_summary_csv(&run.records, fs::File::create(dir.join("summary.csv"))?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn sweep(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg =
        ConfigFile::load(config).with_context(|| format!("loading config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.experiment.seeds = vec![s];
    }
    let rows = run_experiment(&cfg)?;
    ensure_dir(out)?;
    let path = out.join("results.csv");
    write_results_csv(&rows, fs::File::create(&path)?)?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    println!("wrote {} rows to {} ({failures} failures)", rows.len(), path.display());
    if failures > 0 {
        bail!("{failures} runs failed; see the status column");
    }
    Ok(())
}

/// Quick oracle suites; one pass/fail line each, nonzero exit on failure.
/// These are smaller, faster versions of the acceptance suite.
fn verify(seed: u64, out: Option<&Path>) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("PASS {name}: {detail}");
        } else {
            println!("FAIL {name}: {detail}");
            failures += 1;
        }
    };

    // frequency solver vs grid oracle
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1);
        let mut worst: f64 = 0.0;
        for _ in 0..30 {
            let k = rng.random_range(2..=4usize);
            let sub = FreqSubproblem {
                m: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                n: (0..k).map(|_| rng.random_range(0.1..5.0)).collect(),
                budget: rng.random_range(0.5..10.0),
            };
            let sol = solve_freq(&sub, &DualState::defaults(k), 10_000)?;
            let oracle = brute_force_freq(&sub, 200)?;
            worst = worst.max((sol.objective - oracle.objective).abs() / oracle.objective);
        }
        check(
            "freq-vs-grid",
            worst <= 1e-2,
            format!("worst relative gap {worst:.2e} over 30 instances (cap 1e-2)"),
        );
    }

    // power search vs exhaustive enumeration
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF2);
        let mut mismatches = 0;
        for _ in 0..30 {
            let k = rng.random_range(2..=3usize);
            let subs = rng.random_range(k..=5usize);
            let shared = rng.random_range(0.0..1.0) < 0.5;
            let gains: Vec<Vec<f64>> = (0..subs)
                .map(|_| (0..k).map(|_| rng.random_range(0.05..2.0)).collect())
                .collect();
            let sub = PowerSubproblem {
                bandwidth: 1e6,
                noise_psd: 1e-3,
                offsets: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                links: vec![LinkInstance {
                    link: if shared { Link::MsDown } else { Link::MsUp },
                    loads: (0..k).map(|_| rng.random_range(1e5..5e7)).collect(),
                    gains,
                    cap: if shared {
                        LinkPowerCap::Shared {
                            budget: rng.random_range(20.0..200.0),
                            rule: hsfl_core::power::DownlinkRule::Bisection,
                        }
                    } else {
                        LinkPowerCap::PerClient((0..k).map(|_| rng.random_range(1.0..10.0)).collect())
                    },
                }],
            };
            if solve_power(&sub)?.objective != enumerate_power(&sub)?.objective {
                mismatches += 1;
            }
        }
        check(
            "power-vs-enumeration",
            mismatches == 0,
            format!("{mismatches} objective mismatches over 30 instances"),
        );
    }

    // GA vs exhaustive cut enumeration on a real small instance
    {
        let cfg = ConfigFile::from_toml(
            "[system]\nnum_clients = 3\nbatch_size = 32\nbatches_per_round = 2\n\
             total_rounds = 2\nsubchannel_count = 4\nmax_cut = 3\n\n\
             [experiment]\npolicies = [\"OPT\"]\nseeds = [0]\n",
        )?;
        let inst = cfg.instance(&Overrides::default())?;
        let budgets = PipelineBudgets {
            round_power_nodes: Some(64),
            fitness_power_nodes: Some(24),
            fitness_fp_sweeps: 1,
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
        let samples = inst.stats.sample_batch(seed ^ 0xF3, 3)?;
        let eval =
            |cuts: &[usize], env: &hsfl_core::env::EnvironmentSample| {
                allocator.round_latency_or_fallback(cuts, env)
            };
        let best_exhaustive = cutlayer::enumerate_cut_vectors(&inst.sys.max_cut)?
            .into_iter()
            .map(|cuts| cutlayer::saa_latency(&cuts, &samples, eval))
            .fold(f64::INFINITY, f64::min);
        let mut hits = 0;
        let trials = 10;
        for s in 0..trials {
            let ga = GaConfig {
                population_size: 16,
                max_generations: 40,
                saa_samples: 3,
                seed: seed.wrapping_add(s),
                ..Default::default()
            };
            let sol = cutlayer::optimize_cuts_with_samples(&ga, &samples, &inst.sys.max_cut, eval)?;
            if sol.mean_latency <= best_exhaustive * (1.0 + 1e-9) {
                hits += 1;
            }
        }
        check(
            "ga-vs-enumeration",
            hits == trials,
            format!("optimum found in {hits}/{trials} seeded runs"),
        );
    }

    // split/unsplit equivalence
    {
        let m0 = splitnn::LayeredModel::random(&[4, 6, 5, 4, 2], splitnn::Activation::Tanh, seed);
        let batch = splitnn::linearly_separable(10, 4, 0.05, seed ^ 0xF4);
        let mut worst: f64 = 0.0;
        for cut in 0..=4 {
            let mut split = splitnn::SplitState::new(&m0, cut, 0.05)?;
            let mut full = m0.clone();
            for _ in 0..10 {
                splitnn::split_train_step(&mut split, &batch)?;
                splitnn::full_train_step(&mut full, &batch, 0.05)?;
            }
            for (a, b) in split
                .full_model()
                .to_params()
                .iter()
                .zip(full.to_params())
            {
                worst = worst.max((a - b).abs() / b.abs().max(1e-12));
            }
        }
        check(
            "split-vs-unsplit",
            worst <= 1e-10,
            format!("worst per-parameter relative gap {worst:.2e} over all cuts (cap 1e-10)"),
        );
    }

    // common-layer aggregation consistency
    {
        let m = splitnn::LayeredModel::random(&[3, 4, 4, 4, 2], splitnn::Activation::Tanh, seed ^ 5);
        let cuts = [1usize, 3];
        let data = [
            splitnn::linearly_separable(6, 3, 0.05, seed ^ 6),
            splitnn::linearly_separable(6, 3, 0.05, seed ^ 7),
        ];
        let mut states: Vec<splitnn::SplitState> = cuts
            .iter()
            .map(|&c| splitnn::SplitState::new(&m, c, 0.1))
            .collect::<hsfl_core::Result<_>>()?;
        for (s, b) in states.iter_mut().zip(&data) {
            splitnn::split_train_step(s, b)?;
        }
        let plan = hsfl_core::protocol::build_aggregation_plan(&cuts, 4, &[60, 40])?;
        let views = splitnn::aggregate_with_exchange(&states, &plan)?;
        let exact = plan.common_layers.iter().all(|j| {
            views.es_layers.iter().find(|(i, _)| i == j).map(|(_, l)| l)
                == views.ms_layers.iter().find(|(i, _)| i == j).map(|(_, l)| l)
        });
        let naive = splitnn::aggregate_no_exchange(&states, &plan)?;
        let ablation_differs = plan.common_layers.iter().any(|j| {
            let es = naive.es_layers.iter().find(|(i, _)| i == j).map(|(_, l)| l);
            let ms = naive.ms_layers.iter().find(|(i, _)| i == j).map(|(_, l)| l);
            matches!((es, ms), (Some(a), Some(b)) if a != b)
        });
        check(
            "aggregation-consistency",
            exact && ablation_differs,
            format!("exchange copies identical: {exact}, no-exchange ablation differs: {ablation_differs}"),
        );
    }

    // toy convergence sanity
    {
        let data = splitnn::linearly_separable(90, 4, 0.1, seed ^ 8);
        let clients = splitnn::dirichlet_label_split(&data, 3, 0.5, seed ^ 9);
        let m0 = splitnn::LayeredModel::random(&[4, 8, 2], splitnn::Activation::Tanh, seed ^ 10);
        let cfg = splitnn::ToyTrainConfig {
            rounds: 25,
            local_steps: 2,
            learning_rate: 0.3,
            batch_size: None,
        };
        let (_, curve) = splitnn::train_hsfl(&m0, &[1, 2, 1], &clients, &data, &cfg)?;
        let improved = *curve.loss.last().unwrap() < curve.loss[0] * 0.5;
        check(
            "toy-convergence",
            improved,
            format!("pooled loss {:.4} -> {:.4}", curve.loss[0], curve.loss.last().unwrap()),
        );
        if let Some(dir) = out {
            ensure_dir(dir)?;
            let mut f = fs::File::create(dir.join("toy_curves.csv"))?;
            writeln!(f, "round,loss,accuracy")?;
            for (i, (l, a)) in curve.loss.iter().zip(&curve.accuracy).enumerate() {
                writeln!(f, "{i},{l},{a}")?;
            }
        }
    }

    if failures > 0 {
        bail!("{failures} verification suites failed");
    }
    println!("all verification suites passed");
    Ok(())
}
