//! Long-timescale cut-layer selection: a genetic algorithm over per-client
//! cut vectors whose fitness is the negated sample-average latency — each
//! candidate vector is scored by solving the short-timescale frequency and
//! power allocation on a fixed set of historical environment draws and
//! averaging the resulting round latencies.
//!
//! The sample set is drawn once per optimization run and shared by every
//! fitness evaluation (common random numbers), and fitness values are cached
//! by cut vector. Evaluations within a generation run in parallel; results
//! are independent of evaluation order, so a (config, seed) pair fully
//! determines the outcome.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{derive_seed, EnvStats, EnvironmentSample};
use crate::error::{Error, Result};

/// Sub-seed streams carved out of the run seed.
const SAA_STREAM: u64 = 0x5AA;
const GA_STREAM: u64 = 0x6A;

/// Genetic-algorithm settings.
#[derive(Debug, Clone)]
pub struct GaConfig {
    pub population_size: usize,
    /// Stop after this many consecutive generations without significant
    /// improvement of the best latency (relative improvement below 1e-4).
    pub stagnation_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub max_generations: usize,
    pub seed: u64,
    /// Historical environment draws per fitness evaluation.
    pub saa_samples: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 24,
            stagnation_generations: 15,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            max_generations: 200,
            seed: 0,
            saa_samples: 30,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Domain("population_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate)
            || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(Error::Domain("rates must lie in [0, 1]".into()));
        }
        if self.saa_samples == 0 {
            return Err(Error::Domain("saa_samples must be >= 1".into()));
        }
        if self.max_generations == 0 {
            return Err(Error::Domain("max_generations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A cut vector with its cached fitness (negated mean latency).
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub cut: Vec<usize>,
    pub fitness: f64,
}

/// One generation of progress, for the CSV log.
#[derive(Debug, Clone, Serialize)]
pub struct GaProgressRow {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

/// Outcome of a cut-layer optimization.
#[derive(Debug, Clone)]
pub struct CutSolution {
    pub cuts: Vec<usize>,
    /// SAA estimate of the per-round latency at `cuts`.
    pub mean_latency: f64,
    pub generations: usize,
    /// Distinct cut vectors evaluated (cache size).
    pub evaluations: usize,
    pub progress: Vec<GaProgressRow>,
}

/// Mean optimized round latency of `cuts` over the sample set. Samples that
/// turn out infeasible must be mapped by the evaluator to their capped
/// latency rather than an error, so the mean is always defined.
pub fn saa_latency<F>(cuts: &[usize], samples: &[EnvironmentSample], round_latency: F) -> f64
where
    F: Fn(&[usize], &EnvironmentSample) -> f64,
{
    let total: f64 = samples.iter().map(|s| round_latency(cuts, s)).sum();
    total / samples.len() as f64
}

/// Draws the SAA sample set from `stats` and runs the genetic search.
pub fn optimize_cuts<F>(
    cfg: &GaConfig,
    stats: &EnvStats,
    max_cut: &[usize],
    round_latency: F,
) -> Result<CutSolution>
where
    F: Fn(&[usize], &EnvironmentSample) -> f64 + Sync,
{
    cfg.validate()?;
    let samples = stats.sample_batch(derive_seed(cfg.seed, SAA_STREAM), cfg.saa_samples)?;
    optimize_cuts_with_samples(cfg, &samples, max_cut, round_latency)
}

/// As [`optimize_cuts`] with a caller-provided (fixed) sample set.
pub fn optimize_cuts_with_samples<F>(
    cfg: &GaConfig,
    samples: &[EnvironmentSample],
    max_cut: &[usize],
    round_latency: F,
) -> Result<CutSolution>
where
    F: Fn(&[usize], &EnvironmentSample) -> f64 + Sync,
{
    run_ga(cfg, samples, max_cut, None, round_latency)
}

fn run_ga<F>(
    cfg: &GaConfig,
    samples: &[EnvironmentSample],
    max_cut: &[usize],
    initial: Option<Vec<Vec<usize>>>,
    round_latency: F,
) -> Result<CutSolution>
where
    F: Fn(&[usize], &EnvironmentSample) -> f64 + Sync,
{
    cfg.validate()?;
    if max_cut.is_empty() {
        return Err(Error::Domain("need at least one client".into()));
    }
    if samples.is_empty() {
        return Err(Error::Domain("need at least one environment sample".into()));
    }
    let k = max_cut.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, GA_STREAM));
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();

    let mut population: Vec<Vec<usize>> = match initial {
        Some(pop) => {
            if pop.len() != cfg.population_size || pop.iter().any(|c| c.len() != k) {
                return Err(Error::Domain("initial population shape mismatch".into()));
            }
            pop
        }
        None => (0..cfg.population_size)
            .map(|_| random_vector(&mut rng, max_cut))
            .collect(),
    };
    for cut in &mut population {
        repair(cut, max_cut);
    }

    evaluate_uncached(&population, samples, &round_latency, &mut cache);
    let mut best = best_of(&population, &cache);
    let mut progress = vec![progress_row(0, &population, &cache)];
    let mut stagnant = 0usize;
    let mut generations = 0usize;

    for generation in 1..=cfg.max_generations {
        generations = generation;
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(cfg.population_size);
        // elitism: the best-ever individual survives unchanged
        next.push(best.cut.clone());
        while next.len() < cfg.population_size {
            let a = tournament(&mut rng, &population, &cache);
            let b = tournament(&mut rng, &population, &cache);
            let (mut c1, mut c2) = crossover(&mut rng, &population[a], &population[b], cfg);
            mutate(&mut rng, &mut c1, max_cut, cfg.mutation_rate);
            repair(&mut c1, max_cut);
            next.push(c1);
            if next.len() < cfg.population_size {
                mutate(&mut rng, &mut c2, max_cut, cfg.mutation_rate);
                repair(&mut c2, max_cut);
                next.push(c2);
            }
        }
        population = next;
        evaluate_uncached(&population, samples, &round_latency, &mut cache);

        let prev_latency = -best.fitness;
        let gen_best = best_of(&population, &cache);
        if gen_best.fitness > best.fitness {
            best = gen_best;
        }
        let new_latency = -best.fitness;
        let significant = if prev_latency.is_infinite() {
            new_latency.is_finite()
        } else {
            (prev_latency - new_latency) / prev_latency.abs().max(1e-300) >= 1e-4
        };
        if significant {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        progress.push(progress_row(generation, &population, &cache));
        if stagnant >= cfg.stagnation_generations {
            break;
        }
    }

    Ok(CutSolution {
        cuts: best.cut,
        mean_latency: -best.fitness,
        generations,
        evaluations: cache.len(),
        progress,
    })
}

fn random_vector(rng: &mut ChaCha8Rng, max_cut: &[usize]) -> Vec<usize> {
    max_cut.iter().map(|&m| rng.random_range(0..=m)).collect()
}

fn repair(cut: &mut [usize], max_cut: &[usize]) {
    for (c, &m) in cut.iter_mut().zip(max_cut) {
        if *c > m {
            *c = m;
        }
    }
}

fn mutate(rng: &mut ChaCha8Rng, cut: &mut [usize], max_cut: &[usize], rate: f64) {
    for (c, &m) in cut.iter_mut().zip(max_cut) {
        if rng.random_range(0.0..1.0) < rate {
            *c = rng.random_range(0..=m);
        }
    }
}

fn crossover(
    rng: &mut ChaCha8Rng,
    a: &[usize],
    b: &[usize],
    cfg: &GaConfig,
) -> (Vec<usize>, Vec<usize>) {
    let k = a.len();
    if k < 2 || rng.random_range(0.0..1.0) >= cfg.crossover_rate {
        return (a.to_vec(), b.to_vec());
    }
    let point = rng.random_range(1..k);
    let mut c1 = a[..point].to_vec();
    c1.extend_from_slice(&b[point..]);
    let mut c2 = b[..point].to_vec();
    c2.extend_from_slice(&a[point..]);
    (c1, c2)
}

fn tournament(rng: &mut ChaCha8Rng, population: &[Vec<usize>], cache: &HashMap<Vec<usize>, f64>) -> usize {
    let mut winner = rng.random_range(0..population.len());
    for _ in 0..2 {
        let challenger = rng.random_range(0..population.len());
        if cache[&population[challenger]] > cache[&population[winner]] {
            winner = challenger;
        }
    }
    winner
}

fn evaluate_uncached<F>(
    population: &[Vec<usize>],
    samples: &[EnvironmentSample],
    round_latency: &F,
    cache: &mut HashMap<Vec<usize>, f64>,
) where
    F: Fn(&[usize], &EnvironmentSample) -> f64 + Sync,
{
    let mut fresh: Vec<Vec<usize>> = Vec::new();
    for cut in population {
        if !cache.contains_key(cut) && !fresh.contains(cut) {
            fresh.push(cut.clone());
        }
    }
    let scored: Vec<(Vec<usize>, f64)> = fresh
        .into_par_iter()
        .map(|cut| {
            let latency = saa_latency(&cut, samples, round_latency);
            (cut, -latency)
        })
        .collect();
    for (cut, fitness) in scored {
        cache.insert(cut, fitness);
    }
}

fn best_of(population: &[Vec<usize>], cache: &HashMap<Vec<usize>, f64>) -> Individual {
    let mut best = Individual {
        cut: population[0].clone(),
        fitness: cache[&population[0]],
    };
    for cut in &population[1..] {
        let fitness = cache[cut];
        if fitness > best.fitness {
            best = Individual {
                cut: cut.clone(),
                fitness,
            };
        }
    }
    best
}

fn progress_row(
    generation: usize,
    population: &[Vec<usize>],
    cache: &HashMap<Vec<usize>, f64>,
) -> GaProgressRow {
    let mut best = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for cut in population {
        let f = cache[cut];
        best = best.max(f);
        sum += f;
    }
    GaProgressRow {
        generation,
        best_fitness: best,
        mean_fitness: sum / population.len() as f64,
    }
}

/// All feasible cut vectors of a small instance, for enumeration oracles.
pub fn enumerate_cut_vectors(max_cut: &[usize]) -> Result<Vec<Vec<usize>>> {
    let count: f64 = max_cut.iter().map(|&m| (m + 1) as f64).product();
    if count > 1e5 {
        return Err(Error::TooLarge(format!(
            "{count:.3e} candidate cut vectors; cap is 1e5"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0usize; max_cut.len()];
    loop {
        out.push(current.clone());
        let mut pos = max_cut.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] <= max_cut[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
}
