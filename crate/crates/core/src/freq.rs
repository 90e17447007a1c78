//! Main-server frequency allocation: split the budget `f_s` across clients to
//! minimize the worst per-client round latency `max_k (m_k + n_k / f_k)`,
//! where `m_k` collects every latency term that does not depend on the share
//! and `n_k` is the server-side cycle load.
//!
//! The solver is a Lagrangian relaxation with closed-form primal updates
//! (`f_k = sqrt(mu_k n_k / lambda)`) and subgradient multiplier steps. The
//! dual iterates are not necessarily primal-feasible, so every iterate is
//! projected onto the budget simplex and the best projected candidate is
//! returned. [`brute_force_freq`] grid-searches the same simplex and serves
//! as the test oracle.

use serde::Serialize;

use crate::error::{Error, Result};

/// Share given to clients with no server-side work, as a fraction of the
/// budget. They need a strictly positive share (C2) but an arbitrarily small
/// one; the closed-form update would hand them exactly zero.
const PASSIVE_SHARE_FRAC: f64 = 1e-12;

/// Floors keeping the primal update well-defined when a multiplier collapses.
const MU_FLOOR: f64 = 1e-18;
const LAMBDA_FLOOR: f64 = 1e-18;

/// One instance of the frequency subproblem.
#[derive(Debug, Clone)]
pub struct FreqSubproblem {
    /// Share-independent latency per client, seconds.
    pub m: Vec<f64>,
    /// Server cycle load per client (`b * (fp + bp) / kappa_s`), cycle-seconds.
    pub n: Vec<f64>,
    /// Total server frequency `f_s`, cycles/s.
    pub budget: f64,
}

impl FreqSubproblem {
    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() || self.m.len() != self.n.len() {
            return Err(Error::Domain(format!(
                "m has {} entries, n has {}; need one of each per client",
                self.m.len(),
                self.n.len()
            )));
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::Domain(format!(
                "budget {} must be finite and positive",
                self.budget
            )));
        }
        if self
            .m
            .iter()
            .chain(self.n.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Domain(
                "m and n entries must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `max_k (m_k + n_k / f_k)` for a share vector.
    pub fn objective(&self, shares: &[f64]) -> f64 {
        self.m
            .iter()
            .zip(&self.n)
            .zip(shares)
            .map(|((&m, &n), &f)| if n > 0.0 { m + n / f } else { m })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Initial multipliers and step sizes for [`solve_freq`].
///
/// The solver normalizes the instance to unit budget and unit initial
/// objective before iterating, so `alpha`, `beta`, and `epsilon` are
/// dimensionless: the defaults are `1e-2` steps and a stopping threshold of
/// `1e-6` relative to the initial objective.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl DualState {
    pub fn defaults(clients: usize) -> Self {
        DualState {
            lambda: 1.0,
            mu: vec![1.0 / clients as f64; clients],
            alpha: 1e-2,
            beta: 1e-2,
            epsilon: 1e-6,
        }
    }
}

/// Result of a frequency solve.
#[derive(Debug, Clone)]
pub struct FreqSolution {
    /// Feasible shares, strictly positive and summing to at most the budget.
    pub shares: Vec<f64>,
    /// Objective of `shares`.
    pub objective: f64,
    /// Whether the stopping threshold was met before `max_iters`.
    pub converged: bool,
    pub iterations: usize,
}

/// One row of the optional solver trace.
#[derive(Debug, Clone, Serialize)]
pub struct FreqTraceRow {
    pub iteration: usize,
    /// Raw (unprojected) iterate objective, seconds.
    pub objective: f64,
    /// Budget multiplier, in normalized units.
    pub lambda: f64,
    /// Sum of the raw iterate shares, cycles/s.
    pub share_sum: f64,
}

pub fn solve_freq(
    sub: &FreqSubproblem,
    dual0: &DualState,
    max_iters: usize,
) -> Result<FreqSolution> {
    solve_freq_impl(sub, dual0, max_iters, None)
}

/// As [`solve_freq`], recording one trace row per iteration.
pub fn solve_freq_traced(
    sub: &FreqSubproblem,
    dual0: &DualState,
    max_iters: usize,
    trace: &mut Vec<FreqTraceRow>,
) -> Result<FreqSolution> {
    solve_freq_impl(sub, dual0, max_iters, Some(trace))
}

fn solve_freq_impl(
    sub: &FreqSubproblem,
    dual0: &DualState,
    max_iters: usize,
    mut trace: Option<&mut Vec<FreqTraceRow>>,
) -> Result<FreqSolution> {
    sub.validate()?;
    let k = sub.m.len();
    if dual0.mu.len() != k {
        return Err(Error::Domain(format!(
            "dual state has {} multipliers for {k} clients",
            dual0.mu.len()
        )));
    }
    if dual0.lambda.is_nan() || dual0.lambda <= 0.0 {
        return Err(Error::Domain("initial lambda must be positive".into()));
    }

    let active: Vec<usize> = (0..k).filter(|&i| sub.n[i] > 0.0).collect();
    if active.is_empty() {
        // nobody needs server compute; an even split is feasible and the
        // objective is fixed at max m
        let shares = vec![sub.budget / k as f64; k];
        let objective = sub.objective(&shares);
        return Ok(FreqSolution {
            shares,
            objective,
            converged: true,
            iterations: 0,
        });
    }
    let passive_share = sub.budget * PASSIVE_SHARE_FRAC;
    let active_budget = sub.budget - passive_share * (k - active.len()) as f64;

    // normalize: unit budget across active clients, unit even-split objective
    let ka = active.len();
    let even = vec![active_budget / ka as f64; ka];
    let t0 = objective_active(sub, &active, &even);
    debug_assert!(t0.is_finite() && t0 > 0.0);
    let mn: Vec<f64> = active.iter().map(|&i| sub.m[i] / t0).collect();
    let nn: Vec<f64> = active
        .iter()
        .map(|&i| sub.n[i] / (active_budget * t0))
        .collect();

    let assemble = |active_shares: &[f64]| -> Vec<f64> {
        let mut shares = vec![passive_share; k];
        for (slot, &i) in active.iter().enumerate() {
            shares[i] = active_shares[slot];
        }
        shares
    };

    // best projected candidate so far, seeded with the even split
    let project = |phi: &[f64]| -> Vec<f64> {
        let sum: f64 = phi.iter().sum();
        phi.iter().map(|p| p / sum * active_budget).collect()
    };
    let mut best_shares = even.clone();
    let mut best_obj = sub.objective(&assemble(&best_shares));

    let mut lambda = dual0.lambda;
    let mut mu: Vec<f64> = active.iter().map(|&i| dual0.mu[i].max(MU_FLOOR)).collect();
    let mut phi = vec![1.0 / ka as f64; ka];
    // the even-split objective seeds the normalization but not the stop test;
    // comparing it against the first iterate can stall on a coincidental tie
    let mut t_prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=max_iters {
        iterations = iter;
        for i in 0..ka {
            phi[i] = (mu[i] * nn[i] / lambda).sqrt().clamp(1e-18, 1e18);
        }
        let t_cur = norm_objective(&mn, &nn, &phi);

        let candidate = project(&phi);
        let cand_obj = sub.objective(&assemble(&candidate));
        if cand_obj < best_obj {
            best_obj = cand_obj;
            best_shares = candidate;
        }

        let phi_sum: f64 = phi.iter().sum();
        if let Some(t) = trace.as_deref_mut() {
            t.push(FreqTraceRow {
                iteration: iter,
                objective: t_cur * t0,
                lambda,
                share_sum: phi_sum * active_budget,
            });
        }

        // subgradient ascent on the dual: the budget multiplier rises while
        // the iterate overspends and falls while budget is left unused
        lambda = (lambda + dual0.alpha * (phi_sum - 1.0)).max(LAMBDA_FLOOR);
        for i in 0..ka {
            let term = mn[i] + nn[i] / phi[i];
            mu[i] = (mu[i] + dual0.beta * (term - t_cur)).max(MU_FLOOR);
        }

        if (t_cur - t_prev).abs() <= dual0.epsilon {
            converged = true;
            break;
        }
        t_prev = t_cur;
    }

    let shares = assemble(&best_shares);
    let objective = sub.objective(&shares);
    Ok(FreqSolution {
        shares,
        objective,
        converged,
        iterations,
    })
}

fn objective_active(sub: &FreqSubproblem, active: &[usize], shares: &[f64]) -> f64 {
    let mut worst = sub
        .m
        .iter()
        .enumerate()
        .filter(|(i, _)| !active.contains(i))
        .map(|(_, m)| *m)
        .fold(f64::NEG_INFINITY, f64::max);
    for (slot, &i) in active.iter().enumerate() {
        worst = worst.max(sub.m[i] + sub.n[i] / shares[slot]);
    }
    worst
}

fn norm_objective(m: &[f64], n: &[f64], phi: &[f64]) -> f64 {
    m.iter()
        .zip(n)
        .zip(phi)
        .map(|((&m, &n), &p)| m + n / p)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Exhaustive grid search over the simplex `sum f = budget` with `grid`
/// steps, every client getting at least one step. Test oracle; guarded to
/// small instances.
pub fn brute_force_freq(sub: &FreqSubproblem, grid: usize) -> Result<FreqSolution> {
    sub.validate()?;
    let k = sub.m.len();
    if k > 5 || grid > 200 {
        return Err(Error::TooLarge(format!(
            "brute_force_freq handles K <= 5 and grid <= 200, got K = {k}, grid = {grid}"
        )));
    }
    if grid < k {
        return Err(Error::Domain(format!(
            "grid {grid} cannot give {k} clients a positive share"
        )));
    }
    let step = sub.budget / grid as f64;
    let mut best_obj = f64::INFINITY;
    let mut best = vec![0usize; k];
    let mut current = vec![0usize; k];
    search(sub, step, 0, grid, 0.0, &mut current, &mut best, &mut best_obj);
    let shares: Vec<f64> = best.iter().map(|&c| c as f64 * step).collect();
    Ok(FreqSolution {
        objective: sub.objective(&shares),
        shares,
        converged: true,
        iterations: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn search(
    sub: &FreqSubproblem,
    step: f64,
    depth: usize,
    remaining: usize,
    partial_max: f64,
    current: &mut Vec<usize>,
    best: &mut Vec<usize>,
    best_obj: &mut f64,
) {
    let k = sub.m.len();
    // the max over already-fixed clients only grows as terms are added
    if partial_max >= *best_obj {
        return;
    }
    if depth == k - 1 {
        let f = remaining as f64 * step;
        let term = if sub.n[depth] > 0.0 {
            sub.m[depth] + sub.n[depth] / f
        } else {
            sub.m[depth]
        };
        let obj = partial_max.max(term);
        if obj < *best_obj {
            *best_obj = obj;
            current[depth] = remaining;
            best.copy_from_slice(current);
        }
        return;
    }
    let tail = k - depth - 1;
    for c in 1..=(remaining - tail) {
        let f = c as f64 * step;
        let term = if sub.n[depth] > 0.0 {
            sub.m[depth] + sub.n[depth] / f
        } else {
            sub.m[depth]
        };
        current[depth] = c;
        search(
            sub,
            step,
            depth + 1,
            remaining - c,
            partial_max.max(term),
            current,
            best,
            best_obj,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn solve(sub: &FreqSubproblem) -> FreqSolution {
        solve_freq(sub, &DualState::defaults(sub.m.len()), 10_000).unwrap()
    }

    /// Independent optimum: with every active client equalized at latency T,
    /// the budget use is `sum n_k / (T - m_k)`, strictly decreasing in T, so
    /// the optimum is the root of `sum n_k / (T - m_k) = budget` (or the
    /// largest passive m if that dominates).
    fn exact_optimum(sub: &FreqSubproblem) -> f64 {
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
    fn symmetric_two_clients_split_evenly() {
        let sub = FreqSubproblem {
            m: vec![0.0, 0.0],
            n: vec![1.0, 1.0],
            budget: 2.0,
        };
        let sol = solve(&sub);
        assert_eq!(sol.shares[0], sol.shares[1], "symmetry must be exact");
        assert!((sol.shares[0] - 1.0).abs() < 1e-9, "shares: {:?}", sol.shares);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn asymmetric_loads_equalize_ratios() {
        // grid-oracle value: shares (4, 1), objective 1
        let sub = FreqSubproblem {
            m: vec![0.0, 0.0],
            n: vec![4.0, 1.0],
            budget: 5.0,
        };
        let sol = solve(&sub);
        assert!((sol.objective - 1.0).abs() < 1e-3, "objective {}", sol.objective);
        assert!((sol.shares[0] - 4.0).abs() < 5e-3, "shares {:?}", sol.shares);
        assert!((sol.shares[1] - 1.0).abs() < 5e-3);
    }

    #[test]
    fn single_client_takes_whole_budget() {
        let sub = FreqSubproblem {
            m: vec![3.0],
            n: vec![2.0],
            budget: 4.0,
        };
        let sol = solve(&sub);
        assert!((sol.shares[0] - 4.0).abs() < 1e-12);
        assert!((sol.objective - 3.5).abs() < 1e-12);
    }

    #[test]
    fn passive_clients_get_floor_shares() {
        let sub = FreqSubproblem {
            m: vec![0.5, 2.0],
            n: vec![3.0, 0.0],
            budget: 6.0,
        };
        let sol = solve(&sub);
        assert!(sol.shares[1] > 0.0, "C2 needs strictly positive shares");
        assert!(sol.shares[1] < 1e-6 * sub.budget);
        let total: f64 = sol.shares.iter().sum();
        assert!(total <= sub.budget * (1.0 + 1e-12));
        // objective must still account for the passive client's constant m
        assert!(sol.objective >= 2.0);
        let exact = exact_optimum(&sub);
        assert!((sol.objective - exact).abs() <= 1e-3 * exact);
    }

    #[test]
    fn all_passive_is_an_even_split() {
        let sub = FreqSubproblem {
            m: vec![1.0, 4.0, 2.0],
            n: vec![0.0, 0.0, 0.0],
            budget: 9.0,
        };
        let sol = solve(&sub);
        assert_eq!(sol.shares, vec![3.0, 3.0, 3.0]);
        assert_eq!(sol.objective, 4.0);
        assert!(sol.converged);
    }

    #[test]
    fn oracle_agreement_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let k = rng.random_range(2..=4usize);
            let sub = FreqSubproblem {
                m: (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                n: (0..k)
                    .map(|_| {
                        if rng.random_range(0.0..1.0) < 0.15 {
                            0.0
                        } else {
                            rng.random_range(0.1..5.0)
                        }
                    })
                    .collect(),
                budget: rng.random_range(0.5..10.0),
            };
            let sol = solve(&sub);
            let oracle = brute_force_freq(&sub, 200).unwrap();
            let gap = (sol.objective - oracle.objective).abs() / oracle.objective;
            assert!(
                gap <= 1e-2,
                "trial {trial}: solver {} vs oracle {} (gap {gap:.4}) on {sub:?}",
                sol.objective,
                oracle.objective
            );
            // and against the exact root: the solution is feasible, so it can
            // never beat the true optimum
            let exact = exact_optimum(&sub);
            assert!(sol.objective >= exact * (1.0 - 1e-9), "below exact optimum");
            assert!(
                sol.objective <= exact * 1.01,
                "trial {trial}: solver {} vs exact {exact} on {sub:?}",
                sol.objective
            );
        }
    }

    #[test]
    fn scale_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(2..=4usize);
            let m: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let n: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..4.0)).collect();
            let sub = FreqSubproblem {
                m: m.clone(),
                n: n.clone(),
                budget: 3.0,
            };
            let scale = 1e10;
            let scaled = FreqSubproblem {
                m,
                n: n.iter().map(|v| v * scale).collect(),
                budget: 3.0 * scale,
            };
            let a = solve(&sub);
            let b = solve(&scaled);
            assert!(
                (a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0),
                "objective must be scale invariant: {} vs {}",
                a.objective,
                b.objective
            );
            for (x, y) in a.shares.iter().zip(&b.shares) {
                assert!((x * scale - y).abs() <= 1e-6 * (x * scale).abs().max(1e-30));
            }
        }
    }

    #[test]
    fn bottleneck_balance_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let k = rng.random_range(2..=4usize);
            let sub = FreqSubproblem {
                m: (0..k).map(|_| rng.random_range(0.0..1.0)).collect(),
                n: (0..k).map(|_| rng.random_range(0.1..4.0)).collect(),
                budget: rng.random_range(1.0..6.0),
            };
            let sol = solve(&sub);
            for i in 0..k {
                let term = sub.m[i] + sub.n[i] / sol.shares[i];
                assert!(
                    term <= sol.objective * (1.0 + 1e-12),
                    "client {i} exceeds the reported max: {term} > {}",
                    sol.objective
                );
            }
        }
    }

    #[test]
    fn feasibility_exact() {
        let sub = FreqSubproblem {
            m: vec![0.1, 0.2, 0.0],
            n: vec![1.0, 2.0, 3.0],
            budget: 7.0,
        };
        let sol = solve(&sub);
        let total: f64 = sol.shares.iter().sum();
        assert!(total <= sub.budget * (1.0 + 1e-12), "C3: {total} > {}", sub.budget);
        assert!(sol.shares.iter().all(|f| *f > 0.0), "C2");
    }

    #[test]
    fn grid_refinement_never_worsens() {
        let sub = FreqSubproblem {
            m: vec![0.3, 0.0],
            n: vec![2.0, 1.0],
            budget: 3.0,
        };
        let coarse = brute_force_freq(&sub, 10).unwrap();
        let fine = brute_force_freq(&sub, 100).unwrap();
        assert!(fine.objective <= coarse.objective + 1e-15);
    }

    #[test]
    fn grid_symmetric_instance_splits_evenly() {
        let sub = FreqSubproblem {
            m: vec![0.5, 0.5],
            n: vec![2.0, 2.0],
            budget: 4.0,
        };
        let sol = brute_force_freq(&sub, 100).unwrap();
        assert_eq!(sol.shares[0], sol.shares[1]);
    }

    #[test]
    fn oracle_size_guard() {
        let sub = FreqSubproblem {
            m: vec![0.0; 6],
            n: vec![1.0; 6],
            budget: 1.0,
        };
        assert!(matches!(brute_force_freq(&sub, 50), Err(Error::TooLarge(_))));
        let small = FreqSubproblem {
            m: vec![0.0; 2],
            n: vec![1.0; 2],
            budget: 1.0,
        };
        assert!(matches!(
            brute_force_freq(&small, 300),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn trace_records_iterations() {
        let sub = FreqSubproblem {
            m: vec![0.0, 0.0],
            n: vec![4.0, 1.0],
            budget: 5.0,
        };
        let mut trace = Vec::new();
        let sol = solve_freq_traced(&sub, &DualState::defaults(2), 10_000, &mut trace).unwrap();
        assert_eq!(trace.len(), sol.iterations);
        assert!(trace[0].share_sum > 0.0);
    }
}
