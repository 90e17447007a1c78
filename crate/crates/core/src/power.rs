//! Joint subchannel assignment and transmit-power allocation for the
//! transmission stages: minimize the worst per-client latency
//! `max_k (offset_k + sum_links load_k / rate_k)` over who owns each
//! subchannel and how much power each client spends.
//!
//! The discrete assignment is searched by branch and bound; powers at a leaf
//! follow a fixed inner rule:
//!
//! - uplink powers sit at their per-client caps (C4 is per client and the
//!   rate is strictly increasing in power, so caps dominate — an exact
//!   reduction, not an approximation);
//! - a downlink budget (C5) is split by bisection on the bottleneck latency,
//!   or evenly when the instance asks for the even baseline rule.
//!
//! [`enumerate_power`] brute-forces every complete assignment with the same
//! inner rule and is the exactness oracle for the search: on any instance it
//! fits, the two return identical objectives.

use serde::Serialize;

use crate::env::Link;
use crate::error::{Error, Result};

/// How a shared downlink budget is split at a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DownlinkRule {
    /// Min-max split: bisection on the bottleneck latency, 1e-12 relative.
    Bisection,
    /// `budget / K` for everyone; the even-allocation baseline.
    EvenSplit,
}

/// Power constraint of one link.
#[derive(Debug, Clone)]
pub enum LinkPowerCap {
    /// Uplink: per-client caps (C4).
    PerClient(Vec<f64>),
    /// Downlink: one shared server budget (C5).
    Shared { budget: f64, rule: DownlinkRule },
}

/// One link inside a power subproblem.
#[derive(Debug, Clone)]
pub struct LinkInstance {
    pub link: Link,
    /// Bits each client must move on this link (per round, N absorbed).
    pub loads: Vec<f64>,
    /// `gains[subchannel][client]`.
    pub gains: Vec<Vec<f64>>,
    pub cap: LinkPowerCap,
}

/// A transmission-stage subproblem: one or more links whose latencies add up
/// per client, plus constant per-client offsets entering the max.
#[derive(Debug, Clone)]
pub struct PowerSubproblem {
    pub bandwidth: f64,
    pub noise_psd: f64,
    /// Constant latency per client inside the max (compute terms, already
    /// fixed stages).
    pub offsets: Vec<f64>,
    pub links: Vec<LinkInstance>,
}

impl PowerSubproblem {
    pub fn num_clients(&self) -> usize {
        self.offsets.len()
    }

    fn num_slots(&self) -> usize {
        self.links.iter().map(|l| l.gains.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_clients();
        if k == 0 {
            return Err(Error::Domain("power subproblem needs clients".into()));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0)
            || !(self.noise_psd.is_finite() && self.noise_psd > 0.0)
        {
            return Err(Error::Domain(
                "bandwidth and noise must be finite and positive".into(),
            ));
        }
        if self.offsets.iter().any(|o| o.is_nan() || *o < 0.0) {
            return Err(Error::Domain("offsets must be non-negative".into()));
        }
        if self.links.is_empty() {
            return Err(Error::Domain(
                "power subproblem needs at least one link".into(),
            ));
        }
        for li in &self.links {
            if li.loads.len() != k {
                return Err(Error::Domain(format!(
                    "{} has {} loads for {k} clients",
                    li.link.name(),
                    li.loads.len()
                )));
            }
            if li.loads.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(Error::Domain("loads must be finite and non-negative".into()));
            }
            if li.gains.is_empty() {
                return Err(Error::Domain(format!(
                    "{} has no subchannels",
                    li.link.name()
                )));
            }
            for row in &li.gains {
                if row.len() != k {
                    return Err(Error::Domain(format!(
                        "{} gain row has {} entries for {k} clients",
                        li.link.name(),
                        row.len()
                    )));
                }
                if row.iter().any(|g| !g.is_finite() || *g < 0.0) {
                    return Err(Error::Domain("gains must be finite and non-negative".into()));
                }
            }
            match &li.cap {
                LinkPowerCap::PerClient(caps) => {
                    if caps.len() != k || caps.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                        return Err(Error::Domain(format!(
                            "{} needs {k} positive per-client caps",
                            li.link.name()
                        )));
                    }
                }
                LinkPowerCap::Shared { budget, .. } => {
                    if !(budget.is_finite() && *budget > 0.0) {
                        return Err(Error::Domain(format!(
                            "{} needs a positive shared budget",
                            li.link.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact feasibility: on every link, the loaded clients must be
    /// matchable to distinct positive-gain subchannels.
    pub fn check_feasible(&self) -> Result<()> {
        for li in &self.links {
            let loaded: Vec<usize> = (0..self.num_clients())
                .filter(|&k| li.loads[k] > 0.0)
                .collect();
            if loaded.len() > li.gains.len() {
                return Err(Error::Infeasible {
                    constraint: "coverage",
                    detail: format!(
                        "{}: {} loaded clients but only {} subchannels",
                        li.link.name(),
                        loaded.len(),
                        li.gains.len()
                    ),
                });
            }
            let mut owner: Vec<Option<usize>> = vec![None; li.gains.len()];
            for &client in &loaded {
                let mut visited = vec![false; li.gains.len()];
                if !augment(client, li, &mut owner, &mut visited) {
                    return Err(Error::Infeasible {
                        constraint: "coverage",
                        detail: format!(
                            "{}: client {client} cannot be given a positive-gain subchannel",
                            li.link.name()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

fn augment(
    client: usize,
    li: &LinkInstance,
    owner: &mut Vec<Option<usize>>,
    visited: &mut Vec<bool>,
) -> bool {
    for sub in 0..li.gains.len() {
        if visited[sub] || li.gains[sub][client] <= 0.0 {
            continue;
        }
        visited[sub] = true;
        if owner[sub].is_none() || augment(owner[sub].unwrap(), li, owner, visited) {
            owner[sub] = Some(client);
            return true;
        }
    }
    false
}

/// Search events recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Expanded,
    Pruned,
    Leaf,
    Incumbent,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchEvent {
    pub node: u64,
    pub depth: usize,
    pub kind: EventKind,
    /// Bound for expand/prune events, leaf objective otherwise.
    pub value: f64,
    /// Slot choices fixed so far, in search slot order.
    pub prefix: Vec<usize>,
}

/// Knobs for [`solve_power_with`].
#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Node expansion budget; `None` searches to exhaustion. A spent budget
    /// returns the incumbent with `complete = false`.
    pub max_nodes: Option<u64>,
    /// Record per-node [`SearchEvent`]s (expansion, pruning, incumbents).
    pub record_events: bool,
    /// Evaluate this assignment first and seed the incumbent with it.
    pub seed_assignment: Option<Vec<Vec<usize>>>,
}

/// Solution of a power subproblem.
#[derive(Debug, Clone)]
pub struct PowerSolution {
    /// `assignment[link_idx][subchannel] = client`. Assignments are complete:
    /// under per-client powers an extra subchannel never hurts its owner.
    pub assignment: Vec<Vec<usize>>,
    /// `powers[link_idx][client]` in W.
    pub powers: Vec<Vec<f64>>,
    pub objective: f64,
    pub nodes_expanded: u64,
    /// False when the node budget ran out before exhausting the tree.
    pub complete: bool,
    pub events: Vec<SearchEvent>,
}

/// Rate of `client` on one link under an assignment row and a single power.
fn rate_of(
    sub: &PowerSubproblem,
    li: &LinkInstance,
    assignment: &[usize],
    client: usize,
    power: f64,
) -> f64 {
    let mut rate = 0.0;
    for (s, owner) in assignment.iter().enumerate() {
        if *owner == client {
            rate += sub.bandwidth * (1.0 + power * li.gains[s][client] / sub.noise_psd).log2();
        }
    }
    rate
}

fn transfer(bits: f64, rate: f64) -> f64 {
    if bits == 0.0 {
        0.0
    } else if rate == 0.0 {
        f64::INFINITY
    } else {
        bits / rate
    }
}

/// The shared inner power rule: given a complete assignment, fix uplink
/// powers at their caps, then split each downlink budget (in link order)
/// against the latencies accumulated so far. Returns per-link powers and the
/// realized objective.
pub fn evaluate_assignment(
    sub: &PowerSubproblem,
    assignment: &[Vec<usize>],
) -> (Vec<Vec<f64>>, f64) {
    let k = sub.num_clients();
    let mut latency = sub.offsets.clone();
    let mut powers: Vec<Vec<f64>> = sub.links.iter().map(|_| vec![0.0; k]).collect();

    for (idx, li) in sub.links.iter().enumerate() {
        if let LinkPowerCap::PerClient(caps) = &li.cap {
            powers[idx] = caps.clone();
            for c in 0..k {
                let rate = rate_of(sub, li, &assignment[idx], c, caps[c]);
                latency[c] += transfer(li.loads[c], rate);
            }
        }
    }
    for (idx, li) in sub.links.iter().enumerate() {
        if let LinkPowerCap::Shared { budget, rule } = &li.cap {
            let (p, lat) = split_downlink(sub, li, &assignment[idx], &latency, *budget, *rule);
            powers[idx] = p;
            latency = lat;
        }
    }
    let objective = latency.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (powers, objective)
}

/// Split one shared downlink budget. `base` carries each client's latency
/// from offsets and already-evaluated links; the bisection equalizes
/// `base_k + load_k / rate_k(p_k)` across loaded clients.
fn split_downlink(
    sub: &PowerSubproblem,
    li: &LinkInstance,
    assignment: &[usize],
    base: &[f64],
    budget: f64,
    rule: DownlinkRule,
) -> (Vec<f64>, Vec<f64>) {
    let k = base.len();
    let loaded: Vec<usize> = (0..k).filter(|&c| li.loads[c] > 0.0).collect();
    let mut powers = vec![0.0; k];
    let mut latency = base.to_vec();
    if loaded.is_empty() {
        return (powers, latency);
    }

    let apply = |powers: &[f64], latency: &mut Vec<f64>| {
        for &c in &loaded {
            let rate = rate_of(sub, li, assignment, c, powers[c]);
            latency[c] += transfer(li.loads[c], rate);
        }
    };

    let even = budget / k as f64;
    let degenerate = loaded
        .iter()
        .any(|&c| !base[c].is_finite() || rate_of(sub, li, assignment, c, budget) == 0.0);
    if rule == DownlinkRule::EvenSplit || degenerate {
        // the even baseline; also the fallback when some loaded client can
        // never be served here (the objective is infinite either way)
        for &c in &loaded {
            powers[c] = even;
        }
        apply(&powers, &mut latency);
        return (powers, latency);
    }

    // min power for client c to reach latency `target` on this link
    let power_for = |c: usize, target: f64| -> Option<f64> {
        if target <= base[c] {
            return None;
        }
        let needed = li.loads[c] / (target - base[c]);
        if rate_of(sub, li, assignment, c, budget) < needed {
            return None;
        }
        let mut lo = 0.0f64;
        let mut hi = budget;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rate_of(sub, li, assignment, c, mid) >= needed {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    };

    // bounds: full budget to everyone at once (unachievable, lower) and an
    // even split over all clients (feasible, upper)
    let mut t_lo = loaded
        .iter()
        .map(|&c| base[c] + li.loads[c] / rate_of(sub, li, assignment, c, budget))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut t_hi = loaded
        .iter()
        .map(|&c| base[c] + li.loads[c] / rate_of(sub, li, assignment, c, even))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best: Vec<f64> = {
        let mut p = vec![0.0; k];
        for &c in &loaded {
            p[c] = power_for(c, t_hi).unwrap_or(even);
        }
        p
    };

    for _ in 0..80 {
        if t_hi - t_lo <= 1e-12 * t_hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (t_lo + t_hi);
        let mut candidate = vec![0.0; k];
        let mut total = 0.0;
        let mut ok = true;
        for &c in &loaded {
            match power_for(c, mid) {
                Some(p) => {
                    candidate[c] = p;
                    total += p;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && total <= budget {
            t_hi = mid;
            best = candidate;
        } else {
            t_lo = mid;
        }
    }
    powers = best;
    apply(&powers, &mut latency);
    (powers, latency)
}

/// Exhaustive search over all `K^slots` complete assignments with the same
/// inner rule as [`solve_power`]. Test oracle; guarded.
pub fn enumerate_power(sub: &PowerSubproblem) -> Result<PowerSolution> {
    sub.validate()?;
    sub.check_feasible()?;
    let k = sub.num_clients();
    let slots = sub.num_slots();
    let leaves = (k as f64).powi(slots as i32);
    if leaves > 1e5 {
        return Err(Error::TooLarge(format!(
            "enumerate_power would visit {leaves:.3e} assignments ({k}^{slots}); cap is 1e5"
        )));
    }

    let mut flat = vec![0usize; slots];
    let mut best_obj = f64::INFINITY;
    let mut best_flat = flat.clone();
    loop {
        let assignment = unflatten(sub, &flat);
        let (_, obj) = evaluate_assignment(sub, &assignment);
        if obj < best_obj {
            best_obj = obj;
            best_flat = flat.clone();
        }
        // lexicographic odometer over clients per slot
        let mut pos = slots;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            flat[pos] += 1;
            if flat[pos] < k {
                break;
            }
            flat[pos] = 0;
        }
        if flat.iter().all(|&c| c == 0) {
            break;
        }
    }
    let assignment = unflatten(sub, &best_flat);
    let (powers, objective) = evaluate_assignment(sub, &assignment);
    if objective.is_infinite() {
        return Err(Error::Infeasible {
            constraint: "coverage",
            detail: "no complete assignment serves every loaded client".into(),
        });
    }
    Ok(PowerSolution {
        assignment,
        powers,
        objective,
        nodes_expanded: 0,
        complete: true,
        events: Vec::new(),
    })
}

fn unflatten(sub: &PowerSubproblem, flat: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sub.links.len());
    let mut at = 0;
    for li in &sub.links {
        let n = li.gains.len();
        out.push(flat[at..at + n].to_vec());
        at += n;
    }
    out
}

/// Branch and bound with default options (exhaustive, no tracing).
pub fn solve_power(sub: &PowerSubproblem) -> Result<PowerSolution> {
    solve_power_with(sub, &SearchOptions::default())
}

pub fn solve_power_with(sub: &PowerSubproblem, opts: &SearchOptions) -> Result<PowerSolution> {
    sub.validate()?;
    sub.check_feasible()?;
    let k = sub.num_clients();

    // slot order: descending best gain; client order per slot: descending
    // load on that slot's link. Good incumbents early make pruning bite.
    let slots = slot_order(sub);
    let client_order: Vec<Vec<usize>> = sub
        .links
        .iter()
        .map(|li| {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| {
                li.loads[b]
                    .partial_cmp(&li.loads[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order
        })
        .collect();

    let mut incumbent_obj = f64::INFINITY;
    let mut incumbent: Option<Vec<Vec<usize>>> = None;
    let mut events = Vec::new();
    if let Some(seed) = &opts.seed_assignment {
        let shape_ok = seed.len() == sub.links.len()
            && seed
                .iter()
                .zip(&sub.links)
                .all(|(row, li)| row.len() == li.gains.len() && row.iter().all(|c| *c < k));
        if !shape_ok {
            return Err(Error::Domain("seed assignment shape mismatch".into()));
        }
        let (_, obj) = evaluate_assignment(sub, seed);
        incumbent_obj = obj;
        incumbent = Some(seed.clone());
    }

    // DFS over slot choices
    let mut assignment: Vec<Vec<usize>> = sub
        .links
        .iter()
        .map(|li| vec![usize::MAX; li.gains.len()])
        .collect();
    let mut nodes: u64 = 0;
    let mut complete = true;
    enum Step {
        Enter(usize),
        Assign(usize, usize),
        Unassign(usize),
    }
    let mut stack = vec![Step::Enter(0)];
    let mut prefix: Vec<usize> = Vec::new();

    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(depth) => {
                if let Some(cap) = opts.max_nodes {
                    if nodes >= cap {
                        complete = false;
                        break;
                    }
                }
                nodes += 1;
                if depth == slots.len() {
                    let (_, obj) = evaluate_assignment(sub, &assignment);
                    if opts.record_events {
                        events.push(SearchEvent {
                            node: nodes,
                            depth,
                            kind: EventKind::Leaf,
                            value: obj,
                            prefix: prefix.clone(),
                        });
                    }
                    if obj < incumbent_obj {
                        incumbent_obj = obj;
                        incumbent = Some(assignment.clone());
                        if opts.record_events {
                            events.push(SearchEvent {
                                node: nodes,
                                depth,
                                kind: EventKind::Incumbent,
                                value: obj,
                                prefix: prefix.clone(),
                            });
                        }
                    }
                    continue;
                }
                let bound = node_bound(sub, &assignment);
                if bound >= incumbent_obj {
                    if opts.record_events {
                        events.push(SearchEvent {
                            node: nodes,
                            depth,
                            kind: EventKind::Pruned,
                            value: bound,
                            prefix: prefix.clone(),
                        });
                    }
                    continue;
                }
                if opts.record_events {
                    events.push(SearchEvent {
                        node: nodes,
                        depth,
                        kind: EventKind::Expanded,
                        value: bound,
                        prefix: prefix.clone(),
                    });
                }
                let (li_idx, _) = slots[depth];
                for &client in client_order[li_idx].iter().rev() {
                    stack.push(Step::Assign(depth, client));
                }
            }
            Step::Assign(depth, client) => {
                let (li_idx, s) = slots[depth];
                assignment[li_idx][s] = client;
                prefix.push(client);
                stack.push(Step::Unassign(depth));
                stack.push(Step::Enter(depth + 1));
            }
            Step::Unassign(depth) => {
                let (li_idx, s) = slots[depth];
                assignment[li_idx][s] = usize::MAX;
                prefix.pop();
            }
        }
    }

    let assignment = incumbent.ok_or_else(|| Error::Infeasible {
        constraint: "coverage",
        detail: "search found no finite assignment".into(),
    })?;
    let (powers, objective) = evaluate_assignment(sub, &assignment);
    if objective.is_infinite() {
        return Err(Error::Infeasible {
            constraint: "coverage",
            detail: "best assignment still leaves a loaded client unserved".into(),
        });
    }
    Ok(PowerSolution {
        assignment,
        powers,
        objective,
        nodes_expanded: nodes,
        complete,
        events,
    })
}

/// The (link, subchannel) branching order used by the search.
pub fn slot_order(sub: &PowerSubproblem) -> Vec<(usize, usize)> {
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (li_idx, li) in sub.links.iter().enumerate() {
        for s in 0..li.gains.len() {
            slots.push((li_idx, s));
        }
    }
    let best = |l: usize, s: usize| {
        sub.links[l].gains[s]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    slots.sort_by(|&(la, sa), &(lb, sb)| {
        best(lb, sb)
            .partial_cmp(&best(la, sa))
            .unwrap()
            .then(la.cmp(&lb))
            .then(sa.cmp(&sb))
    });
    slots
}

/// Optimistic completion bound: every client keeps its assigned subchannels,
/// is granted every still-free one, and spends full power (its cap on an
/// uplink, the whole budget on a downlink). Any real completion gives each
/// client a subset of those subchannels at no more power, so its latency is
/// at least this.
fn node_bound(sub: &PowerSubproblem, assignment: &[Vec<usize>]) -> f64 {
    let k = sub.num_clients();
    let mut worst = f64::NEG_INFINITY;
    for c in 0..k {
        let mut lat = sub.offsets[c];
        for (idx, li) in sub.links.iter().enumerate() {
            if li.loads[c] == 0.0 {
                continue;
            }
            let power = match &li.cap {
                LinkPowerCap::PerClient(caps) => caps[c],
                LinkPowerCap::Shared { budget, .. } => *budget,
            };
            let mut rate = 0.0;
            for (s, owner) in assignment[idx].iter().enumerate() {
                if *owner == usize::MAX || *owner == c {
                    rate +=
                        sub.bandwidth * (1.0 + power * li.gains[s][c] / sub.noise_psd).log2();
                }
            }
            lat += transfer(li.loads[c], rate);
        }
        worst = worst.max(lat);
    }
    worst
}
