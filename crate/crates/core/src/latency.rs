//! Per-round training latency as pure functions of a decision, the static
//! profiles, and one environment draw.
//!
//! A round runs `N` mini-batch iterations, each consisting of client-side
//! compute, smashed-data upload to the main server, server-side compute, and
//! gradient download, followed by one client-model upload to the edge server,
//! aggregation, and one download back. The round total is
//!
//! ```text
//! T = max_k min(N*(T_C + T_S + T_MS_up + T_MS_down) + T_ES_up, tau)
//!   + max_k T_ES_down
//! ```
//!
//! with `tau` the straggler tolerance: the system stops waiting for any
//! client whose main-stage latency exceeds it. A client with no subchannel on
//! a link it needs gets an infinite transmission latency; the `tau` cap
//! bounds that on the main stage, while an infinite edge-server downlink
//! propagates into the round total (configs must give every client a downlink
//! path).

use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSample, Link, LinkMap};
use crate::error::{Error, Result};
use crate::profile::{ModelProfile, SystemProfile};

/// A complete resource decision for one round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    /// Cut layer per client (C1).
    pub cut: Vec<usize>,
    /// Main-server frequency share per client in cycles/s (C2, C3).
    pub server_freq_share: Vec<f64>,
    /// Owner of each subchannel on each link; `None` leaves it unused.
    pub subchannel_assign: LinkMap<Vec<Option<usize>>>,
    /// Transmit power per link and client in W. A client uses the same power
    /// on every subchannel it owns on a link (C4 uplink, C5 downlink).
    pub power: LinkMap<Vec<f64>>,
}

impl Allocation {
    /// Full feasibility check against C1..C5 plus shape/positivity checks.
    /// Errors name the violated constraint.
    pub fn validate(&self, sys: &SystemProfile) -> Result<()> {
        let k = sys.num_clients;
        if self.cut.len() != k || self.server_freq_share.len() != k {
            return Err(Error::Infeasible {
                constraint: "shape",
                detail: format!(
                    "allocation sized for {} cuts / {} shares, system has {k} clients",
                    self.cut.len(),
                    self.server_freq_share.len()
                ),
            });
        }
        for (i, (&cut, &max)) in self.cut.iter().zip(&sys.max_cut).enumerate() {
            if cut > max {
                return Err(Error::Infeasible {
                    constraint: "C1",
                    detail: format!("cut[{i}] = {cut} exceeds max_cut[{i}] = {max}"),
                });
            }
        }
        let mut share_sum = 0.0;
        for (i, &f) in self.server_freq_share.iter().enumerate() {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Infeasible {
                    constraint: "C2",
                    detail: format!("server_freq_share[{i}] = {f} must be strictly positive"),
                });
            }
            share_sum += f;
        }
        if share_sum > sys.server_freq * (1.0 + 1e-12) {
            return Err(Error::Infeasible {
                constraint: "C3",
                detail: format!(
                    "sum of frequency shares {share_sum:.6e} exceeds budget {:.6e}",
                    sys.server_freq
                ),
            });
        }
        for link in Link::ALL {
            let assign = &self.subchannel_assign[link];
            if assign.len() != sys.subchannel_count {
                return Err(Error::Infeasible {
                    constraint: "shape",
                    detail: format!(
                        "{} assignment covers {} subchannels, system has {}",
                        link.name(),
                        assign.len(),
                        sys.subchannel_count
                    ),
                });
            }
            if let Some(owner) = assign.iter().flatten().find(|c| **c >= k) {
                return Err(Error::Infeasible {
                    constraint: "shape",
                    detail: format!("{} assigns a subchannel to client {owner}", link.name()),
                });
            }
            let powers = &self.power[link];
            if powers.len() != k {
                return Err(Error::Infeasible {
                    constraint: "shape",
                    detail: format!("{} has {} power entries", link.name(), powers.len()),
                });
            }
            if let Some((i, p)) = powers
                .iter()
                .enumerate()
                .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
            {
                return Err(Error::Infeasible {
                    constraint: "C4",
                    detail: format!("power[{}][{i}] = {p} must be finite and >= 0", link.name()),
                });
            }
            if link.is_uplink() {
                for (i, (&p, &cap)) in powers.iter().zip(&sys.client_power_cap).enumerate() {
                    if p > cap * (1.0 + 1e-12) {
                        return Err(Error::Infeasible {
                            constraint: "C4",
                            detail: format!(
                                "{} power for client {i} is {p} W, cap is {cap} W",
                                link.name()
                            ),
                        });
                    }
                }
            } else {
                let budget = match link {
                    Link::MsDown => sys.ms_power_cap,
                    Link::EsDown => sys.es_power_cap,
                    _ => unreachable!(),
                };
                let total: f64 = powers.iter().sum();
                if total > budget * (1.0 + 1e-12) {
                    return Err(Error::Infeasible {
                        constraint: "C5",
                        detail: format!(
                            "{} powers sum to {total} W, server budget is {budget} W",
                            link.name()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Latency components of one client within a round, all in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLatency {
    pub client_compute: f64,
    pub server_compute: f64,
    pub ms_uplink: f64,
    pub ms_downlink: f64,
    pub es_uplink: f64,
    pub es_downlink: f64,
    /// `min(N*(T_C + T_S + T_MS_up + T_MS_down) + T_ES_up, tau)`; the
    /// client's contribution to the first max of the round total.
    pub per_round_contribution: f64,
}

impl ClientLatency {
    /// Main-stage latency of one mini-batch iteration.
    pub fn ms_stage(&self) -> f64 {
        self.client_compute + self.server_compute + self.ms_uplink + self.ms_downlink
    }
}

/// Full per-round latency decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub per_client: Vec<ClientLatency>,
    /// Round total per the capped max decomposition.
    pub round_total: f64,
    /// Clients whose uncapped main-stage latency exceeded `tau`.
    pub stragglers: Vec<usize>,
}

/// Client-side compute latency of one mini-batch iteration at cut `l`:
/// `b * (fp + bp) / (f_k * kappa_k)`.
pub fn client_compute_latency(
    model: &ModelProfile,
    sys: &SystemProfile,
    env: &EnvironmentSample,
    client: usize,
    cut: usize,
) -> Result<f64> {
    if client >= sys.num_clients {
        return Err(Error::Domain(format!("client {client} out of range")));
    }
    if cut > sys.max_cut[client] {
        return Err(Error::Domain(format!(
            "cut {cut} exceeds max_cut[{client}] = {}",
            sys.max_cut[client]
        )));
    }
    let freq = env.client_freq[client];
    if !(freq.is_finite() && freq > 0.0) {
        return Err(Error::Domain(format!(
            "client {client} frequency {freq} must be strictly positive"
        )));
    }
    let flops = sys.batch_size as f64 * (model.client_fp_flops[cut] + model.client_bp_flops[cut]);
    Ok(flops / (freq * sys.client_intensity[client]))
}

/// Shannon-capacity rate of a client on a link: the sum over its assigned
/// subchannels of `B * log2(1 + p * g / noise)`, with `p` the client's power
/// entry for the link. Zero when it owns no subchannel.
pub fn link_rate(
    sys: &SystemProfile,
    alloc: &Allocation,
    env: &EnvironmentSample,
    link: Link,
    client: usize,
) -> Result<f64> {
    let power = alloc.power[link][client];
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::Domain(format!(
            "negative or non-finite power {power} on {}",
            link.name()
        )));
    }
    let mut rate = 0.0;
    for (sub, owner) in alloc.subchannel_assign[link].iter().enumerate() {
        if *owner != Some(client) {
            continue;
        }
        let gain = env.gain[link][sub][client];
        if !(gain.is_finite() && gain >= 0.0) {
            return Err(Error::Domain(format!(
                "negative or non-finite gain {gain} on {} subchannel {sub}",
                link.name()
            )));
        }
        rate += sys.subchannel_bandwidth * (1.0 + power * gain / sys.noise_psd).log2();
    }
    Ok(rate)
}

/// `bits / rate` with the conventions used throughout: zero bits cost zero
/// seconds, positive bits over a zero rate cost infinity.
pub fn transfer_latency(bits: f64, rate: f64) -> f64 {
    if bits == 0.0 {
        0.0
    } else if rate == 0.0 {
        f64::INFINITY
    } else {
        bits / rate
    }
}

/// Smashed-data upload latency of one iteration: `b * xi_s(l_k) / R_ms_up`.
pub fn smashed_uplink_latency(
    model: &ModelProfile,
    sys: &SystemProfile,
    alloc: &Allocation,
    env: &EnvironmentSample,
    client: usize,
) -> Result<f64> {
    let bits = sys.batch_size as f64 * model.smashed_bits[alloc.cut[client]];
    let rate = link_rate(sys, alloc, env, Link::MsUp, client)?;
    Ok(transfer_latency(bits, rate))
}

/// Gradient download latency of one iteration: `b * xi_g(l_k) / R_ms_down`.
pub fn gradient_downlink_latency(
    model: &ModelProfile,
    sys: &SystemProfile,
    alloc: &Allocation,
    env: &EnvironmentSample,
    client: usize,
) -> Result<f64> {
    let bits = sys.batch_size as f64 * model.gradient_bits[alloc.cut[client]];
    let rate = link_rate(sys, alloc, env, Link::MsDown, client)?;
    Ok(transfer_latency(bits, rate))
}

/// Server-side compute latency of one iteration:
/// `b * (fp + bp) / (f_s^k * kappa_s)`.
pub fn server_compute_latency(
    model: &ModelProfile,
    sys: &SystemProfile,
    alloc: &Allocation,
    client: usize,
) -> Result<f64> {
    let share = alloc.server_freq_share[client];
    if !(share.is_finite() && share > 0.0) {
        return Err(Error::Domain(format!(
            "server frequency share {share} for client {client} must be strictly positive"
        )));
    }
    let cut = alloc.cut[client];
    let flops = sys.batch_size as f64 * (model.server_fp_flops[cut] + model.server_bp_flops[cut]);
    Ok(flops / (share * sys.server_intensity))
}

/// Client-model transfer latencies to and from the edge server:
/// `(xi_m(l_k) / R_es_up, xi_m(l_k) / R_es_down)`. Model bits are per round,
/// not per sample.
pub fn aggregation_latencies(
    model: &ModelProfile,
    sys: &SystemProfile,
    alloc: &Allocation,
    env: &EnvironmentSample,
    client: usize,
) -> Result<(f64, f64)> {
    let bits = model.model_bits[alloc.cut[client]];
    let up = link_rate(sys, alloc, env, Link::EsUp, client)?;
    let down = link_rate(sys, alloc, env, Link::EsDown, client)?;
    Ok((transfer_latency(bits, up), transfer_latency(bits, down)))
}

/// Full round decomposition. Validates the allocation first; the error names
/// the violated constraint.
pub fn per_round_latency(
    model: &ModelProfile,
    sys: &SystemProfile,
    alloc: &Allocation,
    env: &EnvironmentSample,
) -> Result<LatencyBreakdown> {
    alloc.validate(sys)?;
    let n = sys.batches_per_round as f64;
    let tau = sys.straggler_tolerance;
    let mut per_client = Vec::with_capacity(sys.num_clients);
    let mut stragglers = Vec::new();
    for k in 0..sys.num_clients {
        let client_compute = client_compute_latency(model, sys, env, k, alloc.cut[k])?;
        let server_compute = server_compute_latency(model, sys, alloc, k)?;
        let ms_uplink = smashed_uplink_latency(model, sys, alloc, env, k)?;
        let ms_downlink = gradient_downlink_latency(model, sys, alloc, env, k)?;
        let (es_uplink, es_downlink) = aggregation_latencies(model, sys, alloc, env, k)?;
        let ms_stage = client_compute + server_compute + ms_uplink + ms_downlink;
        let uncapped = n * ms_stage + es_uplink;
        if uncapped > tau {
            stragglers.push(k);
        }
        per_client.push(ClientLatency {
            client_compute,
            server_compute,
            ms_uplink,
            ms_downlink,
            es_uplink,
            es_downlink,
            per_round_contribution: uncapped.min(tau),
        });
    }
    let round_total = round_total_from_components(&per_client);
    Ok(LatencyBreakdown {
        per_client,
        round_total,
        stragglers,
    })
}

/// The round total recomputed from stored per-client components. This is the
/// only path that produces `round_total`, so a recomputation from a stored
/// breakdown reproduces it bit-exactly.
pub fn round_total_from_components(per_client: &[ClientLatency]) -> f64 {
    let capped = per_client
        .iter()
        .map(|c| c.per_round_contribution)
        .fold(f64::NEG_INFINITY, f64::max);
    let down = per_client
        .iter()
        .map(|c| c.es_downlink)
        .fold(f64::NEG_INFINITY, f64::max);
    capped + down
}
