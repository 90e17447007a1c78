//! Static profiles: per-cut-layer workload/data-size tables for the model
//! being trained, and the system constants of the client/server deployment.
//!
//! All units are SI: FLOPs per sample, bits, cycles/s, Hz, W, seconds.
//! Computing intensity is FLOPs per cycle, so `frequency * intensity` is a
//! FLOPs/s throughput (see the config docs for why the intensity is stated
//! this way).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-cut-layer workload and data-size tables.
///
/// Every table has `num_layers + 1` entries, indexed by the cut layer
/// `l in 0..=num_layers`. Cut `0` keeps the whole model server-side; cut
/// `num_layers` keeps it all client-side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelProfile {
    /// Number of splittable layers `L`.
    pub num_layers: usize,
    /// Client-side forward-pass FLOPs per sample at cut `l`.
    pub client_fp_flops: Vec<f64>,
    /// Client-side backward-pass FLOPs per sample at cut `l`.
    pub client_bp_flops: Vec<f64>,
    /// Server-side forward-pass FLOPs per sample at cut `l`.
    pub server_fp_flops: Vec<f64>,
    /// Server-side backward-pass FLOPs per sample at cut `l`.
    pub server_bp_flops: Vec<f64>,
    /// Bits per sample of smashed data emitted at cut `l`.
    pub smashed_bits: Vec<f64>,
    /// Bits per sample of the gradients returned across cut `l`.
    pub gradient_bits: Vec<f64>,
    /// Bits of the client-side model when cut at `l`.
    pub model_bits: Vec<f64>,
}

impl ModelProfile {
    /// Checks table lengths, non-negativity, and the monotonicity that makes
    /// a cut-layer sweep meaningful: deeper cuts move forward work from the
    /// server to the client and grow the client-side model.
    pub fn validate(&self) -> Result<()> {
        let want = self.num_layers + 1;
        let tables: [(&str, &Vec<f64>); 7] = [
            ("client_fp_flops", &self.client_fp_flops),
            ("client_bp_flops", &self.client_bp_flops),
            ("server_fp_flops", &self.server_fp_flops),
            ("server_bp_flops", &self.server_bp_flops),
            ("smashed_bits", &self.smashed_bits),
            ("gradient_bits", &self.gradient_bits),
            ("model_bits", &self.model_bits),
        ];
        for (name, t) in tables {
            if t.len() != want {
                return Err(Error::InvalidProfile(format!(
                    "{name} has {} entries, expected num_layers + 1 = {want}",
                    t.len()
                )));
            }
            if let Some(v) = t.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "{name} contains non-finite or negative entry {v}"
                )));
            }
        }
        for (name, t) in [
            ("client_fp_flops", &self.client_fp_flops),
            ("model_bits", &self.model_bits),
        ] {
            if t.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidProfile(format!(
                    "{name} must be non-decreasing in the cut layer"
                )));
            }
        }
        if self.server_fp_flops.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidProfile(
                "server_fp_flops must be non-increasing in the cut layer".into(),
            ));
        }
        Ok(())
    }
}

/// Static system constants shared by every round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemProfile {
    /// Number of clients `K`.
    pub num_clients: usize,
    /// Mini-batch size `b` in samples.
    pub batch_size: u64,
    /// Mini-batch iterations per round `N`.
    pub batches_per_round: u64,
    /// Training rounds `A`.
    pub total_rounds: u64,
    /// Main-server computing frequency budget `f_s` in cycles/s.
    pub server_freq: f64,
    /// Main-server computing intensity in FLOPs per cycle.
    pub server_intensity: f64,
    /// Per-client computing intensity in FLOPs per cycle.
    pub client_intensity: Vec<f64>,
    /// Number of OFDMA subchannels `I` (shared by all four links; TDD
    /// separates the links in time).
    pub subchannel_count: usize,
    /// Bandwidth of one subchannel in Hz.
    pub subchannel_bandwidth: f64,
    /// Noise power in W.
    pub noise_psd: f64,
    /// Per-client uplink transmit power cap in W (C4).
    pub client_power_cap: Vec<f64>,
    /// Main-server total downlink power budget in W (C5).
    pub ms_power_cap: f64,
    /// Edge-server total downlink power budget in W (C5).
    pub es_power_cap: f64,
    /// Straggler tolerance `tau` in seconds.
    pub straggler_tolerance: f64,
    /// Largest cut layer each client can store (C1).
    pub max_cut: Vec<usize>,
    /// Local dataset size per client, used as aggregation weight.
    pub dataset_size: Vec<u64>,
}

impl SystemProfile {
    pub fn validate(&self, model: &ModelProfile) -> Result<()> {
        let k = self.num_clients;
        if k == 0 {
            return Err(Error::InvalidProfile("num_clients must be positive".into()));
        }
        for (name, len) in [
            ("client_intensity", self.client_intensity.len()),
            ("client_power_cap", self.client_power_cap.len()),
            ("max_cut", self.max_cut.len()),
            ("dataset_size", self.dataset_size.len()),
        ] {
            if len != k {
                return Err(Error::InvalidProfile(format!(
                    "{name} has {len} entries, expected num_clients = {k}"
                )));
            }
        }
        let positive: [(&str, f64); 6] = [
            ("server_freq", self.server_freq),
            ("server_intensity", self.server_intensity),
            ("subchannel_bandwidth", self.subchannel_bandwidth),
            ("noise_psd", self.noise_psd),
            ("ms_power_cap", self.ms_power_cap),
            ("es_power_cap", self.es_power_cap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if !(self.straggler_tolerance.is_finite() && self.straggler_tolerance > 0.0) {
            return Err(Error::InvalidProfile(format!(
                "straggler_tolerance must be finite and strictly positive, got {}",
                self.straggler_tolerance
            )));
        }
        if self.batch_size == 0 || self.batches_per_round == 0 || self.total_rounds == 0 {
            return Err(Error::InvalidProfile(
                "batch_size, batches_per_round, and total_rounds must be positive".into(),
            ));
        }
        if self.subchannel_count == 0 {
            return Err(Error::InvalidProfile(
                "subchannel_count must be positive".into(),
            ));
        }
        if self
            .client_intensity
            .iter()
            .chain(self.client_power_cap.iter())
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidProfile(
                "client intensities and power caps must be finite and strictly positive".into(),
            ));
        }
        if let Some((k, cut)) = self
            .max_cut
            .iter()
            .enumerate()
            .find(|(_, c)| **c > model.num_layers)
        {
            return Err(Error::InvalidProfile(format!(
                "max_cut[{k}] = {cut} exceeds num_layers = {}",
                model.num_layers
            )));
        }
        if self.dataset_size.contains(&0) {
            return Err(Error::InvalidProfile(
                "dataset_size entries must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::synthetic_model_profile;

    fn small_system(model: &ModelProfile) -> SystemProfile {
        SystemProfile {
            num_clients: 2,
            batch_size: 16,
            batches_per_round: 2,
            total_rounds: 3,
            server_freq: 1e12,
            server_intensity: 1.0,
            client_intensity: vec![1.0, 1.0],
            subchannel_count: 4,
            subchannel_bandwidth: 1e6,
            noise_psd: 1e-3,
            client_power_cap: vec![10.0, 10.0],
            ms_power_cap: 100.0,
            es_power_cap: 100.0,
            straggler_tolerance: 60.0,
            max_cut: vec![model.num_layers, model.num_layers],
            dataset_size: vec![100, 100],
        }
    }

    #[test]
    fn synthetic_profile_validates() {
        let m = synthetic_model_profile(8);
        m.validate().expect("synthetic profile must satisfy invariants");
        small_system(&m).validate(&m).expect("system profile valid");
    }

    #[test]
    fn table_length_mismatch_rejected() {
        let mut m = synthetic_model_profile(8);
        m.smashed_bits.pop();
        assert!(matches!(m.validate(), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn client_fp_monotonicity_enforced() {
        let mut m = synthetic_model_profile(8);
        m.client_fp_flops[3] = m.client_fp_flops[4] + 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn max_cut_above_layer_count_rejected() {
        let m = synthetic_model_profile(4);
        let mut s = small_system(&m);
        s.max_cut[1] = 5;
        let err = s.validate(&m).unwrap_err();
        assert!(err.to_string().contains("max_cut"), "got: {err}");
    }
}
