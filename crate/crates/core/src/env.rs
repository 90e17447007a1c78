//! Stochastic environment: one training round sees a fresh draw of client
//! computing frequencies and per-subchannel channel gains. Draws are
//! truncated Gaussians, fully determined by an [`EnvStats`] description and a
//! seed, so every experiment is replayable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four time-separated transmission links of the protocol.
///
/// TDD reuses the same `I` subchannels on every link, so a subchannel index
/// means a different physical resource per link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Link {
    /// Client -> main server (smashed data).
    MsUp,
    /// Main server -> client (cut-layer gradients).
    MsDown,
    /// Client -> edge server (client-side model upload).
    EsUp,
    /// Edge server -> client (aggregated model distribution).
    EsDown,
}

impl Link {
    pub const ALL: [Link; 4] = [Link::MsUp, Link::MsDown, Link::EsUp, Link::EsDown];

    pub fn index(self) -> usize {
        match self {
            Link::MsUp => 0,
            Link::MsDown => 1,
            Link::EsUp => 2,
            Link::EsDown => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::MsUp => "ms_up",
            Link::MsDown => "ms_down",
            Link::EsUp => "es_up",
            Link::EsDown => "es_down",
        }
    }

    /// Uplink powers are capped per client (C4); downlink powers share a
    /// server budget (C5).
    pub fn is_uplink(self) -> bool {
        matches!(self, Link::MsUp | Link::EsUp)
    }
}

/// A value per link, indexable by [`Link`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMap<T> {
    pub ms_up: T,
    pub ms_down: T,
    pub es_up: T,
    pub es_down: T,
}

impl<T> LinkMap<T> {
    pub fn from_fn(mut f: impl FnMut(Link) -> T) -> Self {
        LinkMap {
            ms_up: f(Link::MsUp),
            ms_down: f(Link::MsDown),
            es_up: f(Link::EsUp),
            es_down: f(Link::EsDown),
        }
    }

    pub fn uniform(value: T) -> Self
    where
        T: Clone,
    {
        LinkMap::from_fn(|_| value.clone())
    }
}

impl<T> std::ops::Index<Link> for LinkMap<T> {
    type Output = T;
    fn index(&self, link: Link) -> &T {
        match link {
            Link::MsUp => &self.ms_up,
            Link::MsDown => &self.ms_down,
            Link::EsUp => &self.es_up,
            Link::EsDown => &self.es_down,
        }
    }
}

impl<T> std::ops::IndexMut<Link> for LinkMap<T> {
    fn index_mut(&mut self, link: Link) -> &mut T {
        match link {
            Link::MsUp => &mut self.ms_up,
            Link::MsDown => &mut self.ms_down,
            Link::EsUp => &mut self.es_up,
            Link::EsDown => &mut self.es_down,
        }
    }
}

/// One stochastic draw of the environment: client frequencies `f` and channel
/// gains `G` for every (link, subchannel, client) triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSample {
    /// Client computing frequency in cycles/s, one entry per client.
    pub client_freq: Vec<f64>,
    /// Dimensionless channel gain, `gain[link][subchannel][client]`.
    pub gain: LinkMap<Vec<Vec<f64>>>,
}

impl EnvironmentSample {
    pub fn num_clients(&self) -> usize {
        self.client_freq.len()
    }
}

/// Distribution parameters for [`EnvironmentSample`] draws.
///
/// Frequencies and gains are Gaussian, truncated from below at
/// `floor_frac * mean` so every emitted value stays strictly positive. Gains
/// are i.i.d. per (link, subchannel, client). The default config maps a
/// standard-normal-magnitude gain model with a path-loss scale `rho` onto
/// these fields as `mean = rho*sqrt(2/pi)`, `sd = rho*sqrt(1 - 2/pi)` (the
/// moments of `|N(0,1)|` scaled by `rho`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvStats {
    /// Mean client frequency in cycles/s, one entry per client.
    pub client_freq_mean: Vec<f64>,
    /// Standard deviation of client frequency, one entry per client.
    pub client_freq_sd: Vec<f64>,
    /// Mean channel gain per link.
    pub gain_mean: LinkMap<f64>,
    /// Standard deviation of channel gain per link.
    pub gain_sd: LinkMap<f64>,
    /// Subchannels per link; sets the gain tensor shape.
    pub subchannel_count: usize,
    /// Truncation floor as a fraction of the mean.
    pub floor_frac: f64,
}

impl EnvStats {
    pub fn num_clients(&self) -> usize {
        self.client_freq_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.client_freq_mean.len();
        if k == 0 {
            return Err(Error::InvalidStats("no clients".into()));
        }
        if self.client_freq_sd.len() != k {
            return Err(Error::InvalidStats(format!(
                "client_freq_sd has {} entries, expected {k}",
                self.client_freq_sd.len()
            )));
        }
        if self.subchannel_count == 0 {
            return Err(Error::InvalidStats("subchannel_count must be positive".into()));
        }
        if !(self.floor_frac.is_finite() && self.floor_frac > 0.0 && self.floor_frac <= 1.0) {
            return Err(Error::InvalidStats(format!(
                "floor_frac must lie in (0, 1], got {}",
                self.floor_frac
            )));
        }
        for (name, means, sds) in [(
            "client_freq",
            self.client_freq_mean.as_slice(),
            self.client_freq_sd.as_slice(),
        )] {
            for (m, s) in means.iter().zip(sds) {
                if !(m.is_finite() && *m > 0.0) || !(s.is_finite() && *s >= 0.0) {
                    return Err(Error::InvalidStats(format!(
                        "{name} needs positive means and non-negative sds, got mean {m}, sd {s}"
                    )));
                }
            }
        }
        for link in Link::ALL {
            let (m, s) = (self.gain_mean[link], self.gain_sd[link]);
            if !(m.is_finite() && m > 0.0) || !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidStats(format!(
                    "gain stats for {} need positive mean and non-negative sd, got mean {m}, sd {s}",
                    link.name()
                )));
            }
        }
        Ok(())
    }

    /// One deterministic draw. The draw order is fixed (client frequencies in
    /// client order, then gains per link in [`Link::ALL`] order, subchannel
    /// outer, client inner), so a (stats, seed) pair pins the sample down
    /// exactly.
    pub fn sample(&self, seed: u64) -> EnvironmentSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let client_freq = self
            .client_freq_mean
            .iter()
            .zip(&self.client_freq_sd)
            .map(|(&m, &s)| truncated_normal(&mut rng, m, s, self.floor_frac))
            .collect();
        let k = self.num_clients();
        let gain = LinkMap::from_fn(|link| {
            let (m, s) = (self.gain_mean[link], self.gain_sd[link]);
            (0..self.subchannel_count)
                .map(|_| {
                    (0..k)
                        .map(|_| truncated_normal(&mut rng, m, s, self.floor_frac))
                        .collect()
                })
                .collect()
        });
        EnvironmentSample { client_freq, gain }
    }

    /// `count` independent draws; draw `i` uses a sub-seed derived from
    /// `(seed, i)`, so prefixes of a batch are stable under `count` changes.
    pub fn sample_batch(&self, seed: u64, count: usize) -> Result<Vec<EnvironmentSample>> {
        if count == 0 {
            return Err(Error::Domain("sample_batch requires count >= 1".into()));
        }
        Ok((0..count)
            .map(|i| self.sample(derive_seed(seed, i as u64)))
            .collect())
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, floor_frac: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (mean + sd * z).max(floor_frac * mean)
}

/// splitmix64 step, used to derive independent sub-seeds from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(k: usize, freq_sd: f64) -> EnvStats {
        EnvStats {
            client_freq_mean: vec![5e10; k],
            client_freq_sd: vec![freq_sd; k],
            gain_mean: LinkMap::uniform(0.8),
            gain_sd: LinkMap::uniform(0.6),
            subchannel_count: 3,
            floor_frac: 1e-6,
        }
    }

    #[test]
    fn zero_variance_returns_means_exactly() {
        let mut s = stats(2, 0.0);
        s.gain_sd = LinkMap::uniform(0.0);
        let draw = s.sample(7);
        assert_eq!(draw.client_freq, vec![5e10, 5e10]);
        for link in Link::ALL {
            for row in &draw.gain[link] {
                assert!(row.iter().all(|g| *g == 0.8));
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let s = stats(3, 1e10);
        let a = s.sample(42);
        let b = s.sample(42);
        assert_eq!(a.client_freq, b.client_freq);
        for link in Link::ALL {
            assert_eq!(a.gain[link], b.gain[link]);
        }
        let c = s.sample(43);
        assert_ne!(a.client_freq, c.client_freq);
    }

    #[test]
    fn all_values_strictly_positive() {
        // sd far above the mean forces many raw draws negative
        let s = stats(4, 5e11);
        for seed in 0..50 {
            let draw = s.sample(seed);
            assert!(draw.client_freq.iter().all(|f| *f > 0.0));
            for link in Link::ALL {
                assert!(draw.gain[link].iter().flatten().all(|g| *g > 0.0));
            }
        }
    }

    #[test]
    fn empirical_mean_close_to_configured_mean() {
        // law-of-large-numbers check: 1e4 draws, mean 5e10, sd 1e10
        let s = stats(1, 1e10);
        let n = 10_000;
        let mut acc = 0.0;
        for i in 0..n {
            acc += s.sample(derive_seed(999, i)).client_freq[0];
        }
        let mean = acc / n as f64;
        let rel = (mean - 5e10).abs() / 5e10;
        assert!(rel < 0.02, "empirical mean {mean:.3e} off by {rel:.4}");
    }

    #[test]
    fn batch_prefix_stability_and_rejection() {
        let s = stats(2, 1e10);
        let b1 = s.sample_batch(5, 1).unwrap();
        let b4 = s.sample_batch(5, 4).unwrap();
        assert_eq!(b1[0].client_freq, b4[0].client_freq);
        // batch of size 1 equals a single draw with the derived sub-seed
        assert_eq!(b1[0].client_freq, s.sample(derive_seed(5, 0)).client_freq);
        assert!(s.sample_batch(5, 0).is_err());
        // distinct seeds give distinct batches
        let other = s.sample_batch(6, 4).unwrap();
        assert_ne!(b4[0].client_freq, other[0].client_freq);
    }

    #[test]
    fn stats_validation_catches_bad_fields() {
        let mut s = stats(2, 1e10);
        s.floor_frac = 0.0;
        assert!(s.validate().is_err());
        let mut s = stats(2, -1.0);
        assert!(s.validate().is_err());
        s.client_freq_sd = vec![1e10];
        assert!(s.validate().is_err());
    }
}
