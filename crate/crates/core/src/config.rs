//! Experiment configuration: a TOML file describing the model profile, the
//! system constants, the environment distribution, and what to run.
//!
//! The full schema with units is documented in `docs/CONFIG.md`. Per-client
//! fields accept either a scalar (applied to every client) or an array with
//! one entry per client. Heterogeneity is a level `h in [0, 1]` that spreads
//! per-client frequency means and power caps multiplicatively around their
//! configured values: client `k` gets factor `1 + 0.9*h*u_k` with `u_k`
//! evenly spaced in `[-1, 1]`, so `h = 0` is a homogeneous fleet and `h = 1`
//! makes the extreme clients 10x apart.

use serde::{Deserialize, Serialize};

use crate::env::{EnvStats, LinkMap};
use crate::error::{Error, Result};
use crate::profile::{ModelProfile, SystemProfile};

/// Moments of `|N(0,1)|`; the default gain model is a standard-normal
/// magnitude scaled by a path-loss factor.
const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const HALF_NORMAL_SD: f64 = 0.602_810_274_989_086_9; // sqrt(1 - 2/pi)

/// A per-client value: one number for everyone, or one per client.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClient<T> {
    Uniform(T),
    Each(Vec<T>),
}

impl<T: Copy> PerClient<T> {
    pub fn expand(&self, clients: usize, field: &str) -> Result<Vec<T>> {
        match self {
            PerClient::Uniform(v) => Ok(vec![*v; clients]),
            PerClient::Each(vs) => {
                if vs.len() != clients {
                    Err(Error::InvalidConfig(format!(
                        "{field} has {} entries, expected num_clients = {clients}",
                        vs.len()
                    )))
                } else {
                    Ok(vs.clone())
                }
            }
        }
    }
}

/// `[model]`: either explicit tables or a synthetic profile with the given
/// layer count (see [`synthetic_model_profile`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub client_fp_flops: Option<Vec<f64>>,
    #[serde(default)]
    pub client_bp_flops: Option<Vec<f64>>,
    #[serde(default)]
    pub server_fp_flops: Option<Vec<f64>>,
    #[serde(default)]
    pub server_bp_flops: Option<Vec<f64>>,
    #[serde(default)]
    pub smashed_bits: Option<Vec<f64>>,
    #[serde(default)]
    pub gradient_bits: Option<Vec<f64>>,
    #[serde(default)]
    pub model_bits: Option<Vec<f64>>,
}

fn default_layers() -> usize {
    8
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: default_layers(),
            client_fp_flops: None,
            client_bp_flops: None,
            server_fp_flops: None,
            server_bp_flops: None,
            smashed_bits: None,
            gradient_bits: None,
            model_bits: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelProfile> {
        let tables = [
            &self.client_fp_flops,
            &self.client_bp_flops,
            &self.server_fp_flops,
            &self.server_bp_flops,
            &self.smashed_bits,
            &self.gradient_bits,
            &self.model_bits,
        ];
        let given = tables.iter().filter(|t| t.is_some()).count();
        let profile = if given == 0 {
            synthetic_model_profile(self.layers)
        } else if given == tables.len() {
            ModelProfile {
                num_layers: self.layers,
                client_fp_flops: self.client_fp_flops.clone().unwrap(),
                client_bp_flops: self.client_bp_flops.clone().unwrap(),
                server_fp_flops: self.server_fp_flops.clone().unwrap(),
                server_bp_flops: self.server_bp_flops.clone().unwrap(),
                smashed_bits: self.smashed_bits.clone().unwrap(),
                gradient_bits: self.gradient_bits.clone().unwrap(),
                model_bits: self.model_bits.clone().unwrap(),
            }
        } else {
            return Err(Error::InvalidConfig(
                "[model] must give either no workload tables (synthetic profile) or all seven"
                    .into(),
            ));
        };
        profile.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(profile)
    }
}

/// `[system]` section; see `SystemProfile` for field meanings and units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub num_clients: usize,
    #[serde(default = "d_batch")]
    pub batch_size: u64,
    #[serde(default = "d_batches_per_round")]
    pub batches_per_round: u64,
    #[serde(default = "d_rounds")]
    pub total_rounds: u64,
    #[serde(default = "d_server_freq")]
    pub server_freq: f64,
    #[serde(default = "d_one")]
    pub server_intensity: f64,
    #[serde(default = "d_pc_one")]
    pub client_intensity: PerClient<f64>,
    #[serde(default = "d_subchannels")]
    pub subchannel_count: usize,
    #[serde(default = "d_bandwidth")]
    pub subchannel_bandwidth: f64,
    #[serde(default = "d_noise")]
    pub noise_psd: f64,
    #[serde(default = "d_client_power")]
    pub client_power_cap: PerClient<f64>,
    #[serde(default = "d_server_power")]
    pub ms_power_cap: f64,
    #[serde(default = "d_server_power")]
    pub es_power_cap: f64,
    #[serde(default = "d_tau")]
    pub straggler_tolerance: f64,
    #[serde(default = "d_max_cut")]
    pub max_cut: PerClient<usize>,
    #[serde(default = "d_dataset")]
    pub dataset_size: PerClient<u64>,
}

fn d_batch() -> u64 {
    256
}
fn d_batches_per_round() -> u64 {
    4
}
fn d_rounds() -> u64 {
    20
}
fn d_server_freq() -> f64 {
    100e10
}
fn d_one() -> f64 {
    1.0
}
fn d_pc_one() -> PerClient<f64> {
    PerClient::Uniform(1.0)
}
fn d_subchannels() -> usize {
    10
}
fn d_bandwidth() -> f64 {
    1e6
}
fn d_noise() -> f64 {
    1e-3
}
fn d_client_power() -> PerClient<f64> {
    PerClient::Uniform(10.0)
}
fn d_server_power() -> f64 {
    100.0
}
fn d_tau() -> f64 {
    100.0
}
fn d_max_cut() -> PerClient<usize> {
    PerClient::Uniform(4)
}
fn d_dataset() -> PerClient<u64> {
    PerClient::Uniform(1000)
}

/// `[env]` section: base distribution of client frequencies and gains.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default = "d_freq_mean")]
    pub client_freq_mean: PerClient<f64>,
    #[serde(default = "d_freq_sd")]
    pub client_freq_sd: PerClient<f64>,
    /// Path-loss scale `rho` applied to the standard-normal-magnitude gain
    /// model; gain mean/sd per link are `rho*sqrt(2/pi)` and
    /// `rho*sqrt(1-2/pi)`.
    #[serde(default = "d_one")]
    pub gain_path_loss: f64,
    #[serde(default = "d_floor")]
    pub floor_frac: f64,
    /// Baseline heterogeneity level; sweeps override it.
    #[serde(default)]
    pub heterogeneity: f64,
}

fn d_freq_mean() -> PerClient<f64> {
    PerClient::Uniform(5e10)
}
fn d_freq_sd() -> PerClient<f64> {
    PerClient::Uniform(1e10)
}
fn d_floor() -> f64 {
    1e-6
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            client_freq_mean: d_freq_mean(),
            client_freq_sd: d_freq_sd(),
            gain_path_loss: 1.0,
            floor_frac: d_floor(),
            heterogeneity: 0.0,
        }
    }
}

/// `[ga]` section; see `cutlayer::GaConfig`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    #[serde(default = "d_pop")]
    pub population_size: usize,
    #[serde(default = "d_stagnation")]
    pub stagnation_generations: usize,
    #[serde(default = "d_crossover")]
    pub crossover_rate: f64,
    #[serde(default = "d_mutation")]
    pub mutation_rate: f64,
    #[serde(default = "d_max_gen")]
    pub max_generations: usize,
    #[serde(default = "d_saa")]
    pub saa_samples: usize,
}

fn d_pop() -> usize {
    24
}
fn d_stagnation() -> usize {
    15
}
fn d_crossover() -> f64 {
    0.8
}
fn d_mutation() -> f64 {
    0.1
}
fn d_max_gen() -> usize {
    200
}
fn d_saa() -> usize {
    30
}

impl Default for GaSection {
    fn default() -> Self {
        GaSection {
            population_size: d_pop(),
            stagnation_generations: d_stagnation(),
            crossover_rate: d_crossover(),
            mutation_rate: d_mutation(),
            max_generations: d_max_gen(),
            saa_samples: d_saa(),
        }
    }
}

/// `[solver]` section: iteration/node budgets for the short-timescale
/// solvers. Node budgets keep branch-and-bound anytime and deterministic;
/// `None` (omitted) means exhaustive search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "d_freq_iters")]
    pub freq_max_iters: usize,
    /// Node budget for round allocations reported or simulated.
    #[serde(default = "d_round_nodes")]
    pub power_max_nodes: Option<u64>,
    /// Node budget inside GA fitness evaluation (many solves per
    /// optimization, so cheaper).
    #[serde(default = "d_fitness_nodes")]
    pub fitness_power_max_nodes: Option<u64>,
    /// Alternating frequency/power refinement sweeps per allocation.
    #[serde(default = "d_sweeps")]
    pub fp_sweeps: usize,
}

fn d_freq_iters() -> usize {
    10_000
}
fn d_round_nodes() -> Option<u64> {
    Some(2_000)
}
fn d_fitness_nodes() -> Option<u64> {
    Some(96)
}
fn d_sweeps() -> usize {
    2
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            freq_max_iters: d_freq_iters(),
            power_max_nodes: d_round_nodes(),
            fitness_power_max_nodes: d_fitness_nodes(),
            fp_sweeps: d_sweeps(),
        }
    }
}

/// `[experiment]` section: which policies, seeds, and sweep axes to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub policies: Vec<String>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweeps: SweepSection,
}

fn d_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// Values per sweep axis; an empty axis is skipped. The configured base
/// value is always worth including so axes share a common point.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub bandwidth: Vec<f64>,
    #[serde(default)]
    pub server_freq: Vec<f64>,
    #[serde(default)]
    pub server_power: Vec<f64>,
    #[serde(default)]
    pub heterogeneity: Vec<f64>,
}

/// Top-level config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelSection,
    pub system: SystemSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
}

/// Overrides applied by one sweep point; `None` keeps the configured value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub subchannel_bandwidth: Option<f64>,
    pub server_freq: Option<f64>,
    /// Scales both server downlink budgets.
    pub server_power: Option<f64>,
    pub heterogeneity: Option<f64>,
}

/// A fully instantiated problem: profiles plus environment distribution.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: ModelProfile,
    pub sys: SystemProfile,
    pub stats: EnvStats,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<ConfigFile> {
        let cfg: ConfigFile =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        ConfigFile::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.policies.is_empty() {
            return Err(Error::InvalidConfig(
                "[experiment] policies must not be empty".into(),
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "[experiment] seeds must not be empty".into(),
            ));
        }
        let h = self.env.heterogeneity;
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::InvalidConfig(format!(
                "heterogeneity level {h} must lie in [0, 1]"
            )));
        }
        for h in &self.experiment.sweeps.heterogeneity {
            if !(0.0..=1.0).contains(h) {
                return Err(Error::InvalidConfig(format!(
                    "sweep heterogeneity level {h} must lie in [0, 1]"
                )));
            }
        }
        if self.ga.population_size < 2 {
            return Err(Error::InvalidConfig(
                "[ga] population_size must be at least 2".into(),
            ));
        }
        for (name, rate) in [
            ("crossover_rate", self.ga.crossover_rate),
            ("mutation_rate", self.ga.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!(
                    "[ga] {name} = {rate} must lie in [0, 1]"
                )));
            }
        }
        if self.ga.saa_samples == 0 {
            return Err(Error::InvalidConfig("[ga] saa_samples must be >= 1".into()));
        }
        // every client needs a possible downlink subchannel; the edge-server
        // download sits outside the straggler cap, so an unserved client
        // would make the round total infinite
        if self.system.num_clients > self.system.subchannel_count {
            return Err(Error::InvalidConfig(format!(
                "num_clients = {} exceeds subchannel_count = {}; every client needs \
                 at least one downlink subchannel",
                self.system.num_clients, self.system.subchannel_count
            )));
        }
        // instantiating runs the full profile/stats validation
        self.instance(&Overrides::default())?;
        Ok(())
    }

    /// Builds profiles and environment stats with sweep overrides applied.
    pub fn instance(&self, ov: &Overrides) -> Result<Instance> {
        let model = self.model.build()?;
        let k = self.system.num_clients;
        let h = ov.heterogeneity.unwrap_or(self.env.heterogeneity);
        let spread = heterogeneity_factors(k, h);

        let power_scale = ov.server_power.unwrap_or(1.0);
        let base_caps = self.system.client_power_cap.expand(k, "client_power_cap")?;
        let sys = SystemProfile {
            num_clients: k,
            batch_size: self.system.batch_size,
            batches_per_round: self.system.batches_per_round,
            total_rounds: self.system.total_rounds,
            server_freq: ov.server_freq.unwrap_or(self.system.server_freq),
            server_intensity: self.system.server_intensity,
            client_intensity: self.system.client_intensity.expand(k, "client_intensity")?,
            subchannel_count: self.system.subchannel_count,
            subchannel_bandwidth: ov
                .subchannel_bandwidth
                .unwrap_or(self.system.subchannel_bandwidth),
            noise_psd: self.system.noise_psd,
            client_power_cap: base_caps
                .iter()
                .zip(&spread)
                .map(|(c, s)| c * s)
                .collect(),
            ms_power_cap: self.system.ms_power_cap * power_scale,
            es_power_cap: self.system.es_power_cap * power_scale,
            straggler_tolerance: self.system.straggler_tolerance,
            max_cut: self.system.max_cut.expand(k, "max_cut")?,
            dataset_size: self.system.dataset_size.expand(k, "dataset_size")?,
        };
        sys.validate(&model)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;

        let base_mean = self.env.client_freq_mean.expand(k, "client_freq_mean")?;
        let rho = self.env.gain_path_loss;
        let stats = EnvStats {
            client_freq_mean: base_mean.iter().zip(&spread).map(|(m, s)| m * s).collect(),
            client_freq_sd: self.env.client_freq_sd.expand(k, "client_freq_sd")?,
            gain_mean: LinkMap::uniform(rho * HALF_NORMAL_MEAN),
            gain_sd: LinkMap::uniform(rho * HALF_NORMAL_SD),
            subchannel_count: sys.subchannel_count,
            floor_frac: self.env.floor_frac,
        };
        stats
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Instance { model, sys, stats })
    }
}

/// Multiplicative per-client spread for heterogeneity level `h`.
pub fn heterogeneity_factors(clients: usize, level: f64) -> Vec<f64> {
    if clients == 1 {
        return vec![1.0];
    }
    (0..clients)
        .map(|k| {
            let u = 2.0 * k as f64 / (clients - 1) as f64 - 1.0;
            1.0 + 0.9 * level * u
        })
        .collect()
}

/// A synthetic per-cut-layer profile with the qualitative shape of a small
/// convolutional classifier: forward work front-loaded (early layers are the
/// expensive convolutions), backward work twice the forward work,
/// activation sizes shrinking with depth, and parameters concentrated near
/// the top. The absolute scale (1 GFLOP forward per sample, ~11M parameters)
/// is desk-scale stand-in data, not measurements; `docs/CONFIG.md` and
/// `scripts/derive_model_profile.py` describe how to produce a profile for a
/// real network.
pub fn synthetic_model_profile(layers: usize) -> ModelProfile {
    assert!(layers >= 1, "profile needs at least one layer");
    let total_fwd = 1e9;
    let decay: f64 = 0.85;
    let norm: f64 = (0..layers).map(|i| decay.powi(i as i32)).sum();
    let mut client_fp = Vec::with_capacity(layers + 1);
    let mut acc = 0.0;
    client_fp.push(0.0);
    for i in 0..layers {
        acc += total_fwd * decay.powi(i as i32) / norm;
        client_fp.push(acc);
    }
    // guard against rounding drift in the final cumulative entry
    client_fp[layers] = total_fwd;
    let server_fp: Vec<f64> = client_fp.iter().map(|c| total_fwd - c).collect();
    let client_bp: Vec<f64> = client_fp.iter().map(|c| 2.0 * c).collect();
    let server_bp: Vec<f64> = server_fp.iter().map(|s| 2.0 * s).collect();

    // activation widths: raw input at cut 0, then geometric shrink
    let smashed_bits: Vec<f64> = (0..=layers)
        .map(|l| {
            let dims = if l == 0 {
                3072.0
            } else {
                (4096.0 * 0.75f64.powi(l as i32)).max(64.0)
            };
            32.0 * dims
        })
        .collect();
    let gradient_bits = smashed_bits.clone();

    let total_params = 1.1e7;
    let model_bits: Vec<f64> = (0..=layers)
        .map(|l| 32.0 * total_params * (l as f64 / layers as f64).powi(2))
        .collect();

    ModelProfile {
        num_layers: layers,
        client_fp_flops: client_fp,
        client_bp_flops: client_bp,
        server_fp_flops: server_fp,
        server_bp_flops: server_bp,
        smashed_bits,
        gradient_bits,
        model_bits,
    }
}
