//! Synthetic labelled datasets: random topology, shortest-path routing,
//! rescaled traffic and oracle ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::netmodel::{
    generate_routing, generate_topology, generate_traffic, NetError, NetworkSnapshot,
    DEFAULT_CAPACITY_LEVELS, DEFAULT_MAX_UTILIZATION,
};
use crate::oracle::{self, OracleError, DEFAULT_PACKET_SIZE};

/// How many OD pairs a generated snapshot carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCount {
    /// Every ordered `(s, d)` with `s != d`.
    All,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub mean_degree: f64,
    pub capacity_levels: Vec<f64>,
    pub pairs: PairCount,
    pub max_utilization: f64,
    pub packet_size: f64,
}

impl GeneratorConfig {
    /// Training distribution: 25 to 50 nodes, mean degree 9.778.
    pub fn train_preset() -> Self {
        Self {
            n_min: 25,
            n_max: 50,
            mean_degree: 9.778,
            ..Self::default()
        }
    }

    /// Held-out distribution: 50 to 300 nodes, mean degree 9.523.
    pub fn test_preset() -> Self {
        Self {
            n_min: 50,
            n_max: 300,
            mean_degree: 9.523,
            ..Self::default()
        }
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_min: 25,
            n_max: 50,
            mean_degree: 9.778,
            capacity_levels: DEFAULT_CAPACITY_LEVELS.to_vec(),
            pairs: PairCount::All,
            max_utilization: DEFAULT_MAX_UTILIZATION,
            packet_size: DEFAULT_PACKET_SIZE,
        }
    }
}

const MAX_ATTEMPTS: u64 = 16;

/// Per-snapshot seed; keeps snapshot `i` independent of the dataset size.
fn snapshot_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
        .rotate_left(17)
        ^ 0xD1B5_4A32_D192_ED03
}

/// One labelled snapshot. Unstable draws are resampled a bounded number of times.
pub fn generate_snapshot(config: &GeneratorConfig, seed: u64) -> Result<NetworkSnapshot, OracleError> {
    if config.n_min > config.n_max {
        return Err(NetError::InvalidParameter(format!(
            "n_min {} exceeds n_max {}",
            config.n_min, config.n_max
        ))
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(config.n_min..=config.n_max);
        let topology = generate_topology(n, config.mean_degree, &config.capacity_levels, rng.gen())?;
        let routing = generate_routing(&topology);
        let k = match config.pairs {
            PairCount::All => n * (n - 1),
            PairCount::Fixed(k) => k,
        };
        let traffic = generate_traffic(&topology, &routing, k, config.max_utilization, rng.gen())?;
        let snapshot = NetworkSnapshot {
            topology,
            traffic,
            routing,
            performance: None,
        };
        match oracle::label(&snapshot, config.packet_size) {
            Ok(labelled) => return Ok(labelled),
            Err(e @ OracleError::UnstableLink { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `count` labelled snapshots, generated in parallel and returned in index order.
pub fn generate_dataset(
    config: &GeneratorConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<NetworkSnapshot>, OracleError> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_snapshot(config, snapshot_seed(seed, i)))
        .collect()
}
