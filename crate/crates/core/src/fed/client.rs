use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fed::update::ClientUpdate;
use crate::haze::ChannelStats;
use crate::mobilenet::{loss_and_grad, train_epoch, DenseMobileNet, Example, SgdOptions};
use crate::nn::ParamSet;

/// Organizational grouping of clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Swarm {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub rounds: usize,
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub convergence_tol: f64,
    pub reg: f64,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            client_fraction: 1.0,
            local_epochs: 1,
            batch: 16,
            lr: 0.05,
            convergence_tol: 1e-4,
            reg: 0.0,
            seed: 0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client fraction {} must lie in (0, 1]",
                self.client_fraction
            )));
        }
        if !(self.lr > 0.0) || !(self.reg >= 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("lr must be > 0; reg and tol >= 0".into()));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdOptions {
        SgdOptions {
            batch: self.batch,
            lr: self.lr,
            reg: self.reg,
        }
    }
}

/// A simulated UAV and its private data. Raw image bytes stay here; only
/// parameters leave through [`client_local_train`].
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: String,
    pub swarm: Swarm,
    pub seed: u64,
    examples: Vec<Example>,
    raw: Vec<Vec<u8>>,
    digests: Vec<String>,
}

impl ClientState {
    pub fn new(
        id: impl Into<String>,
        swarm: Swarm,
        samples: &[Sample],
        stats: &ChannelStats,
        seed: u64,
    ) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::Invalid(format!("client `{id}` has no data")));
        }
        Ok(Self {
            id,
            swarm,
            seed,
            examples: samples
                .iter()
                .map(|s| Example {
                    input: stats.normalize(&s.stack),
                    label: s.label,
                })
                .collect(),
            raw: samples.iter().map(|s| s.raw.clone()).collect(),
            digests: samples.iter().map(|s| s.image_digest.clone()).collect(),
        })
    }

    /// A client holding prepared inputs only.
    pub fn from_examples(
        id: impl Into<String>,
        swarm: Swarm,
        examples: Vec<Example>,
        seed: u64,
    ) -> Result<Self> {
        let id = id.into();
        if examples.is_empty() {
            return Err(Error::Invalid(format!("client `{id}` has no data")));
        }
        Ok(Self {
            id,
            swarm,
            seed,
            examples,
            raw: Vec::new(),
            digests: Vec::new(),
        })
    }

    /// `H_k`.
    pub fn sample_count(&self) -> usize {
        self.examples.len()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn digests(&self) -> &[String] {
        &self.digests
    }

    /// Private image buffers, exposed for leak auditing.
    pub fn raw_buffers(&self) -> impl Iterator<Item = &[u8]> {
        self.raw.iter().map(Vec::as_slice)
    }
}

pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Local training from the global model. With `local_epochs == 0` the
/// update carries the global parameters and the loss of one pass.
pub fn client_local_train(
    client: &ClientState,
    model: &DenseMobileNet,
    global: &ParamSet,
    cfg: &RoundConfig,
    round: u32,
) -> Result<ClientUpdate> {
    model.check_params(global)?;
    let mut params = global.clone();
    let loss = if cfg.local_epochs == 0 {
        let refs: Vec<&Example> = client.examples.iter().collect();
        let mut total = 0.0;
        for chunk in refs.chunks(64) {
            total += loss_and_grad(model, &params, chunk)?.0 * chunk.len() as f64;
        }
        total / refs.len() as f64
    } else {
        let mut last = 0.0;
        for e in 0..cfg.local_epochs {
            let seed = mix_seed(client.seed, ((round as u64) << 20) | e as u64);
            let (p, l) = train_epoch(model, &params, &client.examples, &cfg.sgd(), seed)?;
            params = p;
            last = l;
        }
        last
    };
    Ok(ClientUpdate {
        client_id: client.id.clone(),
        round,
        sample_count: client.examples.len() as u64,
        loss,
        params,
    })
}

/// Shuffle and deal samples round-robin to `k` clients, alternating swarms.
pub fn partition_clients(
    samples: &[Sample],
    k: usize,
    stats: &ChannelStats,
    seed: u64,
) -> Result<Vec<ClientState>> {
    if k == 0 || samples.len() < k {
        return Err(Error::Config(format!(
            "cannot deal {} samples to {k} clients",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts: Vec<Vec<Sample>> = vec![Vec::new(); k];
    for (j, &i) in order.iter().enumerate() {
        parts[j % k].push(samples[i].clone());
    }
    parts
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let swarm = if i % 2 == 0 { Swarm::A } else { Swarm::B };
            ClientState::new(
                format!("uav-{i}"),
                swarm,
                part,
                stats,
                mix_seed(seed, i as u64 + 1),
            )
        })
        .collect()
}
