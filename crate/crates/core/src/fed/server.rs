use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::client::{client_local_train, mix_seed, ClientState, RoundConfig};
use crate::fed::log::{FederationLog, RoundEntry};
use crate::fed::update::{find_embedded, ClientUpdate};
use crate::mobilenet::{evaluate, train_epoch, AqiScaleTable, DenseMobileNet, Example, SgdOptions};
use crate::nn::{ParamSet, Tensor};

/// `max(1, round(fraction * k))` distinct indices, sorted, drawn with a
/// generator seeded by `round_seed`.
pub fn select_clients(k: usize, fraction: f64, round_seed: u64) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let m = ((fraction * k as f64).round() as usize).clamp(1, k);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(round_seed));
    let mut chosen = idx[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Sample-weighted parameter average `sum_k (H_k / H) w_k`.
///
/// Updates are combined in client-id order, so the result does not depend
/// on arrival order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::Invalid("no updates to aggregate".into()));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id).then(a.round.cmp(&b.round)));
    let first = &sorted[0].params;
    for u in &sorted[1..] {
        first.check_aligned(&u.params)?;
    }
    let total: u64 = sorted.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::Invalid("updates carry zero samples".into()));
    }
    let h = total as f64;
    first
        .iter()
        .map(|(name, t0)| {
            let mut data = vec![0.0; t0.len()];
            let mut lo = t0.data().to_vec();
            let mut hi = lo.clone();
            for u in &sorted {
                let w = u.sample_count as f64;
                let src = u.params.get(name).expect("aligned").data();
                for i in 0..data.len() {
                    data[i] += w * src[i];
                    lo[i] = lo[i].min(src[i]);
                    hi[i] = hi[i].max(src[i]);
                }
            }
            // The clamp only absorbs rounding; the average is convex.
            for i in 0..data.len() {
                data[i] = (data[i] / h).clamp(lo[i], hi[i]);
            }
            Ok((name.to_string(), Tensor::new(t0.shape(), data)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

/// Moves encoded updates from clients to the server.
pub trait Transport: Sync {
    /// `None` models a lost update.
    fn deliver(&self, round: usize, client: &str, bytes: Vec<u8>) -> Option<Vec<u8>>;
}

/// In-process delivery that never fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct Loopback;

impl Transport for Loopback {
    fn deliver(&self, _round: usize, _client: &str, bytes: Vec<u8>) -> Option<Vec<u8>> {
        Some(bytes)
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    mix_seed(seed, 0xF00D_0000 + round as u64)
}

/// Federated averaging rounds until `cfg.rounds` or until the parameter
/// change falls below `cfg.convergence_tol`.
///
/// Every encoded update is scanned for the raw image bytes of all clients
/// before it leaves the client; a match aborts the run.
pub fn run_federation(
    model: &DenseMobileNet,
    clients: &[ClientState],
    initial: &ParamSet,
    cfg: &RoundConfig,
    test: Option<&[Example]>,
    transport: &dyn Transport,
) -> Result<(ParamSet, FederationLog)> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Invalid(
            "federation needs at least one client".into(),
        ));
    }
    model.check_params(initial)?;
    let mut global = initial.clone();
    let mut log = FederationLog::default();

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let chosen = select_clients(
            clients.len(),
            cfg.client_fraction,
            round_seed(cfg.seed, round),
        );
        let results: Vec<(String, Result<Option<Vec<u8>>>)> = chosen
            .par_iter()
            .map(|&i| {
                let c = &clients[i];
                let outcome =
                    client_local_train(c, model, &global, cfg, round as u32).and_then(|u| {
                        let bytes = u.encode();
                        if clients
                            .iter()
                            .any(|other| find_embedded(&bytes, other.raw_buffers()).is_some())
                        {
                            return Err(Error::Privacy(c.id.clone()));
                        }
                        Ok(transport.deliver(round, &c.id, bytes))
                    });
                (c.id.clone(), outcome)
            })
            .collect();

        let mut updates = Vec::new();
        let mut failed = Vec::new();
        for (id, r) in results {
            match r {
                Ok(Some(bytes)) => {
                    let u = ClientUpdate::decode(&bytes)?;
                    global.check_aligned(&u.params)?;
                    updates.push(u);
                }
                Ok(None) => {
                    warn!("round {round}: update from {id} was lost");
                    failed.push(id);
                }
                Err(e @ Error::Privacy(_)) => return Err(e),
                Err(e) => {
                    warn!("round {round}: client {id} failed: {e}");
                    failed.push(id);
                }
            }
        }
        if updates.is_empty() {
            return Err(Error::Invalid(format!(
                "round {round}: no client responded"
            )));
        }
        updates.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        let next = aggregate(&updates)?;
        let delta_norm = next.distance(&global)?;
        global = next;

        let h: u64 = updates.iter().map(|u| u.sample_count).sum();
        let train_loss = updates
            .iter()
            .map(|u| u.loss * u.sample_count as f64)
            .sum::<f64>()
            / h as f64;
        let (test_loss, accuracy) = match test {
            Some(t) if !t.is_empty() => {
                let ev = evaluate(model, &global, t)?;
                (Some(ev.loss), Some(ev.accuracy))
            }
            _ => (None, None),
        };
        info!(
            "round {round}: loss {train_loss:.4} accuracy {} delta {delta_norm:.3e}",
            accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        log.entries.push(RoundEntry {
            round,
            participants: updates.iter().map(|u| u.client_id.clone()).collect(),
            failed,
            train_loss,
            test_loss,
            accuracy,
            delta_norm,
        });
        log.wall_seconds.push(started.elapsed().as_secs_f64());
        if delta_norm < cfg.convergence_tol {
            log.converged = true;
            break;
        }
    }
    Ok((global, log))
}

/// Held-out inputs used to pre-train the initial global model, with the
/// digests of their source images.
#[derive(Debug, Clone, Default)]
pub struct PublicSet {
    pub examples: Vec<Example>,
    pub digests: Vec<String>,
}

/// Epoch seed used by [`pretrain_global`].
pub fn pretrain_epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix_seed(seed, 0xBEEF_0000 + epoch as u64)
}

/// Initial global model. Starts from `model.init_params(seed)` and runs
/// `epochs` centralized epochs over `public`; an empty public set returns
/// the random initialization.
pub fn pretrain_global(
    model: &DenseMobileNet,
    public: &PublicSet,
    clients: &[ClientState],
    epochs: usize,
    opts: &SgdOptions,
    seed: u64,
) -> Result<ParamSet> {
    for c in clients {
        let overlap: Vec<String> = public
            .digests
            .iter()
            .filter(|d| c.digests().contains(d))
            .cloned()
            .collect();
        if !overlap.is_empty() {
            return Err(Error::Overlap {
                client: c.id.clone(),
                digests: overlap,
            });
        }
    }
    let mut params = model.init_params(seed);
    if public.examples.is_empty() {
        warn!("no public data; the global model starts from a seeded random initialization");
        return Ok(params);
    }
    for e in 0..epochs {
        params = train_epoch(
            model,
            &params,
            &public.examples,
            opts,
            pretrain_epoch_seed(seed, e),
        )?
        .0;
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalEvaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
}

pub fn evaluate_global(
    model: &DenseMobileNet,
    params: &ParamSet,
    test: &[Example],
    table: &AqiScaleTable,
) -> Result<GlobalEvaluation> {
    if table.len() != model.config().classes {
        return Err(Error::Config(format!(
            "scale table has {} bands but the model predicts {} classes",
            table.len(),
            model.config().classes
        )));
    }
    let ev = evaluate(model, params, test)?;
    Ok(GlobalEvaluation {
        accuracy: ev.accuracy,
        loss: ev.loss,
        confusion: ev.confusion,
        classes: table.bands().iter().map(|b| b.name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(id: &str, h: u64, v: f64) -> ClientUpdate {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        ClientUpdate {
            client_id: id.into(),
            round: 1,
            sample_count: h,
            loss: 0.0,
            params: p,
        }
    }

    fn val(p: &ParamSet) -> f64 {
        p.get("w").unwrap().item()
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(val(&aggregate(&[upd("a", 7, 1.2345)]).unwrap()), 1.2345);
        assert_eq!(
            val(&aggregate(&[upd("a", 2, 0.0), upd("b", 2, 4.0)]).unwrap()),
            2.0
        );
        assert_eq!(
            val(&aggregate(&[upd("a", 1, 0.0), upd("b", 3, 4.0)]).unwrap()),
            3.0
        );
    }

    #[test]
    fn misaligned_names_tensor() {
        let mut bad = upd("b", 1, 0.0);
        bad.params = {
            let mut p = ParamSet::new();
            p.insert("v", Tensor::scalar(0.0)).unwrap();
            p
        };
        match aggregate(&[upd("a", 1, 0.0), bad]) {
            Err(Error::Misaligned(name)) => assert!(name == "w" || name == "v"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn selection() {
        assert_eq!(select_clients(5, 1.0, 3), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_clients(5, 0.01, 3).len(), 1);
        assert_eq!(select_clients(10, 0.3, 9), select_clients(10, 0.3, 9));
        assert_eq!(select_clients(10, 0.3, 9).len(), 3);
    }
}
