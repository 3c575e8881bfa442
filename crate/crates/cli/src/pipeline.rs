//! The stages behind the subcommands, usable without the command line.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use aqisense_core::data::{
    dataset_digest, digest_hex, format_timestamp, generate_haze_dataset, load_dataset, split_8_2,
    ObservationSet, Sample, SeriesGrid,
};
use aqisense_core::fed::{
    evaluate_global, partition_clients, pretrain_global, run_federation, FederationLog,
    GlobalEvaluation, PublicSet, Transport,
};
use aqisense_core::ground::{
    horizon_rmse, load_stations, persistence_forecast, synthesize_diffusion, train_gclstm,
    Forecaster, Standardizer, StationGraph,
};
use aqisense_core::haze::ChannelStats;
use aqisense_core::mobilenet::{AqiScaleTable, DenseMobileNet, Example};
use aqisense_core::nn::ParamSet;
use aqisense_core::{Error, Result};
use log::info;

use crate::config::RunConfig;
use crate::report::{
    ClientSummary, DatasetSummary, FederatedReport, ForecastReport, ForecastRow, ModelReport,
    RmseByHorizon,
};

/// Labelled feature stacks ready for splitting.
pub struct HazeData {
    pub samples: Vec<Sample>,
    pub classes: usize,
    pub source: String,
}

/// Load the dataset named in `cfg`, or synthesize one. A stored dataset
/// brings its own feature settings, which replace those in `cfg`.
pub fn prepare_haze(cfg: &mut RunConfig) -> Result<HazeData> {
    let data = match &cfg.data {
        Some(dir) => {
            let (manifest, samples) = load_dataset(dir)?;
            if manifest.features != cfg.features {
                info!("using the feature settings stored with {}", dir.display());
                cfg.features = manifest.features.clone();
            }
            HazeData {
                samples,
                classes: manifest.classes,
                source: dir.display().to_string(),
            }
        }
        None => HazeData {
            samples: generate_haze_dataset(&cfg.synthesis, &cfg.features)?,
            classes: cfg.synthesis.resolved_class_map()?.classes(),
            source: "synthetic".into(),
        },
    };
    if cfg.model.classes != data.classes {
        return Err(Error::Config(format!(
            "the model predicts {} classes but the dataset has {}",
            cfg.model.classes, data.classes
        )));
    }
    if cfg.model.input_size != cfg.features.target_size {
        return Err(Error::Config(format!(
            "model input size {} differs from feature size {}",
            cfg.model.input_size, cfg.features.target_size
        )));
    }
    if let Some(s) = data.samples.iter().find(|s| s.label >= data.classes) {
        return Err(Error::Invalid(format!(
            "sample {} has label {} >= {}",
            s.id, s.label, data.classes
        )));
    }
    Ok(data)
}

pub fn split(cfg: &RunConfig, data: &HazeData) -> Result<(Vec<Sample>, Vec<Sample>)> {
    split_8_2(&data.samples, &cfg.split)
}

pub fn dataset_summary(data: &HazeData, train: usize, test: usize) -> DatasetSummary {
    DatasetSummary {
        source: data.source.clone(),
        samples: data.samples.len(),
        classes: data.classes,
        train,
        test,
        dataset_digest: dataset_digest(&data.samples),
    }
}

pub fn examples(samples: &[Sample], stats: &ChannelStats) -> Vec<Example> {
    samples
        .iter()
        .map(|s| Example {
            input: stats.normalize(&s.stack),
            label: s.label,
        })
        .collect()
}

pub fn model_report(model: &DenseMobileNet) -> ModelReport {
    let summary = model.summary();
    ModelReport {
        descriptor: model.descriptor(),
        mac_ratio: summary.mac_ratio(),
        summary,
    }
}

/// Forwards to another transport and counts what passes through.
struct Counted<'a> {
    inner: &'a dyn Transport,
    sent: AtomicUsize,
}

impl Transport for Counted<'_> {
    fn deliver(&self, round: usize, client: &str, bytes: Vec<u8>) -> Option<Vec<u8>> {
        self.sent.fetch_add(1, Ordering::Relaxed);
        self.inner.deliver(round, client, bytes)
    }
}

pub struct FederatedOutcome {
    pub model: DenseMobileNet,
    pub params: ParamSet,
    pub stats: ChannelStats,
    pub log: FederationLog,
    pub evaluation: GlobalEvaluation,
    pub dataset: DatasetSummary,
    pub report: FederatedReport,
}

/// Split, hold back public data, deal the rest to clients and run
/// federated averaging with the test split evaluated every round.
pub fn run_federated(
    cfg: &RunConfig,
    data: &HazeData,
    transport: &dyn Transport,
) -> Result<FederatedOutcome> {
    let fed = &cfg.federation;
    let (train, test) = split(cfg, data)?;
    let stats = ChannelStats::fit(train.iter().map(|s| &s.stack));

    // public samples: a seeded, content-independent pick from the training split
    let n_public = (fed.public_fraction * train.len() as f64).round() as usize;
    let mut ranked: Vec<(String, &Sample)> = train
        .iter()
        .map(|s| (digest_hex(format!("{}:{}", cfg.seed, s.id).as_bytes()), s))
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    let public_samples: Vec<Sample> = ranked[..n_public]
        .iter()
        .map(|(_, s)| (*s).clone())
        .collect();
    let mut private: Vec<Sample> = ranked[n_public..]
        .iter()
        .map(|(_, s)| (*s).clone())
        .collect();
    private.sort_by(|a, b| a.id.cmp(&b.id));

    let clients = partition_clients(&private, fed.clients, &stats, cfg.seed)?;
    let model = DenseMobileNet::new(cfg.model.clone())?;
    let public = PublicSet {
        examples: examples(&public_samples, &stats),
        digests: public_samples
            .iter()
            .map(|s| s.image_digest.clone())
            .collect(),
    };
    let initial = if public.examples.is_empty() {
        model.init_params(cfg.seed)
    } else {
        pretrain_global(
            &model,
            &public,
            &clients,
            fed.pretrain_epochs,
            &fed.round.sgd(),
            cfg.seed,
        )?
    };
    let test_ex = examples(&test, &stats);
    let counted = Counted {
        inner: transport,
        sent: AtomicUsize::new(0),
    };
    let (params, log) = run_federation(
        &model,
        &clients,
        &initial,
        &fed.round,
        Some(&test_ex),
        &counted,
    )?;
    let table = AqiScaleTable::uniform(data.classes)?;
    let evaluation = evaluate_global(&model, &params, &test_ex, &table)?;
    let report = FederatedReport {
        clients: clients
            .iter()
            .map(|c| ClientSummary {
                id: c.id.clone(),
                swarm: c.swarm,
                samples: c.sample_count(),
            })
            .collect(),
        public_samples: public_samples.len(),
        rounds: log.entries.clone(),
        converged: log.converged,
        final_accuracy: evaluation.accuracy,
        best_accuracy: log.best_accuracy().unwrap_or(evaluation.accuracy),
        updates_scanned: counted.sent.load(Ordering::Relaxed),
    };
    Ok(FederatedOutcome {
        model,
        params,
        stats,
        log,
        evaluation,
        dataset: dataset_summary(data, train.len(), test.len()),
        report,
    })
}

pub struct ForecastOutcome {
    pub forecaster: Forecaster,
    pub graph: StationGraph,
    pub report: ForecastReport,
    pub rows: Vec<ForecastRow>,
}

/// Station graph and observations from files, or from the diffusion generator.
pub fn ground_data(cfg: &RunConfig) -> Result<(StationGraph, ObservationSet, String)> {
    let g = &cfg.ground;
    match (&g.stations, &g.observations) {
        (Some(s), Some(o)) => Ok((
            StationGraph::new(load_stations(s)?)?,
            ObservationSet::load(o)?,
            format!("{} + {}", s.display(), o.display()),
        )),
        _ => {
            let (graph, obs) = synthesize_diffusion(&g.synthetic)?;
            Ok((graph, obs, "synthetic".into()))
        }
    }
}

/// Train GC-LSTM on the leading part of the series and score every
/// horizon on the rest, next to persistence and the graph-free LSTM.
pub fn run_ground(cfg: &RunConfig) -> Result<ForecastOutcome> {
    let g = &cfg.ground;
    let m = &g.model;
    let (graph, obs, source) = ground_data(cfg)?;
    let grid = SeriesGrid::from_observations(&obs, &obs.met_columns)?;
    let graph = graph.reordered(&grid.stations)?;
    let (train, test) = grid.split_chronological(g.train_fraction);
    let scaler = Standardizer::fit(&train)?;
    let train_w = train.windows(m.window, m.horizon, 1)?;
    let test_w = test.windows(m.window, m.horizon, 1)?;
    if train_w.is_empty() || test_w.is_empty() {
        return Err(Error::Invalid(format!(
            "{} time steps are too few for window {} and horizon {} on both sides of the split",
            grid.len(),
            m.window,
            m.horizon
        )));
    }
    let (forecaster, trace) = train_gclstm(&graph, &train_w, &scaler, m)?;
    let preds = forecaster.forecast_all(&test_w)?;
    let persistence: Vec<_> = test_w
        .iter()
        .map(|w| persistence_forecast(&w.x, m.horizon))
        .collect();
    let no_graph = if g.baseline {
        let (f, _) = train_gclstm(&graph, &train_w, &scaler, &m.without_graph())?;
        Some(horizon_rmse(&f.forecast_all(&test_w)?, &test_w)?)
    } else {
        None
    };
    let dt = grid.times[1] - grid.times[0];
    let mut rows = Vec::new();
    for (p, w) in preds.iter().zip(&test_w) {
        for h in 0..m.horizon {
            for (j, station) in grid.stations.iter().enumerate() {
                rows.push(ForecastRow {
                    station: station.clone(),
                    timestamp: format_timestamp(w.anchor + dt * (h as i64 + 1)),
                    horizon: h + 1,
                    y: w.y.get(&[h, j]),
                    y_hat: p.get(&[h, j]),
                });
            }
        }
    }
    let report = ForecastReport {
        source,
        stations: grid.stations.clone(),
        features: grid.features.clone(),
        train_windows: train_w.len(),
        test_windows: test_w.len(),
        descriptor: forecaster.model.descriptor(),
        params: forecaster.params.numel(),
        epoch_losses: trace.epoch_losses,
        rmse: RmseByHorizon {
            gclstm: horizon_rmse(&preds, &test_w)?,
            persistence: horizon_rmse(&persistence, &test_w)?,
            no_graph,
        },
    };
    Ok(ForecastOutcome {
        forecaster,
        graph,
        report,
        rows,
    })
}

/// Files in `dir` with an image extension the loader understands, sorted.
pub fn image_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Input {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
