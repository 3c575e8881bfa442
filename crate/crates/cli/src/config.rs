//! Run configuration: built-in defaults, then a JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use aqisense_core::data::{HazeSynthesisSpec, SplitSpec};
use aqisense_core::fed::RoundConfig;
use aqisense_core::ground::{DiffusionSpec, GcLstmConfig};
use aqisense_core::haze::FeatureConfig;
use aqisense_core::mobilenet::DenseMobileNetConfig;
use serde::{Deserialize, Serialize};

use crate::report::REPORT_FORMAT;
use crate::CliError;

// `flatten` rules out `deny_unknown_fields` here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationSettings {
    pub clients: usize,
    #[serde(flatten)]
    pub round: RoundConfig,
    /// Share of the training split held back as server-side public data
    /// for pre-training; 0 starts from a seeded random model.
    pub public_fraction: f64,
    pub pretrain_epochs: usize,
}

impl Default for FederationSettings {
    fn default() -> Self {
        Self {
            clients: 4,
            round: RoundConfig::default(),
            public_fraction: 0.0,
            pretrain_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSettings {
    pub model: GcLstmConfig,
    /// Generator used when no station files are given.
    pub synthetic: DiffusionSpec,
    /// Leading share of the time grid used for training.
    pub train_fraction: f64,
    /// Also train the graph-free LSTM baseline.
    pub baseline: bool,
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
}

impl Default for GroundSettings {
    fn default() -> Self {
        Self {
            model: GcLstmConfig::default(),
            synthetic: DiffusionSpec::default(),
            train_fraction: 5.0 / 6.0,
            baseline: true,
            stations: None,
            observations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every component seed is set from it.
    pub seed: u64,
    pub synthesis: HazeSynthesisSpec,
    pub features: FeatureConfig,
    pub model: DenseMobileNetConfig,
    pub split: SplitSpec,
    pub federation: FederationSettings,
    pub ground: GroundSettings,
    /// Dataset directory written by `synth-data`; synthesized in memory when absent.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synthesis: HazeSynthesisSpec {
                base_size: 32,
                ..Default::default()
            },
            features: FeatureConfig {
                target_size: 32,
                dark_patch: 5,
                local_window: 5,
                ..Default::default()
            },
            model: DenseMobileNetConfig {
                classes: 3,
                ..DenseMobileNetConfig::desk_scale()
            },
            split: SplitSpec::default(),
            federation: FederationSettings::default(),
            ground: GroundSettings::default(),
            data: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub bases: Option<usize>,
    pub image_size: Option<usize>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub client_fraction: Option<f64>,
    pub local_epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub steps: Option<usize>,
}

impl RunConfig {
    /// Defaults, overlaid by `file` when given, overlaid by `flags`. `file`
    /// may also be a `report.json`, whose embedded config is used.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                let bad = |e: serde_json::Error| {
                    CliError::Usage(format!("invalid config {}: {e}", p.display()))
                };
                let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
                // a report is accepted too: its embedded snapshot is the config
                if value.get("format").and_then(|f| f.as_str()) == Some(REPORT_FORMAT) {
                    value = value["config"].take();
                }
                serde_json::from_value(value).map_err(bad)?
            }
            None => RunConfig::default(),
        };
        cfg.apply(flags);
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.seed, &o.seed);
        if o.data.is_some() {
            self.data = o.data.clone();
        }
        set(&mut self.synthesis.base_count, &o.bases);
        set(&mut self.synthesis.base_size, &o.image_size);
        let fed = &mut self.federation;
        set(&mut fed.clients, &o.clients);
        set(&mut fed.round.rounds, &o.rounds);
        set(&mut fed.round.client_fraction, &o.client_fraction);
        set(&mut fed.round.local_epochs, &o.local_epochs);
        set(&mut fed.round.batch, &o.batch);
        set(&mut fed.round.lr, &o.lr);
        set(&mut fed.round.convergence_tol, &o.convergence_tol);
        let g = &mut self.ground;
        if o.stations.is_some() {
            g.stations = o.stations.clone();
        }
        if o.observations.is_some() {
            g.observations = o.observations.clone();
        }
        set(&mut g.model.epochs, &o.epochs);
        set(&mut g.model.window, &o.window);
        set(&mut g.model.horizon, &o.horizon);
        set(&mut g.synthetic.steps, &o.steps);
    }

    fn propagate_seed(&mut self) {
        let s = self.seed;
        self.synthesis.seed = s;
        self.model.seed = s;
        self.split.seed = s;
        self.federation.round.seed = s;
        self.ground.model.seed = s;
        self.ground.synthetic.seed = s;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: aqisense_core::Error| CliError::Usage(e.to_string());
        self.synthesis.validate().map_err(usage)?;
        self.features.validate().map_err(usage)?;
        self.model.validate().map_err(usage)?;
        self.federation.round.validate().map_err(usage)?;
        self.ground.model.validate().map_err(usage)?;
        if self.model.input_size != self.features.target_size {
            return Err(CliError::Usage(format!(
                "model input size {} differs from feature size {}",
                self.model.input_size, self.features.target_size
            )));
        }
        if self.federation.clients == 0 {
            return Err(CliError::Usage(
                "federation needs at least one client".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.federation.public_fraction) {
            return Err(CliError::Usage("public_fraction must lie in [0, 1)".into()));
        }
        if !(self.ground.train_fraction > 0.0 && self.ground.train_fraction < 1.0) {
            return Err(CliError::Usage(
                "ground train_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.ground.stations.is_some() != self.ground.observations.is_some() {
            return Err(CliError::Usage(
                "station coordinates and observations must be given together".into(),
            ));
        }
        Ok(())
    }
}
