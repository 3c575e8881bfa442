use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "aqisense",
    version,
    about = "Aerial-ground air quality sensing pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration (a previous report.json also works).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "aqisense-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    /// Number of base scenes; each yields one image per haze level.
    #[arg(long, value_name = "N")]
    pub bases: Option<usize>,
    /// Side of the synthesized images in pixels.
    #[arg(long, value_name = "PX")]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct FedArgs {
    /// Dataset directory written by `synth-data`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "K")]
    pub clients: Option<usize>,
    #[arg(long, value_name = "N")]
    pub rounds: Option<usize>,
    #[arg(long, value_name = "F")]
    pub client_fraction: Option<f64>,
    #[arg(long, value_name = "N")]
    pub local_epochs: Option<usize>,
    #[arg(long, value_name = "M")]
    pub batch: Option<usize>,
    #[arg(long, value_name = "ALPHA")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "TOL")]
    pub convergence_tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct GroundArgs {
    /// Station coordinates CSV (station_id,lat,lon).
    #[arg(long, value_name = "PATH", requires = "observations")]
    pub stations: Option<PathBuf>,
    /// Station observations CSV (station_id,timestamp_iso8601,aqi[,met_*]).
    #[arg(long, value_name = "PATH", requires = "stations")]
    pub observations: Option<PathBuf>,
    /// GC-LSTM training epochs.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Input window length T.
    #[arg(long, value_name = "T")]
    pub window: Option<usize>,
    /// Forecast horizon T'.
    #[arg(long, value_name = "T")]
    pub horizon: Option<usize>,
    /// Time steps of the synthetic station series.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labelled haze dataset and a station network.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        ground: GroundArgs,
    },
    /// Compute feature stacks for every PNG/PPM image in a directory.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        /// Directory of input images.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Train Dense-MobileNet by federated averaging over simulated UAVs.
    TrainFederated {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        fed: FedArgs,
    },
    /// Train the GC-LSTM station forecaster.
    TrainGclstm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ground: GroundArgs,
    },
    /// Score a trained classifier on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Output directory of `train-federated`.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Dataset directory written by `synth-data`.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Run the whole pipeline and write the full report.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        fed: FedArgs,
        #[command(flatten)]
        ground: GroundArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "synth-data",
            Command::ExtractFeatures { .. } => "extract-features",
            Command::TrainFederated { .. } => "train-federated",
            Command::TrainGclstm { .. } => "train-gclstm",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::SynthData { common, .. }
            | Command::ExtractFeatures { common, .. }
            | Command::TrainFederated { common, .. }
            | Command::TrainGclstm { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    pub fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            seed: self.common().seed,
            ..Default::default()
        };
        let synth = |o: &mut Overrides, s: &SynthArgs| {
            o.bases = s.bases;
            o.image_size = s.image_size;
        };
        let fed = |o: &mut Overrides, f: &FedArgs| {
            o.data = f.data.clone();
            o.clients = f.clients;
            o.rounds = f.rounds;
            o.client_fraction = f.client_fraction;
            o.local_epochs = f.local_epochs;
            o.batch = f.batch;
            o.lr = f.lr;
            o.convergence_tol = f.convergence_tol;
        };
        let ground = |o: &mut Overrides, g: &GroundArgs| {
            o.stations = g.stations.clone();
            o.observations = g.observations.clone();
            o.epochs = g.epochs;
            o.window = g.window;
            o.horizon = g.horizon;
            o.steps = g.steps;
        };
        match self {
            Command::SynthData {
                synth: s,
                ground: g,
                ..
            } => {
                synth(&mut o, s);
                ground(&mut o, g);
            }
            Command::ExtractFeatures { .. } => {}
            Command::TrainFederated {
                synth: s, fed: f, ..
            } => {
                synth(&mut o, s);
                fed(&mut o, f);
            }
            Command::TrainGclstm { ground: g, .. } => ground(&mut o, g),
            Command::Evaluate { data, .. } => o.data = data.clone(),
            Command::Report {
                synth: s,
                fed: f,
                ground: g,
                ..
            } => {
                synth(&mut o, s);
                fed(&mut o, f);
                ground(&mut o, g);
            }
        }
        o
    }
}
