//! Command-line front end: configuration, the six subcommands and their
//! output files.

pub mod args;
pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::fs::File;
use std::path::Path;
use std::time::Instant;

use aqisense_core::data::{digest_hex, split_8_2, write_dataset};
use aqisense_core::fed::{evaluate_global, Loopback};
use aqisense_core::ground::{synthesize_diffusion, write_stations};
use aqisense_core::haze::{build_feature_stack, ChannelStats, RgbImage};
use aqisense_core::mobilenet::{AqiScaleTable, DenseMobileNet};
use aqisense_core::nn::{ParamSet, Precision};
use clap::Parser;
use log::info;

use crate::args::{Cli, Command};
use crate::config::RunConfig;
use crate::pipeline::{FederatedOutcome, ForecastOutcome};
use crate::report::{
    ensure_dir, write_file, write_forecast_csv, write_json, write_report, ExtractedImage, Report,
    Timings,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] aqisense_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl ToString) -> Self {
        CliError::Core(aqisense_core::Error::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Parse `argv` (program name first), run the command and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve the configuration and dispatch.
pub fn execute(cmd: &Command) -> Result<(), CliError> {
    let common = cmd.common();
    let config_file = match (cmd, &common.config) {
        (_, Some(p)) => Some(p.clone()),
        // a trained model directory carries the config it was trained with
        (Command::Evaluate { model, .. }, None) => Some(model.join("report.json")),
        _ => None,
    };
    let mut cfg = RunConfig::resolve(config_file.as_deref(), &cmd.overrides())?;
    let out = common.out.clone();
    ensure_dir(&out)?;
    let mut timings = Timings::default();
    let report = match cmd {
        Command::SynthData { .. } => synth_data(&cfg, &out, &mut timings)?,
        Command::ExtractFeatures { input, .. } => {
            extract_features(&cfg, input, &out, &mut timings)?
        }
        Command::TrainFederated { .. } => train_federated(&mut cfg, &out, &mut timings)?,
        Command::TrainGclstm { .. } => train_gclstm(&cfg, &out, &mut timings)?,
        Command::Evaluate { model, .. } => evaluate(&mut cfg, model, &mut timings)?,
        Command::Report { .. } => full_report(&mut cfg, &out, &mut timings)?,
    };
    let path = write_report(&out, &report)?;
    timings.write(&out)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn timed<T>(
    timings: &mut Timings,
    stage: &str,
    f: impl FnOnce() -> Result<T, CliError>,
) -> Result<T, CliError> {
    let start = Instant::now();
    let v = f()?;
    timings.record(stage, start.elapsed().as_secs_f64());
    Ok(v)
}

fn synth_data(cfg: &RunConfig, out: &Path, timings: &mut Timings) -> Result<Report, CliError> {
    let mut cfg = cfg.clone();
    let data = timed(timings, "synthesize_haze", || {
        Ok(pipeline::prepare_haze(&mut cfg)?)
    })?;
    timed(timings, "write_dataset", || {
        write_dataset(
            out,
            &data.samples,
            data.classes,
            Some(&cfg.synthesis),
            &cfg.features,
        )?;
        Ok(())
    })?;
    timed(timings, "synthesize_ground", || {
        let (graph, obs) = synthesize_diffusion(&cfg.ground.synthetic)?;
        let dir = out.join("ground");
        ensure_dir(&dir)?;
        let p = dir.join("stations.csv");
        write_stations(
            &graph.stations,
            File::create(&p).map_err(|e| CliError::io(&p, e))?,
        )?;
        obs.save(&dir.join("observations.csv"))?;
        Ok(())
    })?;
    let (train, test) = split_8_2(&data.samples, &cfg.split)?;
    let mut report = Report::new("synth-data", &cfg);
    report.dataset = Some(pipeline::dataset_summary(&data, train.len(), test.len()));
    Ok(report)
}

fn extract_features(
    cfg: &RunConfig,
    input: &Path,
    out: &Path,
    timings: &mut Timings,
) -> Result<Report, CliError> {
    let files = pipeline::image_files(input)?;
    if files.is_empty() {
        return Err(CliError::Core(aqisense_core::Error::Input {
            path: input.to_path_buf(),
            msg: "no .png, .ppm or .pnm images".into(),
        }));
    }
    let dir = out.join("stacks");
    ensure_dir(&dir)?;
    let extracted = timed(timings, "extract", || {
        files
            .iter()
            .map(|f| {
                let img = RgbImage::load(f)?;
                let stack = build_feature_stack(&img, &cfg.features)?;
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                let rel = format!("stacks/{stem}.bin");
                write_file(
                    &out.join(&rel),
                    &stack.to_param_set().to_bytes(Precision::F64),
                )?;
                Ok(ExtractedImage {
                    file: f
                        .file_name()
                        .and_then(|s| s.to_str())
                        .unwrap_or_default()
                        .to_string(),
                    image_digest: digest_hex(&img.to_rgb8()),
                    stack: rel,
                    diagnostics: stack.diagnostics,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut report = Report::new("extract-features", cfg);
    report.extracted = Some(extracted);
    Ok(report)
}

fn federated_stage(
    cfg: &mut RunConfig,
    out: &Path,
    timings: &mut Timings,
) -> Result<FederatedOutcome, CliError> {
    let data = timed(timings, "prepare_haze", || Ok(pipeline::prepare_haze(cfg)?))?;
    let outcome = timed(timings, "federation", || {
        Ok(pipeline::run_federated(cfg, &data, &Loopback)?)
    })?;
    let dir = out.join("model");
    ensure_dir(&dir)?;
    write_file(
        &dir.join("model.txt"),
        outcome.model.descriptor().as_bytes(),
    )?;
    write_file(
        &dir.join("params.bin"),
        &outcome.params.to_bytes(Precision::F64),
    )?;
    write_json(&dir.join("channel_stats.json"), &outcome.stats)?;
    let p = out.join("rounds.csv");
    outcome
        .log
        .write_csv(File::create(&p).map_err(|e| CliError::io(&p, e))?)?;
    Ok(outcome)
}

fn fill_federated(report: &mut Report, outcome: FederatedOutcome) {
    report.dataset = Some(outcome.dataset);
    report.model = Some(pipeline::model_report(&outcome.model));
    report.federated = Some(outcome.report);
    report.evaluation = Some(outcome.evaluation);
}

fn train_federated(
    cfg: &mut RunConfig,
    out: &Path,
    timings: &mut Timings,
) -> Result<Report, CliError> {
    let outcome = federated_stage(cfg, out, timings)?;
    let mut report = Report::new("train-federated", cfg);
    fill_federated(&mut report, outcome);
    Ok(report)
}

fn ground_stage(
    cfg: &RunConfig,
    out: &Path,
    timings: &mut Timings,
) -> Result<ForecastOutcome, CliError> {
    let outcome = timed(timings, "gclstm", || Ok(pipeline::run_ground(cfg)?))?;
    write_forecast_csv(&out.join("forecast.csv"), &outcome.rows)?;
    let dir = out.join("gclstm");
    ensure_dir(&dir)?;
    write_file(
        &dir.join("model.txt"),
        outcome.forecaster.model.descriptor().as_bytes(),
    )?;
    write_file(
        &dir.join("params.bin"),
        &outcome.forecaster.params.to_bytes(Precision::F64),
    )?;
    write_json(&dir.join("scaler.json"), &outcome.forecaster.scaler)?;
    let p = dir.join("propagation.csv");
    outcome.graph.write_matrix_csv(
        &outcome.graph.propagation,
        File::create(&p).map_err(|e| CliError::io(&p, e))?,
    )?;
    Ok(outcome)
}

fn train_gclstm(cfg: &RunConfig, out: &Path, timings: &mut Timings) -> Result<Report, CliError> {
    let outcome = ground_stage(cfg, out, timings)?;
    let mut report = Report::new("train-gclstm", cfg);
    report.forecast = Some(outcome.report);
    Ok(report)
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn evaluate(
    cfg: &mut RunConfig,
    model_dir: &Path,
    timings: &mut Timings,
) -> Result<Report, CliError> {
    let descriptor = String::from_utf8(read_file(&model_dir.join("model.txt"))?)
        .map_err(|e| CliError::io(&model_dir.join("model.txt"), e))?;
    let model = DenseMobileNet::from_descriptor(&descriptor)?;
    let params = ParamSet::from_bytes(&read_file(&model_dir.join("params.bin"))?)?;
    model.check_params(&params)?;
    let stats_path = model_dir.join("channel_stats.json");
    let stats: ChannelStats = serde_json::from_slice(&read_file(&stats_path)?)
        .map_err(|e| CliError::io(&stats_path, e))?;
    cfg.model = model.config().clone();
    let data = timed(timings, "prepare_haze", || Ok(pipeline::prepare_haze(cfg)?))?;
    let (train, test) = pipeline::split(cfg, &data)?;
    let evaluation = timed(timings, "evaluate", || {
        let table = AqiScaleTable::uniform(data.classes)?;
        Ok(evaluate_global(
            &model,
            &params,
            &pipeline::examples(&test, &stats),
            &table,
        )?)
    })?;
    let mut report = Report::new("evaluate", cfg);
    report.dataset = Some(pipeline::dataset_summary(&data, train.len(), test.len()));
    report.model = Some(pipeline::model_report(&model));
    report.evaluation = Some(evaluation);
    Ok(report)
}

fn full_report(cfg: &mut RunConfig, out: &Path, timings: &mut Timings) -> Result<Report, CliError> {
    let fed = federated_stage(cfg, out, timings)?;
    let ground = ground_stage(cfg, out, timings)?;
    let mut report = Report::new("report", cfg);
    fill_federated(&mut report, fed);
    report.forecast = Some(ground.report);
    Ok(report)
}

