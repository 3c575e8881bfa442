//! Station AQI generated by a known graph-diffusion process.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationRecord, ObservationSet};
use crate::error::{Error, Result};
use crate::ground::graph::{Station, StationGraph};

/// Deviations from each station's daily profile evolve as
/// `d_{t+1} = decay * (1 - 0.3 w_t) * P d_t + pulses + noise`, where `P` is
/// the propagation matrix of the station graph and `w_t` a regional wind
/// index reported as `met_wind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSpec {
    pub nodes: usize,
    pub steps: usize,
    pub step_seconds: i64,
    /// UTC seconds of the first observation.
    pub start: i64,
    /// Side of the square the stations are scattered over, in degrees.
    pub extent_deg: f64,
    pub center: [f64; 2],
    pub decay: f64,
    pub pulse_prob: f64,
    pub pulse_range: [f64; 2],
    pub noise_sd: f64,
    pub cycle_amplitude: f64,
    pub base_range: [f64; 2],
    pub seed: u64,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            nodes: 10,
            steps: 2000,
            step_seconds: 7200,
            start: 1_546_300_800,
            extent_deg: 0.1,
            center: [23.13, 113.26],
            decay: 0.95,
            pulse_prob: 0.04,
            pulse_range: [15.0, 45.0],
            noise_sd: 2.0,
            cycle_amplitude: 20.0,
            base_range: [60.0, 110.0],
            seed: 0,
        }
    }
}

/// Stations, their graph, and the simulated observations.
pub fn synthesize_diffusion(spec: &DiffusionSpec) -> Result<(StationGraph, ObservationSet)> {
    if spec.nodes < 2 || spec.steps == 0 || spec.step_seconds <= 0 {
        return Err(Error::Config(
            "need >= 2 nodes, >= 1 step, positive step".into(),
        ));
    }
    if !(spec.noise_sd >= 0.0) || spec.pulse_range[0] > spec.pulse_range[1] {
        return Err(Error::Config("invalid noise or pulse range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.extent_deg / 2.0;
    let stations: Vec<Station> = (0..spec.nodes)
        .map(|i| {
            Station::new(
                format!("st{i:02}"),
                spec.center[0] + rng.gen_range(-half..half),
                spec.center[1] + rng.gen_range(-half..half),
            )
        })
        .collect::<Result<_>>()?;
    let graph = StationGraph::new(stations)?;
    let p = &graph.propagation;
    let n = spec.nodes;

    let base: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(spec.base_range[0]..=spec.base_range[1]))
        .collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.8)).collect();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let wind_noise = Normal::new(0.0, 0.08).expect("valid");

    let mut obs = ObservationSet {
        met_columns: vec!["met_wind".into()],
        ..Default::default()
    };
    let mut d = vec![0.0; n];
    let mut wind: f64 = 0.5;
    for t in 0..spec.steps {
        let ts = spec.start + spec.step_seconds * t as i64;
        let hour = TAU * (ts.rem_euclid(86_400) as f64) / 86_400.0;
        for j in 0..n {
            let aqi = base[j] + spec.cycle_amplitude * (hour - phase[j]).sin() + d[j];
            obs.insert(ObservationRecord {
                station_id: graph.stations[j].id.clone(),
                timestamp: ts,
                aqi: aqi.clamp(0.0, 500.0),
                met: vec![wind],
                flagged: false,
            });
        }
        let rate = spec.decay * (1.0 - 0.3 * wind.min(1.5));
        let spread: Vec<f64> = (0..n)
            .map(|i| rate * p.row(i).iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        for j in 0..n {
            let pulse = if rng.gen_bool(spec.pulse_prob) {
                rng.gen_range(spec.pulse_range[0]..=spec.pulse_range[1])
            } else {
                0.0
            };
            d[j] = spread[j] + pulse + noise.sample(&mut rng);
        }
        wind = (0.9 * wind + 0.05 + wind_noise.sample(&mut rng)).clamp(0.0, 1.5);
    }
    Ok((graph, obs))
}
