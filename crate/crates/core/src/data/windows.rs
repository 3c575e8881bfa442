//! Sliding windows over a regular multi-station time grid.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use log::warn;

use crate::data::observations::{format_timestamp, ObservationSet};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    /// `[T, N, M]` inputs.
    pub x: Tensor,
    /// `[T', N]` raw AQI targets.
    pub y: Tensor,
    /// Timestamp of the last input step.
    pub anchor: i64,
}

/// Dense `[L, N, M]` feature grid. Feature 0 is always the AQI; then the
/// selected meteorological columns; then the hour-of-day sine and cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesGrid {
    pub stations: Vec<String>,
    pub times: Vec<i64>,
    pub features: Vec<String>,
    data: Vec<f64>,
}

impl SeriesGrid {
    /// Uses every station in `obs` (sorted by id) and the requested `met_*`
    /// columns. Missing columns are zero-filled with a warning.
    pub fn from_observations(obs: &ObservationSet, met: &[String]) -> Result<Self> {
        let stations: Vec<String> = obs.stations.keys().cloned().collect();
        if stations.is_empty() {
            return Err(Error::Invalid("no observations".into()));
        }
        let all: BTreeSet<i64> = obs
            .stations
            .values()
            .flat_map(|s| s.iter().map(|r| r.timestamp))
            .collect();
        let all: Vec<i64> = all.into_iter().collect();
        let times: Vec<i64> = if all.len() < 2 {
            all.clone()
        } else {
            let step = all.windows(2).map(|w| w[1] - w[0]).min().unwrap();
            (0..=((all[all.len() - 1] - all[0]) / step))
                .map(|i| all[0] + i * step)
                .collect()
        };
        let mut missing = Vec::new();
        for (sid, series) in &obs.stations {
            let have: BTreeSet<i64> = series.iter().map(|r| r.timestamp).collect();
            for &t in &times {
                if !have.contains(&t) {
                    missing.push(format!("{sid}@{}", format_timestamp(t)));
                }
            }
            if series.iter().any(|r| !times.contains(&r.timestamp)) {
                return Err(Error::Invalid(format!(
                    "station {sid} is off the common time grid"
                )));
            }
        }
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
            return Err(Error::Invalid(format!(
                "{} missing time stamp(s): {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 20 { ", ..." } else { "" }
            )));
        }

        let mut cols = Vec::new();
        for name in met {
            match obs.met_columns.iter().position(|c| c == name) {
                Some(i) => cols.push(Some(i)),
                None => {
                    warn!("column `{name}` absent; zero-filled");
                    cols.push(None);
                }
            }
        }
        let mut features = vec!["aqi".to_string()];
        features.extend(met.iter().cloned());
        features.extend(["hour_sin".to_string(), "hour_cos".to_string()]);
        let (n, m) = (stations.len(), features.len());
        let mut data = vec![0.0; times.len() * n * m];
        for (j, sid) in stations.iter().enumerate() {
            for (t, r) in obs.stations[sid].iter().enumerate() {
                let base = (t * n + j) * m;
                data[base] = r.aqi;
                for (k, c) in cols.iter().enumerate() {
                    if let Some(i) = c {
                        data[base + 1 + k] = r.met[*i];
                    }
                }
                let phase = TAU * (r.timestamp.rem_euclid(86_400) as f64) / 86_400.0;
                data[base + m - 2] = phase.sin();
                data[base + m - 1] = phase.cos();
            }
        }
        Ok(Self {
            stations,
            times,
            features,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.stations.len()
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn aqi(&self, t: usize, station: usize) -> f64 {
        self.value(t, station, 0)
    }

    pub fn value(&self, t: usize, station: usize, feature: usize) -> f64 {
        self.data[(t * self.nodes() + station) * self.width() + feature]
    }

    /// Time steps `range`, all stations.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let row = self.nodes() * self.width();
        Self {
            stations: self.stations.clone(),
            times: self.times[range.clone()].to_vec(),
            features: self.features.clone(),
            data: self.data[range.start * row..range.end * row].to_vec(),
        }
    }

    /// First `fraction` of the time steps and the rest.
    pub fn split_chronological(&self, fraction: f64) -> (Self, Self) {
        let cut = ((self.len() as f64) * fraction).floor() as usize;
        (self.slice(0..cut), self.slice(cut..self.len()))
    }

    /// Windows with `window` input steps and `horizon` target steps, every
    /// `step` time steps.
    pub fn windows(&self, window: usize, horizon: usize, step: usize) -> Result<Vec<SeriesWindow>> {
        if window == 0 || horizon == 0 || step == 0 {
            return Err(Error::Config(
                "window, horizon and step must be >= 1".into(),
            ));
        }
        let l = self.len();
        if l < window + horizon {
            warn!("series of length {l} is shorter than window {window} + horizon {horizon}; no windows");
            return Ok(Vec::new());
        }
        let (n, m) = (self.nodes(), self.width());
        let row = n * m;
        let mut out = Vec::new();
        let mut s = 0;
        while s + window + horizon <= l {
            let x = Tensor::new(
                &[window, n, m],
                self.data[s * row..(s + window) * row].to_vec(),
            )?;
            let y = Tensor::from_fn(&[horizon, n], |i| self.aqi(s + window + i / n, i % n));
            out.push(SeriesWindow {
                x,
                y,
                anchor: self.times[s + window - 1],
            });
            s += step;
        }
        Ok(out)
    }
}

/// Windows over every station of `obs` using all of its `met_*` columns.
pub fn make_windows(
    obs: &ObservationSet,
    window: usize,
    horizon: usize,
    step: usize,
) -> Result<Vec<SeriesWindow>> {
    SeriesGrid::from_observations(obs, &obs.met_columns)?.windows(window, horizon, step)
}
