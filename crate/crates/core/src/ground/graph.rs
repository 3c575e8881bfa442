use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, Tensor, Var};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Lower bound on station distances, in kilometres.
pub const MIN_DISTANCE_KM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        let s = Self {
            id: id.into(),
            lat,
            lon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Invalid(format!(
                "station {} has invalid coordinates ({}, {})",
                self.id, self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &Station, b: &Station) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Inverse-distance weights, zero diagonal.
pub fn build_adjacency(stations: &[Station]) -> Result<Tensor> {
    let n = stations.len();
    if n < 2 {
        return Err(Error::Invalid(
            "a station graph needs at least 2 stations".into(),
        ));
    }
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(&stations[i], &stations[j]);
            if d < MIN_DISTANCE_KM {
                warn!(
                    "stations {} and {} are {d} km apart; distance clamped to {MIN_DISTANCE_KM} km",
                    stations[i].id, stations[j].id
                );
            }
            let w = 1.0 / d.max(MIN_DISTANCE_KM);
            a.set(&[i, j], w);
            a.set(&[j, i], w);
        }
    }
    Ok(a)
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
pub fn normalize_propagation(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::dim("normalize_propagation", s, &[s[0], s[0]]));
    }
    let n = s[0];
    let mut at = a.clone();
    for i in 0..n {
        at.set(&[i, i], a.get(&[i, i]) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / at.row(i).iter().sum::<f64>().sqrt())
        .collect();
    Ok(Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        inv_sqrt[i] * at.data()[k] * inv_sqrt[j]
    }))
}

/// One graph convolution `act(P J W)`.
pub fn gc_forward(g: &mut Graph, p: Var, j: Var, w: Var, act: Activation) -> Result<Var> {
    let pj = g.matmul(p, j)?;
    let z = g.matmul(pj, w)?;
    Ok(g.activate(z, act))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationGraph {
    pub stations: Vec<Station>,
    pub adjacency: Tensor,
    pub propagation: Tensor,
}

impl StationGraph {
    pub fn new(stations: Vec<Station>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for s in &stations {
            s.validate()?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate station id {}", s.id)));
            }
        }
        let adjacency = build_adjacency(&stations)?;
        let propagation = normalize_propagation(&adjacency)?;
        Ok(Self {
            stations,
            adjacency,
            propagation,
        })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    /// Same graph with stations listed in `order` (indices into the current list).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&i| self.stations[i].clone()).collect())
    }

    /// Station order matching `ids`.
    pub fn reordered(&self, ids: &[String]) -> Result<Self> {
        let order = ids
            .iter()
            .map(|id| {
                self.stations
                    .iter()
                    .position(|s| &s.id == id)
                    .ok_or_else(|| Error::Invalid(format!("station {id} has no coordinates")))
            })
            .collect::<Result<Vec<_>>>()?;
        if order.len() != self.len() {
            return Err(Error::Invalid(format!(
                "{} stations have coordinates but {} have observations",
                self.len(),
                order.len()
            )));
        }
        self.permuted(&order)
    }

    /// Dense matrix dump with station ids as header and first column.
    pub fn write_matrix_csv<W: Write>(&self, m: &Tensor, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.ids());
        out.write_record(&header)?;
        for (i, s) in self.stations.iter().enumerate() {
            let mut row = vec![s.id.clone()];
            row.extend(m.row(i).iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `station_id,lat,lon` rows.
pub fn read_stations<R: Read>(r: R) -> Result<Vec<Station>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |k: usize| -> Result<f64> {
            let v = rec.get(k).unwrap_or("").trim();
            v.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad coordinate `{v}`"),
            })
        };
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let s = Station::new(id, num(1)?, num(2)?).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn load_stations(path: &Path) -> Result<Vec<Station>> {
    let f = File::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    read_stations(f)
}

pub fn write_stations<W: Write>(stations: &[Station], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["station_id", "lat", "lon"])?;
    for s in stations {
        out.write_record([s.id.clone(), s.lat.to_string(), s.lon.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
