//! Station observation CSV: `station_id,timestamp_iso8601,aqi[,met_*...]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub station_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub aqi: f64,
    /// Values of the `met_*` columns, in header order.
    pub met: Vec<f64>,
    /// Set when the AQI falls outside `[0, 500]`.
    pub flagged: bool,
}

/// Records grouped by station, each group sorted by strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub met_columns: Vec<String>,
    pub stations: BTreeMap<String, Vec<ObservationRecord>>,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(t: i64) -> String {
    Utc.timestamp_opt(t, 0)
        .single()
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.stations.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn station_ids(&self) -> Vec<&str> {
        self.stations.keys().map(String::as_str).collect()
    }

    /// Insert or replace by `(station, timestamp)`; keeps groups sorted.
    pub fn insert(&mut self, rec: ObservationRecord) -> bool {
        let series = self.stations.entry(rec.station_id.clone()).or_default();
        match series.binary_search_by_key(&rec.timestamp, |r| r.timestamp) {
            Ok(i) => {
                series[i] = rec;
                true
            }
            Err(i) => {
                series.insert(i, rec);
                false
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::read(f)
    }

    /// Parse CSV. Line numbers in errors count the header as line 1.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let header = rd.headers().map_err(|_| Error::Parse {
            line: 1,
            msg: "missing header row".into(),
        })?;
        let cols: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        if cols.len() < 3 || cols[0] != "station_id" || cols[2] != "aqi" {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "expected header station_id,timestamp_iso8601,aqi[,met_*], got `{}`",
                    cols.join(",")
                ),
            });
        }
        let met_columns = cols[3..].to_vec();
        let mut set = ObservationSet {
            met_columns,
            ..Default::default()
        };
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |msg: String| Error::Parse { line, msg };
            let station_id = rec.get(0).unwrap_or("").trim().to_string();
            if station_id.is_empty() {
                return Err(bad("blank station_id".into()));
            }
            let ts = rec.get(1).unwrap_or("");
            let timestamp =
                parse_timestamp(ts).ok_or_else(|| bad(format!("unparseable timestamp `{ts}`")))?;
            let aqi_s = rec.get(2).unwrap_or("").trim();
            if aqi_s.is_empty() {
                return Err(bad("missing aqi".into()));
            }
            let aqi: f64 = aqi_s
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("unparseable aqi `{aqi_s}`")))?;
            let mut met = Vec::with_capacity(set.met_columns.len());
            for (k, name) in set.met_columns.iter().enumerate() {
                let v = rec.get(3 + k).unwrap_or("").trim();
                met.push(if v.is_empty() {
                    0.0
                } else {
                    v.parse()
                        .map_err(|_| bad(format!("unparseable {name} `{v}`")))?
                });
            }
            let flagged = !(0.0..=500.0).contains(&aqi);
            if flagged {
                warn!("line {line}: aqi {aqi} outside [0, 500]; record flagged");
            }
            let rec = ObservationRecord {
                station_id,
                timestamp,
                aqi,
                met,
                flagged,
            };
            let (sid, t) = (rec.station_id.clone(), rec.timestamp);
            if set.insert(rec) {
                warn!(
                    "line {line}: duplicate observation for {sid} at {}; keeping the later row",
                    format_timestamp(t)
                );
            }
        }
        Ok(set)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "station_id".to_string(),
            "timestamp_iso8601".into(),
            "aqi".into(),
        ];
        header.extend(self.met_columns.iter().cloned());
        out.write_record(&header)?;
        for series in self.stations.values() {
            for r in series {
                let mut row = vec![
                    r.station_id.clone(),
                    format_timestamp(r.timestamp),
                    r.aqi.to_string(),
                ];
                row.extend(r.met.iter().map(f64::to_string));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        self.write(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "station_id,timestamp_iso8601,aqi,met_wind\n\
        b,2019-01-01T02:00:00Z,40,1.5\n\
        a,2019-01-01T00:00:00Z,55,2\n";

    #[test]
    fn two_rows() {
        let s = ObservationSet::read(CSV.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.met_columns, vec!["met_wind"]);
        assert_eq!(s.stations["a"][0].aqi, 55.0);
        assert_eq!(s.stations["b"][0].timestamp, 1546308000);
    }

    #[test]
    fn blank_aqi_cites_line() {
        let mut text = String::from("station_id,timestamp_iso8601,aqi\n");
        for h in 0..5 {
            text += &format!("a,2019-01-01T0{h}:00:00Z,10\n");
        }
        text += "a,2019-01-01T06:00:00Z,\n";
        match ObservationSet::read(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sorted_and_deduplicated() {
        let text = "station_id,timestamp_iso8601,aqi\n\
            a,2019-01-01T03:00:00Z,3\n\
            a,2019-01-01T01:00:00Z,1\n\
            a,2019-01-01T03:00:00Z,30\n\
            a,2019-01-01T02:00:00Z,2\n";
        let s = ObservationSet::read(text.as_bytes()).unwrap();
        let v: Vec<f64> = s.stations["a"].iter().map(|r| r.aqi).collect();
        assert_eq!(v, vec![1.0, 2.0, 30.0]);
    }

    #[test]
    fn out_of_range_is_flagged() {
        let text = "station_id,timestamp_iso8601,aqi\na,2019-01-01T00:00:00Z,612\n";
        let s = ObservationSet::read(text.as_bytes()).unwrap();
        assert!(s.stations["a"][0].flagged);
    }

    #[test]
    fn write_read_idempotent() {
        let s = ObservationSet::read(CSV.as_bytes()).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(ObservationSet::read(&buf[..]).unwrap(), s);
    }
}
