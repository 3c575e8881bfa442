use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqiBand {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Ordered AQI bands, contiguous over `[0, 500]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqiScaleTable {
    bands: Vec<AqiBand>,
}

impl Default for AqiScaleTable {
    /// The common six-band AQI breakpoints.
    fn default() -> Self {
        let bands = [
            ("good", 0.0, 50.0),
            ("moderate", 51.0, 100.0),
            ("unhealthy_for_sensitive_groups", 101.0, 150.0),
            ("unhealthy", 151.0, 200.0),
            ("very_unhealthy", 201.0, 300.0),
            ("hazardous", 301.0, 500.0),
        ];
        Self {
            bands: bands
                .iter()
                .map(|&(n, lo, hi)| AqiBand {
                    name: n.into(),
                    min: lo,
                    max: hi,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalePrediction {
    pub index: usize,
    pub name: String,
    pub range: [f64; 2],
}

impl AqiScaleTable {
    pub fn new(bands: Vec<AqiBand>) -> Result<Self> {
        let t = Self { bands };
        t.validate()?;
        Ok(t)
    }

    /// `n` equal-width integer bands `class_0 .. class_{n-1}` over `[0, 500]`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("a scale needs at least 2 classes".into()));
        }
        if n == 6 {
            return Ok(Self::default());
        }
        let bands = (0..n)
            .map(|i| {
                let lo = (500 * i / n) as f64;
                let hi = (500 * (i + 1) / n) as f64;
                AqiBand {
                    name: format!("class_{i}"),
                    min: if i == 0 { 0.0 } else { lo + 1.0 },
                    max: hi,
                }
            })
            .collect();
        Self::new(bands)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bands;
        if b.len() < 2 {
            return Err(Error::Config("a scale needs at least 2 bands".into()));
        }
        if b[0].min != 0.0 || b[b.len() - 1].max != 500.0 {
            return Err(Error::Config("bands must cover [0, 500]".into()));
        }
        for band in b {
            if !(band.min <= band.max) {
                return Err(Error::Config(format!("band `{}` is inverted", band.name)));
            }
        }
        for pair in b.windows(2) {
            let gap = pair[1].min - pair[0].max;
            if !(gap > 0.0 && gap <= 1.0) && gap != 0.0 {
                return Err(Error::Config(format!(
                    "bands `{}` and `{}` are not contiguous",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn bands(&self) -> &[AqiBand] {
        &self.bands
    }

    /// Band containing an AQI value.
    pub fn classify(&self, aqi: f64) -> usize {
        self.bands
            .iter()
            .position(|b| aqi <= b.max)
            .unwrap_or(self.bands.len() - 1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["name", "min", "max"])?;
        for b in &self.bands {
            out.write_record([b.name.clone(), b.min.to_string(), b.max.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut bands = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| {
                rec.get(k).ok_or_else(|| Error::Parse {
                    line,
                    msg: "expected name,min,max".into(),
                })
            };
            let num = |k: usize| -> Result<f64> {
                field(k)?.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number `{}`", rec.get(k).unwrap_or("")),
                })
            };
            bands.push(AqiBand {
                name: field(0)?.to_string(),
                min: num(1)?,
                max: num(2)?,
            });
        }
        Self::new(bands)
    }
}

/// Arg-max class of `logits`, ties to the lowest index.
pub fn predict_scale(logits: &[f64], table: &AqiScaleTable) -> Result<ScalePrediction> {
    if logits.len() != table.len() {
        return Err(Error::dim("predict_scale", &[logits.len()], &[table.len()]));
    }
    let index = argmax(logits);
    let band = &table.bands[index];
    Ok(ScalePrediction {
        index,
        name: band.name.clone(),
        range: [band.min, band.max],
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_and_ties() {
        let t = AqiScaleTable::default();
        let p = predict_scale(&[0.1, 2.0, 0.3, 0.0, 0.0, 0.0], &t).unwrap();
        assert_eq!(p.index, 1);
        let p = predict_scale(&[1.0, 0.0, 1.0, 0.0, 0.0, 0.0], &t).unwrap();
        assert_eq!(p.index, 0);
        assert_eq!(p.name, "good");
        assert_eq!(p.range, [0.0, 50.0]);
        assert!(predict_scale(&[0.0; 5], &t).is_err());
    }

    #[test]
    fn default_table_valid() {
        let t = AqiScaleTable::default();
        t.validate().unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.classify(42.0), 0);
        assert_eq!(t.classify(300.0), 4);
        assert_eq!(t.classify(450.0), 5);
    }

    #[test]
    fn gaps_rejected() {
        let bad = vec![
            AqiBand {
                name: "a".into(),
                min: 0.0,
                max: 50.0,
            },
            AqiBand {
                name: "b".into(),
                min: 60.0,
                max: 500.0,
            },
        ];
        assert!(AqiScaleTable::new(bad).is_err());
    }

    #[test]
    fn uniform_and_csv() {
        let t = AqiScaleTable::uniform(3).unwrap();
        assert_eq!(t.bands()[1].min, 167.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(AqiScaleTable::read_csv(&buf[..]).unwrap(), t);
    }
}
