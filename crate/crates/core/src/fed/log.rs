use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    pub participants: Vec<String>,
    /// Selected clients whose update never arrived.
    pub failed: Vec<String>,
    /// Sample-weighted mean of the client training losses.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub accuracy: Option<f64>,
    /// `||w_{t+1} - w_t||_2`.
    pub delta_norm: f64,
}

/// One entry per completed round. Wall-clock seconds are kept apart so the
/// entries stay reproducible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FederationLog {
    pub entries: Vec<RoundEntry>,
    pub converged: bool,
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

impl FederationLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&RoundEntry> {
        self.entries.last()
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter_map(|e| e.accuracy)
            .fold(None, |m, a| Some(m.map_or(a, |m: f64| m.max(a))))
    }

    /// `round,train_loss,test_loss,accuracy,delta_norm,participants,failed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "round",
            "train_loss",
            "test_loss",
            "accuracy",
            "delta_norm",
            "participants",
            "failed",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            out.write_record([
                e.round.to_string(),
                e.train_loss.to_string(),
                opt(e.test_loss),
                opt(e.accuracy),
                e.delta_norm.to_string(),
                e.participants.join(";"),
                e.failed.join(";"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
