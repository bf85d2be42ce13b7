use serde::{Deserialize, Serialize};

/// One rank's durations for one step, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingRecord {
    pub step: u64,
    pub rank: u32,
    pub sim_ms: f64,
    pub reduce_ms: f64,
    pub transfer_ms: f64,
    pub render_ms: f64,
    pub bytes_sent: u64,
}

impl TimingRecord {
    /// Simulation-side time: everything but receiver rendering.
    pub fn cluster_ms(&self) -> f64 {
        self.sim_ms + self.reduce_ms + self.transfer_ms
    }
}

/// Where step durations come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockMode {
    /// Measured durations.
    Wall,
    /// Fixed simulation time, fixed or measured reduction time, and transfer
    /// time derived from bytes sent.
    Modeled {
        sim_ms: f64,
        reduce_ms: Option<f64>,
        bandwidth: f64,
    },
}

impl ClockMode {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ClockMode::Wall => Ok(()),
            ClockMode::Modeled {
                sim_ms,
                reduce_ms,
                bandwidth,
            } => {
                if !(sim_ms >= 0.0 && sim_ms.is_finite()) {
                    return Err(format!("modeled sim_ms {sim_ms}"));
                }
                if let Some(r) = reduce_ms {
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(format!("modeled reduce_ms {r}"));
                    }
                }
                if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                    return Err(format!("modeled bandwidth {bandwidth}"));
                }
                Ok(())
            }
        }
    }

    pub fn sim_ms(&self, measured: f64) -> f64 {
        match *self {
            ClockMode::Wall => measured,
            ClockMode::Modeled { sim_ms, .. } => sim_ms,
        }
    }

    /// Reduction time for a step that ran a reduction.
    pub fn reduce_ms(&self, measured: f64) -> f64 {
        match *self {
            ClockMode::Modeled {
                reduce_ms: Some(r), ..
            } => r,
            _ => measured,
        }
    }

    pub fn transfer_ms(&self, bytes: u64, measured: f64) -> f64 {
        match *self {
            ClockMode::Wall => measured,
            ClockMode::Modeled { bandwidth, .. } => 1000.0 * bytes as f64 / bandwidth,
        }
    }

    pub fn is_modeled(&self) -> bool {
        matches!(self, ClockMode::Modeled { .. })
    }
}
