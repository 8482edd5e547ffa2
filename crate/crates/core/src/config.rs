use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::occupation::FunctionId;
use crate::paths::{default_pad, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Clt,
    Moments,
    Mixing,
    Smalltime,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Mixing => "mixing",
            ExperimentKind::Smalltime => "smalltime",
        }
    }
}

/// Fully resolved settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Simulation horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Grid steps `M` over `[0, T]` (per evaluation time for `smalltime`).
    #[serde(rename = "M")]
    pub steps: usize,
    /// Evaluation time.
    pub t: f64,
    /// Number of unit intervals in the observation window.
    pub n: usize,
    pub reps: usize,
    /// Truncation padding in particles on each side; `None` uses `ceil(4 sqrt(T)) + 8`.
    pub pad: Option<usize>,
    pub function: FunctionId,
    pub offset: f64,
    pub seed: u64,
    #[serde(rename = "kmax")]
    pub k_max: usize,
    pub bridge: bool,
    pub workers: Option<usize>,
    /// Evaluation times for `smalltime`, decreasing.
    pub times: Vec<f64>,
    /// Moment orders for `moments`.
    pub p: Vec<f64>,
}

/// Upper bound on the per-replication working set (driver paths plus flow positions).
pub const MEMORY_BUDGET_BYTES: usize = 1 << 30;

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment,
            horizon: 1.0,
            steps: 500,
            t: 1.0,
            n: 512,
            reps: 2000,
            pad: None,
            function: FunctionId::Sin2pi,
            offset: 0.0,
            seed: 20_240_601,
            k_max: 32,
            bridge: false,
            workers: None,
            times: vec![0.05, 0.02, 0.01],
            p: vec![2.0, 4.0],
        };
        match experiment {
            ExperimentKind::Simulate => ExperimentConfig {
                steps: 1000,
                n: 16,
                reps: 1,
                ..base
            },
            ExperimentKind::Clt => base,
            ExperimentKind::Moments => ExperimentConfig {
                steps: 1100,
                n: 3,
                reps: 4000,
                function: FunctionId::One,
                ..base
            },
            ExperimentKind::Mixing => ExperimentConfig {
                n: 64,
                reps: 5000,
                k_max: 25,
                ..base
            },
            ExperimentKind::Smalltime => ExperimentConfig {
                steps: 100,
                n: 64,
                reps: 5000,
                offset: 0.5,
                ..base
            },
        }
    }

    pub fn pad_for(&self, horizon: f64) -> usize {
        self.pad.unwrap_or_else(|| default_pad(horizon))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn execution(&self) -> Execution {
        Execution::with_workers(self.workers)
    }

    /// Checks ranges and cross-field constraints; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.reps < 2 && self.experiment != ExperimentKind::Simulate {
            return Err(Error::config("reps", "at least 2 replications are required"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "at least 1 replication is required"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "window size must be positive"));
        }
        if !(0.0..1.0).contains(&self.offset) {
            return Err(Error::config("offset", format!("offset must lie in [0, 1), got {}", self.offset)));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "worker count must be positive"));
        }
        match self.experiment {
            ExperimentKind::Smalltime => {
                if self.times.is_empty() {
                    return Err(Error::config("times", "at least one evaluation time is required"));
                }
                if self.times.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
                    return Err(Error::config("times", "evaluation times must lie in (0, T]"));
                }
                if self.times.windows(2).any(|w| w[0] <= w[1]) {
                    return Err(Error::config("times", "evaluation times must be decreasing"));
                }
                if self.k_max == 0 || self.k_max >= self.n {
                    return Err(Error::config("kmax", "kmax must lie in [1, n)"));
                }
            }
            _ => {
                if !(self.t >= 0.0) {
                    return Err(Error::config("t", "t must be non-negative"));
                }
                if self.t > self.horizon {
                    return Err(Error::config("t", format!("t exceeds T ({} > {})", self.t, self.horizon)));
                }
                if grid.index_of(self.t).is_err() {
                    return Err(Error::config("t", format!("t = {} is not a multiple of dt = T/M", self.t)));
                }
            }
        }
        if matches!(self.experiment, ExperimentKind::Clt | ExperimentKind::Mixing) {
            if self.t <= 0.0 {
                return Err(Error::config("t", "t must be positive"));
            }
            if self.k_max == 0 || self.k_max >= self.n {
                return Err(Error::config("kmax", "kmax must lie in [1, n)"));
            }
        }
        if self.experiment == ExperimentKind::Moments {
            if self.p.is_empty() || self.p.iter().any(|&p| !(p >= 1.0)) {
                return Err(Error::config("p", "moment orders must be >= 1"));
            }
            if self.steps < 11 {
                return Err(Error::config("M", "at least 11 steps are needed for the moment t-grid"));
            }
        }
        let particles = self.n + 2 * self.pad_for(self.horizon) + 2;
        let bytes = particles
            .saturating_mul(self.steps + 1)
            .saturating_mul(2 * std::mem::size_of::<f64>());
        if bytes > MEMORY_BUDGET_BYTES {
            return Err(Error::config(
                "n",
                format!("n + 2*pad particles over M steps needs {bytes} bytes per replication"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [
            ExperimentKind::Simulate,
            ExperimentKind::Clt,
            ExperimentKind::Moments,
            ExperimentKind::Mixing,
            ExperimentKind::Smalltime,
        ] {
            ExperimentConfig::defaults(kind).validate().unwrap();
        }
    }

    #[test]
    fn t_beyond_horizon_names_key() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Clt);
        c.t = 2.0;
        let err = c.validate().unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "t"));
        assert!(err.to_string().contains("t exceeds T"));
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Clt);
        c.reps = 1;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "reps"));
        let mut c = ExperimentConfig::defaults(ExperimentKind::Clt);
        c.offset = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "offset"));
        let mut c = ExperimentConfig::defaults(ExperimentKind::Clt);
        c.n = 1 << 40;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "n"));
        let mut c = ExperimentConfig::defaults(ExperimentKind::Smalltime);
        c.times = vec![0.01, 0.02];
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "times"));
    }

    #[test]
    fn default_pad_follows_horizon() {
        let c = ExperimentConfig::defaults(ExperimentKind::Clt);
        assert_eq!(c.pad_for(1.0), 12);
        let c = ExperimentConfig { pad: Some(3), ..c };
        assert_eq!(c.pad_for(1.0), 3);
    }
}
