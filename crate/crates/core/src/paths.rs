//! Brownian driver paths on a uniform time grid.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Uniform subdivision of `[0, T]` into `M` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config("T", format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::config("M", "step count must be at least 1"));
        }
        Ok(TimeGrid {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_i`; the last point is pinned to `T` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| self.time(i))
    }

    /// Grid index of `t`, or `OffGrid` if `t` is not within rounding of a grid point.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !(t.is_finite()) || t < -self.dt * 1e-9 || t > self.horizon + self.dt * 1e-9 {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let x = t / self.dt;
        let i = x.round();
        if (x - i).abs() > 1e-9 * x.abs().max(1.0) {
            return Err(Error::OffGrid(t));
        }
        Ok(i as usize)
    }

    /// Index of the last grid point `<= t`.
    pub fn floor_index(&self, t: f64) -> usize {
        if t >= self.horizon {
            return self.steps;
        }
        let x = t / self.dt;
        let r = x.round();
        let i = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.floor() };
        (i.max(0.0) as usize).min(self.steps)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && self.horizon.to_bits() == other.horizon.to_bits()
    }
}

/// Builds the uniform grid on `[0, horizon]` with `steps` steps.
pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// Where an ensemble's randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub replication: u64,
}

/// Independent Brownian drivers `W_k`, one per integer index in `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct DrivingEnsemble {
    lo: i64,
    hi: i64,
    grid: TimeGrid,
    seed: SeedRecord,
    // particle-major: path of k occupies [(k - lo) * (M + 1), (k - lo + 1) * (M + 1))
    data: Vec<f64>,
}

impl DrivingEnsemble {
    /// Samples drivers `W_k(t_i)` with `W_k(0) = k` and N(0, dt) increments.
    pub fn sample(lo: i64, hi: i64, grid: TimeGrid, master_seed: u64, replication: u64) -> Result<Self> {
        if lo > hi {
            return Err(Error::config(
                "index range",
                format!("index_lo {lo} exceeds index_hi {hi}"),
            ));
        }
        let width = grid.steps + 1;
        let count = (hi - lo + 1) as usize;
        let mut data = vec![0.0; count * width];
        let sd = grid.dt.sqrt();
        for (offset, path) in data.chunks_exact_mut(width).enumerate() {
            let k = lo + offset as i64;
            let mut stream = rng::driver_stream(master_seed, replication, k);
            let mut w = k as f64;
            path[0] = w;
            for slot in &mut path[1..] {
                let z: f64 = StandardNormal.sample(&mut stream);
                w += sd * z;
                *slot = w;
            }
        }
        Ok(DrivingEnsemble {
            lo,
            hi,
            grid,
            seed: SeedRecord {
                master_seed,
                replication,
            },
            data,
        })
    }

    /// Wraps explicit paths (first path belongs to index `lo`).
    pub fn from_paths(lo: i64, grid: TimeGrid, paths: Vec<Vec<f64>>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InsufficientData("at least one driver path required".into()));
        }
        let width = grid.steps + 1;
        let mut data = Vec::with_capacity(paths.len() * width);
        for (offset, path) in paths.iter().enumerate() {
            if path.len() != width {
                return Err(Error::Mismatch(format!(
                    "path {offset} has {} points, grid has {width}",
                    path.len()
                )));
            }
            data.extend_from_slice(path);
        }
        Ok(DrivingEnsemble {
            lo,
            hi: lo + paths.len() as i64 - 1,
            grid,
            seed: SeedRecord {
                master_seed: 0,
                replication: 0,
            },
            data,
        })
    }

    /// Zero-noise ensemble: `W_k(t) = k` for all `t`.
    pub fn frozen(lo: i64, hi: i64, grid: TimeGrid) -> Result<Self> {
        if lo > hi {
            return Err(Error::config("index range", "index_lo exceeds index_hi"));
        }
        let width = grid.steps + 1;
        let data = (lo..=hi)
            .flat_map(|k| std::iter::repeat_n(k as f64, width))
            .collect();
        Ok(DrivingEnsemble {
            lo,
            hi,
            grid,
            seed: SeedRecord {
                master_seed: 0,
                replication: 0,
            },
            data,
        })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn path(&self, k: i64) -> Result<&[f64]> {
        if !self.contains(k) {
            return Err(Error::OutOfDomain {
                index: k,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let width = self.grid.steps + 1;
        let start = (k - self.lo) as usize * width;
        Ok(&self.data[start..start + width])
    }

    /// Replaces the path of driver `k` (used for splicing tests).
    pub fn with_path(mut self, k: i64, path: &[f64]) -> Result<Self> {
        let width = self.grid.steps + 1;
        if path.len() != width {
            return Err(Error::Mismatch("path length does not match grid".into()));
        }
        if !self.contains(k) {
            return Err(Error::OutOfDomain {
                index: k,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let start = (k - self.lo) as usize * width;
        self.data[start..start + width].copy_from_slice(path);
        Ok(self)
    }

    /// Every `factor`-th grid point, i.e. the same Brownian paths seen on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::config(
                "factor",
                format!("{factor} does not divide {} steps", self.grid.steps),
            ));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps / factor)?;
        let width = self.grid.steps + 1;
        let data = self
            .data
            .chunks_exact(width)
            .flat_map(|path| path.iter().step_by(factor).copied())
            .collect();
        Ok(DrivingEnsemble {
            lo: self.lo,
            hi: self.hi,
            grid,
            seed: self.seed,
            data,
        })
    }
}

/// Samples the driver ensemble for one replication.
pub fn sample_driving(
    index_lo: i64,
    index_hi: i64,
    grid: TimeGrid,
    master_seed: u64,
    replication_id: u64,
) -> Result<DrivingEnsemble> {
    DrivingEnsemble::sample(index_lo, index_hi, grid, master_seed, replication_id)
}

/// Probability that a Brownian bridge with variance rate `sigma2` over a step of
/// length `dt` touches a barrier, given endpoint distances `d0`, `d1` to it.
pub fn bridge_crossing_prob(d0: f64, d1: f64, sigma2: f64, dt: f64) -> Result<f64> {
    if d0 < 0.0 || d1 < 0.0 || d0.is_nan() || d1.is_nan() {
        return Err(Error::config("distance", format!("negative barrier distance ({d0}, {d1})")));
    }
    if !(sigma2 > 0.0 && dt > 0.0) {
        return Err(Error::config("sigma2*dt", "diffusion rate and step must be positive"));
    }
    let exponent = -2.0 * d0 * d1 / (sigma2 * dt);
    let p = exponent.exp();
    Ok(if p < 1e-300 { 0.0 } else { p.min(1.0) })
}

/// Default truncation padding `ceil(4 sqrt(T)) + 8`.
pub fn default_pad(horizon: f64) -> usize {
    (4.0 * horizon.sqrt()).ceil() as usize + 8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = make_grid(1.0, 4).unwrap();
        let times: Vec<f64> = g.times().collect();
        assert_eq!(times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let g = make_grid(2.0, 1).unwrap();
        assert_eq!(g.times().collect::<Vec<_>>(), vec![0.0, 2.0]);

        let g = make_grid(0.5, 500).unwrap();
        assert!((g.dt() - 0.001).abs() < 1e-18);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(matches!(make_grid(0.0, 4), Err(Error::Config { .. })));
        assert!(matches!(make_grid(-1.0, 4), Err(Error::Config { .. })));
        assert!(matches!(make_grid(1.0, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn grid_dt_times_steps_is_horizon_within_ulp() {
        for &(t, m) in &[(1.0, 3usize), (0.7, 1000), (2.5, 7), (0.01, 100), (13.0, 1100)] {
            let g = make_grid(t, m).unwrap();
            let back = g.dt() * m as f64;
            let ulp = f64::EPSILON * t;
            assert!((back - t).abs() <= ulp, "{t} {m}: {back}");
            let times: Vec<f64> = g.times().collect();
            assert_eq!(times[0], 0.0);
            assert_eq!(*times.last().unwrap(), t);
            assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn grid_index_lookup() {
        let g = make_grid(1.0, 1000).unwrap();
        assert_eq!(g.index_of(0.25).unwrap(), 250);
        assert_eq!(g.index_of(1.0).unwrap(), 1000);
        assert!(matches!(g.index_of(0.0005), Err(Error::OffGrid(_))));
        assert!(matches!(g.index_of(1.5), Err(Error::TimeOutOfRange { .. })));
        assert_eq!(g.floor_index(0.0005), 0);
        assert_eq!(g.floor_index(0.3), 300);
    }

    #[test]
    fn driving_starts_at_integers_and_is_deterministic() {
        let g = make_grid(1.0, 50).unwrap();
        let a = sample_driving(-3, 4, g, 99, 7).unwrap();
        let b = sample_driving(-3, 4, g, 99, 7).unwrap();
        for k in -3..=4 {
            assert_eq!(a.path(k).unwrap()[0], k as f64);
            let pa: Vec<u64> = a.path(k).unwrap().iter().map(|x| x.to_bits()).collect();
            let pb: Vec<u64> = b.path(k).unwrap().iter().map(|x| x.to_bits()).collect();
            assert_eq!(pa, pb);
        }
        let c = sample_driving(-3, 4, g, 99, 8).unwrap();
        assert_ne!(a.path(0).unwrap()[50], c.path(0).unwrap()[50]);
    }

    #[test]
    fn driver_path_does_not_depend_on_range() {
        let g = make_grid(1.0, 20).unwrap();
        let a = sample_driving(-3, 4, g, 5, 1).unwrap();
        let b = sample_driving(2, 10, g, 5, 1).unwrap();
        assert_eq!(a.path(3).unwrap(), b.path(3).unwrap());
    }

    #[test]
    fn driving_rejects_inverted_range() {
        let g = make_grid(1.0, 4).unwrap();
        assert!(matches!(sample_driving(3, 2, g, 1, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn coarsen_keeps_every_other_point() {
        let g = make_grid(1.0, 8).unwrap();
        let e = sample_driving(0, 1, g, 3, 0).unwrap();
        let c = e.coarsen(2).unwrap();
        assert_eq!(c.grid().steps(), 4);
        let fine = e.path(1).unwrap();
        let coarse = c.path(1).unwrap();
        for i in 0..=4 {
            assert_eq!(coarse[i], fine[2 * i]);
        }
        assert!(e.coarsen(3).is_err());
    }

    #[test]
    fn bridge_examples() {
        assert_eq!(bridge_crossing_prob(0.0, 3.0, 1.0, 0.1).unwrap(), 1.0);
        let p = bridge_crossing_prob(1.0, 1.0, 2.0, 1.0).unwrap();
        assert!((p - (-1.0f64).exp()).abs() < 1e-15);
        assert!((p - 0.36788).abs() < 1e-5);
        assert_eq!(bridge_crossing_prob(10.0, 10.0, 1.0, 0.01).unwrap(), 0.0);
        assert!(bridge_crossing_prob(-0.1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn default_pad_values() {
        assert_eq!(default_pad(1.0), 12);
        assert_eq!(default_pad(0.25), 10);
        assert_eq!(default_pad(0.01), 9);
    }
}
