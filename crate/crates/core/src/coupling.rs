//! Gap events on the driving noise, pathwise coupling of two-sided and
//! one-sided flows, closed-form gap probabilities, and covariance decay of the
//! occupation functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowRealization, Variant};
use crate::occupation::OccupationSample;
use crate::paths::{bridge_crossing_prob, DrivingEnsemble};
use crate::rng::{counter_uniform, TAG_GAP_BRIDGE};
use crate::stats::{linear_fit, running_max_below, weighted_linear_fit, Estimate, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEventRecord {
    pub l: i64,
    pub j: u32,
    pub t: f64,
    pub sign: Sign,
    pub occurred: bool,
}

struct BarrierCheck<'a> {
    ensemble: &'a DrivingEnsemble,
    upto: usize,
    bridge: bool,
}

impl BarrierCheck<'_> {
    /// `max_{s <= t} W_k(s) <= b`.
    fn stays_below(&self, k: i64, b: f64) -> Result<bool> {
        let path = &self.ensemble.path(k)?[..=self.upto];
        if path.iter().any(|&w| w > b) {
            return Ok(false);
        }
        self.bridge_survives(k, path.iter().map(|&w| b - w))
    }

    /// `min_{s <= t} W_k(s) > b`.
    fn stays_above(&self, k: i64, b: f64) -> Result<bool> {
        let path = &self.ensemble.path(k)?[..=self.upto];
        if path.iter().any(|&w| w <= b) {
            return Ok(false);
        }
        self.bridge_survives(k, path.iter().map(|&w| w - b))
    }

    /// `min_{s <= t} W_k(s) >= b`.
    fn stays_at_or_above(&self, k: i64, b: f64) -> Result<bool> {
        let path = &self.ensemble.path(k)?[..=self.upto];
        if path.iter().any(|&w| w < b) {
            return Ok(false);
        }
        self.bridge_survives(k, path.iter().map(|&w| w - b))
    }

    /// `max_{s <= t} W_k(s) < b`.
    fn stays_strictly_below(&self, k: i64, b: f64) -> Result<bool> {
        let path = &self.ensemble.path(k)?[..=self.upto];
        if path.iter().any(|&w| w >= b) {
            return Ok(false);
        }
        self.bridge_survives(k, path.iter().map(|&w| b - w))
    }

    /// Bernoulli bridge draws between grid points given the barrier distances.
    fn bridge_survives(&self, k: i64, distances: impl Iterator<Item = f64>) -> Result<bool> {
        if !self.bridge {
            return Ok(true);
        }
        let dt = self.ensemble.grid().dt();
        let seed = self.ensemble.seed();
        let mut prev = None;
        for (i, d) in distances.enumerate() {
            if let Some(d0) = prev {
                let p = bridge_crossing_prob(d0, d, 1.0, dt)?;
                if p > 0.0 && counter_uniform(seed.master_seed, seed.replication, TAG_GAP_BRIDGE, k, i - 1) < p {
                    return Ok(false);
                }
            }
            prev = Some(d);
        }
        Ok(true)
    }
}

fn grid_upto(ensemble: &DrivingEnsemble, t: f64) -> Result<usize> {
    ensemble.grid().index_of(t)
}

/// Gap event on the drivers.
///
/// Plus: `W_l..W_{l+j}` stay at or below `l + j + 1/2` and `W_{l+j+1}` stays
/// strictly above it on `[0, t]`. Minus is the mirror image. With `bridge`,
/// excursions between grid points are also drawn.
pub fn gap_event(ensemble: &DrivingEnsemble, l: i64, j: u32, t: f64, sign: Sign, bridge: bool) -> Result<bool> {
    let upto = grid_upto(ensemble, t)?;
    let check = BarrierCheck {
        ensemble,
        upto,
        bridge,
    };
    let j = j as i64;
    match sign {
        Sign::Plus => {
            let (first, last, outside) = (l, l + j, l + j + 1);
            require(ensemble, first, outside)?;
            let barrier = (l + j) as f64 + 0.5;
            if !check.stays_above(outside, barrier)? {
                return Ok(false);
            }
            for k in first..=last {
                if !check.stays_below(k, barrier)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Sign::Minus => {
            let (first, last, outside) = (l - j, l, l - j - 1);
            require(ensemble, outside, last)?;
            let barrier = (l - j) as f64 - 0.5;
            if !check.stays_strictly_below(outside, barrier)? {
                return Ok(false);
            }
            for k in first..=last {
                if !check.stays_at_or_above(k, barrier)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

pub fn gap_event_record(
    ensemble: &DrivingEnsemble,
    l: i64,
    j: u32,
    t: f64,
    sign: Sign,
    bridge: bool,
) -> Result<GapEventRecord> {
    Ok(GapEventRecord {
        l,
        j,
        t,
        sign,
        occurred: gap_event(ensemble, l, j, t, sign, bridge)?,
    })
}

fn require(ensemble: &DrivingEnsemble, lo: i64, hi: i64) -> Result<()> {
    for k in [lo, hi] {
        if !ensemble.contains(k) {
            return Err(Error::OutOfDomain {
                index: k,
                lo: ensemble.lo(),
                hi: ensemble.hi(),
            });
        }
    }
    Ok(())
}

/// Union of the gap events over `j = 1..=n`.
pub fn gap_union(ensemble: &DrivingEnsemble, l: i64, n: u32, t: f64, sign: Sign, bridge: bool) -> Result<bool> {
    Ok(first_gap(ensemble, l, n, t, sign, bridge)?.is_some())
}

/// Smallest `j` in `1..=n` whose gap event occurs.
pub fn first_gap(ensemble: &DrivingEnsemble, l: i64, n: u32, t: f64, sign: Sign, bridge: bool) -> Result<Option<u32>> {
    if n == 0 {
        return Err(Error::config("N", "union size must be positive"));
    }
    let span = n as i64 + 1;
    match sign {
        Sign::Plus => require(ensemble, l, l + span)?,
        Sign::Minus => require(ensemble, l - span, l)?,
    }
    if bridge {
        for j in 1..=n {
            if gap_event(ensemble, l, j, t, sign, true)? {
                return Ok(Some(j));
            }
        }
        return Ok(None);
    }
    // grid mode: reuse running extremes across j
    let upto = grid_upto(ensemble, t)?;
    let extreme = |k: i64| -> Result<(f64, f64)> {
        let path = &ensemble.path(k)?[..=upto];
        Ok(path
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w))))
    };
    match sign {
        Sign::Plus => {
            let mut inner_max = f64::NEG_INFINITY;
            for k in l..l + 1 {
                inner_max = inner_max.max(extreme(k)?.1);
            }
            for j in 1..=n as i64 {
                inner_max = inner_max.max(extreme(l + j)?.1);
                let barrier = (l + j) as f64 + 0.5;
                if inner_max <= barrier && extreme(l + j + 1)?.0 > barrier {
                    return Ok(Some(j as u32));
                }
            }
        }
        Sign::Minus => {
            let mut inner_min = extreme(l)?.0;
            for j in 1..=n as i64 {
                inner_min = inner_min.min(extreme(l - j)?.0);
                let barrier = (l - j) as f64 - 0.5;
                if inner_min >= barrier && extreme(l - j - 1)?.1 < barrier {
                    return Ok(Some(j as u32));
                }
            }
        }
    }
    Ok(None)
}

/// Closed-form `P(A^+_{l,j}(t))`: product of reflection-principle barrier
/// probabilities over the `j + 1` inner drivers and the outer one.
pub fn exact_gap_prob(j: u32, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::config("t", format!("gap probability needs t > 0, got {t}")));
    }
    let inner: f64 = (0..=j).map(|m| running_max_below(m as f64 + 0.5, t)).product();
    Ok(inner * running_max_below(0.5, t))
}

/// Checks that `full` and `half` agree bit-exactly beyond the gap at `l + j`
/// (plus) or `l - j` (minus) at every grid index.
///
/// `full` must be the two-sided map anchored at `l`; `half` the one-sided map
/// whose edge is `l + p` (plus) or `l - p` (minus). Both must come from the same
/// driving ensemble.
pub fn verify_coupling(full: &FlowRealization, half: &FlowRealization, l: i64, j: u32, p: u32, sign: Sign) -> Result<bool> {
    if !full.grid().same_as(half.grid()) {
        return Err(Error::Mismatch("realizations use different grids".into()));
    }
    if full.seed() != half.seed() {
        return Err(Error::Mismatch("realizations come from different ensembles".into()));
    }
    if full.variant() != Variant::Full {
        return Err(Error::Mismatch("first realization must use the full map".into()));
    }
    if p > j {
        return Err(Error::config("p", format!("p = {p} exceeds j = {j}")));
    }
    let (j, p) = (j as i64, p as i64);
    let (range, expected_variant) = match sign {
        Sign::Plus => {
            if half.domain().lo() != l + p {
                return Err(Error::Mismatch(format!(
                    "one-sided domain starts at {}, expected {}",
                    half.domain().lo(),
                    l + p
                )));
            }
            (l + j + 1..=full.domain().hi().min(half.domain().hi()), Variant::Plus)
        }
        Sign::Minus => {
            if half.domain().hi() != l - p {
                return Err(Error::Mismatch(format!(
                    "one-sided domain ends at {}, expected {}",
                    half.domain().hi(),
                    l - p
                )));
            }
            (full.domain().lo().max(half.domain().lo())..=l - j - 1, Variant::Minus)
        }
    };
    if half.variant() != expected_variant {
        return Err(Error::Mismatch("second realization has the wrong one-sided variant".into()));
    }
    if range.is_empty() {
        return Err(Error::InsufficientData("no particles beyond the gap in both domains".into()));
    }
    for i in 0..=full.grid().steps() {
        for k in range.clone() {
            if full.position(k, i)?.to_bits() != half.position(k, i)?.to_bits() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Estimated `cov(A_0, A_k)` per lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub lags: Vec<usize>,
    pub cov_hat: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl DecaySeries {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// Per-replication lagged products of centred values, pooled over every pair
/// `(A_i, A_{i+lag})` inside the window. Centering uses the mean over all
/// values of all replications.
pub(crate) struct LaggedProducts {
    pub per_rep: Vec<Vec<f64>>,
}

pub(crate) fn lagged_products(samples: &[OccupationSample], lags: &[usize]) -> Result<LaggedProducts> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples".into()))?;
    if samples.len() < 2 {
        return Err(Error::InsufficientData("at least 2 replications required".into()));
    }
    let width = first.values.len();
    if samples.iter().any(|s| s.values.len() != width || s.window != first.window) {
        return Err(Error::Mismatch("samples have different windows".into()));
    }
    if let Some(&max_lag) = lags.iter().max() {
        if max_lag >= width {
            return Err(Error::InsufficientData(format!(
                "window of {width} intervals cannot hold lag {max_lag}"
            )));
        }
    }
    let total: f64 = samples.iter().flat_map(|s| s.values.iter()).sum();
    let centre = total / (width * samples.len()) as f64;
    let per_rep = samples
        .iter()
        .map(|s| {
            let c: Vec<f64> = s.values.iter().map(|v| v - centre).collect();
            lags.iter()
                .map(|&lag| {
                    let pairs = width - lag;
                    c[..pairs].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / pairs as f64
                })
                .collect()
        })
        .collect();
    Ok(LaggedProducts { per_rep })
}

fn column_estimate(products: &LaggedProducts, col: usize) -> Estimate {
    let xs: Vec<f64> = products.per_rep.iter().map(|r| r[col]).collect();
    crate::stats::estimate(&xs).expect("at least two replications")
}

/// Stationary covariance estimates `cov(A_0, A_k)` for `k = 1..=k_max`.
pub fn covariance_decay(samples: &[OccupationSample], k_max: usize) -> Result<DecaySeries> {
    if k_max == 0 {
        return Err(Error::config("kmax", "lag series starts at 1"));
    }
    let lags: Vec<usize> = (1..=k_max).collect();
    covariance_at_lags(samples, &lags)
}

pub fn covariance_at_lags(samples: &[OccupationSample], lags: &[usize]) -> Result<DecaySeries> {
    if lags.contains(&0) {
        return Err(Error::config("lag", "lag 0 is the variance; use pooled_variance"));
    }
    if lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("lag", "lags must be strictly increasing"));
    }
    let products = lagged_products(samples, lags)?;
    let (cov_hat, stderr) = (0..lags.len())
        .map(|c| {
            let e = column_estimate(&products, c);
            (e.value, e.stderr)
        })
        .unzip();
    Ok(DecaySeries {
        lags: lags.to_vec(),
        cov_hat,
        stderr,
    })
}

/// Pooled `Var(A_0)` over the window and replications.
pub fn pooled_variance(samples: &[OccupationSample]) -> Result<Estimate> {
    let products = lagged_products(samples, &[0])?;
    Ok(column_estimate(&products, 0))
}

/// Weighted regression of `ln|cov_hat|` on `sqrt(k)` over lags with
/// `|cov_hat| > z * stderr`. Each point carries the delta-method variance
/// `(stderr / cov_hat)^2` of its logarithm.
pub fn fit_decay(series: &DecaySeries, z: f64) -> Result<LinearFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut var = Vec::new();
    for ((&k, &c), &se) in series.lags.iter().zip(&series.cov_hat).zip(&series.stderr) {
        if c.abs() > z * se && se > 0.0 {
            x.push((k as f64).sqrt());
            y.push(c.abs().ln());
            var.push((se / c).powi(2));
        }
    }
    weighted_linear_fit(&x, &y, &var)
}

/// Fits `1 - P(B_N) ~ C exp(-beta * ((sqrt N - sqrt 2) v 1))`; returns the fit of
/// `ln(1 - P)` whose slope is `-beta` and intercept `ln C`.
pub fn fit_gap_rate(points: &[(u32, f64)]) -> Result<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(_, p)| *p < 1.0)
        .map(|&(n, p)| (((n as f64).sqrt() - 2f64.sqrt()).max(1.0), (1.0 - p).ln()))
        .unzip();
    linear_fit(&x, &y)
}
