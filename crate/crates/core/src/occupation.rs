//! Occupation measure of the cluster positions and the functionals built on it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowRealization;

/// Bounded period-one test function.
#[derive(Clone)]
pub struct PeriodicFunction {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    bound: f64,
    derivative_at_0: Option<f64>,
    is_odd: bool,
    constant: Option<f64>,
}

impl fmt::Debug for PeriodicFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicFunction")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .field("derivative_at_0", &self.derivative_at_0)
            .field("is_odd", &self.is_odd)
            .finish()
    }
}

/// Names of the built-in test functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FunctionId {
    /// sin(2 pi x)
    Sin2pi,
    /// constant one
    One,
    /// indicator of (0, 1/2], extended periodically
    Halfind,
}

impl FunctionId {
    pub fn build(self) -> PeriodicFunction {
        match self {
            FunctionId::Sin2pi => PeriodicFunction::sin2pi(),
            FunctionId::One => PeriodicFunction::one(),
            FunctionId::Halfind => PeriodicFunction::half_indicator(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionId::Sin2pi => "sin2pi",
            FunctionId::One => "one",
            FunctionId::Halfind => "halfind",
        }
    }
}

impl PeriodicFunction {
    /// Wraps `eval`, which the caller guarantees is one-periodic and bounded by `bound`.
    pub fn custom(
        name: impl Into<String>,
        bound: f64,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PeriodicFunction {
            name: name.into(),
            eval: Arc::new(eval),
            bound,
            derivative_at_0: None,
            is_odd: false,
            constant: None,
        }
    }

    pub fn sin2pi() -> Self {
        PeriodicFunction {
            derivative_at_0: Some(2.0 * std::f64::consts::PI),
            is_odd: true,
            ..Self::custom("sin2pi", 1.0, |x| (2.0 * std::f64::consts::PI * x).sin())
        }
    }

    pub fn one() -> Self {
        Self::constant(1.0).renamed("one")
    }

    pub fn zero() -> Self {
        Self::constant(0.0).renamed("zero")
    }

    pub fn constant(c: f64) -> Self {
        PeriodicFunction {
            constant: Some(c),
            derivative_at_0: Some(0.0),
            is_odd: c == 0.0,
            ..Self::custom(format!("const({c})"), c.abs(), move |_| c)
        }
    }

    pub fn half_indicator() -> Self {
        Self::custom("halfind", 1.0, |x| {
            let frac = x - x.floor();
            if frac > 0.0 && frac <= 0.5 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `alpha * f + beta * g`.
    pub fn linear_combination(alpha: f64, f: &PeriodicFunction, beta: f64, g: &PeriodicFunction) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        PeriodicFunction {
            name: format!("{alpha}*{}+{beta}*{}", f.name, g.name),
            eval: Arc::new(move |x| alpha * fe(x) + beta * ge(x)),
            bound: alpha.abs() * f.bound + beta.abs() * g.bound,
            derivative_at_0: match (f.derivative_at_0, g.derivative_at_0) {
                (Some(a), Some(b)) => Some(alpha * a + beta * b),
                _ => None,
            },
            is_odd: f.is_odd && g.is_odd,
            constant: match (f.constant, g.constant) {
                (Some(a), Some(b)) => Some(alpha * a + beta * b),
                _ => None,
            },
        }
    }

    pub fn with_derivative_at_0(mut self, d: Option<f64>) -> Self {
        self.derivative_at_0 = d;
        self
    }

    pub fn with_odd(mut self, odd: bool) -> Self {
        self.is_odd = odd;
        self
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn derivative_at_0(&self) -> Option<f64> {
        self.derivative_at_0
    }

    pub fn is_odd(&self) -> bool {
        self.is_odd
    }

    /// `Some(c)` when the function is known to be the constant `c`.
    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }
}

/// Functionals `A_k` over unit intervals `(k - 1 + offset, k + offset]`, `k` in `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSample {
    pub t: f64,
    pub window: (i64, i64),
    pub offset: f64,
    pub values: Vec<f64>,
}

impl OccupationSample {
    pub fn get(&self, k: i64) -> Option<f64> {
        if k < self.window.0 || k > self.window.1 {
            return None;
        }
        self.values.get((k - self.window.0) as usize).copied()
    }
}

/// Distinct values of a sorted row inside `(a, b]`.
fn distinct_in(row: &[f64], a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
    let start = row.partition_point(|&x| x <= a);
    let end = row.partition_point(|&x| x <= b);
    let slice = &row[start..end.max(start)];
    slice
        .iter()
        .enumerate()
        .filter(move |(i, x)| *i == 0 || slice[i - 1] != **x)
        .map(|(_, &x)| x)
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a < b) {
        return Err(Error::config("interval", format!("need a < b, got ({a}, {b}]")));
    }
    Ok(())
}

/// Number of distinct cluster positions in `(a, b]` at grid time `t`.
pub fn occupation_count(flow: &FlowRealization, a: f64, b: f64, t: f64) -> Result<usize> {
    check_interval(a, b)?;
    let row = flow.row_at(t)?;
    Ok(distinct_in(row, a, b).count())
}

/// Sum of `f` over distinct cluster positions in `(k - 1 + offset, k + offset]`.
pub fn functional_a(flow: &FlowRealization, k: i64, t: f64, f: &PeriodicFunction, offset: f64) -> Result<f64> {
    let row = flow.row_at(t)?;
    let a = k as f64 - 1.0 + offset;
    Ok(distinct_in(row, a, a + 1.0).map(|x| f.eval(x)).sum())
}

/// `int_a^b f d mu_t` over `(a, b]`.
pub fn integrate(flow: &FlowRealization, a: f64, b: f64, t: f64, f: &PeriodicFunction) -> Result<f64> {
    check_interval(a, b)?;
    let row = flow.row_at(t)?;
    Ok(distinct_in(row, a, b).map(|x| f.eval(x)).sum())
}

/// All functionals `A_k` for `k` in `window` at grid index `index`, in one pass over the row.
pub fn occupation_sample_at(
    flow: &FlowRealization,
    window: (i64, i64),
    index: usize,
    f: &PeriodicFunction,
    offset: f64,
) -> Result<OccupationSample> {
    let (k_lo, k_hi) = window;
    if k_lo > k_hi {
        return Err(Error::config("window", format!("empty window [{k_lo}, {k_hi}]")));
    }
    if index > flow.grid().steps() {
        return Err(Error::OffGrid(index as f64 * flow.grid().dt()));
    }
    let row = flow.row(index);
    let lo = k_lo as f64 - 1.0 + offset;
    let hi = k_hi as f64 + offset;
    let mut values = vec![0.0; (k_hi - k_lo + 1) as usize];
    for x in distinct_in(row, lo, hi) {
        // bucket k with k - 1 + offset < x <= k + offset
        let mut k = (x - offset).ceil() as i64;
        while !(x <= k as f64 + offset) {
            k += 1;
        }
        while !((k - 1) as f64 + offset < x) {
            k -= 1;
        }
        if (k_lo..=k_hi).contains(&k) {
            values[(k - k_lo) as usize] += f.eval(x);
        }
    }
    Ok(OccupationSample {
        t: flow.grid().time(index),
        window,
        offset,
        values,
    })
}

pub fn occupation_sample(
    flow: &FlowRealization,
    window: (i64, i64),
    t: f64,
    f: &PeriodicFunction,
    offset: f64,
) -> Result<OccupationSample> {
    let index = flow.grid().index_of(t)?;
    occupation_sample_at(flow, window, index, f, offset)
}

/// `Y = sum_{k=1..n} (A_k - mean_a) / sqrt(n)`.
pub fn clt_statistic(sample: &OccupationSample, n: usize, mean_a: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("n", "window size must be positive"));
    }
    if sample.window.0 > 1 || sample.window.1 < n as i64 {
        return Err(Error::InsufficientData(format!(
            "window [{}, {}] does not cover 1..={n}",
            sample.window.0, sample.window.1
        )));
    }
    let start = (1 - sample.window.0) as usize;
    let sum: f64 = sample.values[start..start + n].iter().map(|a| a - mean_a).sum();
    Ok(sum / (n as f64).sqrt())
}

/// `var0 + 2 * sum_{k=1..k_max} covs[k]`, where `covs[0]` is lag one.
pub fn sigma_series(var0: f64, covs: &[f64], k_max: usize) -> Result<f64> {
    if covs.len() < k_max {
        return Err(Error::InsufficientData(format!(
            "{} covariances supplied, k_max = {k_max}",
            covs.len()
        )));
    }
    Ok(var0 + 2.0 * covs[..k_max].iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{apply_flow_map, Domain, Variant};
    use crate::paths::{make_grid, sample_driving, DrivingEnsemble};

    fn synthetic_flow() -> FlowRealization {
        let g = make_grid(1.0, 4).unwrap();
        let e = DrivingEnsemble::from_paths(
            0,
            g,
            vec![vec![0.0, 0.6, 0.9, 1.0, 1.2], vec![1.0, 0.9, 0.5, 0.7, 0.2]],
        )
        .unwrap();
        apply_flow_map(&e, Domain::new(0, 1).unwrap(), Variant::Full).unwrap()
    }

    fn random_flow(rep: u64) -> FlowRealization {
        let g = make_grid(1.0, 200).unwrap();
        let e = sample_driving(-15, 15, g, 77, rep).unwrap();
        apply_flow_map(&e, Domain::new(-15, 15).unwrap(), Variant::Full).unwrap()
    }

    #[test]
    fn builtin_functions_are_periodic_and_bounded() {
        for f in [PeriodicFunction::sin2pi(), PeriodicFunction::one(), PeriodicFunction::half_indicator()] {
            for i in 0..200 {
                let x = -7.3 + 0.0731 * i as f64;
                assert!((f.eval(x + 1.0) - f.eval(x)).abs() < 1e-9, "{} at {x}", f.name());
                assert!(f.eval(x).abs() <= f.bound() + 1e-12);
            }
        }
        let h = PeriodicFunction::half_indicator();
        assert_eq!(h.eval(0.0), 0.0);
        assert_eq!(h.eval(0.5), 1.0);
        assert_eq!(h.eval(0.25), 1.0);
        assert_eq!(h.eval(0.75), 0.0);
        assert_eq!(PeriodicFunction::sin2pi().derivative_at_0(), Some(2.0 * std::f64::consts::PI));
    }

    #[test]
    fn counts_at_time_zero() {
        let flow = random_flow(0);
        for k in -10..=10 {
            assert_eq!(occupation_count(&flow, k as f64 - 1.0, k as f64, 0.0).unwrap(), 1);
        }
        let sample = occupation_sample(&flow, (-10, 10), 0.0, &PeriodicFunction::one(), 0.0).unwrap();
        assert!(sample.values.iter().all(|&v| v == 1.0));
        let half = occupation_sample(&flow, (-10, 10), 0.0, &PeriodicFunction::one(), 0.5).unwrap();
        assert!(half.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sin_vanishes_at_integers() {
        let flow = random_flow(1);
        let f = PeriodicFunction::sin2pi();
        for k in -5..=5 {
            assert!(functional_a(&flow, k, 0.0, &f, 0.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn merged_particles_count_once() {
        let flow = synthetic_flow();
        assert_eq!(occupation_count(&flow, 0.5, 1.5, 1.0).unwrap(), 1);
        assert_eq!(occupation_count(&flow, 0.5, 1.0, 1.0).unwrap(), 0);
        assert_eq!(occupation_count(&flow, -1.0, 0.0, 0.0).unwrap(), 1);
    }

    #[test]
    fn synthetic_sin_functional() {
        let flow = synthetic_flow();
        let f = PeriodicFunction::sin2pi();
        let merged = 0.9 + 0.3 / 2f64.sqrt();
        let want = (2.0 * std::f64::consts::PI * merged).sin();
        assert!((want - 0.647_3).abs() < 1e-3);
        // the merged cluster sits in (1, 2], i.e. interval k = 2
        let got = functional_a(&flow, 2, 1.0, &f, 0.0).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert_eq!(functional_a(&flow, 1, 1.0, &f, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn off_grid_time_is_rejected() {
        let flow = synthetic_flow();
        assert!(matches!(occupation_count(&flow, 0.0, 1.0, 0.3), Err(Error::OffGrid(_))));
        assert!(functional_a(&flow, 1, 0.3, &PeriodicFunction::one(), 0.0).is_err());
    }

    #[test]
    fn one_matches_count_and_sample_matches_pointwise() {
        for rep in 0..5 {
            let flow = random_flow(rep);
            let one = PeriodicFunction::one();
            let f = PeriodicFunction::half_indicator();
            for offset in [0.0, 0.5] {
                let s1 = occupation_sample(&flow, (-8, 8), 1.0, &one, offset).unwrap();
                let sf = occupation_sample(&flow, (-8, 8), 1.0, &f, offset).unwrap();
                for k in -8..=8 {
                    let a = k as f64 - 1.0 + offset;
                    let count = occupation_count(&flow, a, a + 1.0, 1.0).unwrap() as f64;
                    assert_eq!(functional_a(&flow, k, 1.0, &one, offset).unwrap(), count);
                    assert_eq!(s1.get(k).unwrap(), count);
                    assert_eq!(sf.get(k).unwrap(), functional_a(&flow, k, 1.0, &f, offset).unwrap());
                }
            }
        }
    }

    #[test]
    fn functional_is_linear() {
        let flow = random_flow(3);
        let f1 = PeriodicFunction::sin2pi();
        let f2 = PeriodicFunction::half_indicator();
        let (alpha, beta) = (1.75, -0.5);
        let combo = PeriodicFunction::linear_combination(alpha, &f1, beta, &f2);
        for k in -6..=6 {
            let lhs = functional_a(&flow, k, 0.5, &combo, 0.0).unwrap();
            let rhs = alpha * functional_a(&flow, k, 0.5, &f1, 0.0).unwrap()
                + beta * functional_a(&flow, k, 0.5, &f2, 0.0).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn clt_statistic_examples() {
        let s = |values: Vec<f64>| OccupationSample {
            t: 1.0,
            window: (1, values.len() as i64),
            offset: 0.0,
            values,
        };
        assert_eq!(clt_statistic(&s(vec![0.7]), 1, 0.7).unwrap(), 0.0);
        let c = 0.3;
        let y = clt_statistic(&s(vec![1.0 + c; 9]), 9, 1.0).unwrap();
        assert!((y - c * 3.0).abs() < 1e-12);
        assert_eq!(clt_statistic(&s(vec![2.0, 0.0, 1.0, 2.0]), 4, 1.0).unwrap(), 0.5);
        assert!(matches!(clt_statistic(&s(vec![1.0; 3]), 4, 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sigma_series_examples() {
        assert_eq!(sigma_series(1.3, &[0.0; 5], 5).unwrap(), 1.3);
        assert_eq!(sigma_series(1.0, &[0.5, 0.25], 2).unwrap(), 2.5);
        assert_eq!(sigma_series(1.0, &[0.5, 0.25, 9.0], 2).unwrap(), 2.5);
        assert!(sigma_series(1.0, &[0.5], 2).is_err());
    }
}
