//! Estimators, normality tests and small regression helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use libm::{erf, erfc};

use crate::error::{Error, Result};
use crate::rng::stream_key;

/// Monte Carlo point estimate; `stderr` is the sample standard deviation over `sqrt(reps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
}

impl Estimate {
    /// `sqrt(a.stderr^2 + b.stderr^2)`.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|a - b| / combined stderr` (infinite when both are exact and differ).
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let d = (self.value - other.value).abs();
        let s = self.combined_stderr(other);
        if d == 0.0 {
            0.0
        } else if s == 0.0 {
            f64::INFINITY
        } else {
            d / s
        }
    }
}

pub fn estimate(samples: &[f64]) -> Result<Estimate> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "estimate needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let m = mean(samples);
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate {
        value: m,
        stderr: (var / n).sqrt(),
        reps: samples.len(),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample variance with a delta-method standard error `sqrt((m4 - m2^2) / n)`.
pub fn variance_estimate(xs: &[f64]) -> Result<Estimate> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("variance needs at least 2 samples".into()));
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Ok(Estimate {
        value: m2 * n / (n - 1.0),
        stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        reps: xs.len(),
    })
}

/// Moment skewness `m3 / m2^(3/2)`.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Moment excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(max_{s <= t} B_s <= a) = 2 Phi(a / sqrt(t)) - 1` for standard Brownian motion, `a >= 0`.
pub fn running_max_below(a: f64, t: f64) -> f64 {
    erf(a / (2.0 * t).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KsOutcome {
    /// Sample is degenerate (zero spread); the test does not apply.
    NotApplicable,
    Tested { statistic: f64, p_value: f64 },
}

impl KsOutcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            KsOutcome::Tested { p_value, .. } => Some(*p_value),
            KsOutcome::NotApplicable => None,
        }
    }
}

/// KS distance between the sample and a normal with the sample's own mean and sd.
/// `None` for a degenerate sample.
pub fn lilliefors_statistic(samples: &[f64]) -> Option<f64> {
    let n = samples.len();
    let m = mean(samples);
    let sd = variance(samples).sqrt();
    if !(sd > 0.0) || !sd.is_finite() || sd <= 1e-14 * m.abs().max(1.0) {
        return None;
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - m) / sd).collect();
    z.sort_unstable_by(f64::total_cmp);
    let nf = n as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal_cdf(x);
            ((i + 1) as f64 / nf - c).max(c - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    Some(d)
}

/// Simulated null distribution of the Lilliefors statistic for sample size `n`.
#[derive(Debug, Clone)]
pub struct LillieforsNull {
    n: usize,
    sorted: Vec<f64>,
}

impl LillieforsNull {
    /// Each draw is a fresh Gaussian sample of size `n` with mean and variance re-estimated.
    pub fn simulate(n: usize, draws: usize, seed: u64) -> Result<Self> {
        if n < 50 {
            return Err(Error::InsufficientData(format!("KS test needs at least 50 samples, got {n}")));
        }
        if draws < 1000 {
            return Err(Error::config("bootstrap draws", "at least 1000 draws are required"));
        }
        let mut rng = ChaCha8Rng::from_seed(stream_key(seed, crate::rng::TAG_BOOTSTRAP, n as u64));
        let mut buf = vec![0.0; n];
        let mut sorted = Vec::with_capacity(draws);
        for _ in 0..draws {
            for x in buf.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            sorted.push(lilliefors_statistic(&buf).unwrap_or(0.0));
        }
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(LillieforsNull { n, sorted })
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// `(1 + #{null >= d}) / (draws + 1)`.
    pub fn p_value(&self, d: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x < d);
        let at_least = self.sorted.len() - below;
        (1 + at_least) as f64 / (self.sorted.len() + 1) as f64
    }

    pub fn test(&self, samples: &[f64]) -> Result<KsOutcome> {
        if samples.len() != self.n {
            return Err(Error::Mismatch(format!(
                "null simulated for n = {}, sample has {}",
                self.n,
                samples.len()
            )));
        }
        Ok(match lilliefors_statistic(samples) {
            None => KsOutcome::NotApplicable,
            Some(d) => KsOutcome::Tested {
                statistic: d,
                p_value: self.p_value(d),
            },
        })
    }
}

/// Default number of parametric-bootstrap draws for the KS p-value.
pub const KS_BOOTSTRAP_DRAWS: usize = 1000;

/// One-sample KS test against a normal with estimated mean and variance; the
/// p-value comes from a parametric bootstrap of the statistic's null law.
pub fn ks_normal_test(samples: &[f64], bootstrap_draws: usize, seed: u64) -> Result<KsOutcome> {
    if samples.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "KS test needs at least 50 samples, got {}",
            samples.len()
        )));
    }
    if lilliefors_statistic(samples).is_none() {
        return Ok(KsOutcome::NotApplicable);
    }
    LillieforsNull::simulate(samples.len(), bootstrap_draws, seed)?.test(samples)
}

/// Two-sample KS statistic `sup |F_a - F_b|` and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("two-sample KS needs non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub points: usize,
    /// Standard errors come from known per-point variances rather than residuals.
    pub known_variance: bool,
}

impl LinearFit {
    /// Upper end of the two-sided `level` confidence interval for the slope.
    pub fn slope_upper(&self, level: f64) -> f64 {
        let p = 0.5 + level / 2.0;
        let q = if self.known_variance {
            Normal::standard().inverse_cdf(p)
        } else {
            let df = self.points.saturating_sub(2) as f64;
            StudentsT::new(0.0, 1.0, df)
                .map(|t| t.inverse_cdf(p))
                .unwrap_or(f64::INFINITY)
        };
        self.slope + q * self.slope_stderr
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Mismatch("regression inputs differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (rss / (n - 2.0) / sxx).sqrt(),
        points: x.len(),
        known_variance: false,
    })
}

/// Weighted least squares with known per-point variances `var`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], var: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() != var.len() {
        return Err(Error::Mismatch("regression inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "weighted regression needs at least 2 points, got {}",
            x.len()
        )));
    }
    if var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::config("variance", "point variances must be positive and finite"));
    }
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, a)| w * (a - mx).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (a, b))| w * (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        slope_stderr: (1.0 / sxx).sqrt(),
        points: x.len(),
        known_variance: true,
    })
}
