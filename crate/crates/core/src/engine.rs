//! Monte Carlo experiments over independent replications.
//!
//! Every replication draws its drivers from streams keyed by `(seed, rep)`, and
//! all reductions run in replication order, so reports do not depend on the
//! number of workers.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::coupling::{
    covariance_at_lags, exact_gap_prob, first_gap, fit_decay, fit_gap_rate, gap_event, lagged_products,
    verify_coupling, DecaySeries, Sign,
};
use crate::error::{Error, Result};
use crate::exec::{map_replications, Execution};
use crate::flow::{apply_flow_map_with, Domain, FlowOptions, FlowRealization, StructuralCheck, Variant};
use crate::occupation::{clt_statistic, integrate, occupation_sample_at, OccupationSample, PeriodicFunction};
use crate::paths::{default_pad, DrivingEnsemble, TimeGrid};
use crate::rng::splitmix64;
use crate::stats::{
    estimate, excess_kurtosis, skewness, variance_estimate, Estimate, KsOutcome, LillieforsNull, LinearFit,
    KS_BOOTSTRAP_DRAWS,
};

/// Particles `-pad..=n + pad` around the window of unit intervals `1..=n`.
pub fn particle_domain(n: usize, pad: usize) -> Result<Domain> {
    Domain::new(-(pad as i64), (n + pad) as i64)
}

/// Seed for an independent sub-study.
pub fn sub_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

/// Samples the drivers for replication `rep` and runs the full map over `domain`.
pub fn simulate_flow(seed: u64, rep: u64, grid: TimeGrid, domain: Domain, bridge: bool) -> Result<FlowRealization> {
    let ensemble = DrivingEnsemble::sample(domain.lo(), domain.hi(), grid, seed, rep)?;
    apply_flow_map_with(
        &ensemble,
        domain,
        FlowOptions {
            variant: Variant::Full,
            bridge,
        },
    )
}

/// Occupation samples over the window `1..=n` at time `t`, one per replication.
#[allow(clippy::too_many_arguments)]
pub fn occupation_samples(
    seed: u64,
    reps: usize,
    grid: TimeGrid,
    n: usize,
    pad: usize,
    t: f64,
    f: &PeriodicFunction,
    offset: f64,
    bridge: bool,
    execution: Execution,
) -> Result<Vec<OccupationSample>> {
    let per_rep = occupation_samples_multi(seed, reps, grid, n, pad, t, &[f], offset, bridge, execution)?;
    Ok(per_rep.into_iter().map(|mut v| v.remove(0)).collect())
}

/// As [`occupation_samples`], evaluating several functions on each realization.
#[allow(clippy::too_many_arguments)]
pub fn occupation_samples_multi(
    seed: u64,
    reps: usize,
    grid: TimeGrid,
    n: usize,
    pad: usize,
    t: f64,
    fs: &[&PeriodicFunction],
    offset: f64,
    bridge: bool,
    execution: Execution,
) -> Result<Vec<Vec<OccupationSample>>> {
    let domain = particle_domain(n, pad)?;
    let index = grid.index_of(t)?;
    map_replications(reps as u64, execution, |rep| {
        let flow = simulate_flow(seed, rep, grid, domain, bridge)?;
        fs.iter()
            .map(|f| occupation_sample_at(&flow, (1, n as i64), index, f, offset))
            .collect()
    })
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

struct SigmaTerms {
    var0: Vec<f64>,
    sigma: Vec<f64>,
    /// Lagged products per replication, lags `0..=k_max`.
    per_rep: Vec<Vec<f64>>,
}

/// Per-replication `var0 + 2 sum_{k=1..k_max} cov_k` built from the pooled lagged products.
fn sigma_terms(samples: &[OccupationSample], k_max: usize) -> Result<SigmaTerms> {
    let lags: Vec<usize> = (0..=k_max).collect();
    let products = lagged_products(samples, &lags)?;
    let var0: Vec<f64> = products.per_rep.iter().map(|r| r[0]).collect();
    let sigma: Vec<f64> = products
        .per_rep
        .iter()
        .map(|r| r[0] + 2.0 * r[1..].iter().sum::<f64>())
        .collect();
    Ok(SigmaTerms {
        var0,
        sigma,
        per_rep: products.per_rep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub t: f64,
    pub n: usize,
    pub k_max: usize,
    pub function: String,
    /// `Y` per replication, in replication order.
    pub y: Vec<f64>,
    pub mean_a: Estimate,
    pub var_y: Estimate,
    pub var0: Estimate,
    /// `cov(A_0, A_k)` for `k = 1..=min(2 k_max, n - 1)`.
    pub covariances: DecaySeries,
    pub sigma_series: Estimate,
    /// Largest `|cov_hat| / stderr` over lags beyond `k_max`.
    pub tail_max_z: Option<f64>,
    pub ks: KsOutcome,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    /// All `Y` equal, so no distributional statistic applies.
    pub degenerate: bool,
    /// For constant `f = c`: `max_rep |Y(f) - c Y(1)|`.
    pub linearity_residual: Option<f64>,
}

impl CltReport {
    /// `|var(Y) - sigma_series| / combined stderr`.
    pub fn variance_gap_z(&self) -> f64 {
        self.var_y.z_distance(&self.sigma_series)
    }
}

struct CltCore {
    y: Vec<f64>,
    mean_a: Estimate,
    var0: Estimate,
    covariances: DecaySeries,
    sigma_series: Estimate,
    tail_max_z: Option<f64>,
}

fn clt_from_samples(samples: &[OccupationSample], n: usize, k_max: usize) -> Result<CltCore> {
    let width = n as f64;
    let per_rep_mean: Vec<f64> = samples
        .iter()
        .map(|s| s.values.iter().sum::<f64>() / width)
        .collect();
    let mean_a = estimate(&per_rep_mean)?;
    let y = samples
        .iter()
        .map(|s| clt_statistic(s, n, mean_a.value))
        .collect::<Result<Vec<f64>>>()?;
    let terms = sigma_terms(samples, k_max)?;
    let tail_lags: Vec<usize> = (1..=(2 * k_max).min(n - 1)).collect();
    let covariances = covariance_at_lags(samples, &tail_lags)?;
    let tail_max_z = covariances
        .lags
        .iter()
        .zip(covariances.cov_hat.iter().zip(&covariances.stderr))
        .filter(|(&k, (_, &se))| k > k_max && se > 0.0)
        .map(|(_, (c, se))| c.abs() / se)
        .fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.max(z))));
    Ok(CltCore {
        y,
        mean_a,
        var0: estimate(&terms.var0)?,
        covariances,
        sigma_series: estimate(&terms.sigma)?,
        tail_max_z,
    })
}

/// Distribution of `Y` at time `t` over the window `1..=n`.
pub fn run_clt(config: &ExperimentConfig) -> Result<CltReport> {
    config.validate()?;
    let grid = config.grid()?;
    let f = config.function.build();
    let pad = config.pad_for(config.horizon);
    let one = PeriodicFunction::one();
    let constant = f.constant_value();
    let fs: Vec<&PeriodicFunction> = if constant.is_some() { vec![&f, &one] } else { vec![&f] };
    let mut per_rep = occupation_samples_multi(
        config.seed,
        config.reps,
        grid,
        config.n,
        pad,
        config.t,
        &fs,
        config.offset,
        config.bridge,
        config.execution(),
    )?;
    let unit: Option<Vec<OccupationSample>> =
        constant.map(|_| per_rep.iter_mut().map(|v| v.pop().expect("two samples")).collect());
    let samples: Vec<OccupationSample> = per_rep.into_iter().map(|mut v| v.remove(0)).collect();
    let CltCore {
        y,
        mean_a,
        var0,
        covariances,
        sigma_series,
        tail_max_z,
    } = clt_from_samples(&samples, config.n, config.k_max)?;
    let var_y = variance_estimate(&y)?;
    let degenerate = y.iter().all(|&v| v == y[0]);
    let (ks, skew, kurt) = if degenerate {
        (KsOutcome::NotApplicable, None, None)
    } else {
        let ks = if y.len() >= 50 {
            LillieforsNull::simulate(y.len(), KS_BOOTSTRAP_DRAWS, config.seed)?.test(&y)?
        } else {
            KsOutcome::NotApplicable
        };
        (ks, finite_or_none(skewness(&y)), finite_or_none(excess_kurtosis(&y)))
    };
    let linearity_residual = match (constant, unit) {
        (Some(c), Some(unit)) => {
            let y_one = clt_from_samples(&unit, config.n, config.k_max)?.y;
            Some(
                y.iter()
                    .zip(&y_one)
                    .map(|(a, b)| (a - c * b).abs())
                    .fold(0.0, f64::max),
            )
        }
        _ => None,
    };
    Ok(CltReport {
        t: config.t,
        n: config.n,
        k_max: config.k_max,
        function: f.name().to_string(),
        y,
        mean_a,
        var_y,
        var0,
        covariances,
        sigma_series,
        tail_max_z,
        ks,
        skewness: skew,
        excess_kurtosis: kurt,
        degenerate,
        linearity_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub p: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    /// The interval `(a, b]`.
    pub interval: (f64, f64),
    pub function: String,
    pub rows: Vec<MomentRow>,
    /// Per order, the row with the largest estimate over `t > 0`.
    pub max_over_t: Vec<MomentRow>,
}

/// Grid index 0 and 11 evenly spaced indices in `(0, M]`.
pub fn moment_indices(steps: usize) -> Result<Vec<usize>> {
    if steps < 11 {
        return Err(Error::config("M", "at least 11 steps are needed for the moment t-grid"));
    }
    let mut idx: Vec<usize> = std::iter::once(0)
        .chain((1..=11).map(|i| ((i * steps) as f64 / 11.0).round() as usize))
        .collect();
    idx.dedup();
    Ok(idx)
}

/// `E |int_(0,n] f d mu_t|^p` on the moment t-grid.
pub fn run_moments(config: &ExperimentConfig) -> Result<MomentsReport> {
    config.validate()?;
    let grid = config.grid()?;
    let f = config.function.build();
    let pad = config.pad_for(config.horizon);
    let domain = particle_domain(config.n, pad)?;
    let indices = moment_indices(grid.steps())?;
    let (a, b) = (0.0, config.n as f64);
    let integrals = map_replications(config.reps as u64, config.execution(), |rep| {
        let flow = simulate_flow(config.seed, rep, grid, domain, config.bridge)?;
        indices
            .iter()
            .map(|&i| integrate(&flow, a, b, grid.time(i), &f))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut rows = Vec::new();
    for (col, &i) in indices.iter().enumerate() {
        for &p in &config.p {
            let xs: Vec<f64> = integrals.iter().map(|r| r[col].abs().powf(p)).collect();
            rows.push(MomentRow {
                t: grid.time(i),
                p,
                estimate: estimate(&xs)?,
            });
        }
    }
    let max_over_t = config
        .p
        .iter()
        .filter_map(|&p| {
            rows.iter()
                .filter(|r| r.p == p && r.t > 0.0)
                .max_by(|x, y| x.estimate.value.total_cmp(&y.estimate.value))
                .cloned()
        })
        .collect();
    Ok(MomentsReport {
        interval: (a, b),
        function: f.name().to_string(),
        rows,
        max_over_t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallTimeRow {
    pub t: f64,
    pub steps: usize,
    pub sigma2_over_t: Estimate,
    pub variance_over_t: Estimate,
    /// `sum_{k=1..k_max} |cov_hat_k| / t`.
    pub cov_abs_sum_over_t: f64,
}

impl SmallTimeRow {
    /// Covariance tail relative to the variance term.
    pub fn tail_ratio(&self) -> f64 {
        self.cov_abs_sum_over_t / self.variance_over_t.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallTimeReport {
    pub function: String,
    /// `f'(0)^2`.
    pub target: f64,
    pub rows: Vec<SmallTimeRow>,
}

impl SmallTimeReport {
    /// Distance to the target shrinks along the (decreasing) times.
    pub fn approaches_target(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| (w[1].sigma2_over_t.value - self.target).abs() < (w[0].sigma2_over_t.value - self.target).abs())
    }

    /// `|estimate / target - 1|` at the smallest time.
    pub fn final_relative_error(&self) -> Option<f64> {
        self.rows
            .last()
            .map(|r| (r.sigma2_over_t.value / self.target - 1.0).abs())
    }
}

/// `sigma^2_t(f) / t` with offset functionals, one grid of `M` steps over `[0, t]` per time.
pub fn run_small_time(config: &ExperimentConfig) -> Result<SmallTimeReport> {
    config.validate()?;
    let f = config.function.build();
    let derivative = f
        .derivative_at_0()
        .ok_or_else(|| Error::config("function", format!("{} has no derivative at 0", f.name())))?;
    if !f.is_odd() {
        return Err(Error::config("function", format!("{} is not odd", f.name())));
    }
    let mut rows = Vec::with_capacity(config.times.len());
    for (slot, &t) in config.times.iter().enumerate() {
        let grid = TimeGrid::new(t, config.steps)?;
        let pad = config.pad.unwrap_or_else(|| default_pad(t));
        let samples = occupation_samples(
            sub_seed(config.seed, slot as u64),
            config.reps,
            grid,
            config.n,
            pad,
            t,
            &f,
            config.offset,
            config.bridge,
            config.execution(),
        )?;
        let SigmaTerms { var0, sigma, per_rep } = sigma_terms(&samples, config.k_max)?;
        let scaled = |xs: &[f64]| -> Result<Estimate> {
            let e = estimate(xs)?;
            Ok(Estimate {
                value: e.value / t,
                stderr: e.stderr / t,
                reps: e.reps,
            })
        };
        let cov_abs_sum: f64 = (1..=config.k_max)
            .map(|c| (per_rep.iter().map(|r| r[c]).sum::<f64>() / per_rep.len() as f64).abs())
            .sum();
        rows.push(SmallTimeRow {
            t,
            steps: config.steps,
            sigma2_over_t: scaled(&sigma)?,
            variance_over_t: scaled(&var0)?,
            cov_abs_sum_over_t: cov_abs_sum / t,
        });
    }
    Ok(SmallTimeReport {
        function: f.name().to_string(),
        target: derivative * derivative,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProbabilityRow {
    pub j: u32,
    pub t: f64,
    pub steps: usize,
    pub bridge: bool,
    pub estimate: Estimate,
    /// Same replications on the grid with half the step.
    pub refined: Estimate,
    /// Paired difference `refined - estimate`.
    pub refinement_shift: Estimate,
    pub oracle: f64,
}

impl GapProbabilityRow {
    /// `|estimate - oracle|` in binomial standard errors.
    pub fn oracle_z(&self) -> f64 {
        let p = self.oracle;
        let se = (p * (1.0 - p) / self.estimate.reps as f64).sqrt();
        (self.estimate.value - p).abs() / se
    }

    /// Shift under grid refinement in units of the estimate's stderr.
    pub fn refinement_z(&self) -> f64 {
        (self.refined.value - self.estimate.value).abs() / self.estimate.stderr
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Monte Carlo `P(A^+_{0,j}(t))` on `M` steps, paired with the same drivers on `2M` steps.
pub fn gap_probability(
    seed: u64,
    j: u32,
    t: f64,
    steps: usize,
    reps: usize,
    bridge: bool,
    execution: Execution,
) -> Result<GapProbabilityRow> {
    let fine_grid = TimeGrid::new(t, 2 * steps)?;
    let hits = map_replications(reps as u64, execution, |rep| {
        let fine = DrivingEnsemble::sample(0, j as i64 + 1, fine_grid, seed, rep)?;
        let coarse = fine.coarsen(2)?;
        Ok((
            gap_event(&coarse, 0, j, t, Sign::Plus, bridge)?,
            gap_event(&fine, 0, j, t, Sign::Plus, bridge)?,
        ))
    })?;
    let coarse: Vec<f64> = hits.iter().map(|h| indicator(h.0)).collect();
    let fine: Vec<f64> = hits.iter().map(|h| indicator(h.1)).collect();
    let shift: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    Ok(GapProbabilityRow {
        j,
        t,
        steps,
        bridge,
        estimate: estimate(&coarse)?,
        refined: estimate(&fine)?,
        refinement_shift: estimate(&shift)?,
        oracle: exact_gap_prob(j, t)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionRow {
    pub n: u32,
    pub t: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionStudy {
    pub rows: Vec<UnionRow>,
    /// Fit of `ln(1 - P)` against `(sqrt N - sqrt 2) v 1`; slope is `-beta`.
    pub rate_fit: Option<LinearFit>,
}

/// `P(B^+_{0,N}(t))` for `N = 1..=n_max` from one set of replications.
pub fn gap_union_study(
    seed: u64,
    n_max: u32,
    t: f64,
    steps: usize,
    reps: usize,
    bridge: bool,
    execution: Execution,
) -> Result<UnionStudy> {
    let grid = TimeGrid::new(t, steps)?;
    let firsts = map_replications(reps as u64, execution, |rep| {
        let ensemble = DrivingEnsemble::sample(0, n_max as i64 + 1, grid, seed, rep)?;
        first_gap(&ensemble, 0, n_max, t, Sign::Plus, bridge)
    })?;
    let rows = (1..=n_max)
        .map(|n| {
            let xs: Vec<f64> = firsts.iter().map(|g| indicator(g.is_some_and(|j| j <= n))).collect();
            Ok(UnionRow {
                n,
                t,
                estimate: estimate(&xs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(u32, f64)> = rows.iter().map(|r| (r.n, r.estimate.value)).collect();
    Ok(UnionStudy {
        rate_fit: fit_gap_rate(&points).ok(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub j: u32,
    pub p: u32,
    pub sign: Sign,
    pub t: f64,
    /// Replications on which the gap event occurred.
    pub occurrences: usize,
    /// Of those, replications with bit-exact agreement beyond the gap.
    pub agreements: usize,
}

impl CouplingRow {
    pub fn all_agree(&self) -> bool {
        self.occurrences == self.agreements
    }
}

/// Compares the full map anchored at 0 with the one-sided maps started at `±p`,
/// on shared drivers over `[-w, w]`, `w = j_max + pad`, for `l = 0`.
pub fn coupling_study(
    seed: u64,
    js: &[u32],
    t: f64,
    steps: usize,
    reps: usize,
    pad: usize,
    execution: Execution,
) -> Result<Vec<CouplingRow>> {
    let j_max = *js.iter().max().ok_or_else(|| Error::config("j", "no gap sizes given"))?;
    let w = (j_max as usize + pad) as i64;
    let grid = TimeGrid::new(t, steps)?;
    let full_domain = Domain::centered(0, w);
    let keys: Vec<(u32, u32, Sign)> = js
        .iter()
        .flat_map(|&j| {
            [Sign::Plus, Sign::Minus]
                .into_iter()
                .flat_map(move |s| (0..=j).map(move |p| (j, p, s)))
        })
        .collect();
    let per_rep = map_replications(reps as u64, execution, |rep| {
        let ensemble = DrivingEnsemble::sample(-w, w, grid, seed, rep)?;
        let mut full: Option<FlowRealization> = None;
        let mut out = Vec::with_capacity(keys.len());
        for &(j, p, sign) in &keys {
            if !gap_event(&ensemble, 0, j, t, sign, false)? {
                out.push(None);
                continue;
            }
            if full.is_none() {
                full = Some(apply_flow_map_with(&ensemble, full_domain, FlowOptions::new(Variant::Full))?);
            }
            let (domain, variant) = match sign {
                Sign::Plus => (Domain::new(p as i64, w)?, Variant::Plus),
                Sign::Minus => (Domain::new(-w, -(p as i64))?, Variant::Minus),
            };
            let half = apply_flow_map_with(&ensemble, domain, FlowOptions::new(variant))?;
            out.push(Some(verify_coupling(full.as_ref().expect("built above"), &half, 0, j, p, sign)?));
        }
        Ok(out)
    })?;
    Ok(keys
        .iter()
        .enumerate()
        .map(|(c, &(j, p, sign))| {
            let outcomes = per_rep.iter().filter_map(|r| r[c]);
            let (occurrences, agreements) = outcomes.fold((0, 0), |(o, a), ok| (o + 1, a + usize::from(ok)));
            CouplingRow {
                j,
                p,
                sign,
                t,
                occurrences,
                agreements,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub t: f64,
    pub series: DecaySeries,
    /// Significance threshold in standard errors for lags entering the fit.
    pub z: f64,
    /// Regression of `ln|cov_hat|` on `sqrt(k)`.
    pub fit: Option<LinearFit>,
}

impl DecayStudy {
    /// Upper end of the one-sided `level` confidence bound on the slope.
    pub fn slope_upper(&self, level: f64) -> Option<f64> {
        self.fit.map(|f| f.slope_upper(2.0 * level - 1.0))
    }
}

/// Covariance decay of `A_k` at time `t` over lags `1..=k_max`.
#[allow(clippy::too_many_arguments)]
pub fn covariance_decay_study(
    seed: u64,
    grid: TimeGrid,
    t: f64,
    n: usize,
    pad: usize,
    k_max: usize,
    reps: usize,
    f: &PeriodicFunction,
    z: f64,
    bridge: bool,
    execution: Execution,
) -> Result<DecayStudy> {
    let samples = occupation_samples(seed, reps, grid, n, pad, t, f, 0.0, bridge, execution)?;
    let lags: Vec<usize> = (1..=k_max).collect();
    let series = covariance_at_lags(&samples, &lags)?;
    Ok(DecayStudy {
        t,
        fit: fit_decay(&series, z).ok(),
        series,
        z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub gap: Vec<GapProbabilityRow>,
    pub union: UnionStudy,
    pub coupling: Vec<CouplingRow>,
    pub decay: DecayStudy,
}

/// Gap points checked against the closed form.
pub const GAP_POINTS: [(u32, f64); 3] = [(0, 1.0), (2, 0.25), (5, 0.1)];
/// Horizon and union size for the gap-union and coupling studies.
pub const UNION_T: f64 = 0.25;
pub const UNION_N: u32 = 18;
pub const COUPLING_JS: [u32; 3] = [1, 2, 3];
/// Lags entering the decay fit must exceed this many standard errors.
pub const DECAY_Z: f64 = 4.0;

/// Gap probabilities, gap unions, coupling and covariance decay, all with `config.reps`.
pub fn run_mixing(config: &ExperimentConfig) -> Result<MixingReport> {
    config.validate()?;
    let exec = config.execution();
    let steps = config.steps;
    let gap = GAP_POINTS
        .iter()
        .enumerate()
        .map(|(slot, &(j, t))| gap_probability(sub_seed(config.seed, 100 + slot as u64), j, t, steps, config.reps, config.bridge, exec))
        .collect::<Result<Vec<_>>>()?;
    let union = gap_union_study(sub_seed(config.seed, 200), UNION_N, UNION_T, steps, config.reps, config.bridge, exec)?;
    let coupling = coupling_study(
        sub_seed(config.seed, 300),
        &COUPLING_JS,
        UNION_T,
        steps,
        config.reps,
        config.pad_for(UNION_T),
        exec,
    )?;
    let f = config.function.build();
    let decay = covariance_decay_study(
        sub_seed(config.seed, 400),
        config.grid()?,
        config.t,
        config.n,
        config.pad_for(config.horizon),
        config.k_max,
        config.reps,
        &f,
        DECAY_Z,
        config.bridge,
        exec,
    )?;
    Ok(MixingReport {
        gap,
        union,
        coupling,
        decay,
    })
}

/// One replication dumped on every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationDump {
    pub rep: u64,
    pub lo: i64,
    pub times: Vec<f64>,
    /// Time-major positions, `positions[i][k - lo]`.
    pub positions: Vec<Vec<f64>>,
    pub masses: Vec<Vec<u32>>,
    pub structure: StructuralCheck,
    pub occupation: OccupationSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub realizations: Vec<RealizationDump>,
}

impl SimulateReport {
    pub fn violations(&self) -> usize {
        self.realizations.iter().map(|r| r.structure.total()).sum()
    }
}

/// Full realizations over `-pad..=n + pad`, with their structural audit and `A_k` at `t`.
pub fn run_simulate(config: &ExperimentConfig) -> Result<SimulateReport> {
    config.validate()?;
    let grid = config.grid()?;
    let f = config.function.build();
    let domain = particle_domain(config.n, config.pad_for(config.horizon))?;
    let index = grid.index_of(config.t)?;
    let realizations = map_replications(config.reps as u64, config.execution(), |rep| {
        let flow = simulate_flow(config.seed, rep, grid, domain, config.bridge)?;
        let positions = (0..=grid.steps()).map(|i| flow.row(i).to_vec()).collect();
        let masses = (0..=grid.steps())
            .map(|i| {
                (domain.lo()..=domain.hi())
                    .map(|k| flow.mass_at_index(k, i))
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RealizationDump {
            rep,
            lo: domain.lo(),
            times: grid.times().collect(),
            positions,
            masses,
            structure: flow.structural_check(),
            occupation: occupation_sample_at(&flow, (1, config.n as i64), index, &f, config.offset)?,
        })
    })?;
    Ok(SimulateReport { realizations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum Report {
    Simulate(SimulateReport),
    Clt(CltReport),
    Moments(MomentsReport),
    Mixing(MixingReport),
    Smalltime(SmallTimeReport),
}

impl Report {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Report::Simulate(_) => ExperimentKind::Simulate,
            Report::Clt(_) => ExperimentKind::Clt,
            Report::Moments(_) => ExperimentKind::Moments,
            Report::Mixing(_) => ExperimentKind::Mixing,
            Report::Smalltime(_) => ExperimentKind::Smalltime,
        }
    }
}

/// Runs the experiment named in `config`.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    Ok(match config.experiment {
        ExperimentKind::Simulate => Report::Simulate(run_simulate(config)?),
        ExperimentKind::Clt => Report::Clt(run_clt(config)?),
        ExperimentKind::Moments => Report::Moments(run_moments(config)?),
        ExperimentKind::Mixing => Report::Mixing(run_mixing(config)?),
        ExperimentKind::Smalltime => Report::Smalltime(run_small_time(config)?),
    })
}
