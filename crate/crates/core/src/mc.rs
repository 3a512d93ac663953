//! Monte Carlo estimators over independent replicas, plus the statistical
//! checks built on them.
//!
//! Replicas run in parallel but results are collected in replica order and
//! reduced sequentially, so every number is independent of the thread count.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvError, EnvironmentSpec};
use crate::phase::PhaseReport;
use crate::rng::Stream;
use crate::sim::{
    self, closed_form_second_moment, dfs_evaluate, evaluate_field, first_at_depth, z_score, Conditional,
    EvalOptions, FunctionalSet, Precision, SimError, WeightField,
};

/// Default cap on `R·b^{n+1}` for a whole experiment.
pub const DEFAULT_TOTAL_BUDGET: u64 = 1 << 36;
/// Componentwise `|z|` accepted by the moment checks.
pub const Z_THRESHOLD: f64 = 5.0;
/// Bound on `E[|Z|⁴|ω] / E[|Z|²|ω]²` and the SE multiple allowed above it.
pub const RATIO4_BOUND: f64 = 3.0;
pub const RATIO4_SE_MULTIPLE: f64 = 3.0;
pub const RATIO4_MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, McError>;

/// Mean, spread and median of replica values.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    count: usize,
    mean: f64,
    m2: f64,
    median: f64,
    excluded: usize,
    values: Option<Vec<f64>>,
}

fn median_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

impl McEstimate {
    /// Welford accumulation in slice order. `keep` retains the values.
    pub fn from_values(values: &[f64], keep: bool) -> Self {
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &x) in values.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        Self {
            count: values.len(),
            mean: if values.is_empty() { f64::NAN } else { mean },
            m2,
            median: median_of(values),
            excluded: 0,
            values: keep.then(|| values.to_vec()),
        }
    }

    pub fn with_excluded(mut self, excluded: usize) -> Self {
        self.excluded = excluded;
        self
    }

    pub fn replicas(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn ci95(&self) -> (f64, f64) {
        let h = 1.96 * self.std_error();
        (self.mean - h, self.mean + h)
    }

    /// `NaN` after merging estimates that did not keep their values.
    pub fn median(&self) -> f64 {
        self.median
    }

    /// Replicas dropped because the functional was undefined (e.g. `Z_n = 0`).
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// Pooled estimate of two independent runs.
    pub fn merge(&self, other: &McEstimate) -> McEstimate {
        let n = self.count + other.count;
        let (mean, m2) = if self.count == 0 {
            (other.mean, other.m2)
        } else if other.count == 0 {
            (self.mean, self.m2)
        } else {
            let (na, nb) = (self.count as f64, other.count as f64);
            let d = other.mean - self.mean;
            (
                self.mean + d * nb / (na + nb),
                self.m2 + other.m2 + d * d * na * nb / (na + nb),
            )
        };
        let values = match (&self.values, &other.values) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect::<Vec<_>>()),
            _ => None,
        };
        McEstimate {
            count: n,
            mean,
            m2,
            median: values.as_deref().map_or(f64::NAN, median_of),
            excluded: self.excluded + other.excluded,
            values,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Functional {
    /// `ln|Z_n| / n`.
    FreeEnergy,
    /// `ln E[|Z_n|² | ω] / (2n)`.
    ConditionalFreeEnergy,
    /// `|Z_n|^α`.
    AbsMoment(f64),
    /// `E[|Z_n|⁴|ω] / E[|Z_n|²|ω]²` with this many phase resamples.
    Ratio4 { phase_resamples: usize },
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::FreeEnergy => "free-energy".into(),
            Functional::ConditionalFreeEnergy => "conditional-free-energy".into(),
            Functional::AbsMoment(a) => format!("abs-moment:{a}"),
            Functional::Ratio4 { .. } => "ratio4".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub env: EnvironmentSpec,
    pub n: u32,
    pub replicas: usize,
    pub seed: u64,
    pub functional: Functional,
    pub node_budget: u64,
    pub total_budget: u64,
    pub precision: Precision,
    /// Keep per-replica values (needed for medians after merging).
    pub keep_values: bool,
}

impl ExperimentPlan {
    pub fn new(env: EnvironmentSpec, n: u32, replicas: usize, seed: u64, functional: Functional) -> Self {
        Self {
            env,
            n,
            replicas,
            seed,
            functional,
            node_budget: sim::DEFAULT_NODE_BUDGET,
            total_budget: DEFAULT_TOTAL_BUDGET,
            precision: Precision::Auto,
            keep_values: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(McError::InvalidPlan("depth must be at least 1".into()));
        }
        if self.replicas == 0 {
            return Err(McError::InvalidPlan("need at least one replica".into()));
        }
        sim::check_budget(self.env.b(), self.n, self.node_budget)?;
        let per_tree = sim::pow_u128(self.env.b(), self.n + 1);
        let inner = match self.functional {
            Functional::Ratio4 { phase_resamples } => phase_resamples as u128,
            _ => 1,
        };
        if per_tree.saturating_mul(self.replicas as u128).saturating_mul(inner) > u128::from(self.total_budget) {
            return Err(McError::InvalidPlan(format!(
                "{} replicas of depth {} exceed the total budget {}",
                self.replicas, self.n, self.total_budget
            )));
        }
        Ok(())
    }

    pub fn stream(&self, replica: usize) -> Stream {
        Stream::new(self.seed, replica as u64)
    }

    fn eval_options(&self, conditional: Conditional) -> EvalOptions {
        EvalOptions {
            node_budget: self.node_budget,
            precision: self.precision,
            conditional,
            ..EvalOptions::default()
        }
    }

    /// Evaluates every replica in parallel, in replica order.
    fn per_replica(&self, conditional: Conditional) -> Result<Vec<FunctionalSet>> {
        self.validate()?;
        let opts = self.eval_options(conditional);
        (0..self.replicas)
            .into_par_iter()
            .map(|r| dfs_evaluate(&self.env, self.n, &self.stream(r), &opts))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(McError::from)
    }
}

fn estimate_from(values: impl Iterator<Item = f64>, keep: bool) -> McEstimate {
    let mut kept = Vec::new();
    let mut excluded = 0;
    for v in values {
        if v.is_finite() {
            kept.push(v);
        } else {
            excluded += 1;
        }
    }
    McEstimate::from_values(&kept, keep).with_excluded(excluded)
}

/// `ln|Z_n|/n` over replicas; replicas with `Z_n = 0` are excluded and counted.
pub fn estimate_free_energy(plan: &ExperimentPlan) -> Result<McEstimate> {
    let n = f64::from(plan.n);
    let sets = plan.per_replica(Conditional::Skip)?;
    Ok(estimate_from(sets.iter().map(|fs| fs.ln_abs_z() / n), plan.keep_values))
}

/// `ln E[|Z_n|²|ω] / (2n)` over replicas; needs an independent law.
pub fn estimate_w_free_energy(plan: &ExperimentPlan) -> Result<McEstimate> {
    let n = f64::from(plan.n);
    let sets = plan.per_replica(Conditional::Required)?;
    Ok(estimate_from(
        sets.iter().map(|fs| fs.ln_w_cond().unwrap_or(f64::NAN) / (2.0 * n)),
        plan.keep_values,
    ))
}

/// `|Z_n|^α` over replicas.
pub fn estimate_abs_moment(plan: &ExperimentPlan, alpha: f64) -> Result<McEstimate> {
    let sets = plan.per_replica(Conditional::Skip)?;
    let values: Vec<f64> = sets.iter().map(|fs| (alpha * fs.ln_abs_z()).exp()).collect();
    Ok(McEstimate::from_values(&values, plan.keep_values))
}

/// Dispatches on `plan.functional`. For [`Functional::Ratio4`] the estimate
/// pools the per-`ω` ratios.
pub fn run(plan: &ExperimentPlan) -> Result<McEstimate> {
    match plan.functional {
        Functional::FreeEnergy => estimate_free_energy(plan),
        Functional::ConditionalFreeEnergy => estimate_w_free_energy(plan),
        Functional::AbsMoment(a) => estimate_abs_moment(plan, a),
        Functional::Ratio4 { phase_resamples } => {
            let rep = ratio4(
                &plan.env,
                plan.n,
                plan.replicas,
                phase_resamples,
                plan.seed,
                &Ratio4Options {
                    node_budget: plan.node_budget,
                    ..Ratio4Options::default()
                },
            )?;
            let ratios: Vec<f64> = rep.samples.iter().map(|s| s.ratio).collect();
            Ok(McEstimate::from_values(&ratios, plan.keep_values))
        }
    }
}

/// A moment identity compared against its closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCheck {
    pub name: &'static str,
    pub replicas: usize,
    pub empirical: Complex64,
    pub std_error: Complex64,
    pub theoretical: Complex64,
    /// Largest componentwise z-score.
    pub z: f64,
    pub pass: bool,
}

impl MomentCheck {
    fn build(name: &'static str, re: &[f64], im: Option<&[f64]>, theoretical: Complex64) -> Self {
        let a = McEstimate::from_values(re, false);
        let b = im.map(|v| McEstimate::from_values(v, false));
        let scale = theoretical.norm();
        let za = z_score(a.mean() - theoretical.re, a.std_error(), scale);
        let zb = b
            .as_ref()
            .map_or(0.0, |b| z_score(b.mean() - theoretical.im, b.std_error(), scale));
        let z = za.max(zb);
        Self {
            name,
            replicas: re.len(),
            empirical: Complex64::new(a.mean(), b.as_ref().map_or(0.0, |b| b.mean())),
            std_error: Complex64::new(a.std_error(), b.as_ref().map_or(0.0, |b| b.std_error())),
            theoretical,
            z,
            pass: z <= Z_THRESHOLD,
        }
    }
}

fn verify_plan(env: &EnvironmentSpec, n: u32, replicas: usize, seed: u64) -> Result<ExperimentPlan> {
    if replicas < 2 {
        return Err(McError::InvalidPlan("need at least 2 replicas".into()));
    }
    Ok(ExperimentPlan::new(env.clone(), n, replicas, seed, Functional::FreeEnergy))
}

/// `E Z_n = (b E ξ)^n`.
pub fn verify_mean(env: &EnvironmentSpec, n: u32, replicas: usize, seed: u64) -> Result<MomentCheck> {
    let plan = verify_plan(env, n, replicas, seed)?;
    let sets = plan.per_replica(Conditional::Skip)?;
    let re: Vec<f64> = sets.iter().map(|fs| fs.z().re).collect();
    let im: Vec<f64> = sets.iter().map(|fs| fs.z().im).collect();
    let target = (env.mean_xi() * f64::from(env.b())).powu(n);
    Ok(MomentCheck::build("mean", &re, Some(&im), target))
}

/// `E|Z_n|²` against the closed form.
pub fn verify_second_moment(env: &EnvironmentSpec, n: u32, replicas: usize, seed: u64) -> Result<MomentCheck> {
    let plan = verify_plan(env, n, replicas, seed)?;
    let sets = plan.per_replica(Conditional::Skip)?;
    let sq: Vec<f64> = sets.iter().map(|fs| fs.z().norm_sqr()).collect();
    let target = closed_form_second_moment(env, n)?.value;
    Ok(MomentCheck::build("second-moment", &sq, None, Complex64::new(target, 0.0)))
}

/// `M_n = Z_n / (b E ξ)^n` at one depth: sample mean and second moment.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleSummary {
    pub n: u32,
    pub mean: MomentCheck,
    pub second: McEstimate,
}

/// Checks `E M_n = 1` and reports `E|M_n|²`.
pub fn martingale_summary(env: &EnvironmentSpec, n: u32, replicas: usize, seed: u64) -> Result<MartingaleSummary> {
    let plan = verify_plan(env, n, replicas, seed)?;
    let sets = plan.per_replica(Conditional::Skip)?;
    let ms: Vec<Complex64> = sets
        .iter()
        .map(|fs| sim::normalize(fs, env).and_then(|f| f.m_norm()))
        .collect::<std::result::Result<_, _>>()?;
    let re: Vec<f64> = ms.iter().map(|m| m.re).collect();
    let im: Vec<f64> = ms.iter().map(|m| m.im).collect();
    let sq: Vec<f64> = ms.iter().map(|m| m.norm_sqr()).collect();
    Ok(MartingaleSummary {
        n,
        mean: MomentCheck::build("martingale-mean", &re, Some(&im), Complex64::new(1.0, 0.0)),
        second: McEstimate::from_values(&sq, false),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Ratio4Options {
    pub node_budget: u64,
    /// Divide by the exact `E[|Z|²|ω]` from the recursion rather than its
    /// empirical counterpart.
    pub exact_denominator: bool,
}

impl Default for Ratio4Options {
    fn default() -> Self {
        Self {
            node_budget: sim::DEFAULT_NODE_BUDGET,
            exact_denominator: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio4Sample {
    pub replica: usize,
    pub ratio: f64,
    pub std_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ratio4Report {
    pub samples: Vec<Ratio4Sample>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Frozen radii with phases drawn from one epoch.
struct PhaseResample<'a> {
    env: &'a EnvironmentSpec,
    stream: Stream,
    radii: &'a [f64],
    epoch: u32,
}

impl WeightField for PhaseResample<'_> {
    #[inline]
    fn weight(&self, node: u64, _depth: u32) -> Complex64 {
        self.env.phase_factor_at(&self.stream, node, self.epoch) * self.radii[node as usize]
    }
}

/// `E[|Z_n|⁴|ω] / E[|Z_n|²|ω]²` for `omega_replicas` radius fields, each by
/// resampling the phases `phase_resamples` times.
pub fn ratio4(
    env: &EnvironmentSpec,
    n: u32,
    omega_replicas: usize,
    phase_resamples: usize,
    seed: u64,
    opts: &Ratio4Options,
) -> Result<Ratio4Report> {
    if !env.is_independent() {
        return Err(SimError::CoupledLaw.into());
    }
    if phase_resamples < RATIO4_MIN_RESAMPLES {
        return Err(McError::InvalidPlan(format!(
            "ratio4 needs at least {RATIO4_MIN_RESAMPLES} phase resamples"
        )));
    }
    sim::check_budget(env.b(), n, opts.node_budget)?;
    let b = env.b();
    let damping = env.phase_mean()?.norm();
    let nodes = first_at_depth(b, n + 1) as usize;
    let eval = EvalOptions {
        node_budget: opts.node_budget,
        ..EvalOptions::default()
    };
    let mut samples = Vec::with_capacity(omega_replicas);
    for k in 0..omega_replicas {
        let stream = Stream::new(seed, k as u64);
        let radii: Vec<f64> = (0..nodes as u64)
            .map(|v| if v == 0 { 1.0 } else { env.radius_at(&stream, v, 0) })
            .collect();
        let frozen = PhaseResample {
            env,
            stream,
            radii: &radii,
            epoch: 0,
        };
        let w_opts = EvalOptions {
            conditional: Conditional::Required,
            ..eval
        };
        let ln_w = evaluate_field(&frozen, b, n, Some(damping), &w_opts)?
            .ln_w_cond()
            .expect("required");
        let z_opts = EvalOptions {
            conditional: Conditional::Skip,
            ..eval
        };
        // |Z|²/W per phase draw
        let ys: Vec<f64> = (1..=phase_resamples as u32)
            .into_par_iter()
            .map(|j| {
                let field = PhaseResample {
                    env,
                    stream,
                    radii: &radii,
                    epoch: j,
                };
                evaluate_field(&field, b, n, Some(damping), &z_opts).map(|fs| (2.0 * fs.ln_abs_z() - ln_w).exp())
            })
            .collect::<std::result::Result<_, _>>()?;
        let y2: Vec<f64> = ys.iter().map(|y| y * y).collect();
        let e2 = McEstimate::from_values(&y2, false);
        let (ratio, se) = if opts.exact_denominator {
            (e2.mean(), e2.std_error())
        } else {
            let e1 = McEstimate::from_values(&ys, false);
            let (a, d) = (e2.mean(), e1.mean());
            let m = ys.len() as f64;
            let cov = ys
                .iter()
                .zip(&y2)
                .map(|(y, q)| (q - a) * (y - d))
                .sum::<f64>()
                / (m - 1.0);
            // delta method for a/d²
            let (ga, gd) = (1.0 / (d * d), -2.0 * a / (d * d * d));
            let var = ga * ga * e2.variance() + gd * gd * e1.variance() + 2.0 * ga * gd * cov;
            (a / (d * d), (var.max(0.0) / m).sqrt())
        };
        samples.push(Ratio4Sample {
            replica: k,
            ratio,
            std_error: se,
            pass: ratio <= RATIO4_BOUND + RATIO4_SE_MULTIPLE * se,
        });
    }
    let max_ratio = samples.iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
    let pass = samples.iter().all(|s| s.pass);
    Ok(Ratio4Report {
        samples,
        max_ratio,
        pass,
    })
}

/// Paley–Zygmund lower bound on `P(X > θ E X)` from `E X` and `E X^ν`.
pub fn paley_zygmund_bound(mean_x: f64, mean_x_nu: f64, nu: f64, theta: f64) -> Result<f64> {
    if !(nu > 1.0) || !nu.is_finite() {
        return Err(McError::Domain(format!("nu = {nu} must exceed 1")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(McError::Domain(format!("theta = {theta} must lie in (0, 1)")));
    }
    if !(mean_x > 0.0) || !(mean_x_nu > 0.0) || !mean_x.is_finite() || !mean_x_nu.is_finite() {
        return Err(McError::Domain("moments must be finite and positive".into()));
    }
    let ln_ratio = mean_x_nu.ln() - nu * mean_x.ln();
    Ok(((nu / (nu - 1.0)) * (1.0 - theta).ln() - ln_ratio / (nu - 1.0)).exp())
}

/// Empirical tail `P(X > θ mean)` and the bound from the same sample.
pub fn paley_zygmund_empirical(values: &[f64], nu: f64, theta: f64) -> Result<(f64, f64)> {
    if values.iter().any(|&x| !(x >= 0.0)) {
        return Err(McError::Domain("values must be nonnegative".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mean_nu = values.iter().map(|x| x.powf(nu)).sum::<f64>() / n;
    let bound = paley_zygmund_bound(mean, mean_nu, nu, theta)?;
    let tail = values.iter().filter(|&&x| x > theta * mean).count() as f64 / n;
    Ok((tail, bound))
}

/// Outcome of checking the Paley–Zygmund bound on random empirical distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct PzSuiteReport {
    pub cases: usize,
    pub checks: usize,
    pub violations: usize,
    /// Smallest `tail - bound` seen.
    pub worst_margin: f64,
}

pub const PZ_THETAS: [f64; 3] = [0.1, 0.5, 0.9];
pub const PZ_NUS: [f64; 3] = [1.5, 2.0, 3.0];
/// Rounding slack allowed when the bound is attained.
pub const PZ_SLACK: f64 = 1e-12;

/// Draws `cases` bounded nonnegative samples of random size and shape and
/// checks the bound for every `θ` in [`PZ_THETAS`] and `ν` in [`PZ_NUS`].
pub fn pz_property_suite(cases: usize, seed: u64) -> PzSuiteReport {
    use crate::rng::Channel;
    let stream = Stream::new(seed, 0x505a);
    let mut checks = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for c in 0..cases as u64 {
        let [u, v] = stream.uniforms(c, Channel::Aux, 0);
        let size = 1 + (u * 200.0) as u64;
        // skew exponent in [0.2, 5] and a share of exact zeros
        let shape = 0.2 + 4.8 * v;
        let zeros = stream.uniforms(c, Channel::Aux, 1)[0] * 0.5;
        let xs: Vec<f64> = (0..size)
            .map(|i| {
                let [a, b] = stream.uniforms(c * 256 + i, Channel::Aux, 2);
                if a < zeros {
                    0.0
                } else {
                    10.0 * b.powf(shape)
                }
            })
            .collect();
        if xs.iter().all(|&x| x == 0.0) {
            continue;
        }
        for &theta in &PZ_THETAS {
            for &nu in &PZ_NUS {
                let (tail, bound) = paley_zygmund_empirical(&xs, nu, theta).expect("valid sample");
                checks += 1;
                worst = worst.min(tail - bound);
                if bound > tail + PZ_SLACK {
                    violations += 1;
                }
            }
        }
    }
    PzSuiteReport {
        cases,
        checks,
        violations,
        worst_margin: worst,
    }
}

/// Sample of `E|ξ|^{-τ}` with a divergence heuristic.
#[derive(Clone, Debug, PartialEq)]
pub struct TauReport {
    pub estimate: McEstimate,
    /// Slope of log running mean against log sample size over the second half of the run.
    pub tail_slope: f64,
    pub suspect_divergence: bool,
}

/// Running means that keep growing with the sample size suggest `E|ξ|^{-τ} = ∞`.
/// This is evidence, not proof.
pub fn tau_moment_check(env: &EnvironmentSpec, tau: f64, samples: usize, seed: u64) -> Result<TauReport> {
    if samples < 64 {
        return Err(McError::InvalidPlan("need at least 64 samples".into()));
    }
    let stream = Stream::new(seed, u64::MAX);
    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| env.sample_at(&stream, i, 0, 0).norm().powf(-tau))
        .collect();
    let checkpoints: Vec<usize> = (0..5).map(|k| samples >> (4 - k)).collect();
    let mut pts = Vec::new();
    let mut sum = 0.0;
    let mut c = 0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if c < checkpoints.len() && i + 1 == checkpoints[c] {
            pts.push((((i + 1) as f64).ln(), (sum / (i + 1) as f64).ln()));
            c += 1;
        }
    }
    let k = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / k,
        pts.iter().map(|p| p.1).sum::<f64>() / k,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let tail_slope = if sxx > 0.0 && sxy.is_finite() { sxy / sxx } else { f64::NAN };
    let estimate = McEstimate::from_values(&values, false);
    Ok(TauReport {
        suspect_divergence: !estimate.mean().is_finite() || tail_slope > 0.1,
        estimate,
        tail_slope,
    })
}

/// One line of experiment output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub model: String,
    pub b: u32,
    pub beta: f64,
    pub gamma: f64,
    pub n: u32,
    pub replicas: usize,
    pub seed: u64,
    pub functional: String,
    pub mean: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub predicted: f64,
    pub region: String,
    pub excluded_count: usize,
}

impl ExperimentRow {
    pub fn new(plan: &ExperimentPlan, est: &McEstimate, report: Option<&PhaseReport>) -> Self {
        let (beta, gamma) = plan.env.beta_gamma().unwrap_or((f64::NAN, f64::NAN));
        let (ci_lo, ci_hi) = est.ci95();
        let predicted = match (plan.functional, report) {
            // the conditional second moment has the same exponential rate as |Z_n|
            (Functional::FreeEnergy | Functional::ConditionalFreeEnergy, Some(r)) => r.predicted_f,
            _ => f64::NAN,
        };
        Self {
            model: plan.env.label().to_string(),
            b: plan.env.b(),
            beta,
            gamma,
            n: plan.n,
            replicas: plan.replicas,
            seed: plan.seed,
            functional: plan.functional.label(),
            mean: est.mean(),
            se: est.std_error(),
            ci_lo,
            ci_hi,
            predicted,
            region: report.map_or_else(String::new, |r| r.region.to_string()),
            excluded_count: est.excluded(),
        }
    }
}

/// Writes rows with a header line.
pub fn write_rows<W: Write>(out: W, rows: &[ExperimentRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
