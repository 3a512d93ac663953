//! Exact evaluation of the partition function and its companions on one
//! realization of the weighted tree.
//!
//! Nodes use heap numbering: the root is 0 and child `i` of `v` is
//! `v·b + 1 + i`. A node's weight depends only on its index and the
//! random stream, so every traversal sees the same environment.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{EnvError, EnvironmentSpec};
use crate::numerics::{exponent_of, log_add_exp, pow2, Accumulator, CompensatedSum, DoubleDouble};
use crate::rng::Stream;

pub const DEFAULT_NODE_BUDGET: u64 = 1 << 24;
/// Largest leaf count accepted by [`brute_force_evaluate`] (`3^8`).
pub const BRUTE_FORCE_MAX_LEAVES: u64 = 6561;
/// Depth above which [`Precision::Auto`] switches to double-double accumulators.
pub const EXTENDED_PRECISION_DEPTH: u32 = 16;

const RESCALE_EXPONENT: i32 = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("tree of depth {depth} with branching {b} exceeds the node budget {budget}")]
    BudgetExceeded { b: u32, depth: u32, budget: u64 },
    #[error("the conditional second moment needs independent radius and phase")]
    CoupledLaw,
    #[error("E xi = 0; the normalized martingale is undefined")]
    ZeroMeanEnvironment,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// `b^k`, saturating.
pub fn pow_u128(b: u32, k: u32) -> u128 {
    u128::from(b).checked_pow(k).unwrap_or(u128::MAX)
}

/// Heap index of the first node at `depth`.
pub fn first_at_depth(b: u32, depth: u32) -> u64 {
    ((pow_u128(b, depth) - 1) / u128::from(b - 1)) as u64
}

/// Fails when `b^{n+1}` exceeds `budget`.
pub fn check_budget(b: u32, n: u32, budget: u64) -> Result<()> {
    if pow_u128(b, n + 1) > u128::from(budget) {
        return Err(SimError::BudgetExceeded { b, depth: n, budget });
    }
    Ok(())
}

/// Source of the weight attached to each node.
pub trait WeightField: Sync {
    fn weight(&self, node: u64, depth: u32) -> Complex64;
}

/// Weights drawn from an environment on a random stream.
#[derive(Clone, Copy, Debug)]
pub struct Realization<'a> {
    env: &'a EnvironmentSpec,
    stream: Stream,
    radius_epoch: u32,
    phase_epoch: u32,
    fresh: Option<(u32, u32)>,
}

impl<'a> Realization<'a> {
    pub fn new(env: &'a EnvironmentSpec, stream: Stream) -> Self {
        Self {
            env,
            stream,
            radius_epoch: 0,
            phase_epoch: 0,
            fresh: None,
        }
    }

    pub fn with_epochs(mut self, radius_epoch: u32, phase_epoch: u32) -> Self {
        self.radius_epoch = radius_epoch;
        self.phase_epoch = phase_epoch;
        self
    }

    /// Redraws every weight at `depth` from epoch `epoch`, leaving the rest untouched.
    pub fn with_fresh_generation(mut self, depth: u32, epoch: u32) -> Self {
        self.fresh = Some((depth, epoch));
        self
    }
}

impl WeightField for Realization<'_> {
    #[inline]
    fn weight(&self, node: u64, depth: u32) -> Complex64 {
        match self.fresh {
            Some((d, e)) if d == depth => self.env.sample_at(&self.stream, node, e, e),
            _ => self.env.sample_at(&self.stream, node, self.radius_epoch, self.phase_epoch),
        }
    }
}

/// Explicit weights indexed by heap node; index 0 is ignored.
#[derive(Clone, Debug)]
pub struct FixedWeights(pub Vec<Complex64>);

impl WeightField for FixedWeights {
    fn weight(&self, node: u64, _depth: u32) -> Complex64 {
        self.0[node as usize]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    /// Double-double beyond depth [`EXTENDED_PRECISION_DEPTH`].
    #[default]
    Auto,
    Double,
    Extended,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Conditional {
    /// Computed when the law is independent.
    #[default]
    Auto,
    /// Error on coupled laws.
    Required,
    Skip,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub node_budget: u64,
    pub precision: Precision,
    pub conditional: Conditional,
    #[doc(hidden)]
    pub corrupt_pair_term: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            node_budget: DEFAULT_NODE_BUDGET,
            precision: Precision::Auto,
            conditional: Conditional::Auto,
            corrupt_pair_term: false,
        }
    }
}

/// `2^k` over the whole exponent range, flushing to 0 or ∞ outside it.
fn two_pow(k: i32) -> f64 {
    if (-1022..=1023).contains(&k) {
        pow2(k)
    } else if k < 0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Values of one tree evaluation. Linear quantities are stored as
/// `mantissa·2^scale`, quadratic ones as `mantissa·4^scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSet {
    depth: u32,
    scale: i32,
    z: Complex64,
    z_abs: f64,
    z_abs2: f64,
    t_damped: f64,
    w_cond: Option<f64>,
    m_norm: Option<Complex64>,
    x_norm: Option<f64>,
}

impl FunctionalSet {
    /// Unscaled values, as produced by brute force.
    pub fn from_values(depth: u32, z: Complex64, z_abs: f64, z_abs2: f64, t_damped: f64, w_cond: Option<f64>) -> Self {
        Self {
            depth,
            scale: 0,
            z,
            z_abs,
            z_abs2,
            t_damped,
            w_cond,
            m_norm: None,
            x_norm: None,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Binary exponent shared by the linear quantities.
    pub fn log2_scale(&self) -> i32 {
        self.scale
    }

    fn lin(&self, m: f64) -> f64 {
        let s = self.scale;
        m * two_pow(s / 2) * two_pow(s - s / 2)
    }

    fn quad(&self, m: f64) -> f64 {
        self.lin(self.lin(m))
    }

    fn ln_lin(&self, m: f64) -> f64 {
        m.ln() + f64::from(self.scale) * std::f64::consts::LN_2
    }

    fn ln_quad(&self, m: f64) -> f64 {
        m.ln() + 2.0 * f64::from(self.scale) * std::f64::consts::LN_2
    }

    /// `Z_n`.
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.lin(self.z.re), self.lin(self.z.im))
    }

    /// `Z_n(|ξ|)`.
    pub fn z_abs(&self) -> f64 {
        self.lin(self.z_abs)
    }

    /// `Z_n(|ξ|²)`.
    pub fn z_abs2(&self) -> f64 {
        self.quad(self.z_abs2)
    }

    /// `|E[Z_n | ω]|`.
    pub fn t_damped(&self) -> f64 {
        self.lin(self.t_damped)
    }

    /// `E[|Z_n|² | ω]`; absent for coupled laws.
    pub fn w_cond(&self) -> Option<f64> {
        self.w_cond.map(|w| self.quad(w))
    }

    pub fn ln_abs_z(&self) -> f64 {
        self.ln_lin(self.z.norm())
    }

    pub fn arg_z(&self) -> f64 {
        self.z.arg()
    }

    pub fn ln_z_abs(&self) -> f64 {
        self.ln_lin(self.z_abs)
    }

    pub fn ln_z_abs2(&self) -> f64 {
        self.ln_quad(self.z_abs2)
    }

    pub fn ln_t_damped(&self) -> f64 {
        self.ln_lin(self.t_damped)
    }

    pub fn ln_w_cond(&self) -> Option<f64> {
        self.w_cond.map(|w| self.ln_quad(w))
    }

    /// `Z_n / (b E ξ)^n`, set by [`normalize`].
    pub fn m_norm(&self) -> Result<Complex64> {
        self.m_norm.ok_or(SimError::ZeroMeanEnvironment)
    }

    /// `|Z_n|² / E|Z_n|²`, set by [`normalize`].
    pub fn x_norm(&self) -> Option<f64> {
        self.x_norm
    }
}

struct Ctx<'a, F> {
    field: &'a F,
    b: u32,
    n: u32,
    damping: f64,
    with_w: bool,
    corrupt: bool,
}

#[derive(Clone, Copy)]
struct State<A> {
    zr: A,
    zi: A,
    a: f64,
    bsq: f64,
    t: f64,
    w: A,
    s1: A,
    s2: A,
    shift: i32,
}

impl<A: Accumulator> State<A> {
    fn leaf() -> Self {
        let one = A::from_f64(1.0);
        Self {
            zr: one,
            zi: A::ZERO,
            a: 1.0,
            bsq: 1.0,
            t: 1.0,
            w: one,
            s1: A::ZERO,
            s2: A::ZERO,
            shift: 0,
        }
    }

    fn empty(shift: i32) -> Self {
        Self {
            zr: A::ZERO,
            zi: A::ZERO,
            a: 0.0,
            bsq: 0.0,
            t: 0.0,
            w: A::ZERO,
            s1: A::ZERO,
            s2: A::ZERO,
            shift,
        }
    }

    /// Multiplies linear parts by `2^k` and quadratic parts by `4^k`.
    fn rescale(&mut self, k: i32) {
        let l = two_pow(k);
        let q1 = two_pow(k);
        self.zr = self.zr.scale(l);
        self.zi = self.zi.scale(l);
        self.a *= l;
        self.t *= l;
        self.s1 = self.s1.scale(l);
        self.bsq = self.bsq * q1 * q1;
        self.w = self.w.scale(q1).scale(q1);
        self.s2 = self.s2.scale(q1).scale(q1);
    }
}

fn visit<A: Accumulator, F: WeightField>(ctx: &Ctx<'_, F>, node: u64, depth: u32) -> State<A> {
    if depth == ctx.n {
        return State::leaf();
    }
    let mut acc: Option<State<A>> = None;
    for i in 0..u64::from(ctx.b) {
        let c = node * u64::from(ctx.b) + 1 + i;
        let xi = ctx.field.weight(c, depth + 1);
        let ch = visit::<A, F>(ctx, c, depth + 1);
        let s = acc.get_or_insert_with(|| State::empty(ch.shift));
        if ch.shift > s.shift {
            s.rescale(s.shift - ch.shift);
            s.shift = ch.shift;
        }
        let f = two_pow(ch.shift - s.shift);
        let r = xi.norm();
        let r2 = xi.norm_sqr();
        s.zr = s.zr.add(ch.zr.mul_f64(xi.re).sub(ch.zi.mul_f64(xi.im)).scale(f));
        s.zi = s.zi.add(ch.zi.mul_f64(xi.re).add(ch.zr.mul_f64(xi.im)).scale(f));
        s.a += r * ch.a * f;
        s.bsq += r2 * ch.bsq * f * f;
        s.t += r * ch.t * f;
        if ctx.with_w {
            s.w = s.w.add(ch.w.mul_f64(r2).scale(f).scale(f));
            let ax = A::from_f64(ch.t).mul_f64(r).scale(f);
            s.s1 = s.s1.add(ax);
            s.s2 = s.s2.add(ax.mul(ax));
        }
    }
    let mut s = acc.expect("b >= 2");
    let d = ctx.damping;
    s.t *= d;
    if ctx.with_w {
        let pair = s.s1.mul(s.s1).sub(s.s2);
        let factor = if ctx.corrupt { d } else { d * d };
        s.w = s.w.add(pair.mul_f64(factor));
        s.s1 = A::ZERO;
        s.s2 = A::ZERO;
    }
    let e = exponent_of(s.a);
    if s.a > 0.0 && !(-RESCALE_EXPONENT..=RESCALE_EXPONENT).contains(&e) {
        s.rescale(-e);
        s.shift += e;
    }
    s
}

/// Evaluates all functionals of depth `n` on an arbitrary weight field.
/// `damping` is `|E e^{iγθ}|`, or `None` for coupled laws.
pub fn evaluate_field<F: WeightField>(
    field: &F,
    b: u32,
    n: u32,
    damping: Option<f64>,
    opts: &EvalOptions,
) -> Result<FunctionalSet> {
    if b < 2 {
        return Err(SimError::InvalidArgument(format!("branching {b} must be at least 2")));
    }
    check_budget(b, n, opts.node_budget)?;
    let with_w = match (opts.conditional, damping) {
        (Conditional::Skip, _) | (Conditional::Auto, None) => false,
        (Conditional::Required, None) => return Err(SimError::CoupledLaw),
        _ => true,
    };
    let ctx = Ctx {
        field,
        b,
        n,
        damping: damping.unwrap_or(0.0),
        with_w,
        corrupt: opts.corrupt_pair_term,
    };
    let extended = match opts.precision {
        Precision::Auto => n > EXTENDED_PRECISION_DEPTH,
        Precision::Double => false,
        Precision::Extended => true,
    };
    let (zr, zi, a, bsq, t, w, shift) = if extended {
        let s = visit::<DoubleDouble, F>(&ctx, 0, 0);
        (s.zr.to_f64(), s.zi.to_f64(), s.a, s.bsq, s.t, s.w.to_f64(), s.shift)
    } else {
        let s = visit::<f64, F>(&ctx, 0, 0);
        (s.zr, s.zi, s.a, s.bsq, s.t, s.w, s.shift)
    };
    Ok(FunctionalSet {
        depth: n,
        scale: shift,
        z: Complex64::new(zr, zi),
        z_abs: a,
        z_abs2: bsq,
        t_damped: t,
        w_cond: with_w.then_some(w),
        m_norm: None,
        x_norm: None,
    })
}

fn damping_of(env: &EnvironmentSpec) -> Option<f64> {
    env.phase_mean().ok().map(|m| m.norm())
}

/// Depth-first evaluation on the realization `(env, stream)`.
pub fn dfs_evaluate(env: &EnvironmentSpec, n: u32, stream: &Stream, opts: &EvalOptions) -> Result<FunctionalSet> {
    evaluate_field(&Realization::new(env, *stream), env.b(), n, damping_of(env), opts)
}

/// The same functionals at each depth `1..=n_max` of one realization.
pub fn trace_depths(env: &EnvironmentSpec, n_max: u32, stream: &Stream, opts: &EvalOptions) -> Result<Vec<FunctionalSet>> {
    check_budget(env.b(), n_max, opts.node_budget)?;
    (1..=n_max).map(|n| dfs_evaluate(env, n, stream, opts)).collect()
}

/// Path enumeration with the pair sum taken literally. Slow; a test oracle.
pub fn brute_force_field<F: WeightField>(field: &F, b: u32, n: u32, damping: Option<f64>) -> Result<FunctionalSet> {
    let leaves = pow_u128(b, n);
    if b < 2 || leaves > u128::from(BRUTE_FORCE_MAX_LEAVES) {
        return Err(SimError::InvalidArgument(format!(
            "brute force limited to {BRUTE_FORCE_MAX_LEAVES} leaves, got {b}^{n}"
        )));
    }
    let leaves = leaves as u64;
    let first = first_at_depth(b, n);
    let bb = u64::from(b);
    let paths: Vec<Complex64> = (0..leaves)
        .map(|i| {
            let mut node = first + i;
            let mut p = Complex64::new(1.0, 0.0);
            for d in (1..=n).rev() {
                p *= field.weight(node, d);
                node = (node - 1) / bb;
            }
            p
        })
        .collect();
    let mods: Vec<f64> = paths.iter().map(|p| p.norm()).collect();

    let zr: CompensatedSum = paths.iter().map(|p| p.re).collect();
    let zi: CompensatedSum = paths.iter().map(|p| p.im).collect();
    let za: CompensatedSum = mods.iter().copied().collect();
    let z2: CompensatedSum = paths.iter().map(|p| p.norm_sqr()).collect();

    let w = damping.map(|d| {
        // d^{2(n-k)} indexed by n - k
        let pw: Vec<f64> = (0..=n).map(|h| d.powi(2 * h as i32)).collect();
        let mut w = z2;
        for i in 0..leaves {
            for j in 0..leaves {
                if i == j {
                    continue;
                }
                let (mut x, mut y, mut h) = (i, j, 0usize);
                while x != y {
                    x /= bb;
                    y /= bb;
                    h += 1;
                }
                w.add(mods[i as usize] * mods[j as usize] * pw[h]);
            }
        }
        w.value()
    });
    let t = damping.map_or(0.0, |d| d.powi(n as i32) * za.value());
    Ok(FunctionalSet::from_values(
        n,
        Complex64::new(zr.value(), zi.value()),
        za.value(),
        z2.value(),
        t,
        w,
    ))
}

/// [`brute_force_field`] on the realization `(env, stream)`.
pub fn brute_force_evaluate(env: &EnvironmentSpec, n: u32, stream: &Stream) -> Result<FunctionalSet> {
    brute_force_field(&Realization::new(env, *stream), env.b(), n, damping_of(env))
}

/// Largest relative difference between [`dfs_evaluate`] and
/// [`brute_force_evaluate`] over `z`, `z_abs`, `z_abs2` and `w_cond`.
pub fn oracle_discrepancy(env: &EnvironmentSpec, n: u32, stream: &Stream, opts: &EvalOptions) -> Result<f64> {
    let d = dfs_evaluate(env, n, stream, opts)?;
    let o = brute_force_evaluate(env, n, stream)?;
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (a - b).abs() / b.abs()
        }
    };
    let dz = d.z() - o.z();
    let mut worst = if dz.norm() == 0.0 { 0.0 } else { dz.norm() / o.z().norm() };
    worst = worst.max(rel(d.z_abs(), o.z_abs())).max(rel(d.z_abs2(), o.z_abs2()));
    match (d.w_cond(), o.w_cond()) {
        (Some(a), Some(b)) => worst = worst.max(rel(a, b)),
        (None, None) => {}
        _ => worst = f64::INFINITY,
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthRegime {
    /// `b|Eξ|² > E|ξ|²`: rate `ln(b²|Eξ|²)`.
    MeanDominated,
    /// `b|Eξ|² < E|ξ|²`: rate `ln(b E|ξ|²)`.
    FluctuationDominated,
    /// Both rates coincide.
    Critical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondMoment {
    pub ln_value: f64,
    pub value: f64,
    pub regime: GrowthRegime,
    /// Exponential growth rate of `E|Z_n|²`.
    pub rate: f64,
}

/// `E|Z_n|²` in closed form, evaluated in log space.
pub fn closed_form_second_moment(env: &EnvironmentSpec, n: u32) -> Result<SecondMoment> {
    let ln_b = f64::from(env.b()).ln();
    let m1 = env.mean_xi().norm_sqr();
    let m2 = env.second_abs()?;
    let sigma2 = env.sigma2()?;
    let l1 = if m1 > 0.0 { ln_b + m1.ln() } else { f64::NEG_INFINITY };
    let l2 = m2.ln();
    let nf = f64::from(n);
    let ln_value = if n == 0 {
        0.0
    } else {
        let mean_part = nf * (ln_b + l1);
        let fluct = if sigma2 > 0.0 {
            let mut sum = f64::NEG_INFINITY;
            for j in 0..n {
                sum = log_add_exp(sum, if j == 0 { 0.0 } else { f64::from(j) * (l1 - l2) });
            }
            sigma2.ln() + nf * ln_b + (nf - 1.0) * l2 + sum
        } else {
            f64::NEG_INFINITY
        };
        log_add_exp(mean_part, fluct)
    };
    let (regime, rate) = if (l1 - l2).abs() <= 1e-12 {
        (GrowthRegime::Critical, ln_b + l2)
    } else if l1 > l2 {
        (GrowthRegime::MeanDominated, ln_b + l1)
    } else {
        (GrowthRegime::FluctuationDominated, ln_b + l2)
    };
    Ok(SecondMoment {
        ln_value,
        value: ln_value.exp(),
        regime,
        rate,
    })
}

/// Fills in `m_norm` (when `E ξ ≠ 0`) and `x_norm`.
pub fn normalize(fs: &FunctionalSet, env: &EnvironmentSpec) -> Result<FunctionalSet> {
    let mut out = fs.clone();
    let n = f64::from(fs.depth);
    let m1 = env.mean_xi();
    if m1.norm() > 0.0 {
        let ln_mod = fs.ln_abs_z() - n * (f64::from(env.b()) * m1.norm()).ln();
        let arg = fs.arg_z() - n * m1.arg();
        out.m_norm = Some(Complex64::from_polar(ln_mod.exp(), arg));
    }
    let second = closed_form_second_moment(env, fs.depth)?;
    out.x_norm = Some((2.0 * fs.ln_abs_z() - second.ln_value).exp());
    Ok(out)
}

/// Empirical check of the one-generation identities
/// `E[Z_{n+1} | F_n] = b Eξ Z_n` and
/// `E[|Z_{n+1}|² | F_n] = b²|Eξ|²|Z_n|² + b σ² Z_n(|ξ|²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepReport {
    pub replicas: usize,
    pub mean: Complex64,
    pub mean_target: Complex64,
    pub mean_se: Complex64,
    /// Largest componentwise z-score of the mean.
    pub mean_z: f64,
    pub second: f64,
    pub second_target: f64,
    pub second_se: f64,
    pub second_z: f64,
}

/// `|diff| / se`, with `se = 0` accepted only for agreement to rounding.
pub fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 * scale.abs().max(f64::MIN_POSITIVE) {
        0.0
    } else {
        f64::INFINITY
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value();
    let se = if xs.len() > 1 { (ss / (n - 1.0) / n).sqrt() } else { f64::NAN };
    (mean, se)
}

/// Resamples generation `n+1` `replicas` times with everything above frozen.
pub fn one_step_identity_check(
    env: &EnvironmentSpec,
    n: u32,
    replicas: usize,
    stream: &Stream,
    opts: &EvalOptions,
) -> Result<OneStepReport> {
    if replicas < 2 {
        return Err(SimError::InvalidArgument("need at least 2 replicas".into()));
    }
    let opts = EvalOptions {
        conditional: Conditional::Skip,
        ..*opts
    };
    let base = dfs_evaluate(env, n, stream, &opts)?;
    let b = f64::from(env.b());
    let m1 = env.mean_xi();
    let mean_target = base.z() * m1 * b;
    let second_target = b * b * m1.norm_sqr() * base.z().norm_sqr() + b * env.sigma2()? * base.z_abs2();

    let draws: Vec<Complex64> = (1..=replicas as u32)
        .into_par_iter()
        .map(|r| {
            let field = Realization::new(env, *stream).with_fresh_generation(n + 1, r);
            evaluate_field(&field, env.b(), n + 1, None, &opts).map(|fs| fs.z())
        })
        .collect::<Result<_>>()?;

    let re: Vec<f64> = draws.iter().map(|z| z.re).collect();
    let im: Vec<f64> = draws.iter().map(|z| z.im).collect();
    let sq: Vec<f64> = draws.iter().map(|z| z.norm_sqr()).collect();
    let (mr, sr) = mean_and_se(&re);
    let (mi, si) = mean_and_se(&im);
    let (m2, s2) = mean_and_se(&sq);
    let scale = mean_target.norm();
    let mean_z = z_score(mr - mean_target.re, sr, scale).max(z_score(mi - mean_target.im, si, scale));
    Ok(OneStepReport {
        replicas,
        mean: Complex64::new(mr, mi),
        mean_target,
        mean_se: Complex64::new(sr, si),
        mean_z,
        second: m2,
        second_target,
        second_se: s2,
        second_z: z_score(m2 - second_target, s2, second_target),
    })
}
