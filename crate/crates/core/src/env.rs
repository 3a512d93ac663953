//! Environment laws for the complex weight `ξ = e^{ω + iθ}`.
//!
//! Built-in models factor into an independent radius family (the law of the
//! unit-scale log-radius `ω`, scaled by `β`) and phase family (the law of the
//! unit-scale phase `θ`, scaled by `γ`). All analytic quantities for those
//! are closed forms. [`CustomLaw`] covers anything else through a sampler and
//! a table of absolute moments.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::MonotoneCubic;
use crate::rng::{box_muller, Channel, Stream, StreamCursor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("radius and phase are not independent for this law")]
    CoupledLaw,
    #[error("E|xi|^{alpha} is not available (outside the integrable range of the law)")]
    NonIntegrable { alpha: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not available for this law: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Law of the unit-scale log-radius `ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusFamily {
    /// `ω ~ N(0, 1)`: `λ_R(x) = x²/2`.
    Gaussian,
    /// `ω = ±1` with probability ½: `λ_R(x) = ln cosh x`. Bounded, so `β_c = ∞` when `b ≤ 2`.
    Rademacher,
    /// `ω ≡ v`: `λ_R(x) = v x`.
    Point(f64),
}

impl RadiusFamily {
    /// `λ_R(x) = ln E[e^{xω}]`.
    pub fn lambda(&self, x: f64) -> f64 {
        match *self {
            RadiusFamily::Gaussian => 0.5 * x * x,
            RadiusFamily::Rademacher => {
                // ln cosh x = |x| + ln(1 + e^{-2|x|}) - ln 2
                let a = x.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            RadiusFamily::Point(v) => v * x,
        }
    }

    /// `λ_R'(x)`.
    pub fn lambda_prime(&self, x: f64) -> f64 {
        match *self {
            RadiusFamily::Gaussian => x,
            RadiusFamily::Rademacher => x.tanh(),
            RadiusFamily::Point(v) => v,
        }
    }

    fn sample(&self, u: [f64; 2]) -> f64 {
        match *self {
            RadiusFamily::Gaussian => box_muller(u),
            RadiusFamily::Rademacher => {
                if u[0] < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            RadiusFamily::Point(v) => v,
        }
    }
}

/// Law of the unit-scale phase `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseFamily {
    /// `θ ~ N(0, 1)`: `λ_C(g) = g²/2`.
    Gaussian,
    /// `θ ~ Uniform[-π, π]`: `E e^{igθ} = sin(gπ)/(gπ)`.
    Uniform,
    /// `θ = ±arccos t` with probability ½, so `e^{iθ} = t ± i√(1-t²)` and `|E e^{iθ}| = t`.
    TwoPoint { t: f64 },
    /// `θ ≡ angle`.
    Point { angle: f64 },
}

impl PhaseFamily {
    /// `E[e^{igθ}]`.
    pub fn characteristic(&self, g: f64) -> Complex64 {
        match *self {
            PhaseFamily::Gaussian => Complex64::new((-0.5 * g * g).exp(), 0.0),
            PhaseFamily::Uniform => Complex64::new(sinc_pi(g), 0.0),
            PhaseFamily::TwoPoint { t } => {
                if g == 1.0 {
                    Complex64::new(t, 0.0)
                } else {
                    Complex64::new((g * t.acos()).cos(), 0.0)
                }
            }
            PhaseFamily::Point { angle } => Complex64::from_polar(1.0, g * angle),
        }
    }

    /// `λ_C(g) = -ln |E e^{igθ}|`; `+∞` where the characteristic function vanishes.
    pub fn lambda(&self, g: f64) -> f64 {
        match *self {
            PhaseFamily::Gaussian => 0.5 * g * g,
            PhaseFamily::Point { .. } => 0.0,
            PhaseFamily::TwoPoint { t } if g == 1.0 => {
                if t == 0.0 {
                    f64::INFINITY
                } else {
                    -t.ln()
                }
            }
            _ => {
                let m = self.characteristic(g).norm();
                if m == 0.0 {
                    f64::INFINITY
                } else {
                    -m.ln()
                }
            }
        }
    }

    /// Unit phase factor `e^{igθ}` for one draw.
    fn sample(&self, g: f64, u: [f64; 2]) -> Complex64 {
        match *self {
            PhaseFamily::Gaussian => Complex64::from_polar(1.0, g * box_muller(u)),
            PhaseFamily::Uniform => Complex64::from_polar(1.0, g * PI * (2.0 * u[0] - 1.0)),
            PhaseFamily::TwoPoint { t } => {
                let sign = if u[0] < 0.5 { 1.0 } else { -1.0 };
                if g == 1.0 {
                    Complex64::new(t, sign * (1.0 - t * t).max(0.0).sqrt())
                } else {
                    Complex64::from_polar(1.0, sign * g * t.acos())
                }
            }
            PhaseFamily::Point { angle } => Complex64::from_polar(1.0, g * angle),
        }
    }
}

/// `sin(gπ)/(gπ)` with exact zeros at nonzero integers and the removable singularity at 0.
fn sinc_pi(g: f64) -> f64 {
    if g == 0.0 {
        1.0
    } else if g.fract() == 0.0 {
        0.0
    } else {
        (g * PI).sin() / (g * PI)
    }
}

/// Radius law paired with the two-point phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusLaw {
    Unit,
    LogNormal { beta: f64 },
    LogRademacher { beta: f64 },
}

type JointSampler = dyn Fn([f64; 4]) -> Complex64 + Send + Sync;
type RadiusSampler = dyn Fn([f64; 2]) -> f64 + Send + Sync;
type PhaseSampler = dyn Fn([f64; 2]) -> Complex64 + Send + Sync;

#[derive(Clone)]
pub enum CustomSampler {
    /// Draws `ξ` from four uniforms; radius and phase may be coupled.
    Joint(Arc<JointSampler>),
    /// Independent radius `|ξ|` and unit phase factor, each from two uniforms.
    Independent {
        radius: Arc<RadiusSampler>,
        phase: Arc<PhaseSampler>,
        /// `E[e^{iθ}]`.
        phase_mean: Complex64,
    },
}

/// A law given by a sampler plus a finite table of absolute moments.
///
/// `ln E|ξ|^α` is interpolated between table nodes with a shape-preserving
/// cubic; `α` beyond the last node is reported as non-integrable.
#[derive(Clone)]
pub struct CustomLaw {
    name: String,
    sampler: CustomSampler,
    log_moments: MonotoneCubic,
    mean: Complex64,
}

impl CustomLaw {
    /// `moments` holds `(α, E|ξ|^α)` pairs with `α > 0`; the node `(0, 1)` is added.
    pub fn new(
        name: impl Into<String>,
        sampler: CustomSampler,
        moments: &[(f64, f64)],
        mean: Complex64,
    ) -> Result<Self> {
        let mut nodes: Vec<(f64, f64)> = moments.to_vec();
        if nodes.iter().any(|&(a, m)| !(a > 0.0) || !(m > 0.0) || !m.is_finite()) {
            return Err(EnvError::InvalidParameter(
                "moment table needs alpha > 0 and finite positive moments".into(),
            ));
        }
        nodes.push((0.0, 1.0));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let ys: Vec<f64> = nodes.iter().map(|n| n.1.ln()).collect();
        let log_moments = MonotoneCubic::new(xs, ys)
            .ok_or_else(|| EnvError::InvalidParameter("moment table nodes must be distinct".into()))?;
        Ok(Self {
            name: name.into(),
            sampler,
            log_moments,
            mean,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn log_moment(&self, alpha: f64) -> Result<(f64, f64)> {
        let (_, hi) = self.log_moments.domain();
        if alpha > hi * (1.0 + 1e-12) {
            return Err(EnvError::NonIntegrable { alpha });
        }
        Ok(self.log_moments.eval_with_slope(alpha))
    }
}

impl fmt::Debug for CustomLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLaw")
            .field("name", &self.name)
            .field("mean", &self.mean)
            .field(
                "independent",
                &matches!(self.sampler, CustomSampler::Independent { .. }),
            )
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    /// `ω, θ` independent standard normals: `ξ = e^{βω + iγθ}`.
    GaussianIndep { beta: f64, gamma: f64 },
    /// Log-normal radius, phase uniform on `[-π, π]` scaled by `γ`.
    LogNormalUniformPhase { beta: f64, gamma: f64 },
    /// Two-point phase `t ± i√(1-t²)` times an independent radius.
    RademacherPhase { t: f64, radius: RadiusLaw },
    /// `ξ ≡ c`.
    Constant { c: Complex64 },
    Custom(CustomLaw),
}

/// Radius and phase families with their scales, for laws that factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factorization {
    pub radius: RadiusFamily,
    pub beta: f64,
    pub phase: PhaseFamily,
    pub gamma: f64,
}

impl Factorization {
    pub fn gaussian(beta: f64, gamma: f64) -> Self {
        Self {
            radius: RadiusFamily::Gaussian,
            beta,
            phase: PhaseFamily::Gaussian,
            gamma,
        }
    }
}

/// Law of one weight `ξ` on a `b`-ary tree.
#[derive(Clone, Debug)]
pub struct EnvironmentSpec {
    model: Model,
    b: u32,
}

impl EnvironmentSpec {
    pub fn new(model: Model, b: u32) -> Result<Self> {
        if b < 2 {
            return Err(EnvError::InvalidParameter(format!("branching number b = {b} < 2")));
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(EnvError::InvalidParameter(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        match &model {
            Model::GaussianIndep { beta, gamma } | Model::LogNormalUniformPhase { beta, gamma } => {
                nonneg("beta", *beta)?;
                nonneg("gamma", *gamma)?;
            }
            Model::RademacherPhase { t, radius } => {
                if !(0.0..=1.0).contains(t) {
                    return Err(EnvError::InvalidParameter(format!("t = {t} outside [0, 1]")));
                }
                match radius {
                    RadiusLaw::Unit => {}
                    RadiusLaw::LogNormal { beta } | RadiusLaw::LogRademacher { beta } => nonneg("beta", *beta)?,
                }
            }
            Model::Constant { c } => {
                if !(c.norm() > 0.0) || !c.is_finite() {
                    return Err(EnvError::InvalidParameter("constant weight must be finite and nonzero".into()));
                }
            }
            Model::Custom(_) => {}
        }
        Ok(Self { model, b })
    }

    pub fn gaussian(beta: f64, gamma: f64, b: u32) -> Result<Self> {
        Self::new(Model::GaussianIndep { beta, gamma }, b)
    }

    pub fn constant(c: Complex64, b: u32) -> Result<Self> {
        Self::new(Model::Constant { c }, b)
    }

    /// Unit radius with phase uniform on `[-π, π]`: `E ξ = 0`, `|ξ| ≡ 1`.
    pub fn unit_uniform_phase(b: u32) -> Result<Self> {
        Self::new(Model::LogNormalUniformPhase { beta: 0.0, gamma: 1.0 }, b)
    }

    /// Environment of an independent family at `(β, γ)`.
    pub fn from_factorization(f: Factorization, b: u32) -> Result<Self> {
        let model = match (f.radius, f.phase) {
            (RadiusFamily::Gaussian, PhaseFamily::Gaussian) => Model::GaussianIndep { beta: f.beta, gamma: f.gamma },
            (RadiusFamily::Gaussian, PhaseFamily::Uniform) => {
                Model::LogNormalUniformPhase { beta: f.beta, gamma: f.gamma }
            }
            _ => {
                return Err(EnvError::Unsupported(
                    "only gaussian and lognormal-uniform families are parameterized by (beta, gamma)".into(),
                ))
            }
        };
        Self::new(model, b)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    /// Same law on a tree with a different branching number.
    pub fn with_b(&self, b: u32) -> Result<Self> {
        Self::new(self.model.clone(), b)
    }

    /// Short model label used in reports.
    pub fn label(&self) -> &str {
        match &self.model {
            Model::GaussianIndep { .. } => "gaussian",
            Model::LogNormalUniformPhase { .. } => "lognormal-uniform",
            Model::RademacherPhase { .. } => "rademacher-phase",
            Model::Constant { .. } => "constant",
            Model::Custom(c) => c.name(),
        }
    }

    /// `(β, γ)` when the model has them.
    pub fn beta_gamma(&self) -> Option<(f64, f64)> {
        match &self.model {
            Model::GaussianIndep { beta, gamma } | Model::LogNormalUniformPhase { beta, gamma } => Some((*beta, *gamma)),
            _ => None,
        }
    }

    /// The radius/phase factorization of built-in laws. `None` for custom laws.
    pub fn factorization(&self) -> Option<Factorization> {
        match &self.model {
            Model::GaussianIndep { beta, gamma } => Some(Factorization::gaussian(*beta, *gamma)),
            Model::LogNormalUniformPhase { beta, gamma } => Some(Factorization {
                radius: RadiusFamily::Gaussian,
                beta: *beta,
                phase: PhaseFamily::Uniform,
                gamma: *gamma,
            }),
            Model::RademacherPhase { t, radius } => {
                let (radius, beta) = match *radius {
                    RadiusLaw::Unit => (RadiusFamily::Point(0.0), 1.0),
                    RadiusLaw::LogNormal { beta } => (RadiusFamily::Gaussian, beta),
                    RadiusLaw::LogRademacher { beta } => (RadiusFamily::Rademacher, beta),
                };
                Some(Factorization {
                    radius,
                    beta,
                    phase: PhaseFamily::TwoPoint { t: *t },
                    gamma: 1.0,
                })
            }
            Model::Constant { c } => Some(Factorization {
                radius: RadiusFamily::Point(c.norm().ln()),
                beta: 1.0,
                phase: PhaseFamily::Point { angle: c.arg() },
                gamma: 1.0,
            }),
            Model::Custom(_) => None,
        }
    }

    /// True when the families `ω` and `θ` are independent.
    pub fn is_independent(&self) -> bool {
        match &self.model {
            Model::Custom(c) => matches!(c.sampler, CustomSampler::Independent { .. }),
            _ => true,
        }
    }

    /// Declared (not verified) continuity of the law of `ξ`.
    pub fn is_continuous(&self) -> bool {
        match &self.model {
            Model::GaussianIndep { beta, gamma } | Model::LogNormalUniformPhase { beta, gamma } => {
                *beta > 0.0 && *gamma > 0.0
            }
            _ => false,
        }
    }

    /// `λ_R(x) = ln E[e^{xω}]` for the unit-scale log-radius.
    pub fn lambda_r(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(EnvError::InvalidParameter(format!("x = {x} < 0")));
        }
        match self.factorization() {
            Some(f) => Ok(f.radius.lambda(x)),
            None => self.custom_log_moment(x).map(|v| v.0),
        }
    }

    /// `λ_R'(x)`.
    pub fn lambda_r_prime(&self, x: f64) -> Result<f64> {
        match self.factorization() {
            Some(f) => Ok(f.radius.lambda_prime(x)),
            None => self.custom_log_moment(x).map(|v| v.1),
        }
    }

    /// `λ_C(g) = -ln |E e^{igθ}|` for the unit-scale phase.
    pub fn lambda_c(&self, g: f64) -> Result<f64> {
        if !(g >= 0.0) {
            return Err(EnvError::InvalidParameter(format!("g = {g} < 0")));
        }
        match (&self.model, self.factorization()) {
            (_, Some(f)) => Ok(f.phase.lambda(g)),
            (Model::Custom(c), None) => match &c.sampler {
                CustomSampler::Joint(_) => Err(EnvError::CoupledLaw),
                CustomSampler::Independent { phase_mean, .. } => {
                    if g == 0.0 {
                        Ok(0.0)
                    } else if g == 1.0 {
                        let m = phase_mean.norm();
                        Ok(if m == 0.0 { f64::INFINITY } else { -m.ln() })
                    } else {
                        Err(EnvError::Unsupported(
                            "custom laws only know E[e^{i theta}] at unit phase scale".into(),
                        ))
                    }
                }
            },
            _ => unreachable!("built-in laws always factor"),
        }
    }

    fn custom_log_moment(&self, alpha: f64) -> Result<(f64, f64)> {
        match &self.model {
            Model::Custom(c) => c.log_moment(alpha),
            _ => unreachable!(),
        }
    }

    /// Largest `α` with a known `E|ξ|^α`: the moment table's last node for
    /// custom laws, `+∞` otherwise.
    pub fn alpha_ceiling(&self) -> f64 {
        match &self.model {
            Model::Custom(law) => law.log_moments.domain().1,
            _ => f64::INFINITY,
        }
    }

    /// `ln E|ξ|^α`.
    pub fn log_moment_abs(&self, alpha: f64) -> Result<f64> {
        if !(alpha >= 0.0) {
            return Err(EnvError::InvalidParameter(format!("alpha = {alpha} < 0")));
        }
        match self.factorization() {
            Some(f) => Ok(f.radius.lambda(alpha * f.beta)),
            None => self.custom_log_moment(alpha).map(|v| v.0),
        }
    }

    /// `d/dα ln E|ξ|^α`.
    pub fn log_moment_abs_slope(&self, alpha: f64) -> Result<f64> {
        match self.factorization() {
            Some(f) => Ok(f.beta * f.radius.lambda_prime(alpha * f.beta)),
            None => self.custom_log_moment(alpha).map(|v| v.1),
        }
    }

    /// `E|ξ|^α`.
    pub fn moment_abs(&self, alpha: f64) -> Result<f64> {
        self.log_moment_abs(alpha).map(f64::exp)
    }

    /// `E[e^{iθ}]` at the model's phase scale, for independent laws.
    pub fn phase_mean(&self) -> Result<Complex64> {
        match (&self.model, self.factorization()) {
            (_, Some(f)) => Ok(f.phase.characteristic(f.gamma)),
            (Model::Custom(c), None) => match &c.sampler {
                CustomSampler::Independent { phase_mean, .. } => Ok(*phase_mean),
                CustomSampler::Joint(_) => Err(EnvError::CoupledLaw),
            },
            _ => unreachable!(),
        }
    }

    /// `m₁ = E[ξ]`.
    pub fn mean_xi(&self) -> Complex64 {
        match &self.model {
            Model::Constant { c } => *c,
            Model::Custom(c) => c.mean,
            _ => {
                let f = self.factorization().expect("built-in laws factor");
                f.phase.characteristic(f.gamma) * f.radius.lambda(f.beta).exp()
            }
        }
    }

    /// `m̃₂ = E|ξ|²`.
    pub fn second_abs(&self) -> Result<f64> {
        match &self.model {
            Model::Constant { c } => Ok(c.norm_sqr()),
            _ => self.moment_abs(2.0),
        }
    }

    /// `σ² = E|ξ|² - |E ξ|²`.
    pub fn sigma2(&self) -> Result<f64> {
        Ok((self.second_abs()? - self.mean_xi().norm_sqr()).max(0.0))
    }

    /// One draw of `ξ` from a sequential stream.
    pub fn sample(&self, cursor: &mut StreamCursor) -> Complex64 {
        let i = cursor.advance();
        self.sample_at(cursor.stream(), i, 0, 0)
    }

    /// The weight attached to `index` on `stream`. Radius and phase use
    /// separate channels so either can be resampled through its epoch.
    #[inline]
    pub fn sample_at(&self, stream: &Stream, index: u64, radius_epoch: u32, phase_epoch: u32) -> Complex64 {
        match &self.model {
            Model::Constant { c } => *c,
            Model::Custom(law) => match &law.sampler {
                CustomSampler::Joint(f) => {
                    let r = stream.uniforms(index, Channel::Radius, radius_epoch);
                    let p = stream.uniforms(index, Channel::Phase, phase_epoch);
                    f([r[0], r[1], p[0], p[1]])
                }
                CustomSampler::Independent { radius, phase, .. } => {
                    radius(stream.uniforms(index, Channel::Radius, radius_epoch))
                        * phase(stream.uniforms(index, Channel::Phase, phase_epoch))
                }
            },
            _ => {
                self.radius_at(stream, index, radius_epoch)
                    * self.phase_factor_at(stream, index, phase_epoch)
            }
        }
    }

    /// `|ξ|` at `index`; for coupled custom laws this is the modulus of the joint draw
    /// with phase epoch 0.
    #[inline]
    pub fn radius_at(&self, stream: &Stream, index: u64, epoch: u32) -> f64 {
        match (&self.model, self.factorization()) {
            (_, Some(f)) => {
                if f.beta == 0.0 {
                    return 1.0;
                }
                (f.beta * f.radius.sample(stream.uniforms(index, Channel::Radius, epoch))).exp()
            }
            (Model::Custom(law), None) => match &law.sampler {
                CustomSampler::Independent { radius, .. } => radius(stream.uniforms(index, Channel::Radius, epoch)),
                CustomSampler::Joint(_) => self.sample_at(stream, index, epoch, 0).norm(),
            },
            _ => unreachable!(),
        }
    }

    /// Unit phase factor `e^{iγθ}` at `index`; coupled laws return the phase of the joint draw.
    #[inline]
    pub fn phase_factor_at(&self, stream: &Stream, index: u64, epoch: u32) -> Complex64 {
        match (&self.model, self.factorization()) {
            (_, Some(f)) => {
                if f.gamma == 0.0 {
                    return Complex64::new(1.0, 0.0);
                }
                f.phase.sample(f.gamma, stream.uniforms(index, Channel::Phase, epoch))
            }
            (Model::Custom(law), None) => match &law.sampler {
                CustomSampler::Independent { phase, .. } => phase(stream.uniforms(index, Channel::Phase, epoch)),
                CustomSampler::Joint(_) => {
                    let z = self.sample_at(stream, index, 0, epoch);
                    z / z.norm()
                }
            },
            _ => unreachable!(),
        }
    }
}
