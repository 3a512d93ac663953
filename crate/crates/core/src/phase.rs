//! Phase diagram analytics: `G(α)`, its minimizer, critical parameters,
//! region classification and the predicted free energy.
//!
//! Two classifiers live here and are deliberately independent: [`classify`]
//! works from `G` and the moments of any law, while
//! [`classify_indep_closed_form`] uses only the explicit inequalities in
//! `λ_R`, `λ_C` and the critical set of an independent family.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvironmentSpec, PhaseFamily, RadiusFamily};
use crate::numerics::{bisect, golden_section_bracket};
use crate::serde_ext;

/// Default search ceiling for `α_min`.
pub const ALPHA_CAP: f64 = 64.0;
/// Boundary band for analytic classification.
pub const EPS_ANALYTIC: f64 = 1e-9;
/// Boundary band used when rendering diagrams.
pub const EPS_GRID: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no sign change for {what} below cap {cap}")]
    NoBracket { what: &'static str, cap: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    /// `α_min < 1`.
    R2a,
    /// `1 ≤ α_min < 2`, independent radius and phase.
    R2b,
    R3,
    Boundary,
    Undetermined,
}

impl Region {
    /// Merges the two halves of R2.
    pub fn coarse(self) -> Region {
        match self {
            Region::R2a | Region::R2b => Region::R2b,
            r => r,
        }
    }

    /// Label without the R2 sub-case.
    pub fn coarse_label(self) -> &'static str {
        match self {
            Region::R1 => "R1",
            Region::R2a | Region::R2b => "R2",
            Region::R3 => "R3",
            Region::Boundary => "Boundary",
            Region::Undetermined => "Undetermined",
        }
    }

    pub fn same_phase(self, other: Region) -> bool {
        self.coarse() == other.coarse()
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::R1 => "R1",
            Region::R2a => "R2a",
            Region::R2b => "R2b",
            Region::R3 => "R3",
            Region::Boundary => "Boundary",
            Region::Undetermined => "Undetermined",
        };
        f.write_str(s)
    }
}

/// The inequality that decided the region, with both sides evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTrace {
    pub condition: String,
    #[serde(with = "serde_ext::f64_ext")]
    pub lhs: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub rhs: f64,
}

/// Adjacent regions and their formula values when a point sits in the boundary band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInfo {
    pub between: (Region, Region),
    #[serde(with = "serde_ext::f64_pair")]
    pub values: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub region: Region,
    #[serde(with = "serde_ext::f64_ext")]
    pub alpha_min: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub g_at_alpha_min: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub predicted_f: f64,
    pub l2_region: bool,
    pub condition_trace: ConditionTrace,
    pub boundary: Option<BoundaryInfo>,
    /// `ln(b|E ξ|)`.
    #[serde(with = "serde_ext::f64_ext")]
    pub f_one: f64,
    /// `G(α_min)`.
    #[serde(with = "serde_ext::f64_ext")]
    pub f_two: f64,
    /// `G(2) = ½ ln(b E|ξ|²)`.
    #[serde(with = "serde_ext::f64_ext")]
    pub f_three: f64,
    pub epsilon: f64,
}

/// `G(α) = (ln b + ln E|ξ|^α)/α`.
pub fn g_of_alpha(env: &EnvironmentSpec, alpha: f64) -> Result<f64, EnvError> {
    if !(alpha > 0.0) {
        return Err(EnvError::InvalidParameter(format!("alpha = {alpha} must be > 0")));
    }
    Ok((f64::from(env.b()).ln() + env.log_moment_abs(alpha)?) / alpha)
}

/// `α²G'(α) = α (ln E|ξ|^α)' - ln E|ξ|^α - ln b`; nondecreasing in `α`.
fn g_slope_numerator(env: &EnvironmentSpec, alpha: f64) -> Result<f64, EnvError> {
    Ok(alpha * env.log_moment_abs_slope(alpha)? - env.log_moment_abs(alpha)? - f64::from(env.b()).ln())
}

/// The unique minimizer of `G` on `(0, cap]`, or `+∞` when `G` is still
/// strictly decreasing at `cap`.
///
/// Golden-section search locates the minimum; the last digits come from
/// bisecting the sign of `G'` inside the golden-section bracket.
pub fn alpha_min(env: &EnvironmentSpec, cap: f64) -> Result<f64, EnvError> {
    let cap = cap.min(env.alpha_ceiling());
    if g_slope_numerator(env, cap)? < 0.0 {
        return Ok(f64::INFINITY);
    }
    let lo = 1e-9_f64.min(cap / 2.0);
    let g = |a: f64| g_of_alpha(env, a).unwrap_or(f64::INFINITY);
    let (mut a, mut b) = golden_section_bracket(g, lo, cap, 1e-6);
    let slope = |x: f64| g_slope_numerator(env, x).unwrap_or(f64::NAN);
    // widen until the bracket holds the sign change of G'
    let mut width = (b - a).max(1e-6);
    while slope(a) > 0.0 && a > lo {
        a = (a - width).max(lo);
        width *= 2.0;
    }
    width = (b - a).max(1e-6);
    while slope(b) < 0.0 && b < cap {
        b = (b + width).min(cap);
        width *= 2.0;
    }
    Ok(bisect(slope, a, b, 1e-13).unwrap_or(0.5 * (a + b)))
}

/// `E|ξ|² < b|E ξ|²`.
pub fn l2_check(env: &EnvironmentSpec) -> Result<bool, EnvError> {
    Ok(env.second_abs()? < f64::from(env.b()) * env.mean_xi().norm_sqr())
}

/// `ln(b|E ξ|)`, `-∞` when the mean vanishes.
fn f_one(env: &EnvironmentSpec) -> f64 {
    let m = env.mean_xi().norm();
    if m == 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::from(env.b()).ln() + m.ln()
    }
}

/// Classifies a law into the regions of the phase diagram and predicts the free energy.
///
/// Any deciding inequality whose two sides differ by at most `eps` yields
/// [`Region::Boundary`]; the adjacent formulas are reported in `boundary`.
pub fn classify(env: &EnvironmentSpec, eps: f64) -> Result<PhaseReport, EnvError> {
    let f1 = f_one(env);
    let am = alpha_min(env, ALPHA_CAP)?;
    let g_am = g_of_alpha(env, am.min(ALPHA_CAP.min(env.alpha_ceiling())))?;
    let g2 = g_of_alpha(env, 2.0)?;
    let a_star = am.clamp(1.0, 2.0);
    let g_star = g_of_alpha(env, a_star)?;
    let independent = env.is_independent();
    let l2 = l2_check(env)?;

    // R1 iff min over (1, 2] of G is below f_I; unimodality puts the min at clamp(α_min, 1, 2)
    let r1_margin = f1 - g_star;
    let r1_trace = || ConditionTrace {
        condition: format!("G(alpha) < ln(b|E xi|) at alpha = {a_star}"),
        lhs: g_star,
        rhs: f1,
    };
    let upper = if am <= 2.0 { (Region::R2b, g_am) } else { (Region::R3, g2) };

    // with α_min ≤ 1 the infimum over (1, 2] is G(1) ≥ ln(b|E ξ|) and is not attained
    let r1_possible = am > 1.0;
    let (region, trace, boundary) = if r1_possible && r1_margin > eps {
        (Region::R1, r1_trace(), None)
    } else if r1_possible && r1_margin >= -eps {
        (
            Region::Boundary,
            r1_trace(),
            Some(BoundaryInfo {
                between: (Region::R1, upper.0),
                values: (f1, upper.1),
            }),
        )
    } else if am < 1.0 {
        (
            Region::R2a,
            ConditionTrace {
                condition: "alpha_min < 1".into(),
                lhs: am,
                rhs: 1.0,
            },
            None,
        )
    } else if am < 2.0 - eps {
        let trace = ConditionTrace {
            condition: "1 <= alpha_min < 2 and G(alpha_min) > ln(b|E xi|)".into(),
            lhs: g_am,
            rhs: f1,
        };
        if independent {
            (Region::R2b, trace, None)
        } else if am - 1.0 <= eps {
            (
                Region::Boundary,
                trace,
                Some(BoundaryInfo {
                    between: (Region::R2a, Region::Undetermined),
                    values: (g_am, g_am),
                }),
            )
        } else {
            (Region::Undetermined, trace, None)
        }
    } else if am <= 2.0 + eps {
        (
            Region::Boundary,
            ConditionTrace {
                condition: "alpha_min = 2".into(),
                lhs: am,
                rhs: 2.0,
            },
            Some(BoundaryInfo {
                between: (Region::R2b, Region::R3),
                values: (g_am, g2),
            }),
        )
    } else {
        (
            Region::R3,
            ConditionTrace {
                condition: "alpha_min > 2 and G(2) > ln(b|E xi|)".into(),
                lhs: g2,
                rhs: f1,
            },
            None,
        )
    };

    let predicted_f = match region {
        Region::R1 => f1,
        Region::R2a | Region::R2b => g_am,
        Region::R3 => g2,
        Region::Boundary => {
            let (a, b) = boundary.as_ref().map(|b| b.values).unwrap_or((f64::NAN, f64::NAN));
            0.5 * (a + b)
        }
        Region::Undetermined => f64::NAN,
    };

    Ok(PhaseReport {
        region,
        alpha_min: am,
        g_at_alpha_min: g_am,
        predicted_f,
        l2_region: l2,
        condition_trace: trace,
        boundary,
        f_one: f1,
        f_two: g_am,
        f_three: g2,
        epsilon: eps,
    })
}

/// Free energy of the positive polymer with weights `|ξ|^k`:
/// `k·G(k)` in weak disorder (`α_min > k`), `k·G(α_min)` otherwise.
pub fn positive_weight_free_energy(env: &EnvironmentSpec, k: u32) -> Result<f64, EnvError> {
    if !(k == 1 || k == 2) {
        return Err(EnvError::InvalidParameter(format!("exponent {k} must be 1 or 2")));
    }
    let k = f64::from(k);
    let am = alpha_min(env, ALPHA_CAP)?;
    Ok(k * g_of_alpha(env, am.min(k))?)
}

/// Critical parameters of an independent family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    #[serde(with = "serde_ext::f64_ext")]
    pub beta_c: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub beta_0: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub gamma_c: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub gamma_0: f64,
}

/// Root-finding settings for [`critical_set`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalOptions {
    pub beta_cap: f64,
    pub gamma_cap: f64,
    pub tol: f64,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self {
            beta_cap: 64.0,
            gamma_cap: 64.0,
            tol: 1e-12,
        }
    }
}

/// Smallest root of `h` on `[0, cap]` with `h(0) < 0`: uniform scan for the
/// first sign change, then bisection. Returns the root.
pub fn first_root(
    h: impl Fn(f64) -> f64,
    cap: f64,
    tol: f64,
    what: &'static str,
) -> Result<f64, PhaseError> {
    const SCAN: usize = 4096;
    let h0 = h(0.0);
    if h0 >= 0.0 {
        return Ok(0.0);
    }
    let mut prev = 0.0;
    for i in 1..=SCAN {
        let x = cap * i as f64 / SCAN as f64;
        let hx = h(x);
        // strict margin: bounded-radius families approach 0 from below and round up to it
        if hx > 1e-12 {
            return bisect(&h, prev, x, tol).ok_or(PhaseError::NoBracket { what, cap });
        }
        prev = x;
    }
    Err(PhaseError::NoBracket { what, cap })
}

/// Solves the four defining equations of `β_c, β_0, γ_c, γ_0`.
/// Roots without a bracket below the cap are reported as `+∞`.
pub fn critical_set(radius: RadiusFamily, phase: PhaseFamily, b: u32, opts: CriticalOptions) -> CriticalSet {
    let ln_b = f64::from(b).ln();
    let lr = |x: f64| radius.lambda(x);
    let lrp = |x: f64| radius.lambda_prime(x);
    let lc = |g: f64| phase.lambda(g);
    let or_inf = |r: Result<f64, PhaseError>| r.unwrap_or(f64::INFINITY);

    let beta_c = or_inf(first_root(|x| x * lrp(x) - lr(x) - ln_b, opts.beta_cap, opts.tol, "beta_c"));
    let beta_0 = or_inf(first_root(
        |x| 2.0 * x * lrp(2.0 * x) - lr(2.0 * x) - ln_b,
        opts.beta_cap / 2.0,
        opts.tol,
        "beta_0",
    ));
    let gamma_c = or_inf(first_root(|g| 2.0 * lc(g) - ln_b, opts.gamma_cap, opts.tol, "gamma_c"));
    let gamma_0 = if beta_0.is_finite() {
        let shift = lr(2.0 * beta_0) - 2.0 * lr(beta_0);
        or_inf(first_root(|g| shift + 2.0 * lc(g) - ln_b, opts.gamma_cap, opts.tol, "gamma_0"))
    } else {
        f64::INFINITY
    };
    CriticalSet {
        beta_c,
        beta_0,
        gamma_c,
        gamma_0,
    }
}

/// Result of the closed-form classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedFormClassification {
    pub region: Region,
    /// Value of the deciding inequality minus `ln b` (`NaN` when decided by `β > β_c`).
    pub residual: f64,
    pub predicted_f: f64,
}

/// Region from the explicit inequalities for independent families at `(β, γ)`.
pub fn classify_indep_closed_form(
    beta: f64,
    gamma: f64,
    crit: &CriticalSet,
    radius: RadiusFamily,
    phase: PhaseFamily,
    b: u32,
    eps: f64,
) -> ClosedFormClassification {
    let ln_b = f64::from(b).ln();
    let lr = |x: f64| radius.lambda(x);
    let lc = phase.lambda(gamma);
    let f_i = ln_b + lr(beta) - lc;
    let f_ii = beta * radius.lambda_prime(crit.beta_c);
    let f_iii = 0.5 * (ln_b + lr(2.0 * beta));

    if beta > crit.beta_c {
        return ClosedFormClassification {
            region: Region::R2a,
            residual: f64::NAN,
            predicted_f: f_ii,
        };
    }
    if beta >= crit.beta_0 {
        let q = beta * radius.lambda_prime(crit.beta_c) - lr(beta) + lc - ln_b;
        let (region, f) = if q < -eps {
            (Region::R1, f_i)
        } else if q > eps {
            if beta - crit.beta_0 <= eps {
                (Region::Boundary, 0.5 * (f_ii + f_iii))
            } else {
                (Region::R2b, f_ii)
            }
        } else {
            (Region::Boundary, 0.5 * (f_i + f_ii))
        };
        ClosedFormClassification {
            region,
            residual: q,
            predicted_f: f,
        }
    } else {
        let p = lr(2.0 * beta) - 2.0 * lr(beta) + 2.0 * lc - ln_b;
        let (region, f) = if p < -eps {
            (Region::R1, f_i)
        } else if p > eps {
            if crit.beta_0 - beta <= eps {
                (Region::Boundary, 0.5 * (f_ii + f_iii))
            } else {
                (Region::R3, f_iii)
            }
        } else {
            (Region::Boundary, 0.5 * (f_i + f_iii))
        };
        ClosedFormClassification {
            region,
            residual: p,
            predicted_f: f,
        }
    }
}

/// Closed-form free energy of the positive polymer `|ξ|^k` for a family at scale `β`.
pub fn positive_weight_free_energy_family(radius: RadiusFamily, beta: f64, k: u32, beta_c: f64, b: u32) -> f64 {
    let kb = f64::from(k) * beta;
    if kb <= beta_c {
        f64::from(b).ln() + radius.lambda(kb)
    } else {
        kb * radius.lambda_prime(beta_c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Model, RadiusLaw};
    use num_complex::Complex64;
    use std::f64::consts::LN_2;

    fn gauss(beta: f64, gamma: f64, b: u32) -> EnvironmentSpec {
        EnvironmentSpec::gaussian(beta, gamma, b).unwrap()
    }

    fn one() -> EnvironmentSpec {
        EnvironmentSpec::constant(Complex64::new(1.0, 0.0), 2).unwrap()
    }

    /// Plain ternary search on `G`, independent of the slope polish.
    fn ternary_min(env: &EnvironmentSpec, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if g_of_alpha(env, m1).unwrap() < g_of_alpha(env, m2).unwrap() {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn g_examples() {
        assert!((g_of_alpha(&one(), 2.0).unwrap() - LN_2 / 2.0).abs() < 1e-15);
        assert!((g_of_alpha(&gauss(1.0, 0.0, 2), 1.0).unwrap() - (LN_2 + 0.5)).abs() < 1e-15);
        assert!((g_of_alpha(&gauss(1.0, 0.0, 2), 2.0).unwrap() - 1.346574).abs() < 1e-6);
        assert!(g_of_alpha(&one(), 0.0).is_err());
    }

    #[test]
    fn alpha_min_examples() {
        let bc = (2.0 * LN_2).sqrt();
        let am = alpha_min(&gauss(1.0, 0.0, 2), ALPHA_CAP).unwrap();
        assert!((am - bc).abs() < 1e-8, "{am}");
        assert!((am - 1.177410).abs() < 1e-6);
        assert!((am - ternary_min(&gauss(1.0, 0.0, 2), 0.01, 64.0)).abs() < 1e-6);
        assert_eq!(alpha_min(&one(), ALPHA_CAP).unwrap(), f64::INFINITY);
        let am = alpha_min(&gauss(0.3, 0.0, 2), ALPHA_CAP).unwrap();
        assert!((am - bc / 0.3).abs() < 1e-8);
        assert!((am - 3.924701).abs() < 1e-6);
    }

    #[test]
    fn alpha_min_scales_as_beta_c_over_beta() {
        let bc = (2.0 * LN_2).sqrt();
        for i in 1..=10 {
            let beta = 0.2 * i as f64;
            let am = alpha_min(&gauss(beta, 0.5, 2), ALPHA_CAP).unwrap();
            assert!((am - bc / beta).abs() < 1e-6, "beta {beta}: {am}");
        }
    }

    #[test]
    fn classify_examples() {
        let r = classify(&gauss(0.3, 0.3, 2), EPS_ANALYTIC).unwrap();
        assert_eq!(r.region, Region::R1);
        assert!((r.predicted_f - LN_2).abs() < 1e-12);
        assert!(r.l2_region);

        let r = classify(&gauss(0.3, 1.2, 2), EPS_ANALYTIC).unwrap();
        assert_eq!(r.region, Region::R3);
        assert!((r.predicted_f - (LN_2 + 0.18) / 2.0).abs() < 1e-12);
        assert!((r.predicted_f - 0.436574).abs() < 1e-6);

        let r = classify(&gauss(1.5, 0.1, 2), EPS_ANALYTIC).unwrap();
        assert_eq!(r.region, Region::R2a);
        assert!((r.predicted_f - 1.5 * (2.0 * LN_2).sqrt()).abs() < 1e-9);
        assert!((r.predicted_f - 1.766115).abs() < 1e-6);

        let r = classify(&one(), EPS_ANALYTIC).unwrap();
        assert_eq!(r.region, Region::R1);
        assert!((r.predicted_f - LN_2).abs() < 1e-15);
        assert_eq!(r.alpha_min, f64::INFINITY);

        let r = classify(&gauss(0.8, 0.8, 2), EPS_ANALYTIC).unwrap();
        assert_eq!(r.region, Region::R2b);
        assert!((r.predicted_f - 0.8 * (2.0 * LN_2).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn r2b_needs_independence() {
        use crate::env::{CustomLaw, CustomSampler};
        use std::sync::Arc;
        // same moments as Gaussian(0.8, 0.8) but declared coupled
        let g = gauss(0.8, 0.8, 2);
        let table: Vec<(f64, f64)> = (1..=32).map(|k| {
            let a = k as f64 * 0.25;
            (a, g.moment_abs(a).unwrap())
        }).collect();
        let law = CustomLaw::new(
            "coupled",
            CustomSampler::Joint(Arc::new(|_u: [f64; 4]| Complex64::new(1.0, 0.0))),
            &table,
            g.mean_xi(),
        )
        .unwrap();
        let env = EnvironmentSpec::new(Model::Custom(law), 2).unwrap();
        assert_eq!(classify(&env, EPS_ANALYTIC).unwrap().region, Region::Undetermined);
    }

    #[test]
    fn equality_cases_are_boundary() {
        // α_min = 2 exactly at β = β_0, above γ_0
        let b0 = (2.0 * LN_2).sqrt() / 2.0;
        let r = classify(&gauss(b0, 1.5, 2), 1e-9).unwrap();
        assert_eq!(r.region, Region::Boundary);
        let bi = r.boundary.unwrap();
        assert_eq!(bi.between, (Region::R2b, Region::R3));
        assert!((bi.values.0 - bi.values.1).abs() < 1e-9);
        // G(2) = ln(b|Eξ|) on the R1/R3 curve β² + γ² = ln 2
        let gamma = (LN_2 - 0.09f64).sqrt();
        let r = classify(&gauss(0.3, gamma, 2), 1e-9).unwrap();
        assert_eq!(r.region, Region::Boundary);
    }

    #[test]
    fn zero_mean_law_is_never_r1() {
        let env = EnvironmentSpec::unit_uniform_phase(2).unwrap();
        let r = classify(&env, EPS_ANALYTIC).unwrap();
        assert_eq!(r.f_one, f64::NEG_INFINITY);
        assert_eq!(r.region, Region::R3);
        assert!((r.predicted_f - LN_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn l2_examples() {
        assert!(l2_check(&one()).unwrap());
        let gc = LN_2.sqrt();
        assert!(!l2_check(&gauss(0.0, gc, 2)).unwrap() || {
            // equality up to rounding: both sides are 1
            let env = gauss(0.0, gc, 2);
            (env.second_abs().unwrap() - 2.0 * env.mean_xi().norm_sqr()).abs() < 1e-15
        });
        assert!(l2_check(&gauss(0.3, 0.3, 2)).unwrap());
        assert!(!l2_check(&gauss(0.3, 1.2, 2)).unwrap());
    }

    #[test]
    fn critical_set_gaussian() {
        let c = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
        let bc = (2.0 * LN_2).sqrt();
        assert!((c.beta_c - bc).abs() < 1e-10);
        assert!((c.beta_0 - bc / 2.0).abs() < 1e-10);
        assert!((c.gamma_c - LN_2.sqrt()).abs() < 1e-10);
        assert!((c.gamma_0 - (LN_2 / 2.0).sqrt()).abs() < 1e-10);
        assert!((c.beta_c - 1.177410).abs() < 1e-6);
        assert!((c.gamma_c - 0.832555).abs() < 1e-6);
        assert!((c.gamma_0 - 0.588705).abs() < 1e-6);

        let c3 = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 3, CriticalOptions::default());
        assert!((c3.beta_c - (2.0 * 3f64.ln()).sqrt()).abs() < 1e-10);
        assert!((c3.beta_c - 1.482304).abs() < 1e-6);
    }

    #[test]
    fn bounded_radius_has_infinite_beta_c() {
        // x tanh x - ln cosh x increases to ln 2 without reaching it
        let c = critical_set(RadiusFamily::Rademacher, PhaseFamily::Gaussian, 2, CriticalOptions::default());
        assert_eq!(c.beta_c, f64::INFINITY);
        assert_eq!(c.beta_0, f64::INFINITY);
        assert_eq!(c.gamma_0, f64::INFINITY);
        assert!(first_root(|x| x * x.tanh() - x.cosh().ln() - LN_2, 64.0, 1e-12, "beta_c").is_err());
        let c3 = critical_set(RadiusFamily::Rademacher, PhaseFamily::Gaussian, 3, CriticalOptions::default());
        assert_eq!(c3.beta_c, f64::INFINITY);
        assert!(c3.gamma_c.is_finite());
    }

    #[test]
    fn uniform_phase_critical_gamma() {
        let c = critical_set(RadiusFamily::Gaussian, PhaseFamily::Uniform, 2, CriticalOptions::default());
        assert!(c.gamma_c < 1.0);
        assert!((2.0 * PhaseFamily::Uniform.lambda(c.gamma_c) - LN_2).abs() < 1e-9);
        assert!(c.gamma_0 < c.gamma_c);
    }

    #[test]
    fn closed_form_examples() {
        let crit = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
        let cf = |b, g| classify_indep_closed_form(b, g, &crit, RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, EPS_ANALYTIC);
        let r = cf(0.8, 0.8);
        assert_eq!(r.region, Region::R2b);
        assert!((r.residual + LN_2 - 0.941928).abs() < 1e-6);
        assert_eq!(cf(0.3, 0.3).region, Region::R1);
        assert_eq!(cf(0.0, crit.gamma_c + 0.01).region, Region::R3);
        assert_eq!(cf(1.5, 0.1).region, Region::R2a);
    }

    #[test]
    fn positive_weight_examples() {
        assert!((positive_weight_free_energy(&gauss(0.3, 0.0, 2), 1).unwrap() - (LN_2 + 0.045)).abs() < 1e-12);
        assert!((positive_weight_free_energy(&gauss(0.3, 0.0, 2), 1).unwrap() - 0.738147).abs() < 1e-6);
        let bc = (2.0 * LN_2).sqrt();
        assert!((positive_weight_free_energy(&gauss(1.5, 0.0, 2), 1).unwrap() - 1.5 * bc).abs() < 1e-9);
        assert!((positive_weight_free_energy(&one(), 2).unwrap() - LN_2).abs() < 1e-15);
        assert!(positive_weight_free_energy(&one(), 3).is_err());
        for beta in [0.1, 0.4, 0.7, 1.0, 1.3, 1.9] {
            for k in [1, 2] {
                let generic = positive_weight_free_energy(&gauss(beta, 0.4, 2), k).unwrap();
                let closed = positive_weight_free_energy_family(RadiusFamily::Gaussian, beta, k, bc, 2);
                assert!((generic - closed).abs() < 1e-9, "beta {beta} k {k}");
            }
        }
    }

    #[test]
    fn two_point_phase_classification() {
        // |ξ| ≡ 1: α_min = ∞, R1 iff ln 2 / 2 < ln(2t)
        let env = |t| EnvironmentSpec::new(Model::RademacherPhase { t, radius: RadiusLaw::Unit }, 2).unwrap();
        assert_eq!(classify(&env(0.9), EPS_ANALYTIC).unwrap().region, Region::R1);
        assert_eq!(classify(&env(0.5), EPS_ANALYTIC).unwrap().region, Region::R3);
        assert_eq!(classify(&env(0.5f64.sqrt()), 1e-12).unwrap().region, Region::Boundary);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn g_is_unimodal(beta in 0.2f64..2.0, u1 in 0.01f64..0.99, u2 in 0.01f64..0.99) {
                let env = gauss(beta, 0.5, 2);
                let am = alpha_min(&env, ALPHA_CAP).unwrap();
                let (x, y) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
                prop_assume!(y - x > 1e-3);
                let g = |a| g_of_alpha(&env, a).unwrap();
                prop_assert!(g(x * am) > g(y * am));
                prop_assert!(g(am / y) < g(am / x));
            }

            #[test]
            fn classifiers_agree_off_boundary(beta in 0.0f64..2.0, gamma in 0.0f64..2.0) {
                let crit = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
                let generic = classify(&gauss(beta, gamma, 2), 1e-9).unwrap();
                let closed = classify_indep_closed_form(beta, gamma, &crit, RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, 1e-9);
                if generic.region != Region::Boundary && closed.region != Region::Boundary {
                    prop_assert_eq!(generic.region, closed.region);
                    prop_assert!((generic.predicted_f - closed.predicted_f).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn free_energy_is_continuous_across_boundaries() {
        let crit = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
        // R1/R3 crossing along γ at β = 0.3: boundary at γ² = ln 2 - β²
        let gb = (LN_2 - 0.09f64).sqrt();
        let below = classify(&gauss(0.3, gb - 1e-7, 2), 1e-12).unwrap();
        let above = classify(&gauss(0.3, gb + 1e-7, 2), 1e-12).unwrap();
        assert_eq!((below.region, above.region), (Region::R1, Region::R3));
        assert!((below.predicted_f - above.predicted_f).abs() < 1e-6);
        // R1/R2 crossing along γ at β = 0.8
        let q = |g: f64| 0.8 * crit.beta_c - 0.32 + 0.5 * g * g - LN_2;
        let gb = bisect(q, 0.0, 2.0, 1e-14).unwrap();
        let below = classify(&gauss(0.8, gb - 1e-7, 2), 1e-12).unwrap();
        let above = classify(&gauss(0.8, gb + 1e-7, 2), 1e-12).unwrap();
        assert_eq!((below.region, above.region), (Region::R1, Region::R2b));
        assert!((below.predicted_f - above.predicted_f).abs() < 1e-6);
        // R2/R3 crossing along β at γ = 1.5
        let left = classify(&gauss(crit.beta_0 - 1e-7, 1.5, 2), 1e-12).unwrap();
        let right = classify(&gauss(crit.beta_0 + 1e-7, 1.5, 2), 1e-12).unwrap();
        assert_eq!((left.region, right.region), (Region::R3, Region::R2b));
        assert!((left.predicted_f - right.predicted_f).abs() < 1e-6);
    }

    #[test]
    fn report_serializes_infinity() {
        let r = classify(&one(), EPS_ANALYTIC).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"alpha_min\":\"inf\""), "{json}");
        let back: PhaseReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.alpha_min, f64::INFINITY);
    }
}
