//! The `verify` suite: oracle equivalence, moment identities, critical set,
//! Paley–Zygmund and the fourth-moment ratio.

use std::f64::consts::LN_2;

use crate::env::{EnvironmentSpec, PhaseFamily, RadiusFamily};
use crate::mc::{self, Ratio4Options};
use crate::phase::{critical_set, CriticalOptions};
use crate::rng::Stream;
use crate::sim::{self, EvalOptions};

pub const CHECKS: [&str; 6] = ["oracle", "moments", "one-step", "critical", "pz", "ratio4"];

const ORACLE_TOL: f64 = 1e-12;
const CRITICAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub node_budget: u64,
    pub corrupt_pair_term: bool,
}

fn check(name: &'static str, pass: bool, detail: String) -> CheckResult {
    CheckResult { name, pass, detail }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckResult {
    check(name, false, format!("error: {err}"))
}

fn oracle(o: &VerifyOptions) -> CheckResult {
    let opts = EvalOptions {
        node_budget: o.node_budget,
        corrupt_pair_term: o.corrupt_pair_term,
        ..EvalOptions::default()
    };
    let mut worst: f64 = 0.0;
    for b in [2, 3] {
        let env = EnvironmentSpec::gaussian(0.7, 0.6, b).expect("valid");
        for n in 1..=6 {
            for s in 0..10 {
                match sim::oracle_discrepancy(&env, n, &Stream::new(o.seed, s), &opts) {
                    Ok(d) => worst = worst.max(d),
                    Err(e) => return failed("oracle", e),
                }
            }
        }
    }
    check(
        "oracle",
        worst <= ORACLE_TOL,
        format!("max relative difference {worst:.3e} (tolerance {ORACLE_TOL:.0e})"),
    )
}

fn moments(o: &VerifyOptions) -> CheckResult {
    let envs = [
        EnvironmentSpec::gaussian(0.5, 0.5, 2).expect("valid"),
        EnvironmentSpec::unit_uniform_phase(2).expect("valid"),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for env in &envs {
        for r in [
            mc::verify_mean(env, 6, 20_000, o.seed),
            mc::verify_second_moment(env, 6, 20_000, o.seed.wrapping_add(1)),
        ] {
            match r {
                Ok(c) => {
                    pass &= c.pass;
                    parts.push(format!("{}/{} z={:.2}", env.label(), c.name, c.z));
                }
                Err(e) => return failed("moments", e),
            }
        }
    }
    check("moments", pass, parts.join(", "))
}

fn one_step(o: &VerifyOptions) -> CheckResult {
    let env = EnvironmentSpec::gaussian(0.5, 0.5, 2).expect("valid");
    let opts = EvalOptions {
        node_budget: o.node_budget,
        ..EvalOptions::default()
    };
    match sim::one_step_identity_check(&env, 4, 20_000, &Stream::new(o.seed, 0), &opts) {
        Ok(r) => check(
            "one-step",
            r.mean_z <= mc::Z_THRESHOLD && r.second_z <= mc::Z_THRESHOLD,
            format!("mean z={:.2}, second z={:.2}", r.mean_z, r.second_z),
        ),
        Err(e) => failed("one-step", e),
    }
}

fn critical() -> CheckResult {
    let c = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
    let bc = (2.0 * LN_2).sqrt();
    let errs = [
        (c.beta_c - bc).abs(),
        (c.beta_0 - bc / 2.0).abs(),
        (c.gamma_c - LN_2.sqrt()).abs(),
        (c.gamma_0 - (LN_2 / 2.0).sqrt()).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        "critical",
        worst <= CRITICAL_TOL,
        format!("max deviation {worst:.3e} (tolerance {CRITICAL_TOL:.0e})"),
    )
}

fn pz(o: &VerifyOptions) -> CheckResult {
    let r = mc::pz_property_suite(1000, o.seed);
    check(
        "pz",
        r.violations == 0,
        format!("{} checks, {} violations, min margin {:.3e}", r.checks, r.violations, r.worst_margin),
    )
}

fn ratio4(o: &VerifyOptions) -> CheckResult {
    let env = EnvironmentSpec::gaussian(0.8, 0.8, 2).expect("valid");
    let opts = Ratio4Options {
        node_budget: o.node_budget,
        ..Ratio4Options::default()
    };
    match mc::ratio4(&env, 6, 4, 1000, o.seed, &opts) {
        Ok(r) => check("ratio4", r.pass, format!("max ratio {:.3}", r.max_ratio)),
        Err(e) => failed("ratio4", e),
    }
}

/// Runs the named checks (all when `only` is empty) in suite order.
pub fn run_suite(only: &[String], o: &VerifyOptions) -> Result<Vec<CheckResult>, String> {
    if let Some(bad) = only.iter().find(|n| !CHECKS.contains(&n.as_str())) {
        return Err(format!("unknown check '{bad}'; known: {}", CHECKS.join(", ")));
    }
    let wanted = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let mut out = Vec::new();
    for name in CHECKS {
        if !wanted(name) {
            continue;
        }
        out.push(match name {
            "oracle" => oracle(o),
            "moments" => moments(o),
            "one-step" => one_step(o),
            "critical" => critical(),
            "pz" => pz(o),
            "ratio4" => ratio4(o),
            _ => unreachable!(),
        });
    }
    Ok(out)
}
