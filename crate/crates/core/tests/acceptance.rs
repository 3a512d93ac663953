//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Run with `--nocapture` to see the lines on success.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use cpolymer::cli::config::ModelConfig;
use cpolymer::cli::diagram;
use cpolymer::env::{EnvironmentSpec, PhaseFamily, RadiusFamily};
use cpolymer::mc::{self, ExperimentPlan, ExperimentRow, Functional, Ratio4Options};
use cpolymer::phase::{classify, critical_set, CriticalOptions, Region, EPS_ANALYTIC, EPS_GRID};
use cpolymer::rng::Stream;
use cpolymer::sim::{self, EvalOptions};

const ORACLE_TOL: f64 = 1e-12;
const ORACLE_SEEDS: u64 = 50;
const ORACLE_MAX_TIME: Duration = Duration::from_secs(10);

const MOMENT_N: u32 = 6;
const MOMENT_REPLICAS: usize = 100_000;
const MOMENT_MAX_Z: f64 = 5.0;
const MOMENT_MAX_TIME: Duration = Duration::from_secs(60);

const CRITICAL_TOL: f64 = 1e-8;

const GRID: &str = "0:2:200,0:2:200";
const AGREEMENT_MIN: f64 = 0.999;
/// Half-width, in grid steps, of the window around `(β_0, γ_0)` that must
/// contain all three phases.
const TRIPLE_WINDOW: f64 = 3.0;

const FE_N: u32 = 20;
const FE_REPLICAS: usize = 32;
const FE_SEED: u64 = 1;
const FE_TOL: f64 = 0.15;
const FE_MAX_TIME: Duration = Duration::from_secs(300);
const PROBES: [(f64, f64, f64, Region); 5] = [
    (0.3, 0.3, 0.6931, Region::R1),
    (0.3, 1.2, 0.4366, Region::R3),
    (1.5, 0.1, 1.7661, Region::R2a),
    (0.8, 0.8, 0.9419, Region::R2b),
    (0.0, 0.0, LN_2, Region::R1),
];
/// Closeness of the quoted four-digit targets to the computed predictions.
const PROBE_TARGET_TOL: f64 = 1e-4;

const RATIO4_N: u32 = 10;
const RATIO4_OMEGA: usize = 20;
const RATIO4_M: usize = 4000;

const PZ_CASES: usize = 1000;

const MART_N: u32 = 10;
const MART_REPLICAS: usize = 10_000;
const MART_MAX_Z: f64 = 5.0;
const MART_DEPTHS: std::ops::RangeInclusive<u32> = 4..=12;
const MART_GROWTH_MAX: f64 = 2.0;

const SEED: u64 = 1;
const PARALLEL_THREADS: usize = 4;

#[derive(Clone)]
struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

/// An outcome plus the CSV bytes it produced, for the determinism check.
type Run = (Outcome, String);

fn timed<F: FnOnce() -> (bool, String, String)>(id: u8, name: &'static str, f: F) -> Run {
    let start = Instant::now();
    let (pass, detail, csv) = f();
    let elapsed = start.elapsed();
    (
        Outcome {
            id,
            name,
            pass,
            detail,
            elapsed,
        },
        csv,
    )
}

fn gauss(beta: f64, gamma: f64) -> EnvironmentSpec {
    EnvironmentSpec::gaussian(beta, gamma, 2).unwrap()
}

fn c1() -> Run {
    timed(1, "oracle equivalence", || {
        let mut csv = String::from("b,n,seed,discrepancy\n");
        let mut worst: f64 = 0.0;
        for b in [2, 3] {
            let env = EnvironmentSpec::gaussian(0.7, 0.6, b).unwrap();
            for n in 1..=6 {
                for s in 0..ORACLE_SEEDS {
                    let d = sim::oracle_discrepancy(&env, n, &Stream::new(SEED, s), &EvalOptions::default()).unwrap();
                    worst = worst.max(d);
                    writeln!(csv, "{b},{n},{s},{d:e}").unwrap();
                }
            }
        }
        (worst <= ORACLE_TOL, format!("max relative difference {worst:.2e}"), csv)
    })
}

fn c2() -> Run {
    timed(2, "exact moment identities", || {
        let mut csv = String::from("model,check,empirical_re,empirical_im,theoretical_re,theoretical_im,z\n");
        let mut pass = true;
        let mut parts = Vec::new();
        for env in [gauss(0.5, 0.5), EnvironmentSpec::unit_uniform_phase(2).unwrap()] {
            let checks = [
                mc::verify_mean(&env, MOMENT_N, MOMENT_REPLICAS, SEED).unwrap(),
                mc::verify_second_moment(&env, MOMENT_N, MOMENT_REPLICAS, SEED + 1).unwrap(),
            ];
            for c in checks {
                pass &= c.z <= MOMENT_MAX_Z;
                parts.push(format!("{}/{} z={:.2}", env.label(), c.name, c.z));
                writeln!(
                    csv,
                    "{},{},{:e},{:e},{:e},{:e},{:e}",
                    env.label(),
                    c.name,
                    c.empirical.re,
                    c.empirical.im,
                    c.theoretical.re,
                    c.theoretical.im,
                    c.z
                )
                .unwrap();
            }
        }
        (pass, parts.join(", "), csv)
    })
}

fn c3() -> Run {
    timed(3, "critical set", || {
        let c = critical_set(RadiusFamily::Gaussian, PhaseFamily::Gaussian, 2, CriticalOptions::default());
        let beta_c = (2.0 * LN_2).sqrt();
        let want = [beta_c, beta_c / 2.0, LN_2.sqrt(), (LN_2 / 2.0).sqrt()];
        let got = [c.beta_c, c.beta_0, c.gamma_c, c.gamma_0];
        let worst = want.iter().zip(&got).map(|(w, g)| (w - g).abs()).fold(0.0, f64::max);
        let csv = format!(
            "beta_c,beta_0,gamma_c,gamma_0\n{:e},{:e},{:e},{:e}\n",
            got[0], got[1], got[2], got[3]
        );
        (worst <= CRITICAL_TOL, format!("max deviation {worst:.2e}"), csv)
    })
}

fn c4() -> Run {
    timed(4, "dual classifier agreement", || {
        let model = ModelConfig::Gaussian { beta: 0.0, gamma: 0.0 };
        let d = diagram::compute(&model, GRID.parse().unwrap(), 2, EPS_GRID).unwrap();
        let total = d.cells.len();
        let disagree: Vec<_> = d.disagreements().collect();
        let agreement = 1.0 - disagree.len() as f64 / total as f64;
        let outside_band = disagree
            .iter()
            .filter(|c| c.region != Region::Boundary && c.closed_form_region != Region::Boundary)
            .count();

        // all three phases within a few cells of (β_0, γ_0)
        let step_b = (d.grid.beta.hi - d.grid.beta.lo) / (d.grid.beta.steps - 1) as f64;
        let step_g = (d.grid.gamma.hi - d.grid.gamma.lo) / (d.grid.gamma.steps - 1) as f64;
        let near = d.cells.iter().filter(|c| {
            (c.beta - d.critical.beta_0).abs() <= TRIPLE_WINDOW * step_b
                && (c.gamma - d.critical.gamma_0).abs() <= TRIPLE_WINDOW * step_g
        });
        let mut seen = [false; 3];
        for c in near {
            match c.region.coarse() {
                Region::R1 => seen[0] = true,
                Region::R2b => seen[1] = true,
                Region::R3 => seen[2] = true,
                _ => {}
            }
        }
        let triple = seen.iter().all(|&s| s);

        let mut csv = Vec::new();
        diagram::write_csv(&mut csv, &d).unwrap();
        let mut ppm = Vec::new();
        diagram::write_ppm(&mut ppm, &d).unwrap();
        let mut csv = String::from_utf8(csv).unwrap();
        // the raster is binary; fold it into the comparison as a checksum line
        let sum = ppm.iter().fold(0u64, |h, &x| h.wrapping_mul(1_099_511_628_211).wrapping_add(u64::from(x)));
        writeln!(csv, "# ppm {} bytes, hash {sum:016x}", ppm.len()).unwrap();
        (
            agreement >= AGREEMENT_MIN && outside_band == 0 && triple,
            format!(
                "agreement {:.4}% ({} of {total} differ, {outside_band} outside the band), triple point {}",
                100.0 * agreement,
                disagree.len(),
                if triple { "present" } else { "missing" }
            ),
            csv,
        )
    })
}

fn c5() -> Run {
    timed(5, "free-energy convergence", || {
        let mut rows = Vec::new();
        let mut pass = true;
        let mut parts = Vec::new();
        for (beta, gamma, target, region) in PROBES {
            let env = gauss(beta, gamma);
            let report = classify(&env, EPS_ANALYTIC).unwrap();
            let mut plan = ExperimentPlan::new(env, FE_N, FE_REPLICAS, FE_SEED, Functional::FreeEnergy);
            plan.keep_values = true;
            let est = mc::run(&plan).unwrap();
            let prediction_ok = report.region == region && (report.predicted_f - target).abs() <= PROBE_TARGET_TOL;
            let mean_gap = (est.mean() - report.predicted_f).abs();
            let median_gap = (est.median() - report.predicted_f).abs();
            let ok = prediction_ok && est.excluded() == 0 && (mean_gap <= FE_TOL || median_gap <= FE_TOL);
            pass &= ok;
            parts.push(format!(
                "({beta},{gamma}) {} mean {:.4} median {:.4} vs {:.4}{}",
                report.region,
                est.mean(),
                est.median(),
                report.predicted_f,
                if ok { "" } else { " MISS" }
            ));
            rows.push(ExperimentRow::new(&plan, &est, Some(&report)));
        }
        let mut csv = Vec::new();
        mc::write_rows(&mut csv, &rows).unwrap();
        (pass, parts.join("; "), String::from_utf8(csv).unwrap())
    })
}

fn c6() -> Run {
    timed(6, "conditional second-moment free energy", || {
        let env = gauss(0.8, 0.8);
        let report = classify(&env, EPS_ANALYTIC).unwrap();
        let target = 0.8 * (2.0 * LN_2).sqrt();
        let plan = ExperimentPlan::new(env, FE_N, FE_REPLICAS, FE_SEED, Functional::ConditionalFreeEnergy);
        let est = mc::run(&plan).unwrap();
        let gap = (est.mean() - target).abs();
        let consistent = (report.predicted_f - target).abs() <= 1e-9;
        let mut csv = Vec::new();
        mc::write_rows(&mut csv, &[ExperimentRow::new(&plan, &est, Some(&report))]).unwrap();
        (
            consistent && est.excluded() == 0 && gap <= FE_TOL,
            format!("mean {:.4} vs {target:.4} (gap {gap:.4})", est.mean()),
            String::from_utf8(csv).unwrap(),
        )
    })
}

fn c7() -> Run {
    timed(7, "fourth-moment bound", || {
        let env = gauss(0.8, 0.8);
        let r = mc::ratio4(&env, RATIO4_N, RATIO4_OMEGA, RATIO4_M, SEED, &Ratio4Options::default()).unwrap();
        let mut csv = String::from("replica,ratio,std_error,pass\n");
        for s in &r.samples {
            writeln!(csv, "{},{:e},{:e},{}", s.replica, s.ratio, s.std_error, s.pass).unwrap();
        }
        let all = r.samples.len() == RATIO4_OMEGA
            && r
                .samples
                .iter()
                .all(|s| s.ratio <= mc::RATIO4_BOUND + mc::RATIO4_SE_MULTIPLE * s.std_error);
        (all && r.pass, format!("max ratio {:.4} over {} replicas", r.max_ratio, r.samples.len()), csv)
    })
}

fn c8() -> Outcome {
    timed(8, "Paley-Zygmund suite", || {
        let r = mc::pz_property_suite(PZ_CASES, SEED);
        (
            r.violations == 0 && r.cases == PZ_CASES,
            format!("{} checks, {} violations, min margin {:.2e}", r.checks, r.violations, r.worst_margin),
            String::new(),
        )
    })
    .0
}

fn c9() -> Outcome {
    timed(9, "martingale mean and L2 bound", || {
        let env = gauss(0.3, 0.3);
        let m = mc::martingale_summary(&env, MART_N, MART_REPLICAS, SEED).unwrap();
        let seconds: Vec<(u32, f64)> = MART_DEPTHS
            .map(|n| (n, mc::martingale_summary(&env, n, MART_REPLICAS, SEED).unwrap().second.mean()))
            .collect();
        let first = seconds.first().unwrap().1;
        let last = seconds.last().unwrap().1;
        let growth = last / first;
        let bounded = seconds.iter().all(|&(_, s)| s.is_finite() && s / first < MART_GROWTH_MAX);
        (
            m.mean.z <= MART_MAX_Z && growth < MART_GROWTH_MAX && bounded,
            format!(
                "mean {:.4}{:+.4}i (z={:.2}), E|M|^2 {first:.4} at n=4, {last:.4} at n=12 (x{growth:.3})",
                m.mean.empirical.re, m.mean.empirical.im, m.mean.z
            ),
            String::new(),
        )
    })
    .0
}

fn criteria_1_to_7() -> Vec<Run> {
    vec![c1(), c2(), c3(), c4(), c5(), c6(), c7()]
}

fn in_pool(threads: usize) -> Vec<Run> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(criteria_1_to_7)
}

fn print(o: &Outcome) {
    println!(
        "{} criterion {:>2} {}: {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_criteria() {
    let serial = in_pool(1);
    let parallel = in_pool(PARALLEL_THREADS);

    let mut outcomes = Vec::new();
    for (mut o, _) in serial.iter().map(|(o, c)| (o.clone(), c)) {
        let limit = match o.id {
            1 => Some(ORACLE_MAX_TIME),
            2 => Some(MOMENT_MAX_TIME),
            5 => Some(FE_MAX_TIME),
            _ => None,
        };
        if let Some(limit) = limit {
            if o.elapsed > limit {
                o.pass = false;
                write!(o.detail, "; over the {}s limit", limit.as_secs()).unwrap();
            }
        }
        outcomes.push(o);
    }
    outcomes.push(c8());
    outcomes.push(c9());

    let differing: Vec<u8> = serial
        .iter()
        .zip(&parallel)
        .filter(|((_, a), (_, b))| a.as_bytes() != b.as_bytes())
        .map(|((o, _), _)| o.id)
        .collect();
    let bytes: usize = serial.iter().map(|(_, c)| c.len()).sum();
    outcomes.push(Outcome {
        id: 10,
        name: "determinism",
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("criteria 1-7 CSV ({bytes} bytes) identical under 1 and {PARALLEL_THREADS} threads")
        } else {
            format!("CSV differs for criteria {differing:?}")
        },
        elapsed: parallel.iter().map(|(o, _)| o.elapsed).sum(),
    });

    println!();
    for o in &outcomes {
        print(o);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
