//! Seeded battery of exact identities and inequalities over random instances.
//!
//! Report schema:
//! `{"seed": u64, "instances": u64, "all_passed": bool,
//!   "checks": [{"name": str, "instances": u64, "max_deviation": f64,
//!               "tolerance": f64, "passed": bool}]}`

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use zsp_core::classifier::excess_risk_check;
use zsp_core::discrete::{
    conditional_mean_svd, density_ratio_bound, distribution_shift_check, information_density,
    lancaster_truncate, predictors_and_bound, random, truncation_error, DiscreteTriple,
};
use zsp_core::rng::{stream, SimRng};
use zsp_core::ssl::{
    barlow_twins_loss, clip_loss, clip_taylor_gap, spectral_contrastive_loss,
    spectral_contrastive_loss_loop, vicreg_invariance_identity, EmbeddingBatch,
};

use crate::common::ordered_map;
use crate::config::ExperimentConfig;
use crate::error::LabResult;
use crate::RunOutput;

pub const CHECK_NAMES: [&str; 14] = [
    "msc_dual",
    "lancaster_tail",
    "decomposition_bound",
    "shift_additive",
    "shift_multiplicative",
    "excess_risk",
    "ci_collapse",
    "vicreg_identity",
    "spectral_loop",
    "clip_single_pair",
    "clip_zero_batch",
    "clip_taylor_order",
    "clip_rotation",
    "barlow_invariance",
];

/// Step sizes 0.2·2^{-k} for the Taylor-gap ladder.
const TAYLOR_STEPS: i32 = 8;
/// Roundoff allowance subtracted from each Taylor gap.
const TAYLOR_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub instances: usize,
    pub all_passed: bool,
    pub checks: Vec<CheckResult>,
}

fn tolerance(name: &str) -> f64 {
    match name {
        "msc_dual" | "lancaster_tail" | "clip_rotation" => 1e-10,
        "barlow_invariance" => 1e-8,
        "clip_taylor_order" => 0.25,
        _ => 1e-12,
    }
}

fn sizes(rng: &mut SimRng) -> (usize, usize, usize) {
    (rng.random_range(2..=5), rng.random_range(2..=4), rng.random_range(2..=5))
}

fn normal(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn excess(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).max(0.0)
}

/// Deviation of one instance of one check; zero means exact.
fn deviation(name: &str, rng: &mut SimRng) -> LabResult<f64> {
    Ok(match name {
        "msc_dual" => {
            let (nx, _, nz) = sizes(rng);
            let joint = random::joint::<f64, _>(nx, nz, rng);
            let r = information_density(&joint)?;
            let (px, pz) = (joint.marginal_x(), joint.marginal_z());
            let mut direct = 0.0;
            for x in 0..nx {
                for z in 0..nz {
                    direct += px[x] * pz[z] * (r[(x, z)] - 1.0).powi(2);
                }
            }
            (direct - conditional_mean_svd(&joint)?.tail_energy(1)).abs()
        }
        "lancaster_tail" => {
            let (nx, _, nz) = sizes(rng);
            let joint = random::joint::<f64, _>(nx, nz, rng);
            let spectrum = conditional_mean_svd(&joint)?;
            let mut worst: f64 = 0.0;
            for d in 1..=nx.min(nz) {
                let (table, _) = lancaster_truncate(&joint, d)?;
                let err = truncation_error(&joint, &table)?;
                worst = worst.max((err - spectrum.tail_energy(d)).abs());
            }
            worst
        }
        "decomposition_bound" => {
            let (nx, ny, nz) = sizes(rng);
            let triple = random::triple::<f64, _>(nx, ny, nz, rng);
            let prompt = random::prompt::<f64, _>(ny, nz, rng);
            let r: Vec<f64> = (0..ny).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rep = predictors_and_bound(&triple, &prompt, &r)?;
            excess(rep.lhs, rep.rhs)
        }
        "shift_additive" | "shift_multiplicative" => {
            let n = rng.random_range(2..=8);
            let p = random::simplex::<f64, _>(n, rng);
            let q = random::simplex::<f64, _>(n, rng);
            let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = density_ratio_bound(&p, &q)?;
            let check = distribution_shift_check(&p, &q, &eta, Some(b))?;
            if name == "shift_additive" {
                excess(check.norm_p, check.additive_rhs)
            } else {
                let (rhs, _) = check.multiplicative.expect("ratio bound supplied");
                excess(check.norm_p, rhs)
            }
        }
        "excess_risk" => {
            let (nx, ny, nz) = sizes(rng);
            let triple = random::triple::<f64, _>(nx, ny, nz, rng);
            let prompt = random::prompt::<f64, _>(ny, nz, rng);
            let mut scores = vec![vec![0.0; ny]; nx];
            for c in 0..ny {
                let r: Vec<f64> = (0..ny).map(|y| f64::from(u8::from(y == c))).collect();
                let rep = predictors_and_bound(&triple, &prompt, &r)?;
                for (x, row) in scores.iter_mut().enumerate() {
                    row[c] = rep.eta_indirect[x];
                }
            }
            let rep = excess_risk_check(|x| scores[x].clone(), &triple)?;
            excess(rep.lhs, rep.rhs)
        }
        "ci_collapse" => {
            let (nx, ny, nz) = sizes(rng);
            let pz = random::simplex::<f64, _>(nz, rng);
            let px_z = random::conditional::<f64, _>(nx, nz, rng);
            let py_z = random::conditional::<f64, _>(ny, nz, rng);
            let triple = DiscreteTriple::conditionally_independent(&pz, &px_z, &py_z)?;
            let r: Vec<f64> = (0..ny).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rep = predictors_and_bound(&triple, &triple.unbiased_prompt(), &r)?;
            rep.eta_direct
                .iter()
                .zip(&rep.eta_indirect)
                .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
        }
        "vicreg_identity" | "spectral_loop" => {
            let n = rng.random_range(2..=16);
            let d = rng.random_range(1..=4);
            let batch = EmbeddingBatch::new(normal(n, d, rng), normal(n, d, rng))?;
            let (a, b) = if name == "vicreg_identity" {
                vicreg_invariance_identity(&batch)
            } else {
                (spectral_contrastive_loss(&batch), spectral_contrastive_loss_loop(&batch))
            };
            (a - b).abs() / a.abs().max(1.0)
        }
        "clip_single_pair" => {
            let d = rng.random_range(1..=4);
            let batch = EmbeddingBatch::new(normal(1, d, rng), normal(1, d, rng))?;
            clip_loss(&batch, false).abs()
        }
        "clip_zero_batch" => {
            let n = rng.random_range(1..=16);
            let d = rng.random_range(1..=4);
            let batch = EmbeddingBatch::<f64>::new(DMatrix::zeros(n, d), DMatrix::zeros(n, d))?;
            (clip_loss(&batch, false) - (n as f64).ln()).abs()
        }
        "clip_taylor_order" => {
            let n = rng.random_range(2..=10);
            let d = rng.random_range(1..=3);
            let batch = EmbeddingBatch::new(normal(n, d, rng), normal(n, d, rng))?;
            // gap/ε² on the small-ε half against the large-ε half: about
            // 1/16 for a cubic remainder, about 1 if an ε² term survived.
            let q: Vec<f64> = (0..TAYLOR_STEPS)
                .map(|k| {
                    let e = 0.2 / 2f64.powi(k);
                    (clip_taylor_gap(&batch, e, false).gap - TAYLOR_FLOOR).max(0.0) / (e * e)
                })
                .collect();
            let half = q.len() / 2;
            let large = q[..half].iter().copied().fold(0.0, f64::max);
            let small = q[half..].iter().copied().fold(0.0, f64::max);
            if large > 0.0 {
                small / large
            } else {
                0.0
            }
        }
        "clip_rotation" => {
            let n = rng.random_range(1..=10);
            let batch = EmbeddingBatch::new(normal(n, 2, rng), normal(n, 2, rng))?;
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
            let turned = EmbeddingBatch::new(&batch.a * &rot, &batch.b * &rot)?;
            (clip_loss(&batch, false) - clip_loss(&turned, false)).abs()
        }
        "barlow_invariance" => {
            let d = rng.random_range(1..=3);
            let batch = EmbeddingBatch::new(normal(40, d, rng), normal(40, d, rng))?;
            let m = normal(d, d, rng) + DMatrix::identity(d, d) * 3.0;
            let moved = EmbeddingBatch::new(&batch.a * m, batch.b.clone())?;
            (barlow_twins_loss(&batch, 0.5)? - barlow_twins_loss(&moved, 0.5)?).abs()
        }
        other => unreachable!("unknown check {other}"),
    })
}

fn run_check(name: &'static str, k: usize, config: &ExperimentConfig) -> LabResult<CheckResult> {
    let instances = config.identities.instances;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(config.seed, (k * instances + i) as u64);
        worst = worst.max(deviation(name, &mut rng)?);
    }
    if config.identities.fault.as_deref() == Some(name) {
        worst += 1.0;
    }
    let tol = tolerance(name);
    Ok(CheckResult {
        name,
        instances,
        max_deviation: worst,
        tolerance: tol,
        passed: worst <= tol,
    })
}

pub fn identity_report(config: &ExperimentConfig) -> LabResult<IdentityReport> {
    let indexed: Vec<(usize, &'static str)> = CHECK_NAMES.iter().copied().enumerate().collect();
    let checks = ordered_map(&indexed, |&(k, name)| run_check(name, k, config))?;
    Ok(IdentityReport {
        seed: config.seed,
        instances: config.identities.instances,
        all_passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

pub fn run_identities(config: &ExperimentConfig) -> LabResult<RunOutput> {
    let report = identity_report(config)?;
    let passed = report.all_passed;
    let value = serde_json::to_value(&report).expect("report serializes");
    Ok(RunOutput::report(value, passed))
}
