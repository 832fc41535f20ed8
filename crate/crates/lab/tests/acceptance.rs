//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use zsp_core::discrete::{random, DiscreteTriple};
use zsp_core::kernel::{KernelSpec, ProductKernel, SpectralFilter};
use zsp_core::prompting::{prompt_bias_discrete, DiscreteStrategy};
use zsp_core::rn::{fit_rn, split_pairs};
use zsp_core::rng::{seeded, stream};
use zsp_lab::config::{RouteChoice, Sweep};
use zsp_lab::identities::{identity_report, IdentityReport};
use zsp_lab::{run, ExperimentConfig, ExperimentKind};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().expect("array").iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect()
}

/// Every step may drop by at most the spread at the later point.
fn nondecreasing_within(medians: &[f64], sds: &[f64]) -> bool {
    medians.windows(2).zip(&sds[1..]).all(|(w, sd)| w[1] >= w[0] - sd)
}

fn check_result<'a>(report: &'a IdentityReport, name: &str) -> &'a zsp_lab::identities::CheckResult {
    report.checks.iter().find(|c| c.name == name).expect("check present")
}

fn checks_line(report: &IdentityReport, names: &[&str]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &name in names {
        let c = check_result(report, name);
        ok &= c.passed && c.instances >= 1000;
        parts.push(format!("{name}={:.1e}/{:.0e}", c.max_deviation, c.tolerance));
    }
    outcome(ok, parts.join(" "))
}

fn discrete_oracles(report: &IdentityReport) -> Outcome {
    checks_line(
        report,
        &[
            "msc_dual",
            "lancaster_tail",
            "decomposition_bound",
            "shift_additive",
            "shift_multiplicative",
            "excess_risk",
        ],
    )
}

fn ci_collapse(report: &IdentityReport) -> Outcome {
    let c = check_result(report, "ci_collapse");
    outcome(c.passed && c.max_deviation <= 1e-12, format!("max |eta_direct - eta_indirect| = {:.2e}", c.max_deviation))
}

fn theta_sweep() -> Outcome {
    let mut config = ExperimentConfig::default();
    config.theta_sweep.trainer = None;
    config.replicates = 10;
    let out = run(ExperimentKind::ThetaSweep, &config).expect("theta sweep runs");
    let per = out.summary["per_theta"].as_array().unwrap();
    let med: Vec<f64> = per.iter().map(|p| p["accuracy"]["indirect"]["median"].as_f64().unwrap()).collect();
    let sd: Vec<f64> = per.iter().map(|p| p["accuracy"]["indirect"]["sd"].as_f64().unwrap()).collect();
    let direct = per.last().unwrap()["accuracy"]["direct"]["median"].as_f64().unwrap();
    let gap = (med.last().unwrap() - direct).abs();
    let res0 = per[0]["resdep_median"].as_f64().unwrap();
    let res1 = per.last().unwrap()["resdep_median"].as_f64().unwrap();
    let ok = nondecreasing_within(&med, &sd) && gap <= 0.01 && res1 <= 0.2 * res0;
    outcome(
        ok,
        format!(
            "indirect medians {:?}, |indirect-direct| at theta=1 = {gap:.4}, resdep ratio = {:.3}",
            med.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>(),
            res1 / res0
        ),
    )
}

/// ∫∫ p(x,z)² / (p(x)p(z)) dx dz − 1 for the standard bivariate normal.
fn msc_by_quadrature(rho: f64) -> f64 {
    let (lo, hi, steps) = (-9.0, 9.0, 900);
    let h = (hi - lo) / steps as f64;
    let s2 = 1.0 - rho * rho;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for i in 0..=steps {
        let x = lo + i as f64 * h;
        for j in 0..=steps {
            let z = lo + j as f64 * h;
            let joint = (-(x * x - 2.0 * rho * x * z + z * z) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2.sqrt());
            total += joint * joint / (phi(x) * phi(z));
        }
    }
    total * h * h - 1.0
}

fn nocco_calibration() -> Outcome {
    let truth = msc_by_quadrature(0.5);
    let config = ExperimentConfig {
        replicates: 1,
        ..Default::default()
    };
    let out = run(ExperimentKind::Dependence, &config).expect("dependence runs");
    let est = out.summary["nocco_median"].as_f64().unwrap();
    let rel = (est - truth).abs() / truth;
    outcome(
        rel <= 0.15 && (truth - 1.0 / 3.0).abs() < 1e-6,
        format!("NOCCO = {est:.4}, quadrature truth = {truth:.6}, relative error = {rel:.3}"),
    )
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn rn_null() -> Outcome {
    let n = 2000;
    let x = normal_matrix(n, 2, 11);
    let z = normal_matrix(n, 2, 12);
    let split = split_pairs(&x, &z, 13).unwrap();
    let kernel = ProductKernel::new(KernelSpec::rbf(3.0).unwrap(), KernelSpec::rbf(3.0).unwrap());
    let model = fit_rn(
        &split.paired_x,
        &split.paired_z,
        &split.unpaired_x,
        &split.unpaired_z,
        kernel,
        SpectralFilter::tikhonov(1e-2).unwrap(),
    )
    .unwrap();
    let held = 1000;
    let r = model.eval_pairs(&normal_matrix(held, 2, 14), &normal_matrix(held, 2, 15)).unwrap();
    let dev = r.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / held as f64;
    outcome(dev <= 0.1, format!("held-out mean |R_hat - 1| = {dev:.4}"))
}

fn convergence(sweep: Sweep, route: RouteChoice, replicates: usize) -> Value {
    let mut config = ExperimentConfig::default();
    config.convergence.sweeps = vec![sweep];
    config.route = route;
    config.replicates = replicates;
    run(ExperimentKind::Convergence, &config).expect("convergence runs").summary
}

fn prompt_rate() -> Outcome {
    let summary = convergence(Sweep::M, RouteChoice::InfoDensity, 20);
    let slope = summary["sweeps"][0]["variance_slope"].as_f64().unwrap();
    outcome((slope + 1.0).abs() <= 0.15, format!("log-variance slope in M = {slope:.3}"))
}

fn n_sweep_shape() -> Outcome {
    let summary = convergence(Sweep::N, RouteChoice::Both, 15);
    let mut ok = true;
    let mut parts = Vec::new();
    for s in summary["sweeps"].as_array().unwrap() {
        let slope = s["mse_slope"].as_f64().unwrap();
        let monotone = s["monotone_decreasing"].as_bool().unwrap();
        ok &= slope <= -0.3 && monotone;
        parts.push(format!("{} slope {slope:.3} monotone {monotone}", s["route"].as_str().unwrap()));
    }
    outcome(ok, parts.join(", "))
}

fn ssl_identities(report: &IdentityReport) -> Outcome {
    checks_line(
        report,
        &["spectral_loop", "vicreg_identity", "clip_single_pair", "clip_zero_batch", "clip_taylor_order"],
    )
}

/// ‖g_ρ − g_P‖² under P_Z by direct enumeration over the triple.
fn exhaustive_bias(triple: &DiscreteTriple<f64>, z_given_y: &DMatrix<f64>, r: &[f64]) -> f64 {
    let (nx, ny, nz) = triple.sizes();
    let mut total = 0.0;
    for z in 0..nz {
        let p_yz: Vec<f64> = (0..ny).map(|y| (0..nx).map(|x| triple.get(x, y, z)).sum()).collect();
        let pz: f64 = p_yz.iter().sum();
        let rho_yz: Vec<f64> = (0..ny).map(|y| z_given_y[(z, y)] / ny as f64).collect();
        let rz: f64 = rho_yz.iter().sum();
        let g_p = (0..ny).map(|y| p_yz[y] * r[y]).sum::<f64>() / pz;
        let g_rho = (0..ny).map(|y| rho_yz[y] * r[y]).sum::<f64>() / rz;
        total += pz * (g_rho - g_p).powi(2);
    }
    total
}

fn prompting() -> Outcome {
    let mut rng = stream(7, 0);
    let triple = random::triple::<f64, _>(4, 3, 5, &mut rng);
    let r = [1.0, -0.5, 2.0];
    let unbiased = prompt_bias_discrete(&DiscreteStrategy::Unbiased.table(&triple).unwrap(), &triple, &r).unwrap();
    let (_, ny, nz) = triple.sizes();
    // Class y leans on captions by a power of the caption index.
    let mut z_given_y = DMatrix::from_fn(nz, ny, |z, y| ((z + 1) as f64).powi(y as i32 * 2 - 2));
    for mut col in z_given_y.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    let tilted = DiscreteStrategy::ClassConditional { z_given_y: z_given_y.clone() };
    let bias = prompt_bias_discrete(&tilted.table(&triple).unwrap(), &triple, &r).unwrap();
    let oracle = exhaustive_bias(&triple, &z_given_y, &r);

    let config = ExperimentConfig::default();
    let out = run(ExperimentKind::PromptCompare, &config).expect("prompt compare runs");
    let mut ok = unbiased == 0.0 && oracle > 0.0 && (bias - oracle).abs() <= 1e-12;
    let mut parts = vec![format!(
        "discrete unbiased bias = {unbiased:e}, tilted bias = {bias:.6e} vs exhaustive {oracle:.6e}"
    )];
    for s in out.summary["strategies"].as_array().unwrap() {
        if s["strategy"] != "unbiased" {
            continue;
        }
        let b = s["prompt_bias"].as_f64().unwrap();
        let se = s["prompt_bias_se"].as_f64().unwrap();
        let med = f64s(&s["median_accuracy"]);
        let sd = f64s(&s["sd"]);
        let trend = nondecreasing_within(&med, &sd);
        ok &= b <= 1e-3 + se && trend;
        parts.push(format!("{} gaussian bias {b:.1e}, accuracy trend ok {trend}", s["route"].as_str().unwrap()));
    }
    outcome(ok, parts.join("; "))
}

const SMALL_CONFIGS: [(&str, &str, &str); 5] = [
    (
        "theta-sweep",
        "csv",
        r#"{"replicates": 2, "theta_grid": [0.0, 1.0],
            "theta_sweep": {"n_test": 300, "n_mc": 32, "resdep_nz": 50, "resdep_nx": 8,
                            "trainer": {"n_train": 120, "steps": 2, "prompts": 20}}}"#,
    ),
    (
        "convergence",
        "csv",
        r#"{"replicates": 2, "n_grid": [60, 120], "m_grid": [20, 40],
            "convergence": {"n_test": 40, "oracle_mc": 100, "m_fixed": 40, "n_fixed": 100}}"#,
    ),
    (
        "prompt-compare",
        "csv",
        r#"{"replicates": 2, "m_grid": [4, 8],
            "prompt_compare": {"n_pretrain": 100, "n_eval": 100, "bias_mc": 300}}"#,
    ),
    ("dependence", "csv", r#"{"replicates": 2, "dependence": {"n": 150}}"#),
    ("identities", "json", r#"{"identities": {"instances": 25}}"#),
];

fn run_cli(dir: &Path, cmd: &str, ext: &str, threads: usize) -> Result<(Vec<u8>, Vec<u8>), String> {
    let config = dir.join(format!("{cmd}.json"));
    let out = dir.join(format!("{cmd}-t{threads}.{ext}"));
    let status = Command::new(env!("CARGO_BIN_EXE_zsp"))
        .args([cmd, "--config"])
        .arg(&config)
        .args(["--seed", "3", "--threads", &threads.to_string(), "--out"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{cmd} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
    }
    let sidecar = PathBuf::from(format!("{}.meta.json", out.display()));
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok((read(&out)?, read(&sidecar)?))
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("zsp-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (cmd, ext, json) in SMALL_CONFIGS {
        std::fs::write(dir.join(format!("{cmd}.json")), json).unwrap();
        let same = match (run_cli(&dir, cmd, ext, 1), run_cli(&dir, cmd, ext, 8)) {
            (Ok(a), Ok(b)) => a == b,
            (Err(e), _) | (_, Err(e)) => {
                parts.push(e);
                false
            }
        };
        ok &= same;
        parts.push(format!("{cmd} {}", if same { "identical" } else { "differs" }));
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(ok, parts.join(", "))
}

fn main() {
    let battery = {
        let mut config = ExperimentConfig::default();
        config.identities.instances = 1000;
        identity_report(&config).expect("identity battery runs")
    };
    type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 discrete oracle exactness", Duration::from_secs(120), Box::new(|| discrete_oracles(&battery))),
        ("2 conditional-independence collapse", Duration::from_secs(60), Box::new(|| ci_collapse(&battery))),
        ("3 theta sweep", Duration::from_secs(600), Box::new(theta_sweep)),
        ("4 gaussian msc calibration", Duration::from_secs(60), Box::new(nocco_calibration)),
        ("5 rn estimator null", Duration::from_secs(120), Box::new(rn_null)),
        ("6 prompt-term rate", Duration::from_secs(300), Box::new(prompt_rate)),
        ("7 n-sweep shape", Duration::from_secs(900), Box::new(n_sweep_shape)),
        ("8 ssl identities", Duration::from_secs(60), Box::new(|| ssl_identities(&battery))),
        ("9 prompting", Duration::from_secs(600), Box::new(prompting)),
        ("10 cli determinism", Duration::from_secs(600), Box::new(determinism)),
    ];
    let mut failures = 0;
    for (name, budget, check) in &criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let passed = result.passed && elapsed <= *budget;
        if !passed {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
