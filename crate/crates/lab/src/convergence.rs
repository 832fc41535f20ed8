//! MSE of both routes against the Monte Carlo oracle η_ρ as the pre-training
//! size N or the prompt count M grows.

use nalgebra::DMatrix;
use serde_json::json;

use zsp_core::cme::mse;
use zsp_core::gaussian::{GaussianThetaModel, SampleMatrices};
use zsp_core::prompting::GaussianStrategy;
use zsp_core::rng::{replicate_seed, stream};

use crate::common::{fit_route, loglog_slope, median, ordered_map, subseed, Fitted};
use crate::config::{ExperimentConfig, Route, Sweep};
use crate::error::LabResult;
use crate::output::Table;
use crate::RunOutput;

pub const HEADER: [&str; 6] = ["sweep", "route", "N", "M", "replicate", "mse"];

/// Class-1 indicator.
const R: [f64; 2] = [0.0, 1.0];

struct Reference {
    xs: DMatrix<f64>,
    oracle: Vec<f64>,
}

fn reference(config: &ExperimentConfig, model: &GaussianThetaModel, seed: u64) -> LabResult<Reference> {
    let c = &config.convergence;
    let (xs, _) = model.sample_images(c.n_test, &mut stream(seed, 0));
    let oracle = model.indirect_posterior_batch(&xs, c.oracle_mc, subseed(seed, 1))?;
    Ok(Reference { xs, oracle })
}

fn predict(
    config: &ExperimentConfig,
    model: &GaussianThetaModel,
    fitted: &Fitted,
    m: usize,
    prompt_seed: u64,
    xs: &DMatrix<f64>,
) -> LabResult<Vec<f64>> {
    let prompts = GaussianStrategy::Unbiased.generate(model, m, prompt_seed)?;
    fitted.predict(&config.kernel, &prompts.labels, &prompts.z, &R, xs)
}

#[derive(Debug, Clone)]
struct Point {
    sweep: Sweep,
    route: Route,
    n: usize,
    m: usize,
    replicate: usize,
    mse: f64,
    predictions: Vec<f64>,
}

fn n_sweep(config: &ExperimentConfig, model: &GaussianThetaModel) -> LabResult<Vec<Point>> {
    let refs = ordered_map(&(0..config.replicates).collect::<Vec<_>>(), |&r| {
        reference(config, model, replicate_seed(config.seed, r as u64))
    })?;
    let routes = config.route.routes();
    let mut cells = Vec::new();
    for &route in &routes {
        for &n in &config.n_grid {
            for r in 0..config.replicates {
                cells.push((route, n, r));
            }
        }
    }
    let m = config.convergence.m_fixed;
    ordered_map(&cells, |&(route, n, r)| {
        let seed = replicate_seed(config.seed, r as u64);
        // One draw per replicate, truncated to N, so the N-grid is nested.
        let data = SampleMatrices::from_triples(&model.sample(n, subseed(seed, 2)));
        let fitted = fit_route(route, &config.kernel, &data.x, &data.z, subseed(seed, 3))?;
        let predictions = predict(config, model, &fitted, m, subseed(seed, 4), &refs[r].xs)?;
        Ok(Point {
            sweep: Sweep::N,
            route,
            n,
            m,
            replicate: r,
            mse: mse(&predictions, &refs[r].oracle)?,
            predictions: Vec::new(),
        })
    })
}

fn m_sweep(config: &ExperimentConfig, model: &GaussianThetaModel) -> LabResult<Vec<Point>> {
    let base = config.seed;
    let refs = reference(config, model, subseed(base, 100))?;
    let n = config.convergence.n_fixed;
    let data = SampleMatrices::from_triples(&model.sample(n, subseed(base, 101)));
    let routes = config.route.routes();
    // The pre-trained estimator is frozen across the whole M-grid.
    let fitted = ordered_map(&routes, |&route| fit_route(route, &config.kernel, &data.x, &data.z, subseed(base, 102)))?;
    let mut cells = Vec::new();
    for k in 0..routes.len() {
        for &m in &config.m_grid {
            for r in 0..config.replicates {
                cells.push((k, m, r));
            }
        }
    }
    ordered_map(&cells, |&(k, m, r)| {
        let seed = replicate_seed(base, r as u64);
        let predictions = predict(config, model, &fitted[k], m, subseed(seed, 5), &refs.xs)?;
        Ok(Point {
            sweep: Sweep::M,
            route: routes[k],
            n,
            m,
            replicate: r,
            mse: mse(&predictions, &refs.oracle)?,
            predictions,
        })
    })
}

/// Mean over test points of the across-replicate variance of η̂.
fn prediction_variance(points: &[&Point]) -> f64 {
    let reps = points.len();
    if reps < 2 {
        return f64::NAN;
    }
    let n_test = points[0].predictions.len();
    let mut total = 0.0;
    for i in 0..n_test {
        let mean = points.iter().map(|p| p.predictions[i]).sum::<f64>() / reps as f64;
        total += points.iter().map(|p| (p.predictions[i] - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    }
    total / n_test as f64
}

fn summarize(config: &ExperimentConfig, points: &[Point]) -> serde_json::Value {
    let mut sweeps = Vec::new();
    for &sweep in &config.convergence.sweeps {
        for route in config.route.routes() {
            let grid: &[usize] = match sweep {
                Sweep::N => &config.n_grid,
                Sweep::M => &config.m_grid,
            };
            let mut medians = Vec::new();
            let mut variances = Vec::new();
            for &g in grid {
                let at: Vec<&Point> = points
                    .iter()
                    .filter(|p| p.sweep == sweep && p.route == route)
                    .filter(|p| match sweep {
                        Sweep::N => p.n == g,
                        Sweep::M => p.m == g,
                    })
                    .collect();
                medians.push(median(&at.iter().map(|p| p.mse).collect::<Vec<_>>()));
                if sweep == Sweep::M {
                    variances.push(prediction_variance(&at));
                }
            }
            let xs: Vec<f64> = grid.iter().map(|&g| g as f64).collect();
            let monotone = medians.windows(2).all(|w| w[1] < w[0]);
            let mut entry = json!({
                "sweep": sweep.name(),
                "route": route.name(),
                "grid": grid,
                "median_mse": medians,
                "mse_slope": loglog_slope(&xs, &medians),
                "monotone_decreasing": monotone,
            });
            if sweep == Sweep::M {
                entry["variance"] = json!(variances);
                entry["variance_slope"] = json!(loglog_slope(&xs, &variances));
            }
            sweeps.push(entry);
        }
    }
    json!({ "sweeps": sweeps })
}

pub fn run_convergence(config: &ExperimentConfig) -> LabResult<RunOutput> {
    let model = GaussianThetaModel::new(config.model)?;
    let mut points = Vec::new();
    for &sweep in &config.convergence.sweeps {
        points.extend(match sweep {
            Sweep::N => n_sweep(config, &model)?,
            Sweep::M => m_sweep(config, &model)?,
        });
    }
    let mut table = Table::new(&HEADER);
    for p in &points {
        table.push(vec![
            p.sweep.name().into(),
            p.route.name().into(),
            p.n.into(),
            p.m.into(),
            p.replicate.into(),
            p.mse.into(),
        ]);
    }
    let summary = summarize(config, &points);
    Ok(RunOutput::table(table, summary))
}
