use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;

use zsp_core::cme::{fit_cme, fit_g_rho, lambda_schedule, CmeModel};
use zsp_core::kernel::{median_heuristic, KernelSpec, ProductKernel, SpectralFilter};
use zsp_core::rn::{fit_rn, split_pairs, PromptMeasure, RnModel};
use zsp_core::rng::stream;

use crate::config::{KernelSettings, Route};
use crate::error::{LabError, LabResult};

/// Independent 64-bit seed number `k` derived from `seed`.
pub fn subseed(seed: u64, k: u64) -> u64 {
    stream(seed, k).next_u64()
}

pub fn build_pool(threads: usize) -> LabResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("threads: {e}")))
}

/// Maps `f` over `items` on the current pool, returning results in input
/// order and the first error in input order.
pub fn ordered_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> LabResult<O> + Sync + Send) -> LabResult<Vec<O>> {
    let out: Vec<LabResult<O>> = items.par_iter().map(f).collect();
    out.into_iter().collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

fn bandwidth(fixed: Option<f64>, data: &DMatrix<f64>) -> LabResult<f64> {
    match fixed {
        Some(h) => Ok(h),
        None => Ok(median_heuristic(data)?.bandwidth),
    }
}

/// A pre-trained estimator of either route, ready to absorb prompts.
#[derive(Debug, Clone)]
pub enum Fitted {
    Cme(CmeModel<f64>),
    Rn(RnModel<f64>),
}

pub fn fit_route(
    route: Route,
    settings: &KernelSettings,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    split_seed: u64,
) -> LabResult<Fitted> {
    let n = x.nrows();
    let kx = KernelSpec::rbf(bandwidth(settings.bandwidth_x, x)?)?;
    let kz = KernelSpec::rbf(bandwidth(settings.bandwidth_z, z)?)?;
    let lambda = settings
        .lambda
        .unwrap_or_else(|| lambda_schedule(n, settings.schedule_beta, settings.schedule_p));
    let filter = SpectralFilter::new(settings.filter, lambda)?;
    match route {
        Route::ConditionalMean => Ok(Fitted::Cme(fit_cme(x, z, kx, kz, filter)?)),
        Route::InfoDensity => {
            let split = split_pairs(x, z, split_seed)?;
            let model = fit_rn(
                &split.paired_x,
                &split.paired_z,
                &split.unpaired_x,
                &split.unpaired_z,
                ProductKernel::new(kx, kz),
                filter,
            )?;
            Ok(Fitted::Rn(model))
        }
    }
}

impl Fitted {
    /// η̂ at every row of `queries` for prompts (labels, z) and label map r.
    pub fn predict(
        &self,
        settings: &KernelSettings,
        labels: &[usize],
        prompt_z: &DMatrix<f64>,
        r: &[f64],
        queries: &DMatrix<f64>,
    ) -> LabResult<Vec<f64>> {
        match self {
            Self::Cme(cme) => {
                let m = prompt_z.nrows();
                let lambda = settings
                    .prompt_lambda
                    .unwrap_or_else(|| lambda_schedule(m, settings.schedule_beta, settings.schedule_p));
                let targets: Vec<f64> = labels.iter().map(|&y| r[y]).collect();
                let ridge = fit_g_rho(prompt_z, &targets, *cme.kernel_z(), lambda)?;
                Ok(cme.compose(&ridge)?.predict_batch(queries)?.as_slice().to_vec())
            }
            Self::Rn(rn) => {
                let measure = PromptMeasure::new(labels.to_vec(), prompt_z.clone())?;
                Ok(rn.with_prompts(&measure, r)?.predict_batch(queries)?.as_slice().to_vec())
            }
        }
    }
}
