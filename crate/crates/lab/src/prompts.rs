//! Zero-shot accuracy as a function of prompts per class, for each prompting
//! strategy and route.

use nalgebra::DMatrix;
use serde_json::json;

use zsp_core::classifier::topk_accuracy;
use zsp_core::error::Error as CoreError;
use zsp_core::gaussian::{GaussianThetaModel, SampleMatrices};
use zsp_core::prompting::GaussianStrategy;
use zsp_core::rng::{replicate_seed, stream};

use crate::common::{fit_route, median, ordered_map, std_dev, subseed, Fitted};
use crate::config::{ExperimentConfig, Route};
use crate::error::LabResult;
use crate::output::Table;
use crate::RunOutput;

pub const HEADER: [&str; 7] = ["route", "strategy", "m", "replicate", "topk", "accuracy", "prompt_bias"];

/// Distinct labels: the kind name, suffixed by position when a kind repeats.
pub fn strategy_labels(strategies: &[GaussianStrategy]) -> Vec<String> {
    strategies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = s.kind().name();
            let repeats = strategies.iter().filter(|t| t.kind() == s.kind()).count() > 1;
            if repeats {
                format!("{name}_{i}")
            } else {
                name.to_string()
            }
        })
        .collect()
}

struct Pretrained {
    fitted: Fitted,
    eval_x: DMatrix<f64>,
    eval_y: Vec<usize>,
}

/// Per-class scores r^{(c)}(y) = 1{y = c} through the fitted route.
fn class_scores(
    config: &ExperimentConfig,
    fitted: &Fitted,
    labels: &[usize],
    z: &DMatrix<f64>,
    xs: &DMatrix<f64>,
) -> LabResult<Vec<Vec<f64>>> {
    let s0 = fitted.predict(&config.kernel, labels, z, &[1.0, 0.0], xs)?;
    let s1 = fitted.predict(&config.kernel, labels, z, &[0.0, 1.0], xs)?;
    Ok(s0.into_iter().zip(s1).map(|(a, b)| vec![a, b]).collect())
}

pub fn run_prompt_compare(config: &ExperimentConfig) -> LabResult<RunOutput> {
    let p = &config.prompt_compare;
    let model = GaussianThetaModel::new(config.model)?;
    let routes = config.route.routes();
    let labels = strategy_labels(&p.strategies);

    let biases = ordered_map(&p.strategies, |s| match s.prompt_bias(&model, p.bias_mc, subseed(config.seed, 200)) {
        Ok(est) => Ok(Some(est)),
        Err(CoreError::Unsupported(_)) => Ok(None),
        Err(e) => Err(e.into()),
    })?;

    let pre_cells: Vec<(usize, usize)> = (0..routes.len())
        .flat_map(|k| (0..config.replicates).map(move |r| (k, r)))
        .collect();
    let pretrained = ordered_map(&pre_cells, |&(k, r)| {
        let seed = replicate_seed(config.seed, r as u64);
        let data = SampleMatrices::from_triples(&model.sample(p.n_pretrain, subseed(seed, 0)));
        let fitted = fit_route(routes[k], &config.kernel, &data.x, &data.z, subseed(seed, 1))?;
        let (eval_x, eval_y) = model.sample_images(p.n_eval, &mut stream(seed, 2));
        Ok(Pretrained { fitted, eval_x, eval_y })
    })?;

    let mut cells = Vec::new();
    for k in 0..routes.len() {
        for s in 0..p.strategies.len() {
            for &m in &config.m_grid {
                for r in 0..config.replicates {
                    cells.push((k, s, m, r));
                }
            }
        }
    }
    let accuracies = ordered_map(&cells, |&(k, s, m, r)| {
        let seed = replicate_seed(config.seed, r as u64);
        let strategy = &p.strategies[s];
        // m counts prompts per class; the unbiased sampler draws 2m joint pairs.
        let count = match strategy {
            GaussianStrategy::Unbiased => 2 * m,
            _ => m,
        };
        let prompts = strategy.generate(&model, count, subseed(seed, 10 + s as u64))?;
        let pre = &pretrained[k * config.replicates + r];
        let scores = class_scores(config, &pre.fitted, &prompts.labels, &prompts.z, &pre.eval_x)?;
        p.topk
            .iter()
            .map(|&t| Ok(topk_accuracy(&scores, &pre.eval_y, t)?))
            .collect::<LabResult<Vec<f64>>>()
    })?;

    let mut table = Table::new(&HEADER);
    for (&(k, s, m, r), accs) in cells.iter().zip(&accuracies) {
        for (&t, &acc) in p.topk.iter().zip(accs) {
            table.push(vec![
                routes[k].name().into(),
                labels[s].as_str().into(),
                m.into(),
                r.into(),
                t.into(),
                acc.into(),
                biases[s].map(|b| b.mean).into(),
            ]);
        }
    }

    let mut summary = Vec::new();
    for (k, route) in routes.iter().enumerate() {
        for (s, label) in labels.iter().enumerate() {
            let mut med = Vec::new();
            let mut sd = Vec::new();
            for &m in &config.m_grid {
                let accs: Vec<f64> = cells
                    .iter()
                    .zip(&accuracies)
                    .filter(|((kk, ss, mm, _), _)| *kk == k && *ss == s && *mm == m)
                    .map(|(_, a)| a[0])
                    .collect();
                med.push(median(&accs));
                sd.push(std_dev(&accs));
            }
            summary.push(json!({
                "route": route.name(),
                "strategy": label,
                "topk": p.topk[0],
                "m": config.m_grid,
                "median_accuracy": med,
                "sd": sd,
                "prompt_bias": biases[s].map(|b| b.mean),
                "prompt_bias_se": biases[s].map(|b| b.std_error),
            }));
        }
    }
    Ok(RunOutput::table(table, json!({ "strategies": summary })))
}

/// Median top-1 accuracy and spread per m for one (route, strategy).
pub fn accuracy_curve(table: &Table, route: Route, strategy: &str) -> Vec<(usize, f64, f64)> {
    let (mi, ki, ai) = (table.column("m"), table.column("topk"), table.column("accuracy"));
    let filters = [("route", route.name()), ("strategy", strategy)];
    let rows: Vec<&Vec<_>> = table
        .select(&filters)
        .filter(|row| row[ki].as_f64() == Some(1.0))
        .collect();
    let mut ms: Vec<usize> = rows.iter().filter_map(|row| row[mi].as_f64()).map(|v| v as usize).collect();
    ms.dedup();
    ms.iter()
        .map(|&m| {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|row| row[mi].as_f64() == Some(m as f64))
                .filter_map(|row| row[ai].as_f64())
                .collect();
            (m, median(&accs), std_dev(&accs))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PromptCompareSettings, RouteChoice};

    #[test]
    fn single_m_grid_and_zero_unbiased_bias() {
        let config = ExperimentConfig {
            route: RouteChoice::ConditionalMean,
            m_grid: vec![1],
            replicates: 1,
            prompt_compare: PromptCompareSettings {
                n_pretrain: 100,
                n_eval: 100,
                bias_mc: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        let table = run_prompt_compare(&config).unwrap().table.unwrap();
        let mi = table.column("m");
        assert!(table.rows.iter().all(|r| r[mi].as_f64() == Some(1.0)));
        let bi = table.column("prompt_bias");
        for row in table.select(&[("strategy", "unbiased")]) {
            assert_eq!(row[bi].as_f64(), Some(0.0));
        }
        let ti = table.column("strategy");
        assert!(table.rows.iter().any(|r| r[ti].as_str() == Some("template_based")));
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let labels = strategy_labels(&PromptCompareSettings::default().strategies);
        assert_eq!(labels, ["unbiased", "class_conditional_1", "class_conditional_2", "template_based"]);
    }
}
