//! Accuracy of the direct, indirect and trained-encoder predictors along the
//! θ-family, with the residual dependence of each θ.

use nalgebra::DMatrix;
use serde_json::json;

use zsp_core::classifier::{class_embeddings, decode};
use zsp_core::gaussian::GaussianThetaModel;
use zsp_core::prompting::GaussianStrategy;
use zsp_core::rng::{replicate_seed, stream};
use zsp_core::ssl::{train_toy, Objective, ToyEncoderPair, TrainConfig};

use crate::common::{accuracy, median, ordered_map, std_dev, subseed};
use crate::config::{ExperimentConfig, TrainerSettings};
use crate::error::LabResult;
use crate::output::{Cell, Table};
use crate::RunOutput;

pub const HEADER: [&str; 5] = ["theta", "replicate", "predictor", "accuracy", "resdep"];

struct CellResult {
    accuracies: Vec<(&'static str, f64)>,
    resdep: f64,
}

fn threshold(probs: &[f64]) -> Vec<usize> {
    probs.iter().map(|&p| usize::from(p > 0.5)).collect()
}

fn trained_accuracy(
    model: &GaussianThetaModel,
    objective: &Objective,
    settings: &TrainerSettings,
    xs: &DMatrix<f64>,
    labels: &[usize],
    seed: u64,
) -> LabResult<f64> {
    let d = model.dim();
    let data = model.sample(settings.n_train, subseed(seed, 0));
    let encoders = ToyEncoderPair::new(d, d, settings.out_dim, subseed(seed, 1));
    let config = TrainConfig {
        steps: settings.steps,
        lr: settings.lr,
        batch: settings.batch,
        seed: subseed(seed, 2),
    };
    let trained = train_toy(objective, &data, encoders, &config)?.encoders;
    let prompts = GaussianStrategy::Unbiased.generate(model, settings.prompts, subseed(seed, 3))?;
    let emb = class_embeddings(&prompts.labels, &trained.encode_z(&prompts.z), 2, false)?;
    let scores = trained.encode_x(xs) * emb.vectors.transpose();
    let predicted: Vec<usize> = (0..scores.nrows())
        .map(|i| decode(&[scores[(i, 0)], scores[(i, 1)]]))
        .collect();
    Ok(accuracy(&predicted, labels))
}

fn run_cell(config: &ExperimentConfig, theta: f64, replicate: usize) -> LabResult<CellResult> {
    let s = &config.theta_sweep;
    let model = GaussianThetaModel::new(config.model.with_theta(theta))?;
    let seed = replicate_seed(config.seed, replicate as u64);
    // The (X, Y) law does not depend on θ, so every θ sees the same test set.
    let (xs, labels) = model.sample_images(s.n_test, &mut stream(seed, 0));
    let rows: Vec<Vec<f64>> = (0..xs.nrows()).map(|i| xs.row(i).iter().copied().collect()).collect();
    let direct: Vec<f64> = rows.iter().map(|x| model.direct_posterior(x)).collect();
    let indirect = model.indirect_posterior_batch(&xs, s.n_mc, subseed(seed, 1))?;
    let resdep = model.residual_dependence_mc(s.resdep_nz, s.resdep_nx, subseed(seed, 2))?.mean;

    let mut accuracies = vec![
        ("direct", accuracy(&threshold(&direct), &labels)),
        ("indirect", accuracy(&threshold(&indirect), &labels)),
    ];
    if let Some(t) = &s.trainer {
        let objectives = [("clip", Objective::Clip), ("vicreg", Objective::Vicreg(t.vicreg))];
        for (k, (name, objective)) in objectives.iter().enumerate() {
            let acc = trained_accuracy(&model, objective, t, &xs, &labels, subseed(seed, 10 + k as u64))?;
            accuracies.push((name, acc));
        }
    }
    Ok(CellResult { accuracies, resdep })
}

pub fn run_theta_sweep(config: &ExperimentConfig) -> LabResult<RunOutput> {
    let cells: Vec<(f64, usize)> = config
        .theta_grid
        .iter()
        .flat_map(|&t| (0..config.replicates).map(move |r| (t, r)))
        .collect();
    let results = ordered_map(&cells, |&(t, r)| run_cell(config, t, r))?;

    let mut table = Table::new(&HEADER);
    for (&(theta, r), res) in cells.iter().zip(&results) {
        for &(name, acc) in &res.accuracies {
            table.push(vec![theta.into(), r.into(), name.into(), acc.into(), res.resdep.into()]);
        }
    }

    let mut per_theta = Vec::new();
    for &theta in &config.theta_grid {
        let at: Vec<&CellResult> = cells
            .iter()
            .zip(&results)
            .filter(|((t, _), _)| *t == theta)
            .map(|(_, res)| res)
            .collect();
        let mut predictors = serde_json::Map::new();
        for (k, &(name, _)) in at[0].accuracies.iter().enumerate() {
            let accs: Vec<f64> = at.iter().map(|res| res.accuracies[k].1).collect();
            predictors.insert(name.to_string(), json!({"median": median(&accs), "sd": std_dev(&accs)}));
        }
        let resdeps: Vec<f64> = at.iter().map(|res| res.resdep).collect();
        per_theta.push(json!({"theta": theta, "accuracy": predictors, "resdep_median": median(&resdeps)}));
    }
    Ok(RunOutput::table(table, json!({ "per_theta": per_theta })))
}

/// Per-θ median accuracies and replicate spread of one predictor.
pub fn summarize(table: &Table, predictor: &str) -> Vec<(f64, f64, f64)> {
    let (ti, ai) = (table.column("theta"), table.column("accuracy"));
    let mut thetas: Vec<f64> = Vec::new();
    for row in table.select(&[("predictor", predictor)]) {
        let t = row[ti].as_f64().unwrap_or(f64::NAN);
        if !thetas.contains(&t) {
            thetas.push(t);
        }
    }
    thetas
        .into_iter()
        .map(|t| {
            let accs: Vec<f64> = table
                .select(&[("predictor", predictor)])
                .filter(|row| row[ti] == Cell::Float(t))
                .filter_map(|row| row[ai].as_f64())
                .collect();
            (t, median(&accs), std_dev(&accs))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ThetaSweepSettings;

    fn small(trainer: Option<TrainerSettings>) -> ExperimentConfig {
        ExperimentConfig {
            theta_grid: vec![1.0],
            replicates: 2,
            theta_sweep: ThetaSweepSettings {
                n_test: 300,
                n_mc: 64,
                resdep_nz: 100,
                resdep_nx: 16,
                trainer,
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_theta_grid_gives_single_theta_rows() {
        let out = run_theta_sweep(&small(None)).unwrap();
        let table = out.table.unwrap();
        assert_eq!(table.rows.len(), 2 * 2);
        assert!(table.rows.iter().all(|r| r[0] == Cell::Float(1.0)));
        assert_eq!(summarize(&table, "direct").len(), 1);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let a = run_theta_sweep(&small(None)).unwrap().table.unwrap().to_csv_string();
        let b = run_theta_sweep(&small(None)).unwrap().table.unwrap().to_csv_string();
        assert_eq!(a, b);
    }

    #[test]
    fn trained_clip_improves_with_theta() {
        let trainer = TrainerSettings {
            n_train: 400,
            steps: 60,
            ..Default::default()
        };
        let mut config = small(Some(trainer));
        config.theta_grid = vec![0.0, 1.0];
        config.theta_sweep.n_test = 2000;
        let table = run_theta_sweep(&config).unwrap().table.unwrap();
        let clip = summarize(&table, "clip");
        assert!(clip[1].1 > clip[0].1, "{clip:?}");
    }
}
