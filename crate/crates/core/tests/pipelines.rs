use nalgebra::DMatrix;

use zsp_core::cme::{fit_cme, fit_g_rho, fit_g_rho_labels, mse};
use zsp_core::discrete::{msc, predictors_and_bound, DiscreteJoint};
use zsp_core::gaussian::{GaussianThetaModel, SampleMatrices, ThetaParams};
use zsp_core::kernel::{median_heuristic, KernelSpec, ProductKernel, SpectralFilter};
use zsp_core::prompting::{DiscreteStrategy, GaussianStrategy};
use zsp_core::rn::{fit_rn, split_pairs, PromptMeasure};
use zsp_core::{CmeModel32, DiscreteJoint32, DiscreteTriple64, EmbeddingBatch32};

fn model(theta: f64) -> GaussianThetaModel {
    GaussianThetaModel::new(ThetaParams::default().with_theta(theta)).unwrap()
}

#[test]
fn indirect_route_tracks_direct_at_theta_one() {
    let m = model(1.0);
    let data = SampleMatrices::from_triples(&m.sample(40, 9));
    let direct: Vec<f64> = (0..40).map(|i| m.direct_posterior(&[data.x[(i, 0)], data.x[(i, 1)]])).collect();
    let indirect = m.indirect_posterior_batch(&data.x, 2000, 5).unwrap();
    let gap = mse(&indirect, &direct).unwrap();
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn cme_route_learns_the_indirect_predictor() {
    let m = model(1.0);
    let train = SampleMatrices::from_triples(&m.sample(400, 1));
    let hx = median_heuristic(&train.x).unwrap().bandwidth;
    let hz = median_heuristic(&train.z).unwrap().bandwidth;
    let (kx, kz) = (KernelSpec::rbf(hx).unwrap(), KernelSpec::rbf(hz).unwrap());
    let cme = fit_cme(&train.x, &train.z, kx, kz, SpectralFilter::tikhonov(1e-3).unwrap()).unwrap();

    let prompts = GaussianStrategy::Unbiased.generate(&m, 400, 2).unwrap();
    let ridge = fit_g_rho_labels(&prompts.z, &prompts.labels, &[0.0, 1.0], kz, 1e-3).unwrap();
    let composed = cme.compose(&ridge).unwrap();

    let test = SampleMatrices::from_triples(&m.sample(60, 4));
    let pred = composed.predict_batch(&test.x).unwrap();
    let oracle = m.indirect_posterior_batch(&test.x, 1000, 6).unwrap();
    let err = mse(pred.as_slice(), &oracle).unwrap();
    assert!(err < 0.03, "{err}");

    let targets = prompts.targets(&[0.0, 1.0]);
    let plain = fit_g_rho(&prompts.z, targets.as_slice(), kz, 1e-3).unwrap();
    assert_eq!(plain.coef, ridge.coef);
}

#[test]
fn rn_route_learns_the_indirect_predictor() {
    let m = model(1.0);
    let train = SampleMatrices::from_triples(&m.sample(300, 11));
    let split = split_pairs(&train.x, &train.z, 12).unwrap();
    let kernel = ProductKernel::new(KernelSpec::rbf(2.0).unwrap(), KernelSpec::rbf(2.0).unwrap());
    let rn = fit_rn(
        &split.paired_x,
        &split.paired_z,
        &split.unpaired_x,
        &split.unpaired_z,
        kernel,
        SpectralFilter::tikhonov(1e-2).unwrap(),
    )
    .unwrap();
    let prompts = GaussianStrategy::Unbiased.generate(&m, 300, 13).unwrap();
    let measure = PromptMeasure::new(prompts.labels.clone(), prompts.z.clone()).unwrap();
    let predictor = rn.with_prompts(&measure, &[0.0, 1.0]).unwrap();
    let test = SampleMatrices::from_triples(&m.sample(60, 14));
    let pred = predictor.predict_batch(&test.x).unwrap();
    let oracle = m.indirect_posterior_batch(&test.x, 1000, 15).unwrap();
    let err = mse(pred.as_slice(), &oracle).unwrap();
    assert!(err < 0.06, "{err}");
}

#[test]
fn single_precision_paths_run() {
    let joint = DiscreteJoint32::from_rows(&[vec![0.3, 0.1], vec![0.1, 0.5]]).unwrap();
    let joint64 = DiscreteJoint::<f64>::from_rows(&[vec![0.3, 0.1], vec![0.1, 0.5]]).unwrap();
    let (a, b) = (msc(&joint).unwrap(), msc(&joint64).unwrap());
    assert!((f64::from(a) - b).abs() < 1e-5);

    let x = DMatrix::<f32>::from_fn(20, 1, |i, _| i as f32 / 10.0);
    let z = x.map(|v| v.sin());
    let k = KernelSpec::rbf(1.0f32).unwrap();
    let cme: CmeModel32 = fit_cme(&x, &z, k, k, SpectralFilter::tikhonov(1e-2f32).unwrap()).unwrap();
    assert_eq!(cme.weights(&[0.5]).unwrap().len(), 20);

    let batch = EmbeddingBatch32::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
    assert!(zsp_core::ssl::clip_loss(&batch, false).is_finite());
}

#[test]
fn class_conditional_prompt_removes_bias_when_classes_are_balanced() {
    let doc = r#"{"x_size": 2, "y_size": 2, "z_size": 2,
        "probs": [0.2, 0.05, 0.05, 0.1, 0.05, 0.2, 0.1, 0.25]}"#;
    let triple = DiscreteTriple64::from_json(doc).unwrap();
    let yz = triple.marginal_yz();
    let py: Vec<f64> = (0..2).map(|y| yz.row(y).sum()).collect();
    let z_given_y = DMatrix::from_fn(2, 2, |z, y| yz[(y, z)] / py[y]);
    let strategy = DiscreteStrategy::ClassConditional { z_given_y };
    let table = strategy.table(&triple).unwrap();
    let rep = predictors_and_bound(&triple, &table, &[0.0, 1.0]).unwrap();
    assert!(rep.prompt_bias < 1e-12, "{}", rep.prompt_bias);
    assert!(rep.bound_holds);
}
