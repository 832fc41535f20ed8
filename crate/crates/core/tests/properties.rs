use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use zsp_core::classifier::{decode, topk_accuracy};
use zsp_core::cme::fit_cme;
use zsp_core::dependence::{empirical_cca, msc_estimate};
use zsp_core::discrete::{
    conditional_mean_svd, distribution_shift_check, information_density, lancaster_truncate, msc,
    predictors_and_bound, random, truncation_error, DiscreteTriple,
};
use zsp_core::kernel::{eigh_psd, gram_symmetric, solve_shifted_spd, KernelSpec, SpectralFilter};
use zsp_core::prompting::prompt_bias_discrete;
use zsp_core::rng::seeded;
use zsp_core::ssl::{
    barlow_twins_loss, clip_loss, spectral_contrastive_loss, spectral_contrastive_loss_loop,
    vicreg_invariance_identity, EmbeddingBatch,
};

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn msc_is_sum_of_squared_singular_values(seed in any::<u64>(), nx in 2usize..6, nz in 2usize..6) {
        let joint = random::joint::<f64, _>(nx, nz, &mut seeded(seed));
        let spec = conditional_mean_svd(&joint).unwrap();
        prop_assert!((spec.singular_values[0] - 1.0).abs() < 1e-10);
        let total: f64 = spec.singular_values[1..].iter().map(|s| s * s).sum();
        let m = msc(&joint).unwrap();
        prop_assert!((total - m).abs() <= 1e-10 * (1.0 + m));
        prop_assert!(spec.singular_values.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn density_integrates_to_one(seed in any::<u64>(), nx in 2usize..6, nz in 2usize..6) {
        let joint = random::joint::<f64, _>(nx, nz, &mut seeded(seed));
        let s = information_density(&joint).unwrap();
        let (px, pz) = (joint.marginal_x(), joint.marginal_z());
        for x in 0..nx {
            let row: f64 = (0..nz).map(|z| pz[z] * s[(x, z)]).sum();
            prop_assert!((row - 1.0).abs() < 1e-10);
        }
        for z in 0..nz {
            let col: f64 = (0..nx).map(|x| px[x] * s[(x, z)]).sum();
            prop_assert!((col - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn truncation_error_matches_tail(seed in any::<u64>(), n in 3usize..6, d in 1usize..4) {
        let joint = random::joint::<f64, _>(n, n, &mut seeded(seed));
        let (table, err) = lancaster_truncate(&joint, d).unwrap();
        let direct = truncation_error(&joint, &table).unwrap();
        let tail = conditional_mean_svd(&joint).unwrap().tail_energy(d);
        prop_assert!((err - tail).abs() < 1e-10);
        prop_assert!((direct - tail).abs() < 1e-10);
    }

    #[test]
    fn decomposition_bound_holds(seed in any::<u64>(), nx in 2usize..5, ny in 2usize..4, nz in 2usize..5) {
        let mut rng = seeded(seed);
        let triple = random::triple::<f64, _>(nx, ny, nz, &mut rng);
        let prompt = random::prompt::<f64, _>(ny, nz, &mut rng);
        let r: Vec<f64> = (0..ny).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rep = predictors_and_bound(&triple, &prompt, &r).unwrap();
        prop_assert!(rep.bound_holds);
        prop_assert!(rep.lhs <= rep.rhs + 1e-12);
        let bias = prompt_bias_discrete(&prompt, &triple, &r).unwrap();
        prop_assert!((bias - rep.prompt_bias).abs() < 1e-12);
    }

    #[test]
    fn unbiased_prompt_on_independent_triple_is_exact(seed in any::<u64>(), nx in 2usize..5, nz in 2usize..5) {
        let mut rng = seeded(seed);
        let pz = random::simplex::<f64, _>(nz, &mut rng);
        let px_z = random::conditional::<f64, _>(nx, nz, &mut rng);
        let py_z = random::conditional::<f64, _>(2, nz, &mut rng);
        let t = DiscreteTriple::conditionally_independent(&pz, &px_z, &py_z).unwrap();
        let rep = predictors_and_bound(&t, &t.unbiased_prompt(), &[0.0, 1.0]).unwrap();
        prop_assert!(rep.prompt_bias.abs() < 1e-12);
        prop_assert!(rep.residual_dependence.abs() < 1e-12);
        for (a, b) in rep.eta_direct.iter().zip(&rep.eta_indirect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_shift_bound_holds(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = seeded(seed);
        let p = random::simplex::<f64, _>(n, &mut rng);
        let q = random::simplex::<f64, _>(n, &mut rng);
        let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let check = distribution_shift_check(&p, &q, &eta, None).unwrap();
        prop_assert!(check.additive_ok);
    }

    #[test]
    fn gram_is_psd(seed in any::<u64>(), n in 2usize..25, h in 0.2f64..3.0) {
        let pts = normal_matrix(n, 2, seed);
        let k = gram_symmetric(&KernelSpec::rbf(h).unwrap(), &pts).matrix;
        let eig = eigh_psd(&k).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn tikhonov_weights_match_linear_solve(seed in any::<u64>(), n in 4usize..20, lam in 1e-3f64..1.0) {
        let x = normal_matrix(n, 2, seed);
        let z = normal_matrix(n, 2, seed ^ 1);
        let kern = KernelSpec::rbf(1.0).unwrap();
        let model = fit_cme(&x, &z, kern, kern, SpectralFilter::tikhonov(lam).unwrap()).unwrap();
        let q = [0.3, -0.4];
        let w = model.weights(&q).unwrap();
        let qm = DMatrix::from_row_slice(1, 2, &q);
        let kx = DMatrix::from_fn(n, 1, |i, _| kern.eval_rows(&x, i, &qm, 0));
        let gx = gram_symmetric(&kern, &x).matrix;
        let oracle = solve_shifted_spd(&gx, n as f64 * lam, &kx).unwrap();
        for i in 0..n {
            prop_assert!((w[i] - oracle[(i, 0)]).abs() < 1e-8 * (1.0 + oracle[(i, 0)].abs()));
        }
    }

    #[test]
    fn cca_energy_equals_nocco(seed in any::<u64>(), n in 20usize..50) {
        let x = normal_matrix(n, 2, seed);
        let noise = normal_matrix(n, 2, seed ^ 7);
        let z = &x * 0.7 + noise * 0.5;
        let k = KernelSpec::rbf(1.0).unwrap();
        let nocco = msc_estimate(&x, &z, &k, &k, 1e-2).unwrap();
        let cca = empirical_cca(&x, &z, &k, &k, 1e-2, 3).unwrap();
        prop_assert!(nocco >= 0.0);
        prop_assert!((cca.energy - nocco).abs() < 1e-8 * (1.0 + nocco));
        prop_assert!(cca.correlations.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert!(cca.correlations.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn clip_is_rotation_invariant(seed in any::<u64>(), n in 2usize..10, angle in 0.0f64..6.3) {
        let batch = EmbeddingBatch::new(normal_matrix(n, 2, seed), normal_matrix(n, 2, seed ^ 3)).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let turned = EmbeddingBatch::new(&batch.a * &rot, &batch.b * &rot).unwrap();
        prop_assert!((clip_loss(&batch, false) - clip_loss(&turned, false)).abs() < 1e-10);
    }

    #[test]
    fn ssl_identities(seed in any::<u64>(), n in 2usize..15, d in 1usize..4) {
        let batch = EmbeddingBatch::new(normal_matrix(n, d, seed), normal_matrix(n, d, seed ^ 5)).unwrap();
        let (lhs, rhs) = vicreg_invariance_identity(&batch);
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs));
        let fast = spectral_contrastive_loss(&batch);
        let slow = spectral_contrastive_loss_loop(&batch);
        prop_assert!((fast - slow).abs() < 1e-10 * (1.0 + slow.abs()));
    }

    #[test]
    fn barlow_ignores_linear_reparameterization(seed in any::<u64>()) {
        let batch = EmbeddingBatch::new(normal_matrix(40, 2, seed), normal_matrix(40, 2, seed ^ 9)).unwrap();
        let m = normal_matrix(2, 2, seed ^ 11) + DMatrix::identity(2, 2) * 3.0;
        let moved = EmbeddingBatch::new(&batch.a * m, batch.b.clone()).unwrap();
        let a = barlow_twins_loss(&batch, 0.5).unwrap();
        let b = barlow_twins_loss(&moved, 0.5).unwrap();
        prop_assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn topk_is_monotone(seed in any::<u64>(), n in 1usize..20, c in 2usize..6) {
        let mut rng = seeded(seed);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.random::<f64>()).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut last = 0.0;
        for k in 1..=c {
            let acc = topk_accuracy(&scores, &labels, k).unwrap();
            prop_assert!(acc >= last);
            last = acc;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn decode_prefers_lowest_index_on_ties(c in 2usize..8, v in -5.0f64..5.0) {
        prop_assert_eq!(decode(&vec![v; c]), 0);
    }
}
