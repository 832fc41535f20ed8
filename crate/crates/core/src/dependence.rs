//! Dependence statistics from samples and rate-exponent arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{double_center, eigh_psd, gram, gram_symmetric, Eigh, KernelSpec};
use crate::scalar::{lit, lit_usize, tolerance, Real};

fn check_pairs<T: Real>(x: &DMatrix<T>, z: &DMatrix<T>) -> Result<usize> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.nrows(),
        });
    }
    Ok(n)
}

fn centered_eigh<T: Real>(kernel: &KernelSpec<T>, pts: &DMatrix<T>) -> Result<Eigh<T>> {
    let k = double_center(&gram_symmetric(kernel, pts).matrix);
    // Centering can leave rounding-level asymmetry.
    let k = (&k + k.transpose()) * lit::<T>(0.5);
    eigh_psd(&k)
}

/// NOCCO statistic Tr(R_X R_Z) with R = K̃(K̃ + nλI)⁻¹ on doubly centered Grams.
pub fn msc_estimate<T: Real>(
    x: &DMatrix<T>,
    z: &DMatrix<T>,
    kernel_x: &KernelSpec<T>,
    kernel_z: &KernelSpec<T>,
    lambda: T,
) -> Result<T> {
    let n = check_pairs(x, z)?;
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let ex = centered_eigh(kernel_x, x)?;
    let ez = centered_eigh(kernel_z, z)?;
    let shift = lit_usize::<T>(n) * lambda;
    let a: Vec<T> = ex.values.iter().map(|&v| v / (v + shift)).collect();
    let b: Vec<T> = ez.values.iter().map(|&v| v / (v + shift)).collect();
    // Only directions with a non-negligible ratio contribute.
    let keep = |w: &[T]| w.iter().take_while(|&&v| v > T::zero()).count();
    let (ka, kb) = (keep(&a), keep(&b));
    let vx = ex.vectors.columns(0, ka);
    let vz = ez.vectors.columns(0, kb);
    let cross = vx.transpose() * vz;
    let mut total = T::zero();
    for i in 0..ka {
        for j in 0..kb {
            let c = cross[(i, j)];
            total += a[i] * b[j] * c * c;
        }
    }
    Ok(total)
}

/// Regularized kernel CCA on centered Grams.
#[derive(Debug, Clone)]
pub struct CcaResult<T: Real> {
    /// Canonical correlations, descending, clipped to [0, 1].
    pub correlations: Vec<T>,
    /// Largest correlation before clipping.
    pub raw_max: T,
    /// Σ σ_i² over every direction, equal to the NOCCO statistic.
    pub energy: T,
    /// n × d dual coefficients; variate i at x is Σ_j alpha[(j, i)] k̃(x_j, x).
    pub alpha: DMatrix<T>,
    pub beta: DMatrix<T>,
    pub lambda: T,
    x: DMatrix<T>,
    z: DMatrix<T>,
    kernel_x: KernelSpec<T>,
    kernel_z: KernelSpec<T>,
    col_mean_x: DVector<T>,
    col_mean_z: DVector<T>,
}

/// Top-`d` singular structure of R_X^{1/2} R_Z^{1/2}, whose squared singular
/// values sum to [`msc_estimate`].
pub fn empirical_cca<T: Real>(
    x: &DMatrix<T>,
    z: &DMatrix<T>,
    kernel_x: &KernelSpec<T>,
    kernel_z: &KernelSpec<T>,
    lambda: T,
    d: usize,
) -> Result<CcaResult<T>> {
    let n = check_pairs(x, z)?;
    if d == 0 || d > n {
        return Err(Error::BadRank { d, max: n });
    }
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let ex = centered_eigh(kernel_x, x)?;
    let ez = centered_eigh(kernel_z, z)?;
    let nt = lit_usize::<T>(n);
    let shift = nt * lambda;
    let (ka, kb) = (ex.positive_rank(), ez.positive_rank());
    if ka.min(kb) < d {
        return Err(Error::RankDeficient {
            requested: d,
            available: ka.min(kb),
        });
    }
    let sa: Vec<T> = (0..ka).map(|i| (ex.values[i] / (ex.values[i] + shift)).sqrt()).collect();
    let sb: Vec<T> = (0..kb).map(|i| (ez.values[i] / (ez.values[i] + shift)).sqrt()).collect();
    let vx = ex.vectors.columns(0, ka).into_owned();
    let vz = ez.vectors.columns(0, kb).into_owned();
    let mut core = vx.transpose() * &vz;
    for i in 0..ka {
        for j in 0..kb {
            core[(i, j)] *= sa[i] * sb[j];
        }
    }
    let svd = core.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Domain("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Domain("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let raw_max = svd.singular_values[order[0]];
    let energy = svd.singular_values.iter().fold(T::zero(), |a, &v| a + v * v);
    let correlations: Vec<T> = order[..d]
        .iter()
        .map(|&i| svd.singular_values[i].max(T::zero()).min(T::one()))
        .collect();

    // Dual coefficients with unit empirical variance of the training variates.
    let dual = |vecs: &DMatrix<T>, vals: &DVector<T>, k: usize, dirs: &DMatrix<T>| -> DMatrix<T> {
        let mut out = DMatrix::zeros(n, d);
        for (col, dir) in dirs.column_iter().enumerate().take(d) {
            // α = V diag(1/√(a(a+nλ))) p, variate K̃α = V diag(√(a/(a+nλ))) p.
            let mut coef = DVector::zeros(k);
            let mut var = T::zero();
            for i in 0..k {
                let a = vals[i];
                coef[i] = dir[i] / (a * (a + shift)).sqrt();
                let f = dir[i] * (a / (a + shift)).sqrt();
                var += f * f;
            }
            let scale = if var > T::zero() { (nt / var).sqrt() } else { T::zero() };
            let alpha = vecs.columns(0, k) * coef * scale;
            out.set_column(col, &alpha);
        }
        out
    };
    let left = DMatrix::from_fn(ka, d, |i, c| u[(i, order[c])]);
    let right = DMatrix::from_fn(kb, d, |i, c| vt[(order[c], i)]);
    let alpha = dual(&ex.vectors, &ex.values, ka, &left);
    let beta = dual(&ez.vectors, &ez.values, kb, &right);
    let col_mean = |kern: &KernelSpec<T>, p: &DMatrix<T>| {
        let k = gram_symmetric(kern, p).matrix;
        DVector::from_fn(n, |j, _| k.column(j).sum() / nt)
    };
    Ok(CcaResult {
        correlations,
        raw_max,
        energy,
        alpha,
        beta,
        lambda,
        x: x.clone(),
        z: z.clone(),
        kernel_x: *kernel_x,
        kernel_z: *kernel_z,
        col_mean_x: col_mean(kernel_x, x),
        col_mean_z: col_mean(kernel_z, z),
    })
}

impl<T: Real> CcaResult<T> {
    fn variates(
        train: &DMatrix<T>,
        kern: &KernelSpec<T>,
        col_mean: &DVector<T>,
        coef: &DMatrix<T>,
        q: &DMatrix<T>,
    ) -> Result<DMatrix<T>> {
        // k̃(x_j, q) = k(x_j, q) − mean_i k(x_i, q) − mean_i k(x_i, x_j) + mean_ij k.
        let kq = gram(kern, train, q)?.matrix;
        let n = lit_usize::<T>(train.nrows());
        let grand = col_mean.sum() / n;
        let mut c = kq.clone();
        for col in 0..kq.ncols() {
            let m = kq.column(col).sum() / n;
            for row in 0..kq.nrows() {
                c[(row, col)] = kq[(row, col)] - m - col_mean[row] + grand;
            }
        }
        Ok(c.transpose() * coef)
    }

    /// α-side variates at new points, one column per direction.
    pub fn x_variates(&self, q: &DMatrix<T>) -> Result<DMatrix<T>> {
        Self::variates(&self.x, &self.kernel_x, &self.col_mean_x, &self.alpha, q)
    }

    /// β-side variates at new points.
    pub fn z_variates(&self, q: &DMatrix<T>) -> Result<DMatrix<T>> {
        Self::variates(&self.z, &self.kernel_z, &self.col_mean_z, &self.beta, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit<T: Real> {
    /// Negated least-squares slope of log σ_i against log i.
    pub gamma: T,
    /// (I + 1)/(2I) with I = Σ_{i≥2} σ_i².
    pub msc_implied_gamma: Option<T>,
    /// Number of positive values used in the fit.
    pub used: usize,
}

/// Fits σ_i ≈ c·i^{−γ}. Non-positive entries are dropped (their indices
/// are not reused); at least two positive values must remain.
pub fn singular_decay_fit<T: Real>(sigmas: &[T]) -> Result<DecayFit<T>> {
    if sigmas.len() < 3 {
        return Err(Error::TooFewValues {
            needed: 3,
            got: sigmas.len(),
        });
    }
    let pts: Vec<(T, T)> = sigmas
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > T::zero())
        .map(|(i, &s)| (lit_usize::<T>(i + 1).ln(), s.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: pts.len(),
        });
    }
    let m = lit_usize::<T>(pts.len());
    let mx = pts.iter().fold(T::zero(), |a, p| a + p.0) / m;
    let my = pts.iter().fold(T::zero(), |a, p| a + p.1) / m;
    let sxy = pts.iter().fold(T::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
    let sxx = pts.iter().fold(T::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
    let info = sigmas.iter().skip(1).filter(|&&s| s > T::zero()).fold(T::zero(), |a, &s| a + s * s);
    let msc_implied_gamma = if info > T::zero() {
        Some((info + T::one()) / (lit::<T>(2.0) * info))
    } else {
        None
    };
    Ok(DecayFit {
        gamma: -sxy / sxx,
        msc_implied_gamma,
        used: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport<T: Real> {
    pub gamma_x: T,
    pub gamma_z: T,
    pub gamma_xz: T,
    pub t: T,
    pub omega_rho: T,
    pub beta: T,
    /// q(t) = (2γ_XZ + γ_Z − 1)^t γ_X^{1−t}.
    pub q: T,
    /// q/(q+1), conditional-mean route.
    pub cme_exponent: T,
    /// (2ω_ρ − 1)/(2ω_ρ + 1), prompt regression.
    pub prompt_exponent: T,
    /// β/(β+1), information-density route.
    pub rn_exponent: T,
    /// Set when α is supplied: 2γ_XZ + γ_Z ≤ α γ_X.
    pub misspecified: Option<bool>,
}

pub fn rate_predictor<T: Real>(
    gamma_x: T,
    gamma_z: T,
    gamma_xz: T,
    t: T,
    omega_rho: T,
    beta: T,
    alpha: Option<T>,
) -> Result<RateReport<T>> {
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    if !(t >= T::zero() && t < T::one()) {
        return Err(Error::Domain(format!("t must lie in [0, 1), got {t}")));
    }
    if !(omega_rho > half) {
        return Err(Error::Domain(format!("omega_rho must exceed 1/2, got {omega_rho}")));
    }
    if !(beta >= T::one()) {
        return Err(Error::Domain(format!("beta must be at least 1, got {beta}")));
    }
    if !(gamma_x > half && gamma_z > half) {
        return Err(Error::Domain(format!(
            "decay exponents gamma_x, gamma_z must exceed 1/2, got {gamma_x}, {gamma_z}"
        )));
    }
    let base = two * gamma_xz + gamma_z - T::one();
    if !(base > T::zero()) {
        return Err(Error::Domain(format!(
            "2 gamma_xz + gamma_z - 1 must be positive, got {base}"
        )));
    }
    let q = base.powf(t) * gamma_x.powf(T::one() - t);
    Ok(RateReport {
        gamma_x,
        gamma_z,
        gamma_xz,
        t,
        omega_rho,
        beta,
        q,
        cme_exponent: q / (q + T::one()),
        prompt_exponent: (two * omega_rho - T::one()) / (two * omega_rho + T::one()),
        rn_exponent: beta / (beta + T::one()),
        misspecified: alpha.map(|a| two * gamma_xz + gamma_z <= a * gamma_x + tolerance::<T>(1e-12)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    fn k(h: f64) -> KernelSpec<f64> {
        KernelSpec::rbf(h).unwrap()
    }

    #[test]
    fn independent_views_give_small_msc() {
        let x = random_points(1000, 1, 1);
        let z = random_points(1000, 1, 2);
        let v = msc_estimate(&x, &z, &k(1.0), &k(1.0), 1e-3).unwrap();
        assert!((-1e-8..=0.05).contains(&v), "{v}");
    }

    #[test]
    fn msc_is_permutation_invariant_and_shrinks_with_lambda() {
        let x = random_points(80, 1, 3);
        let z = DMatrix::from_fn(80, 1, |i, _| x[(i, 0)] + 0.5 * (i as f64).sin());
        let base = msc_estimate(&x, &z, &k(1.0), &k(1.0), 1e-2).unwrap();
        let perm: Vec<usize> = (0..80).map(|i| (i * 37) % 80).collect();
        let px = DMatrix::from_fn(80, 1, |i, _| x[(perm[i], 0)]);
        let pz = DMatrix::from_fn(80, 1, |i, _| z[(perm[i], 0)]);
        let again = msc_estimate(&px, &pz, &k(1.0), &k(1.0), 1e-2).unwrap();
        assert!((base - again).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let v = msc_estimate(&x, &z, &k(1.0), &k(1.0), lambda).unwrap();
            assert!(v <= last + 1e-12);
            last = v;
        }
    }

    #[test]
    fn msc_equals_sum_of_squared_correlations() {
        let x = random_points(60, 1, 4);
        let z = DMatrix::from_fn(60, 1, |i, _| x[(i, 0)].powi(2) + 0.3 * (i as f64).cos());
        let lambda = 1e-2;
        let v = msc_estimate(&x, &z, &k(1.0), &k(1.0), lambda).unwrap();
        let cca = empirical_cca(&x, &z, &k(1.0), &k(1.0), lambda, 3).unwrap();
        assert!((v - cca.energy).abs() < 1e-8 * v.max(1.0));
        let top: f64 = cca.correlations.iter().map(|c| c * c).sum();
        assert!(top <= cca.energy + 1e-12);
    }

    #[test]
    fn cca_identical_views() {
        let x = random_points(120, 1, 5);
        let cca = empirical_cca(&x, &x, &k(1.0), &k(1.0), 1e-5, 2).unwrap();
        assert!(cca.correlations[0] >= 0.99);
        assert!(cca.raw_max <= 1.0 + 1e-6);
        // Variates are centered with unit empirical variance.
        let fx = cca.x_variates(&x).unwrap();
        for c in 0..2 {
            let col = fx.column(c);
            let mean = col.sum() / 120.0;
            let var = col.iter().map(|v| v * v).sum::<f64>() / 120.0;
            assert!(mean.abs() < 1e-8, "{mean}");
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
        // Leading variates of identical views coincide.
        let fz = cca.z_variates(&x).unwrap();
        let corr = fx.column(0).dot(&fz.column(0)) / 120.0;
        assert!(corr.abs() > 0.99);
    }

    #[test]
    fn cca_rank_errors() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let err = empirical_cca(&x, &x, &k(1.0), &k(1.0), 1e-3, 1).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        let x = random_points(5, 1, 6);
        assert!(matches!(
            empirical_cca(&x, &x, &k(1.0), &k(1.0), 1e-3, 6),
            Err(Error::BadRank { .. })
        ));
    }

    #[test]
    fn decay_fits() {
        let s: Vec<f64> = (1..=10).map(|i| (i as f64).powi(-2)).collect();
        assert!((singular_decay_fit(&s).unwrap().gamma - 2.0).abs() < 1e-10);
        let s: Vec<f64> = (1..=10).map(|i| 1.0 / i as f64).collect();
        assert!((singular_decay_fit(&s).unwrap().gamma - 1.0).abs() < 1e-10);
        let fit = singular_decay_fit(&[1.0, 0.6, 0.0, 0.0]).unwrap();
        assert_eq!(fit.used, 2);
        assert!((fit.gamma - (-(0.6f64).ln() / 2f64.ln())).abs() < 1e-12);
        let i = 0.36;
        assert!((fit.msc_implied_gamma.unwrap() - (i + 1.0) / (2.0 * i)).abs() < 1e-12);
        assert!(matches!(singular_decay_fit(&[1.0, 0.5]), Err(Error::TooFewValues { .. })));
        assert!(matches!(singular_decay_fit(&[1.0, 0.0, 0.0]), Err(Error::TooFewValues { .. })));
    }

    #[test]
    fn rate_exponents() {
        let r = rate_predictor(2.0f64, 1.5, 1.0, 0.0, 1.0, 1.0, None).unwrap();
        assert_eq!(r.q, 2.0);
        assert!((r.cme_exponent - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.rn_exponent - 0.5).abs() < 1e-15);
        assert!((r.prompt_exponent - 1.0 / 3.0).abs() < 1e-15);
        let r = rate_predictor(2.0, 1.0, 1.0, 0.5, 1.0, 3.0, Some(1.0)).unwrap();
        assert!((r.q - (2.0f64 * 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.misspecified, Some(false));
        let r = rate_predictor(2.0, 1.0, 1.0, 0.5, 1.0, 3.0, Some(1.5)).unwrap();
        assert_eq!(r.misspecified, Some(true));
        assert!(rate_predictor(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, None).is_err());
        assert!(rate_predictor(2.0, 1.0, 1.0, 0.0, 0.5, 1.0, None).is_err());
        assert!(rate_predictor(2.0, 1.0, 1.0, 0.0, 1.0, 0.5, None).is_err());
    }
}
