//! Conditional-mean route: a spectrally regularized conditional mean embedding
//! of Z given X, composed with a kernel ridge fit of the prompt regression.
//!
//! The embedding is never materialized. A query x gets a weight vector over
//! the training captions, and η̂(x) = Σ_i w_i(x) ĝ(z_i).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{eigh_psd, gram, gram_symmetric, solve_shifted_spd, Eigh, KernelSpec, SpectralFilter};
use crate::scalar::{lit, lit_usize, Real};

#[derive(Debug, Clone)]
pub struct CmeModel<T: Real> {
    x: DMatrix<T>,
    z: DMatrix<T>,
    kernel_x: KernelSpec<T>,
    kernel_z: KernelSpec<T>,
    eig: Eigh<T>,
    filter: SpectralFilter<T>,
    /// (1/N)·V diag(f(μ)) Vᵀ, so that w(x) = op · k_x.
    op: DMatrix<T>,
}

/// Fits the embedding on paired rows `(x_i, z_i)`.
///
/// `kernel_z` is carried so that composition with a prompt regression can
/// check that both sides live in the same caption RKHS.
pub fn fit_cme<T: Real>(
    x: &DMatrix<T>,
    z: &DMatrix<T>,
    kernel_x: KernelSpec<T>,
    kernel_z: KernelSpec<T>,
    filter: SpectralFilter<T>,
) -> Result<CmeModel<T>> {
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
    let nt = lit_usize::<T>(n);
    let k = gram_symmetric(&kernel_x, x).matrix / nt;
    let eig = eigh_psd(&k)?;
    let op = eig.matrix_function(|m| filter.apply(m)) / nt;
    Ok(CmeModel {
        x: x.clone(),
        z: z.clone(),
        kernel_x,
        kernel_z,
        eig,
        filter,
        op,
    })
}

impl<T: Real> CmeModel<T> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn kernel_x(&self) -> &KernelSpec<T> {
        &self.kernel_x
    }

    pub fn kernel_z(&self) -> &KernelSpec<T> {
        &self.kernel_z
    }

    pub fn filter(&self) -> &SpectralFilter<T> {
        &self.filter
    }

    /// Eigenvalues of K_X / N, descending.
    pub fn spectrum(&self) -> &DVector<T> {
        &self.eig.values
    }

    pub fn train_captions(&self) -> &DMatrix<T> {
        &self.z
    }

    fn k_vector(&self, q: &[T]) -> Result<DVector<T>> {
        if q.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                got: q.len(),
            });
        }
        let mut row = vec![T::zero(); q.len()];
        Ok(DVector::from_fn(self.len(), |i, _| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.x[(i, j)];
            }
            self.kernel_x.eval(&row, q)
        }))
    }

    /// w(x) over the N training pairs.
    pub fn weights(&self, q: &[T]) -> Result<DVector<T>> {
        Ok(&self.op * self.k_vector(q)?)
    }

    /// Weights for every row of `queries`, one column per query.
    pub fn weights_batch(&self, queries: &DMatrix<T>) -> Result<DMatrix<T>> {
        let kq = gram(&self.kernel_x, &self.x, queries)?.matrix;
        Ok(&self.op * kq)
    }

    /// Folds a prompt regression into a single-kernel predictor
    /// η̂(x) = Σ_i k(x_i, x) β_i with β = op · ĝ(z_train).
    pub fn compose(&self, ridge: &RidgeModel<T>) -> Result<ComposedPredictor<T>> {
        if ridge.kernel != self.kernel_z {
            return Err(Error::KernelMismatch);
        }
        let g = ridge.predict_batch(&self.z)?;
        Ok(ComposedPredictor {
            x: self.x.clone(),
            kernel_x: self.kernel_x,
            beta: &self.op * g,
        })
    }
}

/// ĝ(z) = Σ_j c_j l(z_j, z) with c = (L + Mλ I)⁻¹ r.
#[derive(Debug, Clone)]
pub struct RidgeModel<T: Real> {
    pub z: DMatrix<T>,
    pub kernel: KernelSpec<T>,
    pub coef: DVector<T>,
    pub lambda: T,
}

/// Kernel ridge regression of `targets[j] = r(y_j)` on prompt captions `z`.
pub fn fit_g_rho<T: Real>(
    z: &DMatrix<T>,
    targets: &[T],
    kernel: KernelSpec<T>,
    lambda: T,
) -> Result<RidgeModel<T>> {
    let m = z.nrows();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if targets.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: targets.len(),
        });
    }
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let l = gram_symmetric(&kernel, z).matrix;
    let r = DMatrix::from_column_slice(m, 1, targets);
    let coef = solve_shifted_spd(&l, lit_usize::<T>(m) * lambda, &r)?;
    Ok(RidgeModel {
        z: z.clone(),
        kernel,
        coef: coef.column(0).into_owned(),
        lambda,
    })
}

/// Convenience wrapper: targets built as r(y_j) from labels.
pub fn fit_g_rho_labels<T: Real>(
    z: &DMatrix<T>,
    labels: &[usize],
    r: &[T],
    kernel: KernelSpec<T>,
    lambda: T,
) -> Result<RidgeModel<T>> {
    let targets = labels
        .iter()
        .map(|&y| {
            r.get(y).copied().ok_or(Error::DimensionMismatch {
                expected: r.len(),
                got: y + 1,
            })
        })
        .collect::<Result<Vec<T>>>()?;
    fit_g_rho(z, &targets, kernel, lambda)
}

impl<T: Real> RidgeModel<T> {
    pub fn predict(&self, q: &[T]) -> Result<T> {
        if q.len() != self.z.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.z.ncols(),
                got: q.len(),
            });
        }
        let mut row = vec![T::zero(); q.len()];
        let mut acc = T::zero();
        for j in 0..self.z.nrows() {
            for (k, r) in row.iter_mut().enumerate() {
                *r = self.z[(j, k)];
            }
            acc += self.coef[j] * self.kernel.eval(&row, q);
        }
        Ok(acc)
    }

    pub fn predict_batch(&self, queries: &DMatrix<T>) -> Result<DVector<T>> {
        let l = gram(&self.kernel, queries, &self.z)?.matrix;
        Ok(l * &self.coef)
    }
}

/// η̂(x) = ⟨ĝ, F̂(x)⟩ = Σ_i w_i(x) ĝ(z_i).
pub fn predict_eta<T: Real>(cme: &CmeModel<T>, ridge: &RidgeModel<T>, x: &[T]) -> Result<T> {
    if ridge.kernel != cme.kernel_z {
        return Err(Error::KernelMismatch);
    }
    let w = cme.weights(x)?;
    let g = ridge.predict_batch(&cme.z)?;
    Ok(w.dot(&g))
}

/// A fitted two-stage predictor collapsed onto the image kernel.
#[derive(Debug, Clone)]
pub struct ComposedPredictor<T: Real> {
    x: DMatrix<T>,
    kernel_x: KernelSpec<T>,
    beta: DVector<T>,
}

impl<T: Real> ComposedPredictor<T> {
    pub fn predict(&self, q: &[T]) -> T {
        let mut row = vec![T::zero(); q.len()];
        let mut acc = T::zero();
        for i in 0..self.x.nrows() {
            for (k, r) in row.iter_mut().enumerate() {
                *r = self.x[(i, k)];
            }
            acc += self.beta[i] * self.kernel_x.eval(&row, q);
        }
        acc
    }

    pub fn predict_batch(&self, queries: &DMatrix<T>) -> Result<DVector<T>> {
        Ok(gram(&self.kernel_x, queries, &self.x)?.matrix * &self.beta)
    }
}

/// Mean squared difference of two prediction vectors.
pub fn mse<T: Real>(predicted: &[T], reference: &[T]) -> Result<T> {
    if predicted.is_empty() {
        return Err(Error::EmptySample);
    }
    if predicted.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            got: reference.len(),
        });
    }
    let s = predicted
        .iter()
        .zip(reference)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(s / lit_usize::<T>(predicted.len()))
}

/// Empirical L² distance between two predictors over the rows of `test_xs`.
pub fn mse_on<T: Real>(
    predictor: impl Fn(&[T]) -> T,
    reference: impl Fn(&[T]) -> T,
    test_xs: &DMatrix<T>,
) -> Result<T> {
    if test_xs.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let mut row = vec![T::zero(); test_xs.ncols()];
    let mut acc = T::zero();
    for i in 0..test_xs.nrows() {
        for (k, r) in row.iter_mut().enumerate() {
            *r = test_xs[(i, k)];
        }
        let d = predictor(&row) - reference(&row);
        acc += d * d;
    }
    Ok(acc / lit_usize::<T>(test_xs.nrows()))
}

/// λ_N = N^{−1/(β+p)}.
pub fn lambda_schedule<T: Real>(n: usize, beta: T, p: T) -> T {
    let n = lit_usize::<T>(n.max(1));
    n.powf(-(T::one() / (beta + p)))
}

/// Default source and capacity exponents for [`lambda_schedule`].
pub fn default_schedule_exponents<T: Real>() -> (T, T) {
    (T::one(), lit(0.5))
}
