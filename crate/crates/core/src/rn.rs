//! Information-density route: a spectrally regularized estimate of
//! R = dP_{X,Z} / d(P_X ⊗ P_Z) from paired and unpaired samples, averaged
//! against an empirical prompt measure.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kernel::{eigh_psd, gram, product_gram, ProductKernel, SpectralFilter};
use crate::rng::seeded;
use crate::scalar::{lit, lit_usize, Real};

/// Paired rows keep their caption; unpaired rows have captions from another
/// pair, approximating draws from the product of marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSplit<T: Real> {
    pub paired_x: DMatrix<T>,
    pub paired_z: DMatrix<T>,
    pub unpaired_x: DMatrix<T>,
    pub unpaired_z: DMatrix<T>,
}

/// Shuffles the pairs, keeps the first ⌈N/2⌉ intact and cyclically shifts
/// the captions of the rest by one position.
pub fn split_pairs<T: Real>(x: &DMatrix<T>, z: &DMatrix<T>, seed: u64) -> Result<PairSplit<T>> {
    let n = x.nrows();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.nrows(),
        });
    }
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let np = n.div_ceil(2);
    let (head, tail) = order.split_at(np);
    let nu = tail.len();
    let pick = |m: &DMatrix<T>, rows: &[usize]| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
    let shifted: Vec<usize> = (0..nu).map(|i| tail[(i + 1) % nu]).collect();
    Ok(PairSplit {
        paired_x: pick(x, head),
        paired_z: pick(z, head),
        unpaired_x: pick(x, tail),
        unpaired_z: pick(z, &shifted),
    })
}

#[derive(Debug, Clone)]
pub struct RnModel<T: Real> {
    ux: DMatrix<T>,
    uz: DMatrix<T>,
    kernel: ProductKernel<T>,
    coef: DVector<T>,
    filter: SpectralFilter<T>,
    clamp: bool,
}

/// R̂ = f_λ(Ĉ_u) Ĉ_p 1 expressed on the unpaired sample:
/// c = (1/(N_u N_p)) · V diag(f_λ(μ)/μ) Vᵀ K_up 1 with K_u/N_u = V diag(μ) Vᵀ.
pub fn fit_rn<T: Real>(
    paired_x: &DMatrix<T>,
    paired_z: &DMatrix<T>,
    unpaired_x: &DMatrix<T>,
    unpaired_z: &DMatrix<T>,
    kernel: ProductKernel<T>,
    filter: SpectralFilter<T>,
) -> Result<RnModel<T>> {
    let np = paired_x.nrows();
    let nu = unpaired_x.nrows();
    if np == 0 || nu == 0 {
        return Err(Error::EmptySample);
    }
    if paired_z.nrows() != np || unpaired_z.nrows() != nu {
        return Err(Error::DimensionMismatch {
            expected: np,
            got: paired_z.nrows(),
        });
    }
    let nu_t = lit_usize::<T>(nu);
    let np_t = lit_usize::<T>(np);
    let ku = product_gram(&kernel, unpaired_x, unpaired_z, unpaired_x, unpaired_z)?.matrix / nu_t;
    let eig = eigh_psd(&ku)?;
    let kup = product_gram(&kernel, unpaired_x, unpaired_z, paired_x, paired_z)?.matrix;
    let mean_embed = DVector::from_fn(nu, |i, _| kup.row(i).sum());
    let proj = eig.vectors.transpose() * mean_embed;
    let scaled = DVector::from_fn(nu, |i, _| {
        let mu = eig.values[i];
        if mu > T::zero() {
            proj[i] * filter.apply(mu) / mu
        } else {
            T::zero()
        }
    });
    let coef = (&eig.vectors * scaled) / (nu_t * np_t);
    Ok(RnModel {
        ux: unpaired_x.clone(),
        uz: unpaired_z.clone(),
        kernel,
        coef,
        filter,
        clamp: false,
    })
}

/// Uniform empirical measure over prompts (y_k, z_k).
#[derive(Debug, Clone)]
pub struct PromptMeasure<T: Real> {
    pub labels: Vec<usize>,
    pub z: DMatrix<T>,
}

impl<T: Real> PromptMeasure<T> {
    pub fn new(labels: Vec<usize>, z: DMatrix<T>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptySample);
        }
        if labels.len() != z.nrows() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: z.nrows(),
            });
        }
        Ok(Self { labels, z })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn weight(&self) -> T {
        T::one() / lit_usize::<T>(self.len())
    }

    fn targets(&self, r: &[T]) -> Result<Vec<T>> {
        self.labels
            .iter()
            .map(|&y| {
                r.get(y).copied().ok_or(Error::DimensionMismatch {
                    expected: r.len(),
                    got: y + 1,
                })
            })
            .collect()
    }
}

impl<T: Real> RnModel<T> {
    /// Enables max(R̂, 0) at evaluation.
    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn coefficients(&self) -> &DVector<T> {
        &self.coef
    }

    pub fn filter(&self) -> &SpectralFilter<T> {
        &self.filter
    }

    pub fn kernel(&self) -> &ProductKernel<T> {
        &self.kernel
    }

    fn finish(&self, v: T) -> T {
        if self.clamp {
            v.max(T::zero())
        } else {
            v
        }
    }

    /// R̂(x, z).
    pub fn eval(&self, x: &[T], z: &[T]) -> T {
        let mut rx = vec![T::zero(); x.len()];
        let mut rz = vec![T::zero(); z.len()];
        let mut acc = T::zero();
        for j in 0..self.ux.nrows() {
            for (k, r) in rx.iter_mut().enumerate() {
                *r = self.ux[(j, k)];
            }
            for (k, r) in rz.iter_mut().enumerate() {
                *r = self.uz[(j, k)];
            }
            acc += self.coef[j] * self.kernel.x.eval(&rx, x) * self.kernel.z.eval(&rz, z);
        }
        self.finish(acc)
    }

    /// R̂ at paired rows (x_i, z_i).
    pub fn eval_pairs(&self, x: &DMatrix<T>, z: &DMatrix<T>) -> Result<DVector<T>> {
        let kx = gram(&self.kernel.x, x, &self.ux)?.matrix;
        let kz = gram(&self.kernel.z, z, &self.uz)?.matrix;
        let v = kx.component_mul(&kz) * &self.coef;
        Ok(v.map(|e| self.finish(e)))
    }

    /// Freezes the prompt average so queries cost one pass over the
    /// unpaired sample: η̂(x) = Σ_j c_j k(x'_j, x) h_j with
    /// h_j = (1/M) Σ_k r(y_k) l(z'_j, z_k).
    pub fn with_prompts(&self, prompts: &PromptMeasure<T>, r: &[T]) -> Result<RnPredictor<T>> {
        let targets = DVector::from_vec(prompts.targets(r)?);
        let lz = gram(&self.kernel.z, &self.uz, &prompts.z)?.matrix;
        if self.clamp {
            return Ok(RnPredictor {
                model: self.clone(),
                folded: None,
                lz: Some((lz, targets * prompts.weight())),
            });
        }
        let h = (lz * targets) * prompts.weight();
        Ok(RnPredictor {
            model: self.clone(),
            folded: Some(self.coef.component_mul(&h)),
            lz: None,
        })
    }
}

/// η̂(x) = (1/M) Σ_k r(y_k) R̂(x, z_k).
pub fn predict_eta<T: Real>(rn: &RnModel<T>, prompts: &PromptMeasure<T>, r: &[T], x: &[T]) -> Result<T> {
    Ok(rn.with_prompts(prompts, r)?.predict(x))
}

#[derive(Debug, Clone)]
pub struct RnPredictor<T: Real> {
    model: RnModel<T>,
    folded: Option<DVector<T>>,
    /// Clamped evaluation needs R̂ per prompt: l(z'_j, z_k) and weighted targets.
    lz: Option<(DMatrix<T>, DVector<T>)>,
}

impl<T: Real> RnPredictor<T> {
    fn kx(&self, x: &[T]) -> DVector<T> {
        let ux = &self.model.ux;
        let mut row = vec![T::zero(); x.len()];
        DVector::from_fn(ux.nrows(), |j, _| {
            for (k, r) in row.iter_mut().enumerate() {
                *r = ux[(j, k)];
            }
            self.model.kernel.x.eval(&row, x)
        })
    }

    pub fn predict(&self, x: &[T]) -> T {
        let kx = self.kx(x);
        match (&self.folded, &self.lz) {
            (Some(w), _) => kx.dot(w),
            (None, Some((lz, wt))) => {
                let ck = self.model.coef.component_mul(&kx);
                let per_prompt = lz.transpose() * ck;
                per_prompt
                    .iter()
                    .zip(wt.iter())
                    .fold(T::zero(), |acc, (&v, &w)| acc + w * v.max(T::zero()))
            }
            (None, None) => unreachable!("predictor built without prompt data"),
        }
    }

    pub fn predict_batch(&self, queries: &DMatrix<T>) -> Result<DVector<T>> {
        if let Some(w) = &self.folded {
            return Ok(gram(&self.model.kernel.x, queries, &self.model.ux)?.matrix * w);
        }
        let mut row = vec![T::zero(); queries.ncols()];
        Ok(DVector::from_fn(queries.nrows(), |i, _| {
            for (k, r) in row.iter_mut().enumerate() {
                *r = queries[(i, k)];
            }
            self.predict(&row)
        }))
    }
}

/// λ = ((N_p^{−1/2} + N_u^{−1/2}) / K_max^{1/2})^{1/(β+1)}.
pub fn lambda_schedule_rn<T: Real>(np: T, nu: T, beta: T, k_max: T) -> T {
    let half = lit::<T>(0.5);
    let base = (np.powf(-half) + nu.powf(-half)) / k_max.sqrt();
    base.powf(T::one() / (beta + T::one()))
}
