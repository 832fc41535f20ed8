//! Kernels, Gram matrices, PSD eigendecompositions and spectral filters.
//!
//! Point sets are `n × d` matrices with one observation per row.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, lit_usize, to_f64, tolerance, Real};

/// A bounded kernel family. Only the Gaussian RBF ships; estimators take
/// `KernelSpec` so further bounded families slot in as new variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec<T: Real> {
    /// k(u, v) = exp(−‖u − v‖² / (2h²)).
    GaussianRbf { bandwidth: T },
}

impl<T: Real> KernelSpec<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self::GaussianRbf { bandwidth })
    }

    pub fn bandwidth(&self) -> T {
        match *self {
            Self::GaussianRbf { bandwidth } => bandwidth,
        }
    }

    /// sup_u k(u, u).
    pub fn bound(&self) -> T {
        T::one()
    }

    #[inline]
    fn of_sq_dist(&self, sq: T) -> T {
        match *self {
            Self::GaussianRbf { bandwidth } => {
                (-sq / (lit::<T>(2.0) * bandwidth * bandwidth)).exp()
            }
        }
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let sq = a
            .iter()
            .zip(b)
            .fold(T::zero(), |acc, (&u, &v)| acc + (u - v) * (u - v));
        self.of_sq_dist(sq)
    }

    /// k between row `i` of `a` and row `j` of `b`.
    #[inline]
    pub fn eval_rows(&self, a: &DMatrix<T>, i: usize, b: &DMatrix<T>, j: usize) -> T {
        let mut sq = T::zero();
        for k in 0..a.ncols() {
            let d = a[(i, k)] - b[(j, k)];
            sq += d * d;
        }
        self.of_sq_dist(sq)
    }
}

/// κ((x, z), (x', z')) = k(x, x') · l(z, z').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductKernel<T: Real> {
    pub x: KernelSpec<T>,
    pub z: KernelSpec<T>,
}

impl<T: Real> ProductKernel<T> {
    pub fn new(x: KernelSpec<T>, z: KernelSpec<T>) -> Self {
        Self { x, z }
    }

    pub fn bound(&self) -> T {
        self.x.bound() * self.z.bound()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle<T: Real> {
    pub matrix: DMatrix<T>,
    pub symmetric: bool,
    pub centered: bool,
}

impl<T: Real> GramBundle<T> {
    pub fn dim(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    /// J K J with J = I − (1/n) 11ᵀ.
    pub fn centered(&self) -> GramBundle<T> {
        GramBundle {
            matrix: double_center(&self.matrix),
            symmetric: self.symmetric,
            centered: true,
        }
    }
}

/// Row/column centering J K J of a square matrix.
pub fn double_center<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let n = k.nrows();
    let nf = lit_usize::<T>(n);
    let row_means: Vec<T> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<T> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().fold(T::zero(), |a, &b| a + b) / nf;
    let mut out = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand);
    symmetrize_if_close(&mut out, k);
    out
}

fn symmetrize_if_close<T: Real>(out: &mut DMatrix<T>, source: &DMatrix<T>) {
    if source.is_square() && source == &source.transpose() {
        let n = out.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (out[(i, j)] + out[(j, i)]) * lit(0.5);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    }
}

/// K[i][j] = k(a_i, b_j).
pub fn gram<T: Real>(kernel: &KernelSpec<T>, a: &DMatrix<T>, b: &DMatrix<T>) -> Result<GramBundle<T>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let same = a.shape() == b.shape() && a == b;
    if same {
        return Ok(gram_symmetric(kernel, a));
    }
    let matrix = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| kernel.eval_rows(a, i, b, j));
    Ok(GramBundle {
        matrix,
        symmetric: false,
        centered: false,
    })
}

/// Gram of a point set with itself; the upper triangle is mirrored so the
/// result is exactly symmetric.
pub fn gram_symmetric<T: Real>(kernel: &KernelSpec<T>, a: &DMatrix<T>) -> GramBundle<T> {
    let n = a.nrows();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        matrix[(i, i)] = kernel.eval_rows(a, i, a, i);
        for j in (i + 1)..n {
            let v = kernel.eval_rows(a, i, a, j);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    GramBundle {
        matrix,
        symmetric: true,
        centered: false,
    }
}

/// Gram of a product kernel on paired rows (x_i, z_i) against (x'_j, z'_j).
pub fn product_gram<T: Real>(
    kernel: &ProductKernel<T>,
    xa: &DMatrix<T>,
    za: &DMatrix<T>,
    xb: &DMatrix<T>,
    zb: &DMatrix<T>,
) -> Result<GramBundle<T>> {
    let kx = gram(&kernel.x, xa, xb)?;
    let kz = gram(&kernel.z, za, zb)?;
    if kx.dim() != kz.dim() {
        return Err(Error::DimensionMismatch {
            expected: kx.dim().0,
            got: kz.dim().0,
        });
    }
    Ok(GramBundle {
        symmetric: kx.symmetric && kz.symmetric,
        matrix: kx.matrix.component_mul(&kz.matrix),
        centered: false,
    })
}

/// Eigendecomposition of a symmetric PSD matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct Eigh<T: Real> {
    pub values: DVector<T>,
    pub vectors: DMatrix<T>,
}

impl<T: Real> Eigh<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// V diag(f(μ)) Vᵀ.
    pub fn matrix_function(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let scaled = DVector::from_iterator(self.len(), self.values.iter().map(|&m| f(m)));
        let mut left = self.vectors.clone();
        for (j, s) in scaled.iter().enumerate() {
            left.column_mut(j).scale_mut(*s);
        }
        left * self.vectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.matrix_function(|m| m)
    }

    /// Number of strictly positive (post-clamp) eigenvalues.
    pub fn positive_rank(&self) -> usize {
        self.values.iter().filter(|&&v| v > T::zero()).count()
    }
}

/// Symmetric eigendecomposition with eigenvalues below 1e-12·max clamped to 0.
pub fn eigh_psd<T: Real>(k: &DMatrix<T>) -> Result<Eigh<T>> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            got: k.ncols(),
        });
    }
    let scale = k.amax().max(T::one());
    let asym = (k - k.transpose()).amax();
    if asym > tolerance::<T>(1e-12) * scale {
        return Err(Error::NotSymmetric(to_f64(asym)));
    }
    let n = k.nrows();
    if n == 0 {
        return Ok(Eigh {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = k.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = eig.eigenvalues[order[0]].max(T::zero());
    let floor = lit::<T>(1e-12) * top;
    let values = DVector::from_iterator(
        n,
        order.iter().map(|&i| {
            let v = eig.eigenvalues[i];
            if v < floor || v <= T::zero() {
                T::zero()
            } else {
                v
            }
        }),
    );
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(Eigh { values, vectors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// 1/μ for μ ≥ λ, else 0.
    Cutoff,
    /// 1/(μ + λ).
    Tikhonov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFilter<T: Real> {
    pub kind: FilterKind,
    pub lambda: T,
}

impl<T: Real> SpectralFilter<T> {
    pub fn new(kind: FilterKind, lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { kind, lambda })
    }

    pub fn cutoff(lambda: T) -> Result<Self> {
        Self::new(FilterKind::Cutoff, lambda)
    }

    pub fn tikhonov(lambda: T) -> Result<Self> {
        Self::new(FilterKind::Tikhonov, lambda)
    }

    #[inline]
    pub fn apply(&self, mu: T) -> T {
        match self.kind {
            FilterKind::Cutoff => {
                if mu >= self.lambda {
                    T::one() / mu
                } else {
                    T::zero()
                }
            }
            FilterKind::Tikhonov => T::one() / (mu + self.lambda),
        }
    }
}

/// f_λ(K) = V diag(f_λ(μ)) Vᵀ.
pub fn apply_filter<T: Real>(eig: &Eigh<T>, filter: &SpectralFilter<T>) -> DMatrix<T> {
    eig.matrix_function(|m| filter.apply(m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianBandwidth<T: Real> {
    pub bandwidth: T,
    /// Set when every pairwise distance was zero and 1.0 was substituted.
    pub degenerate: bool,
}

/// Lower median of pairwise Euclidean distances.
pub fn median_heuristic<T: Real>(points: &DMatrix<T>) -> Result<MedianBandwidth<T>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = T::zero();
            for k in 0..points.ncols() {
                let d = points[(i, k)] - points[(j, k)];
                sq += d * d;
            }
            dists.push(sq.sqrt());
        }
    }
    let mid = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| {
        a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
    });
    let median = *median;
    if median > T::zero() {
        Ok(MedianBandwidth {
            bandwidth: median,
            degenerate: false,
        })
    } else if dists.iter().any(|&d| d > T::zero()) {
        // More than half the pairs coincide; fall back to the smallest positive gap.
        let smallest = dists
            .iter()
            .copied()
            .filter(|&d| d > T::zero())
            .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b));
        Ok(MedianBandwidth {
            bandwidth: smallest,
            degenerate: false,
        })
    } else {
        log::warn!("all points identical; median heuristic falls back to bandwidth 1.0");
        Ok(MedianBandwidth {
            bandwidth: T::one(),
            degenerate: true,
        })
    }
}

/// Solves (A + shift·I) X = B for symmetric positive definite A + shift·I.
pub fn solve_shifted_spd<T: Real>(a: &DMatrix<T>, shift: T, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += shift;
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    m.lu()
        .solve(b)
        .ok_or_else(|| Error::Domain("shifted system is singular".into()))
}
