//! Exact population quantities on finite alphabets.
//!
//! Every table here is a dense row-major probability array. The functions are
//! brute-force by construction: they enumerate cells instead of estimating,
//! and they are used as the ground truth for the sample-based estimators.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{is_zero_mass, lit, tolerance, Real};

fn validate_probs<T: Real>(probs: &[T], expected_len: usize) -> Result<()> {
    if probs.len() != expected_len {
        return Err(Error::DimensionMismatch {
            expected: expected_len,
            got: probs.len(),
        });
    }
    if expected_len == 0 {
        return Err(Error::InvalidTable("empty alphabet".into()));
    }
    let mut total = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < T::zero() {
            return Err(Error::InvalidTable(format!("entry {i} is {p}")));
        }
        total += p;
    }
    if (total - T::one()).abs() > tolerance::<T>(1e-12) {
        return Err(Error::InvalidTable(format!("total mass {total} != 1")));
    }
    Ok(())
}

/// JSON layout shared by all tables: sizes plus flattened row-major masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDocument {
    #[serde(default)]
    pub x_size: Option<usize>,
    #[serde(default)]
    pub y_size: Option<usize>,
    #[serde(default)]
    pub z_size: Option<usize>,
    pub probs: Vec<f64>,
}

impl TableDocument {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    fn probs_as<T: Real>(&self) -> Vec<T> {
        self.probs.iter().map(|&p| lit(p)).collect()
    }

    fn require(size: Option<usize>, name: &str) -> Result<usize> {
        size.ok_or_else(|| Error::Parse(format!("missing field {name}")))
    }
}

/// Joint law of (X, Z) on a finite product alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint<T: Real> {
    nx: usize,
    nz: usize,
    probs: Vec<T>,
}

impl<T: Real> DiscreteJoint<T> {
    pub fn new(nx: usize, nz: usize, probs: Vec<T>) -> Result<Self> {
        validate_probs(&probs, nx * nz)?;
        Ok(Self { nx, nz, probs })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let nx = rows.len();
        let nz = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nz) {
            return Err(Error::InvalidTable("ragged rows".into()));
        }
        Self::new(nx, nz, rows.concat())
    }

    pub fn from_document(doc: &TableDocument) -> Result<Self> {
        let nx = TableDocument::require(doc.x_size, "x_size")?;
        let nz = TableDocument::require(doc.z_size, "z_size")?;
        if doc.y_size.is_some_and(|m| m != 1) {
            return Err(Error::Parse("a joint (x, z) table must have y_size 1 or omit it".into()));
        }
        Self::new(nx, nz, doc.probs_as())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&TableDocument::parse(text)?)
    }

    pub fn x_size(&self) -> usize {
        self.nx
    }

    pub fn z_size(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn get(&self, x: usize, z: usize) -> T {
        self.probs[x * self.nz + z]
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn marginal_x(&self) -> Vec<T> {
        (0..self.nx)
            .map(|x| (0..self.nz).fold(T::zero(), |acc, z| acc + self.get(x, z)))
            .collect()
    }

    pub fn marginal_z(&self) -> Vec<T> {
        (0..self.nz)
            .map(|z| (0..self.nx).fold(T::zero(), |acc, x| acc + self.get(x, z)))
            .collect()
    }

    /// Rebuilds a joint from an information density and the two marginals.
    pub fn from_density(density: &DMatrix<T>, px: &[T], pz: &[T]) -> Result<Self> {
        let (nx, nz) = density.shape();
        if px.len() != nx || pz.len() != nz {
            return Err(Error::DimensionMismatch {
                expected: nx * nz,
                got: px.len() * pz.len(),
            });
        }
        let mut probs = Vec::with_capacity(nx * nz);
        for x in 0..nx {
            for z in 0..nz {
                probs.push(density[(x, z)] * px[x] * pz[z]);
            }
        }
        Self::new(nx, nz, probs)
    }

    fn positive_marginals(&self) -> Result<(Vec<T>, Vec<T>)> {
        let px = self.marginal_x();
        let pz = self.marginal_z();
        if let Some(index) = px.iter().position(|&v| is_zero_mass(v)) {
            return Err(Error::ZeroMarginal { axis: "x", index });
        }
        if let Some(index) = pz.iter().position(|&v| is_zero_mass(v)) {
            return Err(Error::ZeroMarginal { axis: "z", index });
        }
        Ok((px, pz))
    }
}

/// Joint law of (X, Y, Z); index order is (x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTriple<T: Real> {
    nx: usize,
    ny: usize,
    nz: usize,
    probs: Vec<T>,
}

impl<T: Real> DiscreteTriple<T> {
    pub fn new(nx: usize, ny: usize, nz: usize, probs: Vec<T>) -> Result<Self> {
        validate_probs(&probs, nx * ny * nz)?;
        Ok(Self { nx, ny, nz, probs })
    }

    pub fn from_document(doc: &TableDocument) -> Result<Self> {
        Self::new(
            TableDocument::require(doc.x_size, "x_size")?,
            TableDocument::require(doc.y_size, "y_size")?,
            TableDocument::require(doc.z_size, "z_size")?,
            doc.probs_as(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&TableDocument::parse(text)?)
    }

    /// P(x, y, z) = P(z) P(x | z) P(y | z): a triple with X ⊥ Y | Z.
    pub fn conditionally_independent(
        pz: &[T],
        px_given_z: &DMatrix<T>,
        py_given_z: &DMatrix<T>,
    ) -> Result<Self> {
        let nz = pz.len();
        let nx = px_given_z.nrows();
        let ny = py_given_z.nrows();
        if px_given_z.ncols() != nz || py_given_z.ncols() != nz {
            return Err(Error::DimensionMismatch {
                expected: nz,
                got: px_given_z.ncols().min(py_given_z.ncols()),
            });
        }
        let mut probs = vec![T::zero(); nx * ny * nz];
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    probs[(x * ny + y) * nz + z] = pz[z] * px_given_z[(x, z)] * py_given_z[(y, z)];
                }
            }
        }
        Self::new(nx, ny, nz, probs)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.probs[(x * self.ny + y) * self.nz + z]
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// P(x, y) as an |X|×|Y| matrix.
    pub fn marginal_xy(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.nx, self.ny, |x, y| {
            (0..self.nz).fold(T::zero(), |acc, z| acc + self.get(x, y, z))
        })
    }

    /// P(y, z) as an |Y|×|Z| matrix.
    pub fn marginal_yz(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.ny, self.nz, |y, z| {
            (0..self.nx).fold(T::zero(), |acc, x| acc + self.get(x, y, z))
        })
    }

    pub fn marginal_xz(&self) -> DiscreteJoint<T> {
        let mut probs = Vec::with_capacity(self.nx * self.nz);
        for x in 0..self.nx {
            for z in 0..self.nz {
                probs.push((0..self.ny).fold(T::zero(), |acc, y| acc + self.get(x, y, z)));
            }
        }
        DiscreteJoint {
            nx: self.nx,
            nz: self.nz,
            probs,
        }
    }

    pub fn marginal_x(&self) -> Vec<T> {
        (0..self.nx)
            .map(|x| {
                let mut s = T::zero();
                for y in 0..self.ny {
                    for z in 0..self.nz {
                        s += self.get(x, y, z);
                    }
                }
                s
            })
            .collect()
    }

    pub fn marginal_z(&self) -> Vec<T> {
        self.marginal_xz().marginal_z()
    }

    /// The prompt table that equals P_{Y,Z} (the unbiased prompt law).
    pub fn unbiased_prompt(&self) -> PromptTable<T> {
        let yz = self.marginal_yz();
        let mut probs = Vec::with_capacity(self.ny * self.nz);
        for y in 0..self.ny {
            for z in 0..self.nz {
                probs.push(yz[(y, z)]);
            }
        }
        PromptTable {
            ny: self.ny,
            nz: self.nz,
            probs,
        }
    }

    /// Largest cellwise violation of P(x,y|z) = P(x|z)P(y|z), weighted by P(z).
    pub fn conditional_independence_gap(&self) -> T {
        let xz = self.marginal_xz();
        let yz = self.marginal_yz();
        let pz = xz.marginal_z();
        let mut worst = T::zero();
        for z in 0..self.nz {
            if is_zero_mass(pz[z]) {
                continue;
            }
            for x in 0..self.nx {
                for y in 0..self.ny {
                    let gap = (self.get(x, y, z) * pz[z] - xz.get(x, z) * yz[(y, z)]).abs();
                    worst = worst.max(gap);
                }
            }
        }
        worst
    }
}

/// Prompt law ρ over (Y, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable<T: Real> {
    ny: usize,
    nz: usize,
    probs: Vec<T>,
}

impl<T: Real> PromptTable<T> {
    pub fn new(ny: usize, nz: usize, probs: Vec<T>) -> Result<Self> {
        validate_probs(&probs, ny * nz)?;
        Ok(Self { ny, nz, probs })
    }

    pub fn from_document(doc: &TableDocument) -> Result<Self> {
        if doc.x_size.is_some_and(|n| n != 1) {
            return Err(Error::Parse("a prompt (y, z) table must have x_size 1 or omit it".into()));
        }
        Self::new(
            TableDocument::require(doc.y_size, "y_size")?,
            TableDocument::require(doc.z_size, "z_size")?,
            doc.probs_as(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&TableDocument::parse(text)?)
    }

    /// ρ(y, z) = ρ_Y(y) ρ(z | y); columns of `z_given_y` are indexed by y.
    pub fn from_class_conditionals(py: &[T], z_given_y: &DMatrix<T>) -> Result<Self> {
        let ny = py.len();
        let nz = z_given_y.nrows();
        if z_given_y.ncols() != ny {
            return Err(Error::DimensionMismatch {
                expected: ny,
                got: z_given_y.ncols(),
            });
        }
        let mut probs = Vec::with_capacity(ny * nz);
        for y in 0..ny {
            for z in 0..nz {
                probs.push(py[y] * z_given_y[(z, y)]);
            }
        }
        Self::new(ny, nz, probs)
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }

    #[inline]
    pub fn get(&self, y: usize, z: usize) -> T {
        self.probs[y * self.nz + z]
    }

    pub fn marginal_y(&self) -> Vec<T> {
        (0..self.ny)
            .map(|y| (0..self.nz).fold(T::zero(), |acc, z| acc + self.get(y, z)))
            .collect()
    }

    pub fn marginal_z(&self) -> Vec<T> {
        (0..self.nz)
            .map(|z| (0..self.ny).fold(T::zero(), |acc, y| acc + self.get(y, z)))
            .collect()
    }

    /// g_ρ(z) = E_ρ[r(Y) | Z = z]; `None` where ρ_Z(z) = 0.
    pub fn regression(&self, r: &[T]) -> Vec<Option<T>> {
        let rz = self.marginal_z();
        (0..self.nz)
            .map(|z| {
                if is_zero_mass(rz[z]) {
                    None
                } else {
                    let num = (0..self.ny).fold(T::zero(), |acc, y| acc + self.get(y, z) * r[y]);
                    Some(num / rz[z])
                }
            })
            .collect()
    }
}

/// Singular system of the conditional mean operator.
///
/// `left` holds α_i(x) in column i, `right` holds β_i(z) in column i; both are
/// orthonormal in L²(Q_X) and L²(Q_Z) respectively.
#[derive(Debug, Clone)]
pub struct SpectrumResult<T: Real> {
    pub singular_values: Vec<T>,
    pub left_functions: DMatrix<T>,
    pub right_functions: DMatrix<T>,
}

impl<T: Real> SpectrumResult<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Σ_{i ≤ d} σ_i α_i(x) β_i(z).
    pub fn reconstruct(&self, d: usize) -> DMatrix<T> {
        let nx = self.left_functions.nrows();
        let nz = self.right_functions.nrows();
        let mut out = DMatrix::zeros(nx, nz);
        for i in 0..d.min(self.rank()) {
            let s = self.singular_values[i];
            for x in 0..nx {
                let a = s * self.left_functions[(x, i)];
                for z in 0..nz {
                    out[(x, z)] += a * self.right_functions[(z, i)];
                }
            }
        }
        out
    }

    pub fn tail_energy(&self, d: usize) -> T {
        self.singular_values
            .iter()
            .skip(d)
            .fold(T::zero(), |acc, &s| acc + s * s)
    }
}

/// R(x, z) = p(x, z) / (p_X(x) p_Z(z)).
pub fn information_density<T: Real>(joint: &DiscreteJoint<T>) -> Result<DMatrix<T>> {
    let (px, pz) = joint.positive_marginals()?;
    Ok(DMatrix::from_fn(joint.nx, joint.nz, |x, z| {
        joint.get(x, z) / (px[x] * pz[z])
    }))
}

/// SVD of A = D_X^{1/2} C D_Z^{-1/2}, C[x][z] = Q(z | x), mapped back to
/// singular functions.
pub fn conditional_mean_svd<T: Real>(joint: &DiscreteJoint<T>) -> Result<SpectrumResult<T>> {
    let (px, pz) = joint.positive_marginals()?;
    let a = DMatrix::from_fn(joint.nx, joint.nz, |x, z| {
        let cond = joint.get(x, z) / px[x];
        px[x].sqrt() * cond / pz[z].sqrt()
    });
    let svd = a.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut singular_values = Vec::with_capacity(k);
    let mut left = DMatrix::zeros(joint.nx, k);
    let mut right = DMatrix::zeros(joint.nz, k);
    for (col, &i) in order.iter().enumerate() {
        singular_values.push(svd.singular_values[i].max(T::zero()));
        for x in 0..joint.nx {
            left[(x, col)] = u[(x, i)] / px[x].sqrt();
        }
        for z in 0..joint.nz {
            right[(z, col)] = v_t[(i, z)] / pz[z].sqrt();
        }
        // Fix the sign so the entry of largest magnitude in α_i is positive.
        let pivot = (0..joint.nx)
            .max_by(|&p, &q| {
                left[(p, col)]
                    .abs()
                    .partial_cmp(&left[(q, col)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        if left[(pivot, col)] < T::zero() {
            for x in 0..joint.nx {
                left[(x, col)] = -left[(x, col)];
            }
            for z in 0..joint.nz {
                right[(z, col)] = -right[(z, col)];
            }
        }
    }
    Ok(SpectrumResult {
        singular_values,
        left_functions: left,
        right_functions: right,
    })
}

/// E_{Q_X ⊗ Q_Z}[g(R)] for a cellwise function of the density.
fn product_expectation<T: Real>(
    density: &DMatrix<T>,
    px: &[T],
    pz: &[T],
    f: impl Fn(T) -> T,
) -> T {
    let mut acc = T::zero();
    for x in 0..px.len() {
        for z in 0..pz.len() {
            acc += px[x] * pz[z] * f(density[(x, z)]);
        }
    }
    acc
}

/// Mean square contingency I(X; Z), cross-checked against Σ_{i≥2} σ_i².
pub fn msc<T: Real>(joint: &DiscreteJoint<T>) -> Result<T> {
    let density = information_density(joint)?;
    let px = joint.marginal_x();
    let pz = joint.marginal_z();
    let direct = product_expectation(&density, &px, &pz, |r| (r - T::one()) * (r - T::one()));
    let spectral = conditional_mean_svd(joint)?.tail_energy(1);
    let tol = tolerance::<T>(1e-10) * direct.abs().max(T::one());
    if (direct - spectral).abs() > tol {
        return Err(Error::IdentityViolation(format!(
            "E[(R-1)^2] = {direct} but tail singular energy = {spectral}"
        )));
    }
    Ok(direct)
}

/// Rank-d Lancaster truncation R_d and its L²(Q_X ⊗ Q_Z) tail energy.
pub fn lancaster_truncate<T: Real>(joint: &DiscreteJoint<T>, d: usize) -> Result<(DMatrix<T>, T)> {
    let max = joint.nx.min(joint.nz);
    if d == 0 || d > max {
        return Err(Error::BadRank { d, max });
    }
    let spectrum = conditional_mean_svd(joint)?;
    Ok((spectrum.reconstruct(d), spectrum.tail_energy(d)))
}

/// ‖R − R_d‖² under the product of marginals.
pub fn truncation_error<T: Real>(joint: &DiscreteJoint<T>, truncated: &DMatrix<T>) -> Result<T> {
    let density = information_density(joint)?;
    let px = joint.marginal_x();
    let pz = joint.marginal_z();
    let diff = &density - truncated;
    Ok(product_expectation(&diff, &px, &pz, |v| v * v))
}

/// Everything on the right and left of the residual-dependence bound.
#[derive(Debug, Clone)]
pub struct DecompositionReport<T: Real> {
    /// η_*(x) = E[r(Y) | X = x].
    pub eta_direct: Vec<T>,
    /// η_ρ(x) = Σ_z Q(z | x) g_ρ(z).
    pub eta_indirect: Vec<T>,
    /// g_ρ(z); zero where P_Z(z) = 0 (never weighted).
    pub g_rho: Vec<T>,
    /// g_{P_{Y,Z}}(z).
    pub g_true: Vec<T>,
    /// I(X; Y | Z = z); `None` on P_Z-null atoms.
    pub conditional_msc: Vec<Option<T>>,
    pub prompt_bias: T,
    pub residual_dependence: T,
    pub b_r: T,
    /// ‖η_ρ − η_*‖²_{L²(P_X)}.
    pub lhs: T,
    /// 2·prompt_bias + 2·B_r²·residual_dependence.
    pub rhs: T,
    pub bound_holds: bool,
}

/// I(X; Y | Z = z) by exhaustive summation of (S_z − 1)² against P_{X|z} ⊗ P_{Y|z}.
pub fn conditional_msc<T: Real>(triple: &DiscreteTriple<T>, z: usize) -> Result<Option<T>> {
    let (nx, ny, _) = triple.sizes();
    let mut pz = T::zero();
    for x in 0..nx {
        for y in 0..ny {
            pz += triple.get(x, y, z);
        }
    }
    if is_zero_mass(pz) {
        return Ok(None);
    }
    let px_z: Vec<T> = (0..nx)
        .map(|x| (0..ny).fold(T::zero(), |acc, y| acc + triple.get(x, y, z)) / pz)
        .collect();
    let py_z: Vec<T> = (0..ny)
        .map(|y| (0..nx).fold(T::zero(), |acc, x| acc + triple.get(x, y, z)) / pz)
        .collect();
    let mut acc = T::zero();
    for x in 0..nx {
        for y in 0..ny {
            let joint = triple.get(x, y, z) / pz;
            let product = px_z[x] * py_z[y];
            if is_zero_mass(product) {
                if !is_zero_mass(joint) {
                    return Err(Error::NotAbsolutelyContinuous(format!(
                        "P(x={x}, y={y} | z={z}) > 0 but product of conditionals is 0"
                    )));
                }
                continue;
            }
            let s = joint / product;
            acc += product * (s - T::one()) * (s - T::one());
        }
    }
    Ok(Some(acc))
}

/// Exact direct/indirect predictors, prompt bias, residual dependence, and the
/// bound ‖η_ρ − η_*‖² ≤ 2·bias + 2·B_r²·E_{P_Z}[I(X;Y|Z)].
///
/// The triple's own P_{Z|X} plays the role of the pre-training conditional.
pub fn predictors_and_bound<T: Real>(
    triple: &DiscreteTriple<T>,
    prompt: &PromptTable<T>,
    r: &[T],
) -> Result<DecompositionReport<T>> {
    let (nx, ny, nz) = triple.sizes();
    if prompt.sizes() != (ny, nz) {
        return Err(Error::DimensionMismatch {
            expected: ny * nz,
            got: prompt.sizes().0 * prompt.sizes().1,
        });
    }
    if r.len() != ny {
        return Err(Error::DimensionMismatch {
            expected: ny,
            got: r.len(),
        });
    }
    let b_r = r.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));

    let pxy = triple.marginal_xy();
    let pyz = triple.marginal_yz();
    let pxz = triple.marginal_xz();
    let px = triple.marginal_x();
    let pz = pxz.marginal_z();
    if let Some(index) = px.iter().position(|&v| is_zero_mass(v)) {
        return Err(Error::ZeroMarginal { axis: "x", index });
    }

    let eta_direct: Vec<T> = (0..nx)
        .map(|x| (0..ny).fold(T::zero(), |acc, y| acc + pxy[(x, y)] * r[y]) / px[x])
        .collect();

    let rho_g = prompt.regression(r);
    let mut g_rho = vec![T::zero(); nz];
    let mut g_true = vec![T::zero(); nz];
    for z in 0..nz {
        if is_zero_mass(pz[z]) {
            continue;
        }
        g_rho[z] = rho_g[z].ok_or(Error::ZeroConditioner(z))?;
        g_true[z] = (0..ny).fold(T::zero(), |acc, y| acc + pyz[(y, z)] * r[y]) / pz[z];
    }

    let eta_indirect: Vec<T> = (0..nx)
        .map(|x| (0..nz).fold(T::zero(), |acc, z| acc + pxz.get(x, z) * g_rho[z]) / px[x])
        .collect();

    let prompt_bias = (0..nz).fold(T::zero(), |acc, z| {
        let d = g_rho[z] - g_true[z];
        acc + pz[z] * d * d
    });

    let mut conditional = Vec::with_capacity(nz);
    let mut residual_dependence = T::zero();
    for z in 0..nz {
        let value = conditional_msc(triple, z)?;
        if let Some(v) = value {
            residual_dependence += pz[z] * v;
        }
        conditional.push(value);
    }

    let lhs = (0..nx).fold(T::zero(), |acc, x| {
        let d = eta_indirect[x] - eta_direct[x];
        acc + px[x] * d * d
    });
    let two = lit::<T>(2.0);
    let rhs = two * prompt_bias + two * b_r * b_r * residual_dependence;
    let bound_holds = lhs <= rhs + tolerance::<T>(1e-12);

    Ok(DecompositionReport {
        eta_direct,
        eta_indirect,
        g_rho,
        g_true,
        conditional_msc: conditional,
        prompt_bias,
        residual_dependence,
        b_r,
        lhs,
        rhs,
        bound_holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCheck<T: Real> {
    /// Σ|p − q|.
    pub tv: T,
    pub norm_p: T,
    pub norm_q: T,
    pub additive_rhs: T,
    pub additive_ok: bool,
    /// (B·‖η‖²_q, holds) when a ratio bound was supplied.
    pub multiplicative: Option<(T, bool)>,
}

/// max_x p(x)/q(x): the constant that makes ‖η‖²_p ≤ B‖η‖²_q hold.
pub fn density_ratio_bound<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    let mut best = T::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if is_zero_mass(qi) {
            if !is_zero_mass(pi) {
                return Err(Error::NotAbsolutelyContinuous(format!(
                    "p({i}) > 0 but q({i}) = 0"
                )));
            }
            continue;
        }
        best = best.max(pi / qi);
    }
    Ok(best)
}

/// Change-of-measure bounds between two laws on the same alphabet.
///
/// The multiplicative bound needs P ≪ Q with dP/dQ ≤ `ratio_bound`.
pub fn distribution_shift_check<T: Real>(
    p: &[T],
    q: &[T],
    eta: &[T],
    ratio_bound: Option<T>,
) -> Result<ShiftCheck<T>> {
    if p.len() != q.len() || p.len() != eta.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len().min(eta.len()),
        });
    }
    let tv = p
        .iter()
        .zip(q)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
    let sup = eta.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let norm = |w: &[T]| {
        w.iter()
            .zip(eta)
            .fold(T::zero(), |acc, (&wi, &e)| acc + wi * e * e)
    };
    let norm_p = norm(p);
    let norm_q = norm(q);
    let slack = tolerance::<T>(1e-12);
    let additive_rhs = norm_q + sup * sup * tv;
    let additive_ok = norm_p <= additive_rhs + slack;
    let multiplicative = match ratio_bound {
        None => None,
        Some(b) => {
            for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
                if is_zero_mass(qi) && !is_zero_mass(pi) {
                    return Err(Error::NotAbsolutelyContinuous(format!(
                        "p({i}) > 0 but q({i}) = 0"
                    )));
                }
            }
            let rhs = b * norm_q;
            Some((rhs, norm_p <= rhs + slack))
        }
    };
    Ok(ShiftCheck {
        tv,
        norm_p,
        norm_q,
        additive_rhs,
        additive_ok,
        multiplicative,
    })
}

/// Random strictly positive tables for property checks.
pub mod random {
    use super::*;

    fn positive_simplex<T: Real, R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<T> {
        let raw: Vec<f64> = (0..len).map(|_| 0.02 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let mut out: Vec<T> = raw.iter().map(|v| lit(v / total)).collect();
        // Push the rounding residue into the largest cell.
        let sum = out.iter().fold(T::zero(), |a, &b| a + b);
        let (imax, _) = out
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        out[imax] += T::one() - sum;
        out
    }

    pub fn simplex<T: Real, R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<T> {
        positive_simplex(len, rng)
    }

    pub fn joint<T: Real, R: Rng + ?Sized>(nx: usize, nz: usize, rng: &mut R) -> DiscreteJoint<T> {
        DiscreteJoint::new(nx, nz, positive_simplex(nx * nz, rng)).expect("valid random joint")
    }

    pub fn triple<T: Real, R: Rng + ?Sized>(
        nx: usize,
        ny: usize,
        nz: usize,
        rng: &mut R,
    ) -> DiscreteTriple<T> {
        DiscreteTriple::new(nx, ny, nz, positive_simplex(nx * ny * nz, rng))
            .expect("valid random triple")
    }

    pub fn prompt<T: Real, R: Rng + ?Sized>(ny: usize, nz: usize, rng: &mut R) -> PromptTable<T> {
        PromptTable::new(ny, nz, positive_simplex(ny * nz, rng)).expect("valid random prompt")
    }

    /// Column-stochastic |rows|×|cols| matrix (each column a conditional law).
    pub fn conditional<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<T> {
        let mut m = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            let col = positive_simplex::<T, R>(rows, rng);
            for r in 0..rows {
                m[(r, c)] = col[r];
            }
        }
        m
    }
}
