//! Class-conditional joint Gaussian model over (X, Z) with a binary label.
//!
//! Given Y = y, (X, Z) is jointly Gaussian. The θ-family interpolates between
//! X ⊥ Z | Y (θ = 0) and a regime where Z carries nearly all of the label
//! information available from X (θ = 1); the (X, Y) marginal does not depend
//! on θ.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, stream, SimRng};

/// Scalar parameters of the θ-family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaParams {
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    /// P(Y = 1).
    pub p: f64,
}

impl Default for ThetaParams {
    fn default() -> Self {
        Self {
            d: 2,
            a: 5.0,
            b: 6.0,
            theta: 1.0,
            p: 0.5,
        }
    }
}

impl ThetaParams {
    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Domain("d must be at least 1".into()));
        }
        if !(self.a > 0.0 && self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Domain(format!("a, b must be positive (a={}, b={})", self.a, self.b)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Domain(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Domain(format!("p must lie in [0, 1], got {}", self.p)));
        }
        Ok(())
    }
}

/// Mean vectors and covariance blocks of (X, Z) | Y = y.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBlocks {
    pub mu_x: DVector<f64>,
    pub mu_z: DVector<f64>,
    pub c_xx: DMatrix<f64>,
    /// Cov(X, Z); Cov(Z, X) is its transpose.
    pub c_xz: DMatrix<f64>,
    pub c_zz: DMatrix<f64>,
}

impl ClassBlocks {
    /// Blocks of class `y` for the θ-family.
    pub fn theta_family(params: &ThetaParams, y: usize) -> Self {
        let d = params.d;
        let (sign, c) = if y == 0 { (1.0, params.a) } else { (-1.0, params.b) };
        let mu_x = DVector::from_element(d, 0.5 * sign);
        let mu_z = &mu_x * (2.0 * params.theta * c);
        let eye = DMatrix::<f64>::identity(d, d);
        Self {
            mu_x,
            mu_z,
            c_xx: &eye * (1.0 + c / 4.0),
            c_xz: &eye * (params.theta * c / 2.0),
            c_zz: &eye * c,
        }
    }

    fn joint_mean(&self) -> DVector<f64> {
        let d = self.mu_x.len();
        DVector::from_fn(2 * d, |i, _| if i < d { self.mu_x[i] } else { self.mu_z[i - d] })
    }

    fn joint_cov(&self) -> DMatrix<f64> {
        let d = self.mu_x.len();
        let mut c = DMatrix::zeros(2 * d, 2 * d);
        c.view_mut((0, 0), (d, d)).copy_from(&self.c_xx);
        c.view_mut((0, d), (d, d)).copy_from(&self.c_xz);
        c.view_mut((d, 0), (d, d)).copy_from(&self.c_xz.transpose());
        c.view_mut((d, d), (d, d)).copy_from(&self.c_zz);
        c
    }
}

/// Lower Cholesky factor, retrying with diagonal jitter up to 1e-6·trace/d.
fn robust_cholesky(c: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let n = c.nrows();
    let scale = (c.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-6 * scale * (1.0 + 1e-12) {
        let shifted = c + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = shifted.cholesky() {
            log::debug!("{what}: cholesky succeeded with jitter {jitter:e}");
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance(what.to_string()))
}

/// N(mean, L Lᵀ) with a cached factor.
#[derive(Debug, Clone)]
struct Normal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Normal {
    fn new(mean: DVector<f64>, cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        let chol = robust_cholesky(cov, what)?;
        Ok(Self::from_factor(mean, chol))
    }

    fn from_factor(mean: DVector<f64>, chol: DMatrix<f64>) -> Self {
        let d = mean.len();
        let log_det: f64 = (0..d).map(|i| 2.0 * chol[(i, i)].ln()).sum();
        Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        }
    }

    /// log N(v; mean + shift, Σ) without allocating.
    fn log_pdf_shifted(&self, v: &[f64], shift: Option<&[f64]>) -> f64 {
        let d = self.mean.len();
        // Forward substitution L w = v − μ.
        let mut w = [0.0f64; 16];
        let mut heap;
        let w: &mut [f64] = if d <= 16 {
            &mut w[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut r = v[i] - self.mean[i] - shift.map_or(0.0, |s| s[i]);
            for j in 0..i {
                r -= self.chol[(i, j)] * w[j];
            }
            w[i] = r / self.chol[(i, i)];
            quad += w[i] * w[i];
        }
        self.log_norm - 0.5 * quad
    }

    fn log_pdf(&self, v: &[f64]) -> f64 {
        self.log_pdf_shifted(v, None)
    }

    /// mean + shift + L ε.
    fn draw_into<R: Rng + ?Sized>(&self, shift: Option<&[f64]>, rng: &mut R, out: &mut [f64]) {
        let d = self.mean.len();
        let mut eps = [0.0f64; 16];
        let mut heap;
        let eps: &mut [f64] = if d <= 16 {
            &mut eps[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut v = self.mean[i] + shift.map_or(0.0, |s| s[i]);
            for j in 0..=i {
                v += self.chol[(i, j)] * eps[j];
            }
            out[i] = v;
        }
    }
}

/// Law of one block given the other: mean(u) = μ + G (u − μ_u), covariance fixed.
#[derive(Debug, Clone)]
struct Conditional {
    gain: DMatrix<f64>,
    input_mean: DVector<f64>,
    law: Normal,
}

impl Conditional {
    fn new(
        mean: &DVector<f64>,
        input_mean: &DVector<f64>,
        cross: &DMatrix<f64>,
        input_cov: &DMatrix<f64>,
        own_cov: &DMatrix<f64>,
        what: &str,
    ) -> Result<Self> {
        // gain = cross · input_cov⁻¹, Schur = own − gain · crossᵀ.
        let input_chol = robust_cholesky(input_cov, what)?;
        let w = input_chol
            .solve_lower_triangular(&cross.transpose())
            .ok_or_else(|| Error::SingularCovariance(what.to_string()))?;
        let gain = input_chol
            .transpose()
            .solve_upper_triangular(&w)
            .ok_or_else(|| Error::SingularCovariance(what.to_string()))?
            .transpose();
        let schur = own_cov - &gain * cross.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;
        Ok(Self {
            gain,
            input_mean: input_mean.clone(),
            law: Normal::new(mean.clone(), &schur, what)?,
        })
    }

    fn shift_for(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.gain.nrows() {
            let mut s = 0.0;
            for j in 0..self.gain.ncols() {
                s += self.gain[(i, j)] * (u[j] - self.input_mean[j]);
            }
            out[i] = s;
        }
    }
}

#[derive(Debug, Clone)]
struct ClassLaws {
    x: Normal,
    z: Normal,
    joint: Normal,
    z_given_x: Conditional,
    x_given_z: Conditional,
}

impl ClassLaws {
    fn new(b: &ClassBlocks, y: usize) -> Result<Self> {
        let tag = |s: &str| format!("class {y}: {s}");
        Ok(Self {
            x: Normal::new(b.mu_x.clone(), &b.c_xx, &tag("C_XX"))?,
            z: Normal::new(b.mu_z.clone(), &b.c_zz, &tag("C_ZZ"))?,
            joint: Normal::new(b.joint_mean(), &b.joint_cov(), &tag("joint covariance"))?,
            z_given_x: Conditional::new(
                &b.mu_z,
                &b.mu_x,
                &b.c_xz.transpose(),
                &b.c_xx,
                &b.c_zz,
                &tag("Z | X"),
            )?,
            x_given_z: Conditional::new(&b.mu_x, &b.mu_z, &b.c_xz, &b.c_zz, &b.c_xx, &tag("X | Z"))?,
        })
    }
}

/// One draw of (X, Y, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTriple {
    pub x: Vec<f64>,
    pub y: usize,
    pub z: Vec<f64>,
}

/// Column-stacked view of a list of draws.
#[derive(Debug, Clone)]
pub struct SampleMatrices {
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
    pub z: DMatrix<f64>,
}

impl SampleMatrices {
    pub fn from_triples(samples: &[SampleTriple]) -> Self {
        let n = samples.len();
        let dx = samples.first().map_or(0, |s| s.x.len());
        let dz = samples.first().map_or(0, |s| s.z.len());
        Self {
            x: DMatrix::from_fn(n, dx, |i, j| samples[i].x[j]),
            y: samples.iter().map(|s| s.y).collect(),
            z: DMatrix::from_fn(n, dz, |i, j| samples[i].z[j]),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianThetaModel {
    params: Option<ThetaParams>,
    p: f64,
    d: usize,
    blocks: [ClassBlocks; 2],
    laws: [ClassLaws; 2],
}

/// log-odds → probability, clamped into [0, 1].
fn posterior_from_logs(prior: f64, log1: f64, log0: f64) -> f64 {
    if prior >= 1.0 {
        return 1.0;
    }
    if prior <= 0.0 {
        return 0.0;
    }
    let t = (prior.ln() + log1) - ((1.0 - prior).ln() + log0);
    let v = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    v.clamp(0.0, 1.0)
}

impl GaussianThetaModel {
    pub fn new(params: ThetaParams) -> Result<Self> {
        params.validate()?;
        let blocks = [
            ClassBlocks::theta_family(&params, 0),
            ClassBlocks::theta_family(&params, 1),
        ];
        let mut model = Self::from_blocks(params.p, blocks)?;
        model.params = Some(params);
        Ok(model)
    }

    /// Free (μ, C) overrides for both classes.
    pub fn from_blocks(p: f64, blocks: [ClassBlocks; 2]) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
        }
        let d = blocks[0].mu_x.len();
        for b in &blocks {
            let dims = [
                b.mu_x.len(),
                b.mu_z.len(),
                b.c_xx.nrows(),
                b.c_xx.ncols(),
                b.c_xz.nrows(),
                b.c_xz.ncols(),
                b.c_zz.nrows(),
                b.c_zz.ncols(),
            ];
            if let Some(&bad) = dims.iter().find(|&&v| v != d) {
                return Err(Error::DimensionMismatch { expected: d, got: bad });
            }
        }
        let laws = [ClassLaws::new(&blocks[0], 0)?, ClassLaws::new(&blocks[1], 1)?];
        Ok(Self {
            params: None,
            p,
            d,
            blocks,
            laws,
        })
    }

    pub fn params(&self) -> Option<&ThetaParams> {
        self.params.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn prior(&self) -> f64 {
        self.p
    }

    pub fn blocks(&self, y: usize) -> &ClassBlocks {
        &self.blocks[y]
    }

    /// log N(x; μ_{X|y}, C_{XX|y}).
    pub fn log_density_x(&self, y: usize, x: &[f64]) -> f64 {
        self.laws[y].x.log_pdf(x)
    }

    /// log N(z; μ_{Z|y}, C_{ZZ|y}).
    pub fn log_density_z(&self, y: usize, z: &[f64]) -> f64 {
        self.laws[y].z.log_pdf(z)
    }

    /// P(Y = 1 | X = x), the direct predictor.
    pub fn direct_posterior(&self, x: &[f64]) -> f64 {
        posterior_from_logs(self.p, self.laws[1].x.log_pdf(x), self.laws[0].x.log_pdf(x))
    }

    /// P(Y = 1 | Z = z).
    pub fn caption_posterior(&self, z: &[f64]) -> f64 {
        posterior_from_logs(self.p, self.laws[1].z.log_pdf(z), self.laws[0].z.log_pdf(z))
    }

    /// Draws Z | X = x from the two-component mixture weighted by the direct
    /// posterior.
    pub fn draw_caption_given_image<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, out: &mut [f64]) {
        let w = self.direct_posterior(x);
        let y = usize::from(rng.random::<f64>() < w);
        let mut shift = vec![0.0; self.d];
        self.laws[y].z_given_x.shift_for(x, &mut shift);
        self.laws[y].z_given_x.law.draw_into(Some(&shift), rng, out);
    }

    /// Monte Carlo E[g(Z) | X = x] under the mixture law of Z | X = x.
    pub fn indirect_expectation<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        g: impl Fn(&[f64]) -> f64,
        n_mc: usize,
        rng: &mut R,
    ) -> f64 {
        let w = self.direct_posterior(x);
        let mut shifts = [vec![0.0; self.d], vec![0.0; self.d]];
        for (y, shift) in shifts.iter_mut().enumerate() {
            self.laws[y].z_given_x.shift_for(x, shift);
        }
        let mut z = vec![0.0; self.d];
        let mut acc = 0.0;
        for _ in 0..n_mc {
            let y = usize::from(rng.random::<f64>() < w);
            self.laws[y].z_given_x.law.draw_into(Some(&shifts[y]), rng, &mut z);
            acc += g(&z);
        }
        acc / n_mc.max(1) as f64
    }

    /// η_ρ(x) = E[P(Y = 1 | Z) | X = x] by simulation; deterministic in `seed`.
    pub fn indirect_posterior(&self, x: &[f64], n_mc: usize, seed: u64) -> Result<f64> {
        if n_mc == 0 {
            return Err(Error::EmptySample);
        }
        let mut rng = seeded(seed);
        Ok(self.indirect_posterior_with(x, n_mc, &mut rng))
    }

    pub fn indirect_posterior_with<R: Rng + ?Sized>(&self, x: &[f64], n_mc: usize, rng: &mut R) -> f64 {
        self.indirect_expectation(x, |z| self.caption_posterior(z), n_mc, rng)
    }

    /// Indirect posterior at every row of `xs`; row i uses stream i of `seed`.
    pub fn indirect_posterior_batch(&self, xs: &DMatrix<f64>, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
        if n_mc == 0 {
            return Err(Error::EmptySample);
        }
        let mut row = vec![0.0; xs.ncols()];
        Ok((0..xs.nrows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = xs[(i, j)];
                }
                let mut rng = stream(seed, i as u64);
                self.indirect_posterior_with(&row, n_mc, &mut rng)
            })
            .collect())
    }

    /// Draws (y, z) from P_{Y,Z}.
    pub fn draw_caption<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let y = usize::from(rng.random::<f64>() < self.p);
        (y, self.draw_caption_given_class(y, rng))
    }

    /// Draws Z | Y = y.
    pub fn draw_caption_given_class<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        self.laws[y].z.draw_into(None, rng, &mut z);
        z
    }

    /// Draws X | Y = y.
    pub fn draw_image_given_class<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        self.laws[y].x.draw_into(None, rng, &mut x);
        x
    }

    /// E_{P_Z}[I(X; Y | Z)] with Y summed out analytically.
    ///
    /// For each z ~ P_Z, x is drawn from the mixture P_{X|z}; the summand is
    /// Σ_y P(y | z)(S_z(x, y) − 1)² with S_z = p(x | y, z) / p(x | z).
    pub fn residual_dependence_mc(&self, n_z: usize, n_x: usize, seed: u64) -> Result<McEstimate> {
        if n_z == 0 || n_x == 0 {
            return Err(Error::EmptySample);
        }
        let mut rng: SimRng = seeded(seed);
        let d = self.d;
        let mut shifts = [vec![0.0; d], vec![0.0; d]];
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_z {
            let (_, z) = self.draw_caption(&mut rng);
            let q = self.caption_posterior(&z);
            for (y, shift) in shifts.iter_mut().enumerate() {
                self.laws[y].x_given_z.shift_for(&z, shift);
            }
            let mut inner = 0.0;
            for _ in 0..n_x {
                let y = usize::from(rng.random::<f64>() < q);
                self.laws[y].x_given_z.law.draw_into(Some(&shifts[y]), &mut rng, &mut x);
                let l0 = self.laws[0].x_given_z.law.log_pdf_shifted(&x, Some(&shifts[0]));
                let l1 = self.laws[1].x_given_z.law.log_pdf_shifted(&x, Some(&shifts[1]));
                // log p(x | z) as a two-term log-sum-exp.
                let a = (1.0 - q).ln() + l0;
                let b = q.ln() + l1;
                let m = a.max(b);
                let log_mix = m + ((a - m).exp() + (b - m).exp()).ln();
                let s0 = if q < 1.0 { (l0 - log_mix).exp() } else { 1.0 };
                let s1 = if q > 0.0 { (l1 - log_mix).exp() } else { 1.0 };
                inner += (1.0 - q) * (s0 - 1.0).powi(2) + q * (s1 - 1.0).powi(2);
            }
            let v = inner / n_x as f64;
            sum += v;
            sum_sq += v * v;
        }
        let n = n_z as f64;
        let mean = sum / n;
        let var = if n_z > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Ok(McEstimate {
            mean: mean.max(0.0),
            std_error: (var / n).sqrt(),
        })
    }

    /// y ~ Bernoulli(p), then (x, z) from the class-y joint Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<SampleTriple> {
        let mut rng = seeded(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SampleTriple> {
        let d = self.d;
        let mut buf = vec![0.0; 2 * d];
        (0..n)
            .map(|_| {
                let y = usize::from(rng.random::<f64>() < self.p);
                self.laws[y].joint.draw_into(None, rng, &mut buf);
                SampleTriple {
                    x: buf[..d].to_vec(),
                    y,
                    z: buf[d..].to_vec(),
                }
            })
            .collect()
    }

    /// Draws from P_{X,Y} only (the evaluation marginal).
    pub fn sample_images<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (DMatrix<f64>, Vec<usize>) {
        let mut xs = DMatrix::zeros(n, self.d);
        let mut ys = Vec::with_capacity(n);
        let mut x = vec![0.0; self.d];
        for i in 0..n {
            let y = usize::from(rng.random::<f64>() < self.p);
            self.laws[y].x.draw_into(None, rng, &mut x);
            for j in 0..self.d {
                xs[(i, j)] = x[j];
            }
            ys.push(y);
        }
        (xs, ys)
    }

    /// Gap between the two classes' X | Z regressions: intercepts, gains and
    /// conditional covariances. All three vanish exactly when X ⊥ Y | Z.
    pub fn conditional_independence_gaps(&self) -> (f64, f64, f64) {
        let [c0, c1] = &self.laws;
        let intercept = |c: &Conditional| &c.law.mean - &c.gain * &c.input_mean;
        let cov = |c: &Conditional| &c.law.chol * c.law.chol.transpose();
        (
            (intercept(&c0.x_given_z) - intercept(&c1.x_given_z)).amax(),
            (&c0.x_given_z.gain - &c1.x_given_z.gain).amax(),
            (cov(&c0.x_given_z) - cov(&c1.x_given_z)).amax(),
        )
    }
}

/// Writes draws as CSV with columns x_0..x_{d−1}, y, z_0..z_{d−1}.
pub fn write_samples_csv<W: std::io::Write>(samples: &[SampleTriple], mut out: W) -> std::io::Result<()> {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut header: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    header.extend((0..d).map(|i| format!("z_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|&v| crate::io::format_float(v)).collect();
        row.push(s.y.to_string());
        row.extend(s.z.iter().map(|&v| crate::io::format_float(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
