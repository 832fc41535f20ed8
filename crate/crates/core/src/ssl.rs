//! Self-supervised objectives on paired embedding batches, their covariance
//! statistics, and a small finite-difference trainer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{SampleMatrices, SampleTriple};
use crate::rng::{seeded, stream};
use crate::scalar::{lit, lit_usize, Real};

/// Row i of `a` and row i of `b` are the two views of example i.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> EmbeddingBatch<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows() * a.ncols(),
                got: b.nrows() * b.ncols(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn scaled(&self, eps: T) -> Self {
        Self {
            a: &self.a * eps,
            b: &self.b * eps,
        }
    }
}

fn column_means<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    let n = lit_usize::<T>(m.nrows().max(1));
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n)
}

fn center<T: Real>(m: &DMatrix<T>, mean: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
}

/// Unnormalized centered moments (JA)ᵀ(JB) and friends.
#[derive(Debug, Clone, PartialEq)]
pub struct CovStats<T: Real> {
    pub aa: DMatrix<T>,
    pub bb: DMatrix<T>,
    pub ab: DMatrix<T>,
    /// `ab` with its diagonal zeroed.
    pub ab_offdiag: DMatrix<T>,
    pub mean_a: DVector<T>,
    pub mean_b: DVector<T>,
}

impl<T: Real> CovStats<T> {
    pub fn new(batch: &EmbeddingBatch<T>) -> Self {
        let mean_a = column_means(&batch.a);
        let mean_b = column_means(&batch.b);
        let ja = center(&batch.a, &mean_a);
        let jb = center(&batch.b, &mean_b);
        let ab = ja.transpose() * &jb;
        let mut ab_offdiag = ab.clone();
        ab_offdiag.fill_diagonal(T::zero());
        Self {
            aa: ja.transpose() * &ja,
            bb: jb.transpose() * &jb,
            ab,
            ab_offdiag,
            mean_a,
            mean_b,
        }
    }
}

fn log_sum_exp<T: Real>(it: impl Iterator<Item = T> + Clone) -> T {
    let m = it.clone().fold(T::min_value().unwrap_or(-T::max_value().unwrap()), |a, b| a.max(b));
    let s = it.fold(T::zero(), |acc, v| acc + (v - m).exp());
    m + s.ln()
}

/// Symmetric InfoNCE with unit temperature. `add_log_n` appends the +log n
/// normalizer as an additive constant.
pub fn clip_loss<T: Real>(batch: &EmbeddingBatch<T>, add_log_n: bool) -> T {
    let n = batch.n();
    if n == 0 {
        return T::zero();
    }
    let s = &batch.a * batch.b.transpose();
    let mut total = T::zero();
    let half = lit::<T>(0.5);
    for i in 0..n {
        let row = log_sum_exp((0..n).map(|j| s[(i, j)]));
        let col = log_sum_exp((0..n).map(|j| s[(j, i)]));
        total += -s[(i, i)] + half * row + half * col;
    }
    let nt = lit_usize::<T>(n);
    let offset = if add_log_n { nt.ln() } else { T::zero() };
    total / nt + offset
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorGap<T: Real> {
    pub loss: T,
    /// log n plus any offset; removed before comparing.
    pub constant: T,
    pub quadratic: T,
    pub gap: T,
}

/// Second-order expansion of [`clip_loss`] around zero similarities:
/// −Tr C_AB + ¼ Tr(C_BB M_A) + ¼ Tr(C_AA M_B), with 1/n-normalized centered
/// covariances C and uncentered second moments M.
pub fn clip_quadratic_form<T: Real>(batch: &EmbeddingBatch<T>) -> T {
    let n = batch.n();
    if n == 0 {
        return T::zero();
    }
    let nt = lit_usize::<T>(n);
    let stats = CovStats::new(batch);
    let ma = batch.a.transpose() * &batch.a / nt;
    let mb = batch.b.transpose() * &batch.b / nt;
    let quarter = lit::<T>(0.25);
    -stats.ab.trace() / nt + quarter * ((&stats.bb / nt) * ma).trace() + quarter * ((&stats.aa / nt) * mb).trace()
}

/// |clip_loss(ε·batch) − constant − quadratic(ε·batch)|.
pub fn clip_taylor_gap<T: Real>(batch: &EmbeddingBatch<T>, eps: T, add_log_n: bool) -> TaylorGap<T> {
    let scaled = batch.scaled(eps);
    let loss = clip_loss(&scaled, add_log_n);
    let nt = lit_usize::<T>(batch.n().max(1));
    let constant = if add_log_n { lit::<T>(2.0) * nt.ln() } else { nt.ln() };
    let quadratic = clip_quadratic_form(&scaled);
    TaylorGap {
        loss,
        constant,
        quadratic,
        gap: (loss - constant - quadratic).abs(),
    }
}

/// −(1/n) Σ_i ⟨a_i, b_i⟩ + (1/(n(n−1))) Σ_{i≠j} ⟨a_i, b_j⟩², via ‖ABᵀ‖_F².
pub fn spectral_contrastive_loss<T: Real>(batch: &EmbeddingBatch<T>) -> T {
    let n = batch.n();
    if n < 2 {
        return T::zero();
    }
    let s = &batch.a * batch.b.transpose();
    let diag_sq = (0..n).fold(T::zero(), |acc, i| acc + s[(i, i)] * s[(i, i)]);
    let nt = lit_usize::<T>(n);
    -s.trace() / nt + (s.norm_squared() - diag_sq) / (nt * (nt - T::one()))
}

/// Double-loop reference for [`spectral_contrastive_loss`].
pub fn spectral_contrastive_loss_loop<T: Real>(batch: &EmbeddingBatch<T>) -> T {
    let n = batch.n();
    if n < 2 {
        return T::zero();
    }
    let dot = |i: usize, j: usize| batch.a.row(i).dot(&batch.b.row(j));
    let nt = lit_usize::<T>(n);
    let mut align = T::zero();
    let mut uniform = T::zero();
    for i in 0..n {
        align += dot(i, i);
        for j in 0..n {
            if i != j {
                let v = dot(i, j);
                uniform += v * v;
            }
        }
    }
    -align / nt + uniform / (nt * (nt - T::one()))
}

/// The pair-sum statistic and the d×d statistic ‖Σ̄_AB‖²_F that a common
/// rewrite of the loss equates; they are different objects in general.
pub fn spectral_rewrite_discrepancy<T: Real>(batch: &EmbeddingBatch<T>) -> (T, T) {
    let n = batch.n();
    let s = &batch.a * batch.b.transpose();
    let diag_sq = (0..n).fold(T::zero(), |acc, i| acc + s[(i, i)] * s[(i, i)]);
    let nt = lit_usize::<T>(n.max(2));
    let pair = (s.norm_squared() - diag_sq) / (nt * (nt - T::one()));
    (pair, CovStats::new(batch).ab_offdiag.norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VicregParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub kappa: f64,
    /// Divide the centered moments by n before the variance and covariance
    /// terms.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for VicregParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1e-4,
            c3: 1.0,
            kappa: 1.0,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicregParts<T: Real> {
    pub variance: T,
    pub invariance: T,
    pub covariance: T,
    pub total: T,
}

pub fn vicreg_loss<T: Real>(batch: &EmbeddingBatch<T>, params: &VicregParams) -> Result<VicregParts<T>> {
    let n = batch.n();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    for (name, v) in [("c1", params.c1), ("c2", params.c2), ("c3", params.c3), ("kappa", params.kappa)] {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let d = batch.dim();
    let nt = lit_usize::<T>(n);
    let stats = CovStats::new(batch);
    let scale = if params.normalize { T::one() / nt } else { T::one() };
    let (c1, c2) = (lit::<T>(params.c1), lit::<T>(params.c2));
    let hinge = |m: &DMatrix<T>| {
        (0..d).fold(T::zero(), |acc, i| acc + (c1 - (m[(i, i)] * scale + c2).sqrt()).max(T::zero()))
    };
    let variance = lit::<T>(params.c3) / (lit::<T>(2.0) * lit_usize::<T>(d)) * (hinge(&stats.aa) + hinge(&stats.bb));
    let invariance = (&batch.a - &batch.b).norm_squared() / (lit::<T>(2.0) * nt);
    let covariance = lit::<T>(params.kappa) * (&stats.ab_offdiag * scale).norm_squared();
    Ok(VicregParts {
        variance,
        invariance,
        covariance,
        total: variance + invariance + covariance,
    })
}

/// Both sides of (1/2n)‖A−B‖² = (1/2n)[Tr Σ̂_AA + Tr Σ̂_BB − 2 Tr Σ̂_AB] + ½‖ᾱ−β̄‖².
pub fn vicreg_invariance_identity<T: Real>(batch: &EmbeddingBatch<T>) -> (T, T) {
    let nt = lit_usize::<T>(batch.n().max(1));
    let two = lit::<T>(2.0);
    let stats = CovStats::new(batch);
    let lhs = (&batch.a - &batch.b).norm_squared() / (two * nt);
    let rhs = (stats.aa.trace() + stats.bb.trace() - two * stats.ab.trace()) / (two * nt)
        + (&stats.mean_a - &stats.mean_b).norm_squared() / two;
    (lhs, rhs)
}

/// Inverse square root of a centered covariance, or `WhiteningFailure`.
fn inverse_sqrt<T: Real>(c: &DMatrix<T>, side: &str) -> Result<DMatrix<T>> {
    let eig = c.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(T::zero(), |a, &v| a.max(v));
    let floor = lit::<T>(1e-10) * top.max(T::one());
    if eig.eigenvalues.iter().any(|&v| v <= floor) {
        return Err(Error::WhiteningFailure(format!("{side}-side covariance is singular")));
    }
    let mut v = eig.eigenvectors.clone();
    for (j, &val) in eig.eigenvalues.iter().enumerate() {
        v.column_mut(j).scale_mut(T::one() / val.sqrt());
    }
    Ok(v * eig.eigenvectors.transpose())
}

/// Barlow Twins on whitened embeddings.
///
/// Each side is whitened and the two whitened bases are then rotated into
/// canonical alignment, so the cross-correlation is diagonal with the
/// canonical correlations on its diagonal. The loss is therefore invariant to
/// invertible linear maps of either side.
pub fn barlow_twins_loss<T: Real>(batch: &EmbeddingBatch<T>, kappa: T) -> Result<T> {
    let (n, d) = (batch.n(), batch.dim());
    if n <= d {
        return Err(Error::TooFewSamples { needed: d + 1, got: n });
    }
    let nt = lit_usize::<T>(n);
    let stats = CovStats::new(batch);
    let wa = inverse_sqrt(&(&stats.aa / nt), "A")?;
    let wb = inverse_sqrt(&(&stats.bb / nt), "B")?;
    let cross = &wa * (&stats.ab / nt) * &wb;
    let svd = cross.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::WhiteningFailure("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::WhiteningFailure("svd failed".into()))?;
    let aligned = u.transpose() * cross * vt.transpose();
    let half = lit::<T>(0.5);
    let mut loss = T::zero();
    for i in 0..d {
        for j in 0..d {
            let v = aligned[(i, j)];
            if i == j {
                loss += half * (v - T::one()) * (v - T::one());
            } else {
                loss += kappa * v * v;
            }
        }
    }
    Ok(loss)
}

/// One hidden layer of width 16 with tanh activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    /// Applies the network with parameters `p` to every row of `x`.
    pub fn forward(&self, p: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let (w1, rest) = p.split_at(self.input * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden * self.output);
        let mut out = DMatrix::zeros(x.nrows(), self.output);
        let mut h = vec![0.0; self.hidden];
        for r in 0..x.nrows() {
            for (k, hk) in h.iter_mut().enumerate() {
                let mut s = b1[k];
                for i in 0..self.input {
                    s += w1[k * self.input + i] * x[(r, i)];
                }
                *hk = s.tanh();
            }
            for o in 0..self.output {
                let mut s = b2[o];
                for (k, hk) in h.iter().enumerate() {
                    s += w2[o * self.hidden + k] * hk;
                }
                out[(r, o)] = s;
            }
        }
        out
    }
}

pub const TOY_HIDDEN: usize = 16;

/// Image and caption encoders sharing one flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderPair {
    pub x_net: Mlp,
    pub z_net: Mlp,
    pub params: Vec<f64>,
}

impl ToyEncoderPair {
    /// Weights ~ N(0, 1/fan_in), biases zero.
    pub fn new(dx: usize, dz: usize, out: usize, seed: u64) -> Self {
        let x_net = Mlp {
            input: dx,
            hidden: TOY_HIDDEN,
            output: out,
        };
        let z_net = Mlp {
            input: dz,
            hidden: TOY_HIDDEN,
            output: out,
        };
        let mut rng = seeded(seed);
        let mut params = Vec::with_capacity(x_net.param_count() + z_net.param_count());
        for net in [&x_net, &z_net] {
            let mut layer = |fan_in: usize, count: usize, params: &mut Vec<f64>| {
                let sd = 1.0 / (fan_in as f64).sqrt();
                params.extend((0..count).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
            };
            layer(net.input, net.input * net.hidden, &mut params);
            params.extend(std::iter::repeat_n(0.0, net.hidden));
            layer(net.hidden, net.hidden * net.output, &mut params);
            params.extend(std::iter::repeat_n(0.0, net.output));
        }
        Self { x_net, z_net, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        p.split_at(self.x_net.param_count())
    }

    pub fn encode_x_with(&self, p: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        self.x_net.forward(self.split(p).0, x)
    }

    pub fn encode_z_with(&self, p: &[f64], z: &DMatrix<f64>) -> DMatrix<f64> {
        self.z_net.forward(self.split(p).1, z)
    }

    pub fn encode_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.encode_x_with(&self.params, x)
    }

    pub fn encode_z(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.encode_z_with(&self.params, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    Clip,
    Vicreg(VicregParams),
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Clip => "clip",
            Self::Vicreg(_) => "vicreg",
        }
    }

    pub fn loss(&self, batch: &EmbeddingBatch<f64>) -> Result<f64> {
        match self {
            Self::Clip => Ok(clip_loss(batch, false)),
            Self::Vicreg(p) => Ok(vicreg_loss(batch, p)?.total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            lr: 0.01,
            batch: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoders: ToyEncoderPair,
    /// Mini-batch loss before each step.
    pub trace: Vec<f64>,
}

/// Central difference with step h·(1 + |θ_i|) per coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut p = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let step = h * (1.0 + theta[i].abs());
            p[i] = theta[i] + step;
            let up = f(&p);
            p[i] = theta[i] - step;
            let down = f(&p);
            p[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-4;

fn batch_loss(
    objective: &Objective,
    enc: &ToyEncoderPair,
    p: &[f64],
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    let batch = EmbeddingBatch {
        a: enc.encode_x_with(p, x),
        b: enc.encode_z_with(p, z),
    };
    objective.loss(&batch)
}

/// Objective value on the full data set.
pub fn evaluate_objective(
    objective: &Objective,
    encoders: &ToyEncoderPair,
    data: &SampleMatrices,
) -> Result<f64> {
    batch_loss(objective, encoders, &encoders.params, &data.x, &data.z)
}

/// Gradient descent on central finite differences of the mini-batch loss.
/// Mini-batch indices for step s come from stream s of the seed.
pub fn train_toy(
    objective: &Objective,
    data: &[SampleTriple],
    encoders: ToyEncoderPair,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let all = SampleMatrices::from_triples(data);
    let mut enc = encoders;
    let mut trace = Vec::with_capacity(config.steps);
    let size = config.batch.clamp(2, data.len().max(2)).min(data.len());
    for step in 0..config.steps {
        let mut rng = stream(config.seed, step as u64);
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..data.len())).collect();
        let x = DMatrix::from_fn(size, all.x.ncols(), |i, j| all.x[(idx[i], j)]);
        let z = DMatrix::from_fn(size, all.z.ncols(), |i, j| all.z[(idx[i], j)]);
        let current = batch_loss(objective, &enc, &enc.params, &x, &z)?;
        if !current.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        trace.push(current);
        let grad = fd_gradient(
            |p| batch_loss(objective, &enc, p, &x, &z).unwrap_or(f64::NAN),
            &enc.params,
            FD_STEP,
        );
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(step));
        }
        for (p, g) in enc.params.iter_mut().zip(&grad) {
            *p -= config.lr * g;
        }
    }
    Ok(TrainOutcome { encoders: enc, trace })
}

/// CSV with columns step, loss, objective, seed.
pub fn write_trace_csv<W: std::io::Write>(
    trace: &[f64],
    objective: &Objective,
    seed: u64,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "step,loss,objective,seed")?;
    for (s, l) in trace.iter().enumerate() {
        writeln!(out, "{s},{},{},{seed}", crate::io::format_float(*l), objective.name())?;
    }
    Ok(())
}
