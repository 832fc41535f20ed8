//! Prompt samplers over (Y, Z) and their exact or simulated prompt bias.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::discrete::{DiscreteTriple, PromptTable};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianThetaModel, McEstimate};
use crate::rng::{seeded, stream};
use crate::scalar::{lit_usize, to_f64, Real, ZERO_MASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TemplateBased,
    ClassConditional,
    Unbiased,
}

impl PromptKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TemplateBased => "template_based",
            Self::ClassConditional => "class_conditional",
            Self::Unbiased => "unbiased",
        }
    }
}

/// Prompts over a finite caption alphabet.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteStrategy<T: Real> {
    /// z = insert[y][u] with u ~ u_law drawn once and shared by every class.
    Template { u_law: Vec<T>, insert: Vec<Vec<usize>> },
    /// Uniform ρ_Y; column y of `z_given_y` is ρ(· | y).
    ClassConditional { z_given_y: DMatrix<T> },
    /// ρ = P_{Y,Z}.
    Unbiased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePromptSet {
    pub labels: Vec<usize>,
    pub captions: Vec<usize>,
    pub kind: PromptKind,
    pub per_class: Option<usize>,
    pub seed: u64,
}

fn categorical<T: Real>(weights: &[T]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights.iter().map(|&w| to_f64(w).max(0.0)))
        .map_err(|e| Error::InvalidTable(format!("cannot sample from weights: {e}")))
}

impl<T: Real> DiscreteStrategy<T> {
    pub fn kind(&self) -> PromptKind {
        match self {
            Self::Template { .. } => PromptKind::TemplateBased,
            Self::ClassConditional { .. } => PromptKind::ClassConditional,
            Self::Unbiased => PromptKind::Unbiased,
        }
    }

    /// The exact prompt law ρ_{Y,Z} induced on `triple`'s alphabets.
    pub fn table(&self, triple: &DiscreteTriple<T>) -> Result<PromptTable<T>> {
        let (_, ny, nz) = triple.sizes();
        let uniform = vec![T::one() / lit_usize::<T>(ny); ny];
        match self {
            Self::Unbiased => Ok(triple.unbiased_prompt()),
            Self::ClassConditional { z_given_y } => {
                if z_given_y.shape() != (nz, ny) {
                    return Err(Error::DimensionMismatch {
                        expected: nz,
                        got: z_given_y.nrows(),
                    });
                }
                PromptTable::from_class_conditionals(&uniform, z_given_y)
            }
            Self::Template { u_law, insert } => {
                if insert.len() != ny {
                    return Err(Error::DimensionMismatch {
                        expected: ny,
                        got: insert.len(),
                    });
                }
                let mut cond = DMatrix::zeros(nz, ny);
                for (y, row) in insert.iter().enumerate() {
                    if row.len() != u_law.len() {
                        return Err(Error::DimensionMismatch {
                            expected: u_law.len(),
                            got: row.len(),
                        });
                    }
                    for (u, &z) in row.iter().enumerate() {
                        if z >= nz {
                            return Err(Error::Domain(format!("template maps to caption {z} >= {nz}")));
                        }
                        cond[(z, y)] += u_law[u];
                    }
                }
                PromptTable::from_class_conditionals(&uniform, &cond)
            }
        }
    }

    /// m prompts per class (template, class-conditional) or M joint draws
    /// (unbiased).
    pub fn generate(&self, triple: &DiscreteTriple<T>, m_or_total: usize, seed: u64) -> Result<DiscretePromptSet> {
        let (_, ny, _) = triple.sizes();
        let mut rng = seeded(seed);
        let mut labels = Vec::new();
        let mut captions = Vec::new();
        let per_class = match self {
            Self::Template { u_law, insert } => {
                self.table(triple)?;
                let dist = categorical(u_law)?;
                let us: Vec<usize> = (0..m_or_total).map(|_| dist.sample(&mut rng)).collect();
                for (y, row) in insert.iter().enumerate() {
                    for &u in &us {
                        labels.push(y);
                        captions.push(row[u]);
                    }
                }
                Some(m_or_total)
            }
            Self::ClassConditional { z_given_y } => {
                self.table(triple)?;
                for y in 0..ny {
                    let col: Vec<T> = z_given_y.column(y).iter().copied().collect();
                    let dist = categorical(&col)?;
                    for _ in 0..m_or_total {
                        labels.push(y);
                        captions.push(dist.sample(&mut rng));
                    }
                }
                Some(m_or_total)
            }
            Self::Unbiased => {
                let table = triple.unbiased_prompt();
                let (_, nz) = table.sizes();
                let cells: Vec<T> = (0..ny * nz).map(|i| table.get(i / nz, i % nz)).collect();
                let dist = categorical(&cells)?;
                for _ in 0..m_or_total {
                    let c = dist.sample(&mut rng);
                    labels.push(c / nz);
                    captions.push(c % nz);
                }
                None
            }
        };
        Ok(DiscretePromptSet {
            labels,
            captions,
            kind: self.kind(),
            per_class,
            seed,
        })
    }
}

/// ‖g_ρ − g_P‖²_{L²(P_Z)}, computed exactly.
pub fn prompt_bias_discrete<T: Real>(prompt: &PromptTable<T>, triple: &DiscreteTriple<T>, r: &[T]) -> Result<T> {
    let (_, ny, nz) = triple.sizes();
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
    let pz = triple.marginal_z();
    let g_rho = prompt.regression(r);
    let g_true = triple.unbiased_prompt().regression(r);
    let mut total = T::zero();
    for z in 0..nz {
        if pz[z] <= T::zero() {
            continue;
        }
        let gr = g_rho[z].ok_or(Error::ZeroConditioner(z))?;
        let gt = g_true[z].ok_or(Error::ZeroConditioner(z))?;
        total += pz[z] * (gr - gt) * (gr - gt);
    }
    Ok(total)
}

/// Σ_z Q(z)(ρ(z)/Q(z) − 1)².
pub fn chi2_caption_mismatch<T: Real>(rho_z: &[T], q_z: &[T]) -> Result<T> {
    if rho_z.len() != q_z.len() {
        return Err(Error::DimensionMismatch {
            expected: q_z.len(),
            got: rho_z.len(),
        });
    }
    let eps = crate::scalar::lit::<T>(ZERO_MASS);
    let mut total = T::zero();
    for (z, (&r, &q)) in rho_z.iter().zip(q_z).enumerate() {
        if q <= eps {
            if r > eps {
                return Err(Error::NotAbsolutelyContinuous(format!(
                    "rho_Z({z}) > 0 where Q_Z({z}) = 0"
                )));
            }
            continue;
        }
        let d = r / q - T::one();
        total += q * d * d;
    }
    Ok(total)
}

/// Prompt samplers for the binary Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaussianStrategy {
    /// z = (2y − 1)·direction + u with u ~ N(0, scale² I) shared across classes.
    TemplateBased { direction: Vec<f64>, scale: f64 },
    /// Uniform ρ_Y with ρ(z | y) = P(z | y) translated by `shift[y]`.
    ClassConditional { shift: [Vec<f64>; 2] },
    Unbiased,
}

impl GaussianStrategy {
    pub fn matched_class_conditional(d: usize) -> Self {
        Self::ClassConditional {
            shift: [vec![0.0; d], vec![0.0; d]],
        }
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            Self::TemplateBased { .. } => PromptKind::TemplateBased,
            Self::ClassConditional { .. } => PromptKind::ClassConditional,
            Self::Unbiased => PromptKind::Unbiased,
        }
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        let bad = match self {
            Self::TemplateBased { direction, .. } => (direction.len() != d).then_some(direction.len()),
            Self::ClassConditional { shift } => shift.iter().find(|s| s.len() != d).map(|s| s.len()),
            Self::Unbiased => None,
        };
        match bad {
            Some(got) => Err(Error::DimensionMismatch { expected: d, got }),
            None => Ok(()),
        }
    }

    /// Class-1 probability of the prompt regression g_ρ at z, where defined
    /// in closed form.
    pub fn regression(&self, model: &GaussianThetaModel, z: &[f64]) -> Result<f64> {
        match self {
            Self::Unbiased => Ok(model.caption_posterior(z)),
            Self::ClassConditional { shift } => {
                let moved = |y: usize| -> Vec<f64> { z.iter().zip(&shift[y]).map(|(a, b)| a - b).collect() };
                let l0 = model.log_density_z(0, &moved(0));
                let l1 = model.log_density_z(1, &moved(1));
                let t = l1 - l0;
                Ok(if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                })
            }
            Self::TemplateBased { .. } => Err(Error::Unsupported(
                "template prompts have no closed-form regression in the Gaussian model".into(),
            )),
        }
    }

    pub fn generate(&self, model: &GaussianThetaModel, m_or_total: usize, seed: u64) -> Result<PromptSet> {
        let d = model.dim();
        self.check_dims(d)?;
        let mut labels = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let per_class = match self {
            Self::TemplateBased { direction, scale } => {
                let mut rng = seeded(seed);
                let us: Vec<Vec<f64>> = (0..m_or_total)
                    .map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect();
                for y in 0..2 {
                    let sign = if y == 1 { 1.0 } else { -1.0 };
                    for u in &us {
                        labels.push(y);
                        rows.push(u.iter().zip(direction).map(|(a, v)| sign * v + a).collect());
                    }
                }
                Some(m_or_total)
            }
            Self::ClassConditional { shift } => {
                for (y, s) in shift.iter().enumerate() {
                    let mut rng = stream(seed, y as u64);
                    for _ in 0..m_or_total {
                        let z = model.draw_caption_given_class(y, &mut rng);
                        labels.push(y);
                        rows.push(z.iter().zip(s).map(|(a, b)| a + b).collect());
                    }
                }
                Some(m_or_total)
            }
            Self::Unbiased => {
                let mut rng = seeded(seed);
                for _ in 0..m_or_total {
                    let (y, z) = model.draw_caption(&mut rng);
                    labels.push(y);
                    rows.push(z);
                }
                None
            }
        };
        Ok(PromptSet {
            z: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            labels,
            kind: self.kind(),
            per_class,
            seed,
        })
    }

    /// E_{P_Z}[(g_ρ − g_P)²] by simulation, with r(y) = y.
    pub fn prompt_bias(&self, model: &GaussianThetaModel, n_mc: usize, seed: u64) -> Result<McEstimate> {
        if n_mc == 0 {
            return Err(Error::EmptySample);
        }
        self.check_dims(model.dim())?;
        if let Self::Unbiased = self {
            return Ok(McEstimate {
                mean: 0.0,
                std_error: 0.0,
            });
        }
        let mut rng = seeded(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_mc {
            let (_, z) = model.draw_caption(&mut rng);
            let diff = self.regression(model, &z)? - model.caption_posterior(&z);
            let v = diff * diff;
            sum += v;
            sum_sq += v * v;
        }
        let n = n_mc as f64;
        let mean = sum / n;
        let var = if n_mc > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Ok(McEstimate {
            mean,
            std_error: (var / n).sqrt(),
        })
    }
}

/// Prompts with continuous captions, one row of `z` per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub labels: Vec<usize>,
    pub z: DMatrix<f64>,
    pub kind: PromptKind,
    pub per_class: Option<usize>,
    pub seed: u64,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// r(y_j) per prompt.
    pub fn targets(&self, r: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.labels.iter().map(|&y| r[y]))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.z.ncols();
        let mut header = vec!["y".to_string()];
        header.extend((0..d).map(|i| format!("z_{i}")));
        header.push("strategy".into());
        header.push("seed".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].to_string()];
            row.extend((0..d).map(|j| crate::io::format_float(self.z[(i, j)])));
            row.push(self.kind.name().into());
            row.push(self.seed.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::random;
    use crate::gaussian::ThetaParams;

    fn coin_triple() -> DiscreteTriple<f64> {
        // X = Y = Z, a fair coin.
        let mut p = vec![0.0; 8];
        p[0] = 0.5;
        p[7] = 0.5;
        DiscreteTriple::new(2, 2, 2, p).unwrap()
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_caption_mismatch(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((chi2_caption_mismatch::<f64>(&[0.75, 0.25], &[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert!((chi2_caption_mismatch::<f64>(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            chi2_caption_mismatch(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::NotAbsolutelyContinuous(_))
        ));
    }

    #[test]
    fn unbiased_bias_is_zero() {
        let mut rng = seeded(3);
        let t = random::triple::<f64, _>(3, 2, 4, &mut rng);
        let table = DiscreteStrategy::Unbiased.table(&t).unwrap();
        assert_eq!(prompt_bias_discrete(&table, &t, &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn matched_class_conditional_with_uniform_prior_is_unbiased() {
        let mut rng = seeded(4);
        let nz = 3;
        let py = [0.5, 0.5];
        let pz_y = random::conditional::<f64, _>(nz, 2, &mut rng);
        let px_z = random::conditional::<f64, _>(2, nz, &mut rng);
        // Build P(x, y, z) = P(y) P(z|y) P(x|z).
        let mut p = vec![0.0; 2 * 2 * nz];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..nz {
                    p[(x * 2 + y) * nz + z] = py[y] * pz_y[(z, y)] * px_z[(x, z)];
                }
            }
        }
        let t = DiscreteTriple::new(2, 2, nz, p).unwrap();
        let s = DiscreteStrategy::ClassConditional { z_given_y: pz_y };
        let table = s.table(&t).unwrap();
        assert!(prompt_bias_discrete(&table, &t, &[0.0, 1.0]).unwrap() < 1e-30);
    }

    #[test]
    fn tilted_bias_matches_hand_value() {
        let t = coin_triple();
        // ρ(z | y=0) = (0.75, 0.25), ρ(z | y=1) = (0.25, 0.75): g_ρ = (0.25, 0.75).
        let tilt = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        let s = DiscreteStrategy::ClassConditional { z_given_y: tilt };
        let table = s.table(&t).unwrap();
        let b = prompt_bias_discrete(&table, &t, &[0.0, 1.0]).unwrap();
        // g_P = (0, 1): bias = ½·0.25² + ½·0.25².
        assert!((b - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn generation_shapes() {
        let t = coin_triple();
        let tilt = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        let s = DiscreteStrategy::ClassConditional { z_given_y: tilt };
        let p = s.generate(&t, 1, 0).unwrap();
        assert_eq!(p.labels, vec![0, 1]);
        let tmpl = DiscreteStrategy::Template {
            u_law: vec![0.5, 0.5],
            insert: vec![vec![0, 1], vec![1, 0]],
        };
        let p = tmpl.generate(&t, 6, 9).unwrap();
        assert_eq!(p.labels.len(), 12);
        // Recover u from each class and compare the multisets.
        let u0: Vec<usize> = p.captions[..6].to_vec();
        let u1: Vec<usize> = p.captions[6..].iter().map(|&z| 1 - z).collect();
        assert_eq!(u0, u1);
        assert_eq!(tmpl.generate(&t, 6, 9).unwrap(), p);
    }

    #[test]
    fn unbiased_frequencies() {
        let mut rng = seeded(11);
        let t = random::triple::<f64, _>(2, 2, 3, &mut rng);
        let m = 5000;
        let p = DiscreteStrategy::Unbiased.generate(&t, m, 12).unwrap();
        let yz = t.marginal_yz();
        for y in 0..2 {
            for z in 0..3 {
                let count = p
                    .labels
                    .iter()
                    .zip(&p.captions)
                    .filter(|(&a, &b)| a == y && b == z)
                    .count() as f64;
                let q = yz[(y, z)];
                let sd = (m as f64 * q * (1.0 - q)).sqrt();
                assert!((count - m as f64 * q).abs() <= 4.0 * sd);
            }
        }
    }

    #[test]
    fn gaussian_strategies() {
        let model = GaussianThetaModel::new(ThetaParams::default()).unwrap();
        let b = GaussianStrategy::Unbiased.prompt_bias(&model, 100, 1).unwrap();
        assert_eq!(b.mean, 0.0);
        // p = ½, so matched class-conditional prompts are unbiased too.
        let m = GaussianStrategy::matched_class_conditional(2);
        let b = m.prompt_bias(&model, 2000, 1).unwrap();
        assert!(b.mean < 1e-20);
        let tilted = GaussianStrategy::ClassConditional {
            shift: [vec![1.0, 1.0], vec![0.0, 0.0]],
        };
        let b = tilted.prompt_bias(&model, 2000, 1).unwrap();
        assert!(b.mean > 0.0 && b.std_error > 0.0);
        let tmpl = GaussianStrategy::TemplateBased {
            direction: vec![1.0, 0.0],
            scale: 0.5,
        };
        assert!(matches!(tmpl.prompt_bias(&model, 10, 1), Err(Error::Unsupported(_))));
        let p = tmpl.generate(&model, 3, 4).unwrap();
        assert_eq!(p.len(), 6);
        for i in 0..3 {
            assert!((p.z[(i, 0)] + 1.0 - (p.z[(i + 3, 0)] - 1.0)).abs() < 1e-15);
        }
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y,z_0,z_1,strategy,seed\n0,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",template_based,4"));
    }
}
