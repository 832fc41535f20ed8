//! Per-class scores to zero-shot decisions, accuracy, and the regression to
//! classification excess-risk bound.

use nalgebra::{DMatrix, DVector};

use crate::discrete::DiscreteTriple;
use crate::error::{Error, Result};
use crate::scalar::{lit, lit_usize, Real};

/// Mean encoded prompt per class, with optional weights on coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings<T: Real> {
    /// Row c is the embedding of class c.
    pub vectors: DMatrix<T>,
    /// σ-weights for the rescaled inner product Σ_i σ_i a_i b_i.
    pub sigma: Option<DVector<T>>,
}

/// Averages the encodings (rows of `encoded`) of each class's prompts.
pub fn class_embeddings<T: Real>(
    labels: &[usize],
    encoded: &DMatrix<T>,
    n_classes: usize,
    unit_norm: bool,
) -> Result<ClassEmbeddings<T>> {
    if labels.len() != encoded.nrows() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: encoded.nrows(),
        });
    }
    let d = encoded.ncols();
    let mut sums = DMatrix::<T>::zeros(n_classes, d);
    let mut counts = vec![0usize; n_classes];
    for (row, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::Domain(format!("label {y} outside {n_classes} classes")));
        }
        counts[y] += 1;
        for j in 0..d {
            sums[(y, j)] += encoded[(row, j)];
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::MissingClass(c));
        }
        let mut row = sums.row_mut(c);
        row /= lit_usize::<T>(n);
        if unit_norm {
            let norm = row.norm();
            if norm > T::zero() {
                row /= norm;
            }
        }
    }
    Ok(ClassEmbeddings {
        vectors: sums,
        sigma: None,
    })
}

impl<T: Real> ClassEmbeddings<T> {
    pub fn with_sigma(mut self, sigma: DVector<T>) -> Result<Self> {
        if sigma.len() != self.vectors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.vectors.ncols(),
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|&s| s < T::zero()) || sigma.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("sigma weights must be nonnegative and descending".into()));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn scores(&self, x_encoding: &[T]) -> Result<Vec<T>> {
        let d = self.vectors.ncols();
        if x_encoding.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x_encoding.len(),
            });
        }
        Ok((0..self.n_classes())
            .map(|c| {
                (0..d).fold(T::zero(), |acc, j| {
                    let w = self.sigma.as_ref().map_or(T::one(), |s| s[j]);
                    acc + w * x_encoding[j] * self.vectors[(c, j)]
                })
            })
            .collect())
    }
}

/// argmax with ties going to the lowest index.
pub fn decode<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

pub fn score_and_decode<T: Real>(x_encoding: &[T], embeddings: &ClassEmbeddings<T>) -> Result<(Vec<T>, usize)> {
    let s = embeddings.scores(x_encoding)?;
    let c = decode(&s);
    Ok((s, c))
}

/// Classes ordered by descending score, ties by ascending index.
pub fn ranking<T: Real>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Fraction of rows whose label ranks among the top `k` classes.
pub fn topk_accuracy<T: Real>(scores: &[Vec<T>], labels: &[usize], k: usize) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let classes = scores[0].len();
    if k == 0 || k > classes {
        return Err(Error::BadK { k, classes });
    }
    let mut hits = 0usize;
    for (s, &y) in scores.iter().zip(labels) {
        if s.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: s.len(),
            });
        }
        // Rank of y: classes beating it outright or tying with a lower index.
        let ahead = (0..classes)
            .filter(|&c| s[c] > s[y] || (s[c] == s[y] && c < y))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(lit_usize::<T>(hits) / lit_usize::<T>(labels.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessRiskReport<T: Real> {
    pub risk: T,
    pub bayes_risk: T,
    /// risk − bayes_risk.
    pub lhs: T,
    /// 2 √(Σ_c ‖η̂_c − η_c‖²_{L²(P_X)}).
    pub rhs: T,
    pub ok: bool,
}

/// Exact 0-1 risks of the decoded scores and of the Bayes rule on `triple`'s
/// (X, Y) marginal. `score_fn(x)` returns one score per class.
pub fn excess_risk_check<T: Real>(
    score_fn: impl Fn(usize) -> Vec<T>,
    triple: &DiscreteTriple<T>,
) -> Result<ExcessRiskReport<T>> {
    let (nx, ny, _) = triple.sizes();
    let xy = triple.marginal_xy();
    let px = triple.marginal_x();
    let mut risk = T::zero();
    let mut bayes = T::zero();
    let mut sq = T::zero();
    for x in 0..nx {
        if px[x] <= T::zero() {
            return Err(Error::ZeroMarginal { axis: "x", index: x });
        }
        let post: Vec<T> = (0..ny).map(|y| xy[(x, y)] / px[x]).collect();
        let s = score_fn(x);
        if s.len() != ny {
            return Err(Error::DimensionMismatch {
                expected: ny,
                got: s.len(),
            });
        }
        risk += px[x] * (T::one() - post[decode(&s)]);
        bayes += px[x] * (T::one() - post[decode(&post)]);
        for c in 0..ny {
            sq += px[x] * (s[c] - post[c]) * (s[c] - post[c]);
        }
    }
    let lhs = risk - bayes;
    let rhs = lit::<T>(2.0) * sq.sqrt();
    Ok(ExcessRiskReport {
        risk,
        bayes_risk: bayes,
        lhs,
        rhs,
        ok: lhs <= rhs + crate::scalar::tolerance::<T>(1e-12),
    })
}

/// CSV with columns example_id, true_label, top1..topk, score_0..score_{C−1}.
pub fn write_predictions_csv<W: std::io::Write>(
    scores: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    mut out: W,
) -> std::io::Result<()> {
    let classes = scores.first().map_or(0, Vec::len);
    let k = k.min(classes);
    let mut header = vec!["example_id".to_string(), "true_label".to_string()];
    header.extend((1..=k).map(|i| format!("top{i}")));
    header.extend((0..classes).map(|c| format!("score_{c}")));
    writeln!(out, "{}", header.join(","))?;
    for (i, (s, y)) in scores.iter().zip(labels).enumerate() {
        let mut row = vec![i.to_string(), y.to_string()];
        row.extend(ranking(s).into_iter().take(k).map(|c| c.to_string()));
        row.extend(s.iter().map(|&v| crate::io::format_float(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
