use rayon::prelude::*;

use super::{PruneMetric, ScoreMatrix};
use crate::error::{Error, Result};
use crate::numerics::{column_norms, gram, DenseMatrix, NormKind};
use crate::reconstruct::{build_hessian, Hessian};

/// Lower bound on the denominator of relative deviations.
const REL_EPS: f64 = 1e-12;

pub fn score_magnitude(w: &DenseMatrix) -> ScoreMatrix {
    ScoreMatrix(w.map(f64::abs))
}

/// `S_ij = |W_ij| * norms[j]`.
pub fn score_wanda(w: &DenseMatrix, norms: &[f64]) -> Result<ScoreMatrix> {
    if norms.len() != w.cols() {
        return Err(Error::Shape(format!(
            "{} feature norms for a weight with {} inputs",
            norms.len(),
            w.cols()
        )));
    }
    if let Some(j) = norms.iter().position(|n| !(n.is_finite() && *n >= 0.0)) {
        return Err(Error::Argument(format!("feature norm {j} is {}", norms[j])));
    }
    Ok(ScoreMatrix(scale_columns(w, norms, |v, n| v.abs() * n)))
}

/// `S_ij = W_ij^2 / [(XᵀX + λI)⁻¹]_jj`.
pub fn score_sparsegpt(w: &DenseMatrix, x: &DenseMatrix, lambda: f64) -> Result<ScoreMatrix> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "calibration has {} features, weight has {} inputs",
            x.cols(),
            w.cols()
        )));
    }
    let hessian = build_hessian(x, lambda)?;
    MetricScorer::from_hessian(&hessian)?.score(w)
}

fn scale_columns(w: &DenseMatrix, factors: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> DenseMatrix {
    let cols = w.cols();
    let mut out = DenseMatrix::zeros(w.rows(), cols);
    if cols == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(cols)
        .zip(w.as_slice().par_chunks(cols))
        .for_each(|(dst, src)| {
            for ((d, &v), &c) in dst.iter_mut().zip(src).zip(factors) {
                *d = f(v, c);
            }
        });
    out
}

/// Maximum relative gap between `|W|^2 * diag(XᵀX)` and the squared Wanda
/// score. The two agree exactly in exact arithmetic, since the squared L2
/// column norm is the Gram diagonal.
pub fn verify_reduction(w: &DenseMatrix, x: &DenseMatrix) -> Result<f64> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "calibration has {} features, weight has {} inputs",
            x.cols(),
            w.cols()
        )));
    }
    let g = gram(x);
    let diag: Vec<f64> = (0..g.rows()).map(|j| g.get(j, j)).collect();
    let diagonal_form = scale_columns(w, &diag, |v, d| v * v * d);
    let wanda = score_wanda(w, &column_norms(x, NormKind::L2)?)?;
    let deviation = diagonal_form
        .as_slice()
        .iter()
        .zip(wanda.matrix().as_slice())
        .map(|(a, s)| {
            let b = s * s;
            (a - b).abs() / b.abs().max(REL_EPS)
        })
        .fold(0.0f64, f64::max);
    Ok(deviation)
}

/// A metric with its calibration statistics precomputed, so that it can
/// re-score weights that change while the statistics stay fixed.
#[derive(Debug, Clone)]
pub enum MetricScorer {
    Magnitude,
    Wanda { norms: Vec<f64> },
    SparseGpt { inverse_diagonal: Vec<f64> },
}

impl MetricScorer {
    pub fn new(metric: &PruneMetric, x: &DenseMatrix) -> Result<Self> {
        match metric {
            PruneMetric::Magnitude => Ok(MetricScorer::Magnitude),
            PruneMetric::Wanda { norm } => Ok(MetricScorer::Wanda {
                norms: column_norms(x, *norm)?,
            }),
            PruneMetric::SparseGpt { lambda } => {
                let g = gram(x);
                let lambda = lambda.resolve(&g)?;
                Self::from_hessian(&Hessian::from_gram(g, lambda)?)
            }
        }
    }

    pub fn from_hessian(hessian: &Hessian) -> Result<Self> {
        Ok(MetricScorer::SparseGpt {
            inverse_diagonal: hessian.inverse_diagonal()?,
        })
    }

    /// Score of a single weight value `v` sitting in input column `j`.
    pub fn score_value(&self, j: usize, v: f64) -> f64 {
        match self {
            MetricScorer::Magnitude => v.abs(),
            MetricScorer::Wanda { norms } => v.abs() * norms[j],
            MetricScorer::SparseGpt { inverse_diagonal } => v * v / inverse_diagonal[j],
        }
    }

    pub fn score(&self, w: &DenseMatrix) -> Result<ScoreMatrix> {
        match self {
            MetricScorer::Magnitude => Ok(score_magnitude(w)),
            MetricScorer::Wanda { norms } => score_wanda(w, norms),
            MetricScorer::SparseGpt { inverse_diagonal } => {
                if inverse_diagonal.len() != w.cols() {
                    return Err(Error::Shape(format!(
                        "Hessian of dimension {} for a weight with {} inputs",
                        inverse_diagonal.len(),
                        w.cols()
                    )));
                }
                ScoreMatrix::new(scale_columns(w, inverse_diagonal, |v, d| v * v / d))
            }
        }
    }
}
