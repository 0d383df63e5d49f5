//! Importance scores, comparison-group mask selection and N:M selection.

mod score;
mod select;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, NormKind};
use crate::reconstruct::Dampening;

pub use score::{score_magnitude, score_sparsegpt, score_wanda, verify_reduction, MetricScorer};
pub use select::{apply_mask, prune_quota, select_mask, select_nm_mask};

/// Importance per weight; lower scores are pruned first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(DenseMatrix);

impl ScoreMatrix {
    /// Wraps `scores`, rejecting negative or non-finite entries.
    pub fn new(scores: DenseMatrix) -> Result<Self> {
        if let Some(i) = scores.as_slice().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument(format!(
                "score at flat index {i} is {}, expected finite and non-negative",
                scores.as_slice()[i]
            )));
        }
        Ok(Self(scores))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockAxis {
    Input,
    Output,
}

/// Which weights are ranked against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupingScheme {
    /// The whole matrix is one group.
    PerLayer,
    /// Each row (all weights feeding one output) is a group.
    PerOutput,
    /// Each column (all weights reading one input) is a group.
    PerInput,
    /// `blocksize` consecutive columns (`Input`) or rows (`Output`) form a
    /// group; a trailing partial block is its own group.
    Blocked { axis: BlockAxis, blocksize: usize },
}

impl GroupingScheme {
    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if let GroupingScheme::Blocked { axis, blocksize } = *self {
            let dim = match axis {
                BlockAxis::Input => shape.1,
                BlockAxis::Output => shape.0,
            };
            if blocksize == 0 || blocksize > dim {
                return Err(Error::Argument(format!(
                    "blocksize {blocksize} must lie in 1..={dim} for the {axis:?} axis"
                )));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for GroupingScheme {
    type Err = Error;

    /// Parses `per-output`, `per-layer`, `per-input`, `in:K` or `out:K`.
    fn from_str(s: &str) -> Result<Self> {
        let blocked = |axis, k: &str| {
            k.parse::<usize>()
                .ok()
                .filter(|&b| b >= 1)
                .map(|blocksize| GroupingScheme::Blocked { axis, blocksize })
                .ok_or_else(|| Error::Argument(format!("bad blocksize in `{s}`")))
        };
        match s {
            "per-output" => Ok(GroupingScheme::PerOutput),
            "per-layer" => Ok(GroupingScheme::PerLayer),
            "per-input" => Ok(GroupingScheme::PerInput),
            _ => match s.split_once(':') {
                Some(("in", k)) => blocked(BlockAxis::Input, k),
                Some(("out", k)) => blocked(BlockAxis::Output, k),
                _ => Err(Error::Argument(format!("unknown grouping `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for GroupingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupingScheme::PerLayer => write!(f, "per-layer"),
            GroupingScheme::PerOutput => write!(f, "per-output"),
            GroupingScheme::PerInput => write!(f, "per-input"),
            GroupingScheme::Blocked { axis: BlockAxis::Input, blocksize } => write!(f, "in:{blocksize}"),
            GroupingScheme::Blocked { axis: BlockAxis::Output, blocksize } => write!(f, "out:{blocksize}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SparsityTarget {
    /// Prune `floor(G * s)` weights in every comparison group of size `G`.
    Ratio { s: f64 },
    /// Keep `n` weights in every aligned block of `m` inputs per row.
    StructuredNm { n: usize, m: usize },
}

impl SparsityTarget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsityTarget::Ratio { s } if !(0.0..1.0).contains(&s) => Err(Error::Argument(
                format!("sparsity ratio {s} outside [0, 1)"),
            )),
            SparsityTarget::StructuredNm { n, m } if m == 0 || n > m => Err(Error::Argument(
                format!("invalid N:M pattern {n}:{m}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn nominal_sparsity(&self) -> f64 {
        match *self {
            SparsityTarget::Ratio { s } => s,
            SparsityTarget::StructuredNm { n, m } => 1.0 - n as f64 / m as f64,
        }
    }
}

impl std::fmt::Display for SparsityTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SparsityTarget::Ratio { s } => write!(f, "{s}"),
            SparsityTarget::StructuredNm { n, m } => write!(f, "{n}:{m}"),
        }
    }
}

/// Pruning metric and the calibration statistics it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PruneMetric {
    /// `|W_ij|`
    Magnitude,
    /// `|W_ij| * ||X_j||`
    Wanda { norm: NormKind },
    /// `W_ij^2 / [(XᵀX + λI)⁻¹]_jj`
    #[serde(rename = "sparsegpt")]
    SparseGpt { lambda: Dampening },
}

impl PruneMetric {
    pub fn wanda() -> Self {
        PruneMetric::Wanda { norm: NormKind::L2 }
    }

    pub fn sparsegpt() -> Self {
        PruneMetric::SparseGpt {
            lambda: Dampening::Auto,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PruneMetric::Magnitude => "magnitude",
            PruneMetric::Wanda { .. } => "wanda",
            PruneMetric::SparseGpt { .. } => "sparsegpt",
        }
    }
}

/// Boolean keep-mask with the shape of a weight matrix (`true` = kept).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    kept: Vec<bool>,
}

impl PruneMask {
    pub fn new(rows: usize, cols: usize, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask length {} does not match {rows}x{cols}",
                kept.len()
            )));
        }
        Ok(Self { rows, cols, kept })
    }

    pub fn all_kept(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            kept: vec![true; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[bool]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let kept: Vec<bool> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        assert_eq!(kept.len(), rows.len() * cols, "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            kept,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.kept[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, kept: bool) {
        self.kept[i * self.cols + j] = kept;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.kept[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [bool] {
        &mut self.kept[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.kept
    }

    pub fn pruned_count(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.kept.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.kept.len() as f64
        }
    }
}
