use rayon::prelude::*;

use super::{BlockAxis, GroupingScheme, PruneMask, ScoreMatrix};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Number of weights pruned from a group of `group_size` at ratio `s`,
/// truncated toward zero like `int(G * s)`.
pub fn prune_quota(group_size: usize, s: f64) -> usize {
    ((group_size as f64) * s).floor() as usize
}

/// Flat indices of the `count` lowest scores among `indices`; ties go to the
/// lower flat index. `indices` must be ascending.
fn lowest(scores: &[f64], indices: &[usize], count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let mut order = indices.to_vec();
    // Stable sort keeps ascending index order among equal scores.
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order.truncate(count);
    order
}

fn groups(shape: (usize, usize), grouping: GroupingScheme) -> Vec<Vec<usize>> {
    let (rows, cols) = shape;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<usize> {
        (r0..r1).flat_map(|i| (c0..c1).map(move |j| i * cols + j)).collect()
    };
    match grouping {
        GroupingScheme::PerLayer => vec![block(0, rows, 0, cols)],
        GroupingScheme::PerOutput => (0..rows).map(|i| block(i, i + 1, 0, cols)).collect(),
        GroupingScheme::PerInput => (0..cols).map(|j| block(0, rows, j, j + 1)).collect(),
        GroupingScheme::Blocked { axis: BlockAxis::Input, blocksize } => (0..cols)
            .step_by(blocksize)
            .map(|c0| block(0, rows, c0, (c0 + blocksize).min(cols)))
            .collect(),
        GroupingScheme::Blocked { axis: BlockAxis::Output, blocksize } => (0..rows)
            .step_by(blocksize)
            .map(|r0| block(r0, (r0 + blocksize).min(rows), 0, cols))
            .collect(),
    }
}

/// Prunes `floor(G * s)` lowest-scoring weights in every comparison group.
pub fn select_mask(scores: &ScoreMatrix, grouping: GroupingScheme, s: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Argument(format!("sparsity ratio {s} outside [0, 1)")));
    }
    let shape = scores.shape();
    grouping.validate(shape)?;
    let flat = scores.matrix().as_slice();
    let pruned: Vec<Vec<usize>> = groups(shape, grouping)
        .par_iter()
        .map(|g| lowest(flat, g, prune_quota(g.len(), s)))
        .collect();
    let mut mask = PruneMask::all_kept(shape.0, shape.1);
    for idx in pruned.into_iter().flatten() {
        mask.kept[idx] = false;
    }
    Ok(mask)
}

/// Keeps the `n` highest-scoring weights in every aligned block of `m`
/// consecutive inputs of each row.
pub fn select_nm_mask(scores: &ScoreMatrix, n: usize, m: usize) -> Result<PruneMask> {
    let (rows, cols) = scores.shape();
    if m == 0 || n > m {
        return Err(Error::Argument(format!("invalid N:M pattern {n}:{m}")));
    }
    if cols % m != 0 {
        return Err(Error::Argument(format!(
            "N:M block size {m} does not divide {cols} inputs"
        )));
    }
    let mut mask = PruneMask::all_kept(rows, cols);
    if cols == 0 {
        return Ok(mask);
    }
    let flat = scores.matrix().as_slice();
    mask.kept
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| {
            for start in (0..cols).step_by(m) {
                let block: Vec<usize> = (i * cols + start..i * cols + start + m).collect();
                for idx in lowest(flat, &block, m - n) {
                    row[idx - i * cols] = false;
                }
            }
        });
    Ok(mask)
}

/// Zeroes pruned entries; kept entries are copied unchanged.
pub fn apply_mask(w: &DenseMatrix, mask: &PruneMask) -> Result<DenseMatrix> {
    if w.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} does not match weight {:?}",
            mask.shape(),
            w.shape()
        )));
    }
    let data = w
        .as_slice()
        .iter()
        .zip(&mask.kept)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    DenseMatrix::new(w.rows(), w.cols(), data)
}
