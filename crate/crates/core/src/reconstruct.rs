//! Layer Hessians and least-squares weight updates after pruning.
//!
//! For a layer input `X` and a row `w`, the update chooses the surviving
//! weights `w'` that minimize `||X w' - X w||`. Using `H = XᵀX + λI` this
//! reduces to the normal equations `H_KK w'_K = H_K,: w` over the kept set
//! `K`. Rows are solved exactly and independently.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{gram, Cholesky, DenseMatrix};
use crate::prune::{prune_quota, MetricScorer, PruneMask, PruneMetric};

/// Fraction of the mean Gram diagonal used by [`Dampening::Auto`].
pub const AUTO_DAMPENING_FRACTION: f64 = 0.01;

/// The `λ` added to the Hessian diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Dampening {
    /// `0.01 * mean(diag(XᵀX))`.
    #[default]
    Auto,
    Fixed(f64),
}

impl Dampening {
    pub fn resolve(&self, gram: &DenseMatrix) -> Result<f64> {
        match *self {
            Dampening::Fixed(l) if l >= 0.0 && l.is_finite() => Ok(l),
            Dampening::Fixed(l) => Err(Error::Argument(format!(
                "dampening must be finite and non-negative, got {l}"
            ))),
            Dampening::Auto => {
                let n = gram.rows();
                if n == 0 {
                    return Ok(0.0);
                }
                let trace: f64 = (0..n).map(|j| gram.get(j, j)).sum();
                Ok(AUTO_DAMPENING_FRACTION * trace / n as f64)
            }
        }
    }
}

impl std::str::FromStr for Dampening {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Dampening::Auto);
        }
        match s.parse::<f64>() {
            Ok(l) if l >= 0.0 && l.is_finite() => Ok(Dampening::Fixed(l)),
            _ => Err(Error::Argument(format!(
                "lambda must be `auto` or a non-negative number, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for Dampening {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dampening::Auto => write!(f, "auto"),
            Dampening::Fixed(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DampeningRepr {
    Fixed(f64),
    Keyword(String),
}

impl Serialize for Dampening {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Dampening::Auto => DampeningRepr::Keyword("auto".into()),
            Dampening::Fixed(l) => DampeningRepr::Fixed(l),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Dampening {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match DampeningRepr::deserialize(deserializer)? {
            DampeningRepr::Fixed(l) if l >= 0.0 => Ok(Dampening::Fixed(l)),
            DampeningRepr::Keyword(k) if k == "auto" => Ok(Dampening::Auto),
            _ => Err(serde::de::Error::custom(
                "lambda must be \"auto\" or a non-negative number",
            )),
        }
    }
}

/// `XᵀX + λI` for one layer.
#[derive(Debug, Clone)]
pub struct Hessian {
    h: DenseMatrix,
    lambda: f64,
}

impl Hessian {
    pub fn from_gram(mut gram: DenseMatrix, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Argument(format!(
                "dampening must be finite and non-negative, got {lambda}"
            )));
        }
        if gram.rows() != gram.cols() {
            return Err(Error::Shape(format!("non-square Gram matrix {:?}", gram.shape())));
        }
        for j in 0..gram.rows() {
            gram.set(j, j, gram.get(j, j) + lambda);
        }
        Ok(Self { h: gram, lambda })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    pub fn inverse_diagonal(&self) -> Result<Vec<f64>> {
        Ok(Cholesky::factor(&self.h)?.inverse_diagonal())
    }
}

pub fn build_hessian(x: &DenseMatrix, lambda: f64) -> Result<Hessian> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Shape(format!(
            "Hessian needs a non-empty input, got {:?}",
            x.shape()
        )));
    }
    if let Some(index) = x.first_non_finite() {
        return Err(Error::NonFinite {
            layer: "hessian input".into(),
            index,
        });
    }
    Hessian::from_gram(gram(x), lambda)
}

/// How surviving weights are adjusted after pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdatePolicy {
    #[default]
    None,
    /// Fix the whole mask first, then refit every row once.
    Sequential,
    /// Alternate pruning and refitting over aligned blocks of input channels.
    Iterative { blocksize: usize },
}

impl std::str::FromStr for UpdatePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(UpdatePolicy::None),
            "sequential" => Ok(UpdatePolicy::Sequential),
            _ => match s.split_once(':') {
                Some(("iterative", k)) => k
                    .parse::<usize>()
                    .ok()
                    .filter(|&b| b >= 1)
                    .map(|blocksize| UpdatePolicy::Iterative { blocksize })
                    .ok_or_else(|| Error::Argument(format!("bad blocksize in `{s}`"))),
                _ => Err(Error::Argument(format!("unknown update policy `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for UpdatePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpdatePolicy::None => write!(f, "none"),
            UpdatePolicy::Sequential => write!(f, "sequential"),
            UpdatePolicy::Iterative { blocksize } => write!(f, "iterative:{blocksize}"),
        }
    }
}

/// Refits the `free` entries of a row so that `X w'` best matches `X target`.
/// Pruned entries are zero; entries neither free nor pruned keep `current`.
fn refit_row(
    target: &[f64],
    current: &[f64],
    free: &[bool],
    pruned: &[bool],
    h: &DenseMatrix,
) -> Result<Vec<f64>> {
    let n = target.len();
    let mut out: Vec<f64> = (0..n)
        .map(|j| if pruned[j] { 0.0 } else { current[j] })
        .collect();
    let free_idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
    if free_idx.is_empty() {
        return Ok(out);
    }
    // Gradient of ||X(w' - target)||² restricted to F:
    //   H_FF w'_F = H_F,: target - H_F,Z w'_Z   (Z = fixed, non-zero entries)
    let k = free_idx.len();
    let mut sub = DenseMatrix::zeros(k, k);
    let mut rhs = vec![0.0f64; k];
    for (a, &fa) in free_idx.iter().enumerate() {
        let hrow = h.row(fa);
        for (b, &fb) in free_idx.iter().enumerate() {
            sub.set(a, b, hrow[fb]);
        }
        let mut r = 0.0;
        for j in 0..n {
            r += hrow[j] * target[j];
            if !free[j] {
                r -= hrow[j] * out[j];
            }
        }
        rhs[a] = r;
    }
    let solved = Cholesky::factor(&sub)?.solve(&rhs)?;
    for (&j, v) in free_idx.iter().zip(solved) {
        out[j] = v;
    }
    Ok(out)
}

/// Least-squares refit of one row over its kept entries; pruned entries are
/// zeroed. A fully kept row is returned unchanged.
pub fn obs_update_row(w_row: &[f64], kept: &[bool], h: &Hessian) -> Result<Vec<f64>> {
    if w_row.len() != kept.len() || w_row.len() != h.dim() {
        return Err(Error::Shape(format!(
            "row of length {}, mask of length {}, Hessian of dimension {}",
            w_row.len(),
            kept.len(),
            h.dim()
        )));
    }
    if kept.iter().all(|k| *k) {
        return Ok(w_row.to_vec());
    }
    let pruned: Vec<bool> = kept.iter().map(|k| !k).collect();
    refit_row(w_row, w_row, kept, &pruned, h.matrix())
}

/// Applies [`obs_update_row`] to every row with its own slice of the mask.
pub fn sequential_update(w: &DenseMatrix, mask: &PruneMask, h: &Hessian) -> Result<DenseMatrix> {
    if w.shape() != mask.shape() || w.cols() != h.dim() {
        return Err(Error::Shape(format!(
            "weight {:?}, mask {:?}, Hessian of dimension {}",
            w.shape(),
            mask.shape(),
            h.dim()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..w.rows())
        .into_par_iter()
        .map(|i| obs_update_row(w.row(i), mask.row(i), h))
        .collect::<Result<_>>()?;
    DenseMatrix::new(w.rows(), w.cols(), rows.concat())
}

/// Interleaved prune-and-refit over aligned blocks of `blocksize` input
/// channels.
///
/// For each block, left to right: the block's entries are scored on the
/// current weights, `floor(len * s)` of them are pruned in every row, then
/// all kept entries from the block start onward are refit against the
/// original layer output. Entries in earlier blocks stay frozen. Metric
/// statistics (feature norms, Hessian diagonal) come from `x` once.
pub fn iterative_prune_update(
    w: &DenseMatrix,
    x: &DenseMatrix,
    metric: &PruneMetric,
    s: f64,
    blocksize: usize,
    lambda: f64,
) -> Result<(DenseMatrix, PruneMask)> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Argument(format!("sparsity ratio {s} outside [0, 1)")));
    }
    if blocksize == 0 {
        return Err(Error::Argument("iterative blocksize must be at least 1".into()));
    }
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "calibration has {} features, weight has {} inputs",
            x.cols(),
            w.cols()
        )));
    }
    let scorer = MetricScorer::new(metric, x)?;
    let hessian = build_hessian(x, lambda)?;
    let h = hessian.matrix();
    let cols = w.cols();

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..w.rows())
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<bool>)> {
            let original = w.row(i);
            let mut current = original.to_vec();
            let mut pruned = vec![false; cols];
            for start in (0..cols).step_by(blocksize) {
                let end = (start + blocksize).min(cols);
                let quota = prune_quota(end - start, s);
                if quota > 0 {
                    let mut order: Vec<usize> = (start..end).collect();
                    let score = |j: usize| scorer.score_value(j, current[j]);
                    order.sort_by(|&a, &b| score(a).total_cmp(&score(b)));
                    for &j in &order[..quota] {
                        pruned[j] = true;
                    }
                }
                let free: Vec<bool> = (0..cols).map(|j| j >= start && !pruned[j]).collect();
                if pruned.iter().any(|p| *p) {
                    current = refit_row(original, &current, &free, &pruned, h)?;
                }
            }
            Ok((current, pruned.iter().map(|p| !p).collect()))
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(w.rows() * cols);
    let mut kept = Vec::with_capacity(w.rows() * cols);
    for (r, k) in rows {
        data.extend(r);
        kept.extend(k);
    }
    Ok((
        DenseMatrix::new(w.rows(), cols, data)?,
        PruneMask::new(w.rows(), cols, kept)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul_transposed, NormKind};
    use crate::prune::{apply_mask, score_wanda, select_mask, BlockAxis, GroupingScheme};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    fn output_error(x: &DenseMatrix, w: &DenseMatrix, w2: &DenseMatrix) -> f64 {
        let a = matmul_transposed(x, w).unwrap();
        let b = matmul_transposed(x, w2).unwrap();
        a.sub(&b).unwrap().frobenius_norm()
    }

    /// Normal-equations oracle: gather X_K and solve (X_Kᵀ X_K) a = X_Kᵀ X w
    /// by Gauss-Jordan elimination.
    fn normal_equations_oracle(x: &DenseMatrix, w: &[f64], kept: &[bool]) -> Vec<f64> {
        let idx: Vec<usize> = (0..w.len()).filter(|&j| kept[j]).collect();
        let k = idx.len();
        let y: Vec<f64> = (0..x.rows())
            .map(|t| (0..w.len()).map(|j| x.get(t, j) * w[j]).sum())
            .collect();
        let mut aug = vec![vec![0.0; k + 1]; k];
        for a in 0..k {
            for b in 0..k {
                aug[a][b] = (0..x.rows()).map(|t| x.get(t, idx[a]) * x.get(t, idx[b])).sum();
            }
            aug[a][k] = (0..x.rows()).map(|t| x.get(t, idx[a]) * y[t]).sum();
        }
        for c in 0..k {
            let p = (c..k).max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs())).unwrap();
            aug.swap(c, p);
            for r in 0..k {
                if r != c {
                    let f = aug[r][c] / aug[c][c];
                    for q in c..=k {
                        aug[r][q] -= f * aug[c][q];
                    }
                }
            }
        }
        let mut out = vec![0.0; w.len()];
        for (a, &j) in idx.iter().enumerate() {
            out[j] = aug[a][k] / aug[a][a];
        }
        out
    }

    #[test]
    fn hessian_hand_values() {
        let h = build_hessian(&DenseMatrix::identity(2), 0.0).unwrap();
        assert_eq!(h.matrix(), &DenseMatrix::identity(2));
        let h = build_hessian(&DenseMatrix::from_rows(&[[1.0, 1.0]]), 1.0).unwrap();
        assert_eq!(h.matrix(), &DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]));
    }

    #[test]
    fn hessian_random_is_symmetric_pd() {
        let x = random(128, 16, 1);
        let g = gram(&x);
        let lambda = Dampening::Auto.resolve(&g).unwrap();
        let h = build_hessian(&x, lambda).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert!((h.matrix().get(i, j) - h.matrix().get(j, i)).abs() <= 1e-9);
            }
        }
        assert!(Cholesky::factor(h.matrix()).is_ok());
    }

    #[test]
    fn hessian_rejects_non_finite() {
        let mut x = random(4, 3, 2);
        x.set(1, 1, f64::INFINITY);
        assert!(matches!(build_hessian(&x, 0.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn orthogonal_columns_leave_kept_weights() {
        let h = build_hessian(&DenseMatrix::identity(2), 0.0).unwrap();
        assert_eq!(obs_update_row(&[3.0, 4.0], &[false, true], &h).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn single_token_compensates() {
        let h = build_hessian(&DenseMatrix::from_rows(&[[1.0, 1.0]]), 0.0).unwrap();
        let r = obs_update_row(&[1.0, 1.0], &[false, true], &h).unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_pruned_row_is_zero_and_singular_is_reported() {
        let h = build_hessian(&random(6, 4, 3), 0.0).unwrap();
        assert_eq!(obs_update_row(&[1.0, 2.0, 3.0, 4.0], &[false; 4], &h).unwrap(), vec![0.0; 4]);
        // Two tokens cannot pin down three free weights.
        let h = build_hessian(&random(2, 4, 4), 0.0).unwrap();
        assert!(matches!(
            obs_update_row(&[1.0, 2.0, 3.0, 4.0], &[true, true, true, false], &h),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn random_row_matches_oracle_and_beats_zeroing() {
        let x = random(64, 8, 5);
        let w = random(1, 8, 6);
        let kept = [true, false, true, true, false, true, false, true];
        let h = build_hessian(&x, 0.0).unwrap();
        let updated = obs_update_row(w.row(0), &kept, &h).unwrap();
        let oracle = normal_equations_oracle(&x, w.row(0), &kept);
        for (a, b) in updated.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3));
        }
        let zeroed: Vec<f64> = w.row(0).iter().zip(&kept).map(|(v, k)| if *k { *v } else { 0.0 }).collect();
        let as_m = |v: &[f64]| DenseMatrix::new(1, 8, v.to_vec()).unwrap();
        assert!(output_error(&x, &w, &as_m(&updated)) <= output_error(&x, &w, &as_m(&zeroed)));
    }

    #[test]
    fn sequential_cases() {
        let x = random(40, 6, 7);
        let w = random(5, 6, 8);
        let h = build_hessian(&x, 0.0).unwrap();
        let same = sequential_update(&w, &PruneMask::all_kept(5, 6), &h).unwrap();
        assert_eq!(same, w);

        let mask = select_mask(&crate::prune::score_magnitude(&w), GroupingScheme::PerOutput, 0.5).unwrap();
        let ortho = build_hessian(&DenseMatrix::diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 0.0).unwrap();
        let upd = sequential_update(&w, &mask, &ortho).unwrap();
        let masked = apply_mask(&w, &mask).unwrap();
        assert!(upd.sub(&masked).unwrap().max_abs() <= 1e-12);

        let upd = sequential_update(&w, &mask, &h).unwrap();
        assert!(output_error(&x, &w, &upd) <= output_error(&x, &w, &masked) + 1e-9);
    }

    #[test]
    fn iterative_single_block_is_sequential() {
        let x = random(48, 12, 9);
        let w = random(6, 12, 10);
        let metric = PruneMetric::wanda();
        let (upd, mask) = iterative_prune_update(&w, &x, &metric, 0.5, 12, 0.1).unwrap();
        let norms = crate::numerics::column_norms(&x, NormKind::L2).unwrap();
        let expected_mask = select_mask(&score_wanda(&w, &norms).unwrap(), GroupingScheme::PerOutput, 0.5).unwrap();
        assert_eq!(mask, expected_mask);
        let seq = sequential_update(&w, &expected_mask, &build_hessian(&x, 0.1).unwrap()).unwrap();
        assert!(upd.sub(&seq).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn iterative_orthogonal_matches_row_blocked_mask() {
        let x = DenseMatrix::diagonal(&(1..=16).map(|v| v as f64).collect::<Vec<_>>());
        let w = random(5, 16, 11);
        let (upd, mask) = iterative_prune_update(&w, &x, &PruneMetric::wanda(), 0.5, 4, 0.0).unwrap();
        let norms = crate::numerics::column_norms(&x, NormKind::L2).unwrap();
        let g = GroupingScheme::Blocked { axis: BlockAxis::Input, blocksize: 4 };
        for i in 0..5 {
            let row = DenseMatrix::new(1, 16, w.row(i).to_vec()).unwrap();
            let m = select_mask(&score_wanda(&row, &norms).unwrap(), g, 0.5).unwrap();
            assert_eq!(mask.row(i), m.row(0));
        }
        let masked = apply_mask(&w, &mask).unwrap();
        assert!(upd.sub(&masked).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn iterative_counts_and_error() {
        let x = random(64, 32, 12);
        let w = random(16, 32, 13);
        let (upd, mask) = iterative_prune_update(&w, &x, &PruneMetric::wanda(), 0.5, 8, 0.0).unwrap();
        for i in 0..16 {
            assert_eq!(mask.row(i).iter().filter(|k| !**k).count(), 16);
            for b in mask.row(i).chunks(8) {
                assert_eq!(b.iter().filter(|k| !**k).count(), 4);
            }
        }
        // Baseline: the same (input, 8) per-row selection without updates.
        let norms = crate::numerics::column_norms(&x, NormKind::L2).unwrap();
        let scores = score_wanda(&w, &norms).unwrap();
        let mut base = PruneMask::all_kept(16, 32);
        let g = GroupingScheme::Blocked { axis: BlockAxis::Input, blocksize: 8 };
        for i in 0..16 {
            let row = crate::prune::ScoreMatrix::new(DenseMatrix::new(1, 32, scores.matrix().row(i).to_vec()).unwrap()).unwrap();
            base.row_mut(i).copy_from_slice(select_mask(&row, g, 0.5).unwrap().row(0));
        }
        let no_update = apply_mask(&w, &base).unwrap();
        assert!(output_error(&x, &w, &upd) <= output_error(&x, &w, &no_update));
        for (v, k) in upd.as_slice().iter().zip(mask.as_slice()) {
            if !k {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn policy_and_dampening_parse() {
        assert_eq!("none".parse::<UpdatePolicy>().unwrap(), UpdatePolicy::None);
        assert_eq!("iterative:128".parse::<UpdatePolicy>().unwrap(), UpdatePolicy::Iterative { blocksize: 128 });
        assert!("iterative:0".parse::<UpdatePolicy>().is_err());
        assert_eq!("auto".parse::<Dampening>().unwrap(), Dampening::Auto);
        assert_eq!("0.5".parse::<Dampening>().unwrap(), Dampening::Fixed(0.5));
        assert!("-1".parse::<Dampening>().is_err());
        let json = serde_json::to_string(&[Dampening::Auto, Dampening::Fixed(0.25)]).unwrap();
        assert_eq!(json, r#"["auto",0.25]"#);
        let back: Vec<Dampening> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Dampening::Auto, Dampening::Fixed(0.25)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn update_never_worse_than_zeroing(seed in any::<u64>(), tokens in 12usize..40, cols in 2usize..10) {
            let x = random(tokens, cols, seed);
            let w = random(1, cols, seed ^ 7);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
            let kept: Vec<bool> = (0..cols).map(|_| rng.random_bool(0.5)).collect();
            let h = build_hessian(&x, 0.0).unwrap();
            let upd = obs_update_row(w.row(0), &kept, &h).unwrap();
            let zeroed: Vec<f64> = w.row(0).iter().zip(&kept).map(|(v, k)| if *k { *v } else { 0.0 }).collect();
            let as_m = |v: Vec<f64>| DenseMatrix::new(1, cols, v).unwrap();
            prop_assert!(output_error(&x, &w, &as_m(upd)) <= output_error(&x, &w, &as_m(zeroed)) + 1e-9);
        }

        #[test]
        fn fully_kept_row_is_unchanged(seed in any::<u64>(), cols in 1usize..10) {
            let h = build_hessian(&random(20, cols, seed), 0.01).unwrap();
            let w = random(1, cols, seed ^ 3);
            prop_assert_eq!(obs_update_row(w.row(0), &vec![true; cols], &h).unwrap(), w.row(0).to_vec());
        }

        #[test]
        fn orthogonal_hessian_never_moves_kept(seed in any::<u64>(), cols in 1usize..10) {
            let diag: Vec<f64> = random(1, cols, seed).as_slice().iter().map(|v| v.abs() + 0.1).collect();
            let h = build_hessian(&DenseMatrix::diagonal(&diag), 0.0).unwrap();
            let w = random(1, cols, seed ^ 5);
            let kept: Vec<bool> = (0..cols).map(|j| (seed >> (j % 64)) & 1 == 1).collect();
            let upd = obs_update_row(w.row(0), &kept, &h).unwrap();
            for j in 0..cols {
                let expected = if kept[j] { w.get(0, j) } else { 0.0 };
                prop_assert!((upd[j] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }
}
