//! Seeded generators for random models and outlier-feature calibration batches.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`. Model and
//! batch generation use distinct ChaCha streams ([`MODEL_STREAM`] and
//! [`BATCH_STREAM`]), so a model and a batch built from the same seed are
//! independent. Generated values are rounded to `f32` so that in-memory
//! fixtures equal what a save/load cycle produces.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model_store::{Activation, CalibrationBatch, LinearLayer, ModelCheckpoint};
use crate::numerics::DenseMatrix;

pub const MODEL_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;

/// Default fraction of feature columns carrying outliers.
pub const DEFAULT_OUTLIER_FRAC: f64 = 1.0 / 16.0;
/// Default outlier magnification, relative to typical features.
pub const DEFAULT_OUTLIER_SCALE: f64 = 100.0;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random layered model: layer `k` maps `dims[k]` to `dims[k + 1]`, weights
/// drawn from `N(0, 1/c_in)`, ReLU after every layer but the last.
pub fn gen_random_model(dims: &[usize], seed: u64) -> Result<ModelCheckpoint> {
    if dims.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least two dims to form a layer, got {}",
            dims.len()
        )));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Argument(format!("dims[{pos}] is zero")));
    }
    let mut rng = stream_rng(seed, MODEL_STREAM);
    let n_layers = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let (c_in, c_out) = (pair[0], pair[1]);
            let std = 1.0 / (c_in as f64).sqrt();
            let data = (0..c_in * c_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32 as f64
                })
                .collect();
            let activation = if k + 1 < n_layers {
                Activation::Relu
            } else {
                Activation::None
            };
            LinearLayer::new(
                format!("layer{k}"),
                DenseMatrix::new(c_out, c_in, data).expect("sized by construction"),
                activation,
            )
        })
        .collect();
    ModelCheckpoint::new(layers)
}

/// Indices of the columns that carry outliers for this seed.
///
/// Chosen before any entry is drawn, so the set depends only on
/// `(c_in, outlier_frac, seed)`, not on the number of tokens.
pub fn outlier_columns(c_in: usize, outlier_frac: f64, seed: u64) -> Result<Vec<usize>> {
    let mut rng = stream_rng(seed, BATCH_STREAM);
    choose_outliers(&mut rng, c_in, outlier_frac)
}

fn choose_outliers(rng: &mut ChaCha8Rng, c_in: usize, outlier_frac: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&outlier_frac) {
        return Err(Error::Argument(format!(
            "outlier fraction {outlier_frac} outside [0, 1]"
        )));
    }
    let count = (outlier_frac * c_in as f64).round() as usize;
    let mut cols = index::sample(rng, c_in, count.min(c_in)).into_vec();
    cols.sort_unstable();
    Ok(cols)
}

/// Standard-normal activations with a fixed set of feature columns
/// multiplied by `outlier_scale`.
///
/// Rows are drawn in order, so the first `k` tokens of a batch equal the
/// batch generated with `n_tokens = k` and the same seed.
pub fn gen_outlier_batch(
    n_tokens: usize,
    c_in: usize,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: u64,
) -> Result<CalibrationBatch> {
    if n_tokens == 0 || c_in == 0 {
        return Err(Error::Argument(format!(
            "batch needs at least one token and feature, got {n_tokens}x{c_in}"
        )));
    }
    if !(outlier_scale > 0.0 && outlier_scale.is_finite()) {
        return Err(Error::Argument(format!(
            "outlier scale must be positive, got {outlier_scale}"
        )));
    }
    let mut rng = stream_rng(seed, BATCH_STREAM);
    let outliers = choose_outliers(&mut rng, c_in, outlier_frac)?;
    let mut col_scale = vec![1.0f64; c_in];
    for &j in &outliers {
        col_scale[j] = outlier_scale;
    }
    let data = (0..n_tokens * c_in)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * col_scale[i % c_in]) as f32 as f64
        })
        .collect();
    CalibrationBatch::new(DenseMatrix::new(n_tokens, c_in, data)?)
}
