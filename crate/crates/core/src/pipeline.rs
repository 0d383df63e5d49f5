//! Layer-by-layer pruning of a whole model with live activation propagation,
//! reconstruction-error evaluation and an exhaustive per-row oracle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_store::{CalibrationBatch, LinearLayer, ModelCheckpoint};
use crate::numerics::{gram, matmul_transposed, DenseMatrix, NormKind};
use crate::prune::{
    apply_mask, select_mask, select_nm_mask, BlockAxis, GroupingScheme, MetricScorer, PruneMask,
    PruneMetric, SparsityTarget,
};
use crate::reconstruct::{
    build_hessian, iterative_prune_update, sequential_update, Dampening, UpdatePolicy,
};

/// Denominator floor for relative errors.
pub const REL_EPS: f64 = 1e-12;

/// Largest row width [`oracle_best_mask_row`] will enumerate.
pub const ORACLE_MAX_INPUTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub metric: PruneMetric,
    pub grouping: GroupingScheme,
    pub target: SparsityTarget,
    pub update: UpdatePolicy,
    /// Dampening of the Hessian used by weight updates.
    pub lambda: Dampening,
    pub seed: u64,
}

impl PruneConfig {
    /// Unstructured pruning at ratio `s`, per-output groups, no update.
    pub fn new(metric: PruneMetric, s: f64) -> Self {
        Self {
            metric,
            grouping: GroupingScheme::PerOutput,
            target: SparsityTarget::Ratio { s },
            update: UpdatePolicy::None,
            lambda: Dampening::Auto,
            seed: 0,
        }
    }

    pub fn with_grouping(mut self, grouping: GroupingScheme) -> Self {
        self.grouping = grouping;
        self
    }

    pub fn with_update(mut self, update: UpdatePolicy) -> Self {
        self.update = update;
        self
    }

    pub fn with_target(mut self, target: SparsityTarget) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.target
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let SparsityTarget::StructuredNm { .. } = self.target {
            if self.grouping != GroupingScheme::PerOutput {
                return Err(Error::Config(format!(
                    "N:M sparsity requires per-output grouping, got {}",
                    self.grouping
                )));
            }
        }
        if let UpdatePolicy::Iterative { blocksize } = self.update {
            if blocksize == 0 {
                return Err(Error::Config("iterative blocksize must be at least 1".into()));
            }
            if let SparsityTarget::StructuredNm { .. } = self.target {
                return Err(Error::Config(
                    "iterative update supports ratio targets only".into(),
                ));
            }
            let matches = match self.grouping {
                GroupingScheme::PerOutput => true,
                GroupingScheme::Blocked { axis: BlockAxis::Input, blocksize: b } => b == blocksize,
                _ => false,
            };
            if !matches {
                return Err(Error::Config(format!(
                    "iterative:{blocksize} prunes per row within input blocks of {blocksize}; \
                     use per-output or in:{blocksize} grouping, got {}",
                    self.grouping
                )));
            }
        }
        Ok(())
    }

    /// Short label such as `wanda/per-output/0.5/none`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.metric.name(),
            self.grouping,
            self.target,
            self.update
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_name: String,
    pub target: String,
    pub achieved_sparsity: f64,
    pub recon_error_fro: f64,
    pub recon_error_rel: f64,
    pub metric_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    /// Pruned weights over all weights in the model.
    pub achieved_sparsity: f64,
    /// Square root of the summed squared per-layer errors.
    pub recon_error_fro: f64,
    /// Mean of the per-layer relative errors.
    pub recon_error_rel: f64,
    pub metric_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub config: PruneConfig,
    pub label: String,
    pub layers: Vec<LayerReport>,
    pub totals: ReportTotals,
}

impl PruneReport {
    fn assemble(config: PruneConfig, layers: Vec<LayerReport>, pruned: usize, total: usize) -> Self {
        let n = layers.len().max(1) as f64;
        let totals = ReportTotals {
            achieved_sparsity: if total == 0 { 0.0 } else { pruned as f64 / total as f64 },
            recon_error_fro: layers.iter().map(|l| l.recon_error_fro.powi(2)).sum::<f64>().sqrt(),
            recon_error_rel: layers.iter().map(|l| l.recon_error_rel).sum::<f64>() / n,
            metric_time_ms: layers.iter().map(|l| l.metric_time_ms).sum(),
        };
        Self {
            label: config.label(),
            config,
            layers,
            totals,
        }
    }

    /// Zeroes every timing so the report depends only on its inputs.
    pub fn without_timings(mut self) -> Self {
        for l in &mut self.layers {
            l.metric_time_ms = 0.0;
        }
        self.totals.metric_time_ms = 0.0;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn layer_forward(x: &DenseMatrix, layer: &LinearLayer) -> Result<DenseMatrix> {
    let y = matmul_transposed(x, &layer.weight)?.map(|v| layer.activation.apply(v));
    if y.first_non_finite().is_some() {
        return Err(Error::Overflow {
            layer: layer.name.clone(),
        });
    }
    Ok(y)
}

/// Input activations of every layer: element `k` feeds layer `k`.
pub fn forward_collect(model: &ModelCheckpoint, batch: &CalibrationBatch) -> Result<Vec<DenseMatrix>> {
    check_batch(model, batch)?;
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut x = batch.data().clone();
    for (k, layer) in model.layers.iter().enumerate() {
        let next = if k + 1 < model.layers.len() {
            Some(layer_forward(&x, layer)?)
        } else {
            None
        };
        inputs.push(x);
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    Ok(inputs)
}

/// Model output for `batch`.
pub fn forward(model: &ModelCheckpoint, batch: &CalibrationBatch) -> Result<DenseMatrix> {
    check_batch(model, batch)?;
    let mut x = batch.data().clone();
    for layer in &model.layers {
        x = layer_forward(&x, layer)?;
    }
    Ok(x)
}

fn check_batch(model: &ModelCheckpoint, batch: &CalibrationBatch) -> Result<()> {
    if batch.c_in() != model.input_dim() {
        return Err(Error::Shape(format!(
            "calibration has {} features, model expects {}",
            batch.c_in(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// `(||X Wᵀ - X W'ᵀ||_F, that / max(||X Wᵀ||_F, ε))`.
pub fn recon_error(w: &DenseMatrix, w_pruned: &DenseMatrix, x: &DenseMatrix) -> Result<(f64, f64)> {
    if w.shape() != w_pruned.shape() {
        return Err(Error::Shape(format!(
            "weights {:?} and {:?} differ",
            w.shape(),
            w_pruned.shape()
        )));
    }
    let diff = w.sub(w_pruned)?;
    let fro = matmul_transposed(x, &diff)?.frobenius_norm();
    let base = matmul_transposed(x, w)?.frobenius_norm();
    Ok((fro, fro / base.max(REL_EPS)))
}

/// Prunes one weight matrix against its input activations. Returns the new
/// weights, the mask and the time spent computing scores.
pub fn prune_layer(
    w: &DenseMatrix,
    x: &DenseMatrix,
    config: &PruneConfig,
) -> Result<(DenseMatrix, PruneMask, f64)> {
    config.validate()?;
    if let UpdatePolicy::Iterative { blocksize } = config.update {
        let SparsityTarget::Ratio { s } = config.target else {
            unreachable!("rejected by validate");
        };
        let lambda = config.lambda.resolve(&gram(x))?;
        let start = Instant::now();
        let (updated, mask) = iterative_prune_update(w, x, &config.metric, s, blocksize, lambda)?;
        return Ok((updated, mask, start.elapsed().as_secs_f64() * 1e3));
    }

    let start = Instant::now();
    let scores = MetricScorer::new(&config.metric, x)?.score(w)?;
    let metric_ms = start.elapsed().as_secs_f64() * 1e3;

    let mask = match config.target {
        SparsityTarget::Ratio { s } => select_mask(&scores, config.grouping, s)?,
        SparsityTarget::StructuredNm { n, m } => select_nm_mask(&scores, n, m)?,
    };
    let updated = match config.update {
        UpdatePolicy::Sequential if mask.pruned_count() > 0 => {
            let g = gram(x);
            let lambda = config.lambda.resolve(&g)?;
            sequential_update(w, &mask, &build_hessian(x, lambda)?)?
        }
        _ => apply_mask(w, &mask)?,
    };
    Ok((updated, mask, metric_ms))
}

/// Prunes layers first to last. Each layer is scored on the activations
/// produced by the already-pruned layers before it.
pub fn prune_model(
    model: &ModelCheckpoint,
    batch: &CalibrationBatch,
    config: &PruneConfig,
) -> Result<(ModelCheckpoint, PruneReport)> {
    config.validate()?;
    check_batch(model, batch)?;
    let mut x = batch.data().clone();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut records = Vec::with_capacity(model.layers.len());
    let (mut pruned_total, mut weight_total) = (0usize, 0usize);

    for (k, layer) in model.layers.iter().enumerate() {
        let (weight, mask, metric_ms) = prune_layer(&layer.weight, &x, config)?;
        let (fro, rel) = recon_error(&layer.weight, &weight, &x)?;
        pruned_total += mask.pruned_count();
        weight_total += mask.as_slice().len();
        records.push(LayerReport {
            layer_name: layer.name.clone(),
            target: config.target.to_string(),
            achieved_sparsity: mask.sparsity(),
            recon_error_fro: fro,
            recon_error_rel: rel,
            metric_time_ms: metric_ms,
        });
        let pruned_layer = LinearLayer::new(layer.name.clone(), weight, layer.activation);
        if k + 1 < model.layers.len() {
            x = layer_forward(&x, &pruned_layer)?;
        }
        layers.push(pruned_layer);
    }

    let pruned = ModelCheckpoint {
        version: model.version,
        layers,
    };
    Ok((
        pruned,
        PruneReport::assemble(*config, records, pruned_total, weight_total),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub layer_name: String,
    pub achieved_sparsity: f64,
    pub recon_error_fro: f64,
    pub recon_error_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layers: Vec<LayerError>,
    /// Mean of the per-layer relative errors.
    pub recon_error_rel: f64,
    /// Relative error of the final model output.
    pub output_error_rel: f64,
}

/// Compares a pruned model against its dense original on `batch`. Layer `k`
/// is measured on the activations the pruned model feeds it.
pub fn evaluate(
    dense: &ModelCheckpoint,
    pruned: &ModelCheckpoint,
    batch: &CalibrationBatch,
) -> Result<EvalReport> {
    if dense.layers.len() != pruned.layers.len()
        || dense
            .layers
            .iter()
            .zip(&pruned.layers)
            .any(|(a, b)| a.weight.shape() != b.weight.shape())
    {
        return Err(Error::Shape("dense and pruned models differ in structure".into()));
    }
    check_batch(dense, batch)?;
    let mut x = batch.data().clone();
    let mut layers = Vec::with_capacity(dense.layers.len());
    for (d, p) in dense.layers.iter().zip(&pruned.layers) {
        let (fro, rel) = recon_error(&d.weight, &p.weight, &x)?;
        let zeros = p.weight.count_zeros() as f64 / p.weight.as_slice().len() as f64;
        layers.push(LayerError {
            layer_name: d.name.clone(),
            achieved_sparsity: zeros,
            recon_error_fro: fro,
            recon_error_rel: rel,
        });
        x = layer_forward(&x, p)?;
    }
    let dense_out = forward(dense, batch)?;
    let output_error = dense_out.sub(&x)?.frobenius_norm() / dense_out.frobenius_norm().max(REL_EPS);
    let mean = layers.iter().map(|l| l.recon_error_rel).sum::<f64>() / layers.len().max(1) as f64;
    Ok(EvalReport {
        layers,
        recon_error_rel: mean,
        output_error_rel: output_error,
    })
}

/// `||X w' - X w||_2` where `w'` is `w` with the unkept entries zeroed.
pub fn row_zeroing_error(w_row: &[f64], kept: &[bool], x: &DenseMatrix) -> f64 {
    (0..x.rows())
        .map(|t| {
            let r = x.row(t);
            let d: f64 = (0..w_row.len()).filter(|&j| !kept[j]).map(|j| r[j] * w_row[j]).sum();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Exhaustively finds the `prune_count` entries of `w_row` whose removal
/// (without any weight update) changes `X w` the least. Ties resolve to the
/// lexicographically smallest pruned index set.
pub fn oracle_best_mask_row(w_row: &[f64], x: &DenseMatrix, prune_count: usize) -> Result<Vec<bool>> {
    let n = w_row.len();
    if n > ORACLE_MAX_INPUTS {
        return Err(Error::Argument(format!(
            "oracle enumerates at most {ORACLE_MAX_INPUTS} inputs, got {n}"
        )));
    }
    if x.cols() != n {
        return Err(Error::Shape(format!(
            "row has {n} entries, calibration has {} features",
            x.cols()
        )));
    }
    if prune_count > n {
        return Err(Error::Argument(format!(
            "cannot prune {prune_count} of {n} weights"
        )));
    }
    // ||X v_P||² = Σ_{a,b ∈ P} w_a w_b G_ab with G = XᵀX.
    let g = gram(x);
    let mut combo: Vec<usize> = (0..prune_count).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut err = 0.0;
        for &a in &combo {
            for &b in &combo {
                err += w_row[a] * w_row[b] * g.get(a, b);
            }
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, combo.clone()));
        }
        // Next combination in lexicographic order.
        let k = combo.len();
        let Some(pos) = (0..k).rev().find(|&i| combo[i] < n - k + i) else {
            break;
        };
        combo[pos] += 1;
        for i in pos + 1..k {
            combo[i] = combo[i - 1] + 1;
        }
    }
    let mut kept = vec![true; n];
    if let Some((_, set)) = best {
        for j in set {
            kept[j] = false;
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub report: PruneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Serialize)]
struct CsvRecord<'a> {
    config: &'a str,
    method: &'a str,
    grouping: String,
    target: String,
    update: String,
    layer_name: &'a str,
    achieved_sparsity: f64,
    recon_error_fro: f64,
    recon_error_rel: f64,
    metric_time_ms: f64,
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// One CSV record per (config, layer).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            let c = &row.report.config;
            for layer in &row.report.layers {
                w.serialize(CsvRecord {
                    config: &row.label,
                    method: c.metric.name(),
                    grouping: c.grouping.to_string(),
                    target: c.target.to_string(),
                    update: c.update.to_string(),
                    layer_name: &layer.layer_name,
                    achieved_sparsity: layer.achieved_sparsity,
                    recon_error_fro: layer.recon_error_fro,
                    recon_error_rel: layer.recon_error_rel,
                    metric_time_ms: layer.metric_time_ms,
                })
                .expect("in-memory CSV write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }

    pub fn without_timings(mut self) -> Self {
        for row in &mut self.rows {
            row.report = row.report.clone().without_timings();
        }
        self
    }
}

/// Runs every config on the same model and batch.
pub fn compare_methods(
    model: &ModelCheckpoint,
    batch: &CalibrationBatch,
    configs: &[(String, PruneConfig)],
) -> Result<ComparisonTable> {
    if configs.is_empty() {
        return Err(Error::Argument("compare needs at least one config".into()));
    }
    let rows = configs
        .iter()
        .map(|(label, cfg)| {
            let (_, report) = prune_model(model, batch, cfg)?;
            Ok(ComparisonRow {
                label: label.clone(),
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonTable { rows })
}

/// A config written with the same vocabulary as the `prune` command flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpec {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "ConfigSpec::default_method")]
    pub method: String,
    #[serde(default = "ConfigSpec::default_group")]
    pub group: String,
    #[serde(default)]
    pub sparsity: Option<f64>,
    #[serde(default)]
    pub nm: Option<String>,
    #[serde(default = "ConfigSpec::default_update")]
    pub update: String,
    #[serde(default = "ConfigSpec::default_lambda")]
    pub lambda: String,
    #[serde(default = "ConfigSpec::default_norm")]
    pub norm: String,
    #[serde(default)]
    pub seed: u64,
}

impl ConfigSpec {
    fn default_method() -> String {
        "wanda".into()
    }
    fn default_group() -> String {
        "per-output".into()
    }
    fn default_update() -> String {
        "none".into()
    }
    fn default_lambda() -> String {
        "auto".into()
    }
    fn default_norm() -> String {
        "l2".into()
    }

    pub fn to_config(&self) -> Result<PruneConfig> {
        let config_err = |e: Error| Error::Config(e.to_string());
        let lambda: Dampening = self.lambda.parse().map_err(config_err)?;
        let norm: NormKind = self.norm.parse().map_err(config_err)?;
        let metric = match self.method.as_str() {
            "magnitude" => PruneMetric::Magnitude,
            "wanda" => PruneMetric::Wanda { norm },
            "sparsegpt" => PruneMetric::SparseGpt { lambda },
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        };
        let target = match (self.sparsity, &self.nm) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either sparsity or nm, not both".into()))
            }
            (Some(s), None) => SparsityTarget::Ratio { s },
            (None, Some(nm)) => parse_nm(nm).map_err(config_err)?,
            (None, None) => return Err(Error::Config("one of sparsity or nm is required".into())),
        };
        let config = PruneConfig {
            metric,
            grouping: self.group.parse().map_err(config_err)?,
            target,
            update: self.update.parse().map_err(config_err)?,
            lambda,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses `N:M`.
pub fn parse_nm(s: &str) -> Result<SparsityTarget> {
    let parsed = s
        .split_once(':')
        .and_then(|(n, m)| Some((n.parse::<usize>().ok()?, m.parse::<usize>().ok()?)));
    match parsed {
        Some((n, m)) if m >= 1 && n <= m => Ok(SparsityTarget::StructuredNm { n, m }),
        _ => Err(Error::Argument(format!("expected N:M with N <= M, got `{s}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareFile {
    pub configs: Vec<ConfigSpec>,
}

impl CompareFile {
    pub fn parse(text: &str, path: &std::path::Path) -> Result<Vec<(String, PruneConfig)>> {
        // The file is user-written configuration, so any parse failure is a
        // configuration error rather than a corrupt artifact.
        let file: CompareFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        file.configs
            .iter()
            .map(|spec| {
                let cfg = spec.to_config()?;
                Ok((spec.label.clone().unwrap_or_else(|| cfg.label()), cfg))
            })
            .collect()
    }
}
