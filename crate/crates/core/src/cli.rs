//! The `wanda` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure, 4 I/O or file-format error.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model_store::{load_calibration, load_checkpoint, save_calibration, save_checkpoint};
use crate::numerics::NormKind;
use crate::pipeline::{
    compare_methods, evaluate, oracle_best_mask_row, prune_model, row_zeroing_error,
    CompareFile, ConfigSpec,
};
use crate::prune::{prune_quota, select_mask, GroupingScheme, MetricScorer, PruneMetric};
use crate::reconstruct::Dampening;
use crate::synth::{self, gen_outlier_batch, gen_random_model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Threshold `check-reduction` must beat to exit 0.
pub const REDUCTION_TOL: f64 = 1e-6;
/// Widest row the `oracle` command will enumerate.
pub const CLI_ORACLE_MAX_INPUTS: usize = 12;

#[derive(Debug, Parser)]
#[command(name = "wanda", version, about = "One-shot pruning of layered linear models")]
struct Cli {
    /// Worker threads for row-parallel work; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random layered model checkpoint.
    GenModel {
        /// Layer widths, input first, e.g. 64,64,64.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a calibration batch with outlier feature columns.
    GenCalib {
        #[arg(long, default_value_t = 512)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = synth::DEFAULT_OUTLIER_FRAC)]
        outlier_frac: f64,
        #[arg(long, default_value_t = synth::DEFAULT_OUTLIER_SCALE)]
        outlier_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune a checkpoint and write the pruned model and a JSON report.
    Prune(PruneArgs),
    /// Print reconstruction errors of a pruned model against its dense original.
    Eval {
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run every config in a JSON file on the same model and batch.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        no_timings: bool,
    },
    /// Check that the diagonal second-order score equals the squared Wanda score.
    CheckReduction {
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 64)]
        cols: usize,
        #[arg(long, default_value_t = 256)]
        tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare per-row pruning errors against the exhaustive optimum.
    Oracle {
        #[arg(long)]
        cin: usize,
        #[arg(long, default_value_t = 32)]
        rows: usize,
        #[arg(long, default_value_t = 0.5)]
        sparsity: f64,
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        #[arg(long, default_value_t = synth::DEFAULT_OUTLIER_FRAC)]
        outlier_frac: f64,
        #[arg(long, default_value_t = synth::DEFAULT_OUTLIER_SCALE)]
        outlier_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value = "wanda", value_parser = ["wanda", "magnitude", "sparsegpt"])]
    method: String,
    /// per-output, per-layer, per-input, in:K or out:K.
    #[arg(long, default_value = "per-output")]
    group: String,
    #[arg(long, conflicts_with = "nm", required_unless_present = "nm")]
    sparsity: Option<f64>,
    /// Structured N:M pattern such as 2:4.
    #[arg(long)]
    nm: Option<String>,
    /// none, sequential or iterative:K.
    #[arg(long, default_value = "none")]
    update: String,
    /// Hessian dampening: auto or a non-negative number.
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, default_value = "l2", value_parser = ["l1", "l2", "linf"])]
    norm: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also write a one-row-per-layer CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Record timings as zero so reports are reproducible byte for byte.
    #[arg(long)]
    no_timings: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::Argument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start {n} threads: {e}")))
            .and_then(|pool| pool.install(|| execute(cli.command))),
        None => execute(cli.command),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenModel { dims, seed, out } => {
            let model = gen_random_model(&dims, seed)?;
            save_checkpoint(&model, &out)?;
            println!("wrote {} layers to {}", model.layers.len(), out.display());
        }
        Command::GenCalib {
            tokens,
            dim,
            outlier_frac,
            outlier_scale,
            seed,
            out,
        } => {
            let batch = gen_outlier_batch(tokens, dim, outlier_frac, outlier_scale, seed)?;
            save_calibration(&batch, &out)?;
            println!("wrote {tokens}x{dim} calibration batch to {}", out.display());
        }
        Command::Prune(args) => cmd_prune(args)?,
        Command::Eval {
            dense,
            pruned,
            calib,
            json,
        } => {
            let report = evaluate(
                &load_checkpoint(&dense)?,
                &load_checkpoint(&pruned)?,
                &load_calibration(&calib)?,
            )?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                println!("layer\tsparsity\trecon_error_fro\trecon_error_rel");
                for l in &report.layers {
                    println!(
                        "{}\t{:.6}\t{:e}\t{:e}",
                        l.layer_name, l.achieved_sparsity, l.recon_error_fro, l.recon_error_rel
                    );
                }
                println!("mean recon_error_rel\t{:e}", report.recon_error_rel);
                println!("output_error_rel\t{:e}", report.output_error_rel);
            }
        }
        Command::Compare {
            model,
            calib,
            config,
            report,
            csv,
            no_timings,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::Io {
                path: config.clone(),
                source: e,
            })?;
            let configs = CompareFile::parse(&text, &config)?;
            let mut table =
                compare_methods(&load_checkpoint(&model)?, &load_calibration(&calib)?, &configs)?;
            if no_timings {
                table = table.without_timings();
            }
            if let Some(path) = report {
                write_file(&path, table.to_json())?;
            }
            match csv {
                Some(path) => write_file(&path, table.to_csv())?,
                None => print!("{}", table.to_csv()),
            }
            for row in &table.rows {
                eprintln!(
                    "{}: mean recon_error_rel {:e}",
                    row.label, row.report.totals.recon_error_rel
                );
            }
        }
        Command::CheckReduction {
            rows,
            cols,
            tokens,
            seed,
        } => {
            let w = gen_random_model(&[cols, rows], seed)?.layers.remove(0).weight;
            let x = gen_outlier_batch(
                tokens,
                cols,
                synth::DEFAULT_OUTLIER_FRAC,
                synth::DEFAULT_OUTLIER_SCALE,
                seed,
            )?;
            let deviation = crate::prune::verify_reduction(&w, x.data())?;
            println!("max relative deviation: {deviation:e}");
            return Ok(if deviation < REDUCTION_TOL {
                EXIT_OK
            } else {
                EXIT_NUMERIC
            });
        }
        Command::Oracle {
            cin,
            rows,
            sparsity,
            tokens,
            outlier_frac,
            outlier_scale,
            seed,
        } => cmd_oracle(cin, rows, sparsity, tokens, outlier_frac, outlier_scale, seed)?,
    }
    Ok(EXIT_OK)
}

fn cmd_prune(args: PruneArgs) -> Result<()> {
    let spec = ConfigSpec {
        label: None,
        method: args.method,
        group: args.group,
        sparsity: args.sparsity,
        nm: args.nm,
        update: args.update,
        lambda: args.lambda,
        norm: args.norm,
        seed: args.seed,
    };
    let config = spec.to_config()?;
    let model = load_checkpoint(&args.model)?;
    let batch = load_calibration(&args.calib)?;
    let (pruned, mut report) = prune_model(&model, &batch, &config)?;
    if args.no_timings {
        report = report.without_timings();
    }
    save_checkpoint(&pruned, &args.out)?;
    write_file(&args.report, report.to_json())?;
    if let Some(path) = &args.csv {
        let table = crate::pipeline::ComparisonTable {
            rows: vec![crate::pipeline::ComparisonRow {
                label: report.label.clone(),
                report: report.clone(),
            }],
        };
        write_file(path, table.to_csv())?;
    }
    for l in &report.layers {
        println!(
            "{}\tsparsity {:.6}\trecon_error_rel {:e}",
            l.layer_name, l.achieved_sparsity, l.recon_error_rel
        );
    }
    Ok(())
}

fn cmd_oracle(
    cin: usize,
    rows: usize,
    sparsity: f64,
    tokens: usize,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: u64,
) -> Result<()> {
    if cin == 0 || cin > CLI_ORACLE_MAX_INPUTS {
        return Err(Error::Argument(format!(
            "--cin must lie in 1..={CLI_ORACLE_MAX_INPUTS}, got {cin}"
        )));
    }
    if rows == 0 {
        return Err(Error::Argument("--rows must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Argument(format!("--sparsity {sparsity} outside [0, 1)")));
    }
    let w = gen_random_model(&[cin, rows], seed)?.layers.remove(0).weight;
    let batch = gen_outlier_batch(tokens, cin, outlier_frac, outlier_scale, seed)?;
    let x = batch.data();
    let prune_count = prune_quota(cin, sparsity);

    let oracle_err: Vec<f64> = (0..rows)
        .map(|i| {
            let kept = oracle_best_mask_row(w.row(i), x, prune_count)?;
            Ok(row_zeroing_error(w.row(i), &kept, x))
        })
        .collect::<Result<_>>()?;
    let oracle_mean = oracle_err.iter().sum::<f64>() / rows as f64;
    println!("prune_count {prune_count} of {cin} per row, {rows} rows, {tokens} tokens");
    println!("method\tmean_error\tratio_to_oracle\toptimal_rows");
    println!("oracle\t{oracle_mean:e}\t1.000000\t{rows}");

    let metrics = [
        PruneMetric::Magnitude,
        PruneMetric::Wanda { norm: NormKind::L2 },
        PruneMetric::SparseGpt {
            lambda: Dampening::Auto,
        },
    ];
    for metric in metrics {
        let scores = MetricScorer::new(&metric, x)?.score(&w)?;
        let mask = select_mask(&scores, GroupingScheme::PerOutput, sparsity)?;
        let errs: Vec<f64> = (0..rows)
            .map(|i| row_zeroing_error(w.row(i), mask.row(i), x))
            .collect();
        let mean = errs.iter().sum::<f64>() / rows as f64;
        let optimal = errs
            .iter()
            .zip(&oracle_err)
            .filter(|(e, o)| **e <= **o * (1.0 + 1e-9) + 1e-12)
            .count();
        println!(
            "{}\t{mean:e}\t{:.6}\t{optimal}",
            metric.name(),
            mean / oracle_mean.max(f64::MIN_POSITIVE)
        );
    }
    Ok(())
}
