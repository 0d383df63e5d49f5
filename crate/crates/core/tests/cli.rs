use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn wanda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wanda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

/// Writes a 16-16-8 model and a 128-token batch into `dir`.
fn fixture(dir: &TempDir) -> (String, String) {
    let model = path(dir, "model");
    let calib = path(dir, "calib.bin");
    assert_eq!(code(&wanda(&["gen-model", "--dims", "16,16,8", "--seed", "1", "--out", &model])), 0);
    assert_eq!(
        code(&wanda(&["gen-calib", "--tokens", "128", "--dim", "16", "--seed", "1", "--out", &calib])),
        0
    );
    (model, calib)
}

fn read_json(p: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn same_dir_contents(a: &Path, b: &Path) -> bool {
    ["manifest.json", "weights.bin"]
        .iter()
        .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap())
}

#[test]
fn gen_model_is_reproducible_and_validates_dims() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    for out in [&a, &b] {
        assert_eq!(code(&wanda(&["gen-model", "--dims", "8,4", "--seed", "9", "--out", out])), 0);
    }
    assert!(same_dir_contents(Path::new(&a), Path::new(&b)));
    assert_eq!(code(&wanda(&["gen-model", "--dims", "8", "--out", &path(&dir, "c")])), 2);
    assert_eq!(code(&wanda(&["gen-model", "--dims", "8,0", "--out", &path(&dir, "c")])), 2);
}

#[test]
fn gen_calib_validates_outlier_fraction() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "c.bin");
    assert_eq!(code(&wanda(&["gen-calib", "--outlier-frac", "1.5", "--out", &out])), 2);
    assert_eq!(code(&wanda(&["gen-calib", "--tokens", "1", "--dim", "8", "--out", &out])), 0);
    assert_eq!(fs::metadata(&out).unwrap().len(), 16 + 8 * 4);
}

#[test]
fn prune_writes_model_report_and_csv() {
    let dir = TempDir::new().unwrap();
    let (model, calib) = fixture(&dir);
    let (out, report, csv) = (path(&dir, "p"), path(&dir, "r.json"), path(&dir, "r.csv"));
    let run = wanda(&[
        "prune", "--model", &model, "--calib", &calib, "--sparsity", "0.5", "--out", &out,
        "--report", &report, "--csv", &csv,
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let json = read_json(&report);
    let layers = json["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    for l in layers {
        assert_eq!(l["achieved_sparsity"], 0.5);
        assert!(l["recon_error_rel"].as_f64().unwrap() > 0.0);
    }
    let csv_text = fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("config,method,grouping,target,update,layer_name,"));
    assert_eq!(csv_text.lines().count(), 3);

    let eval = wanda(&["eval", "--dense", &model, "--pruned", &out, "--calib", &calib, "--json"]);
    assert_eq!(code(&eval), 0);
    let ev: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(ev["output_error_rel"].as_f64().unwrap() > 0.0);
}

#[test]
fn prune_rejects_bad_argument_combinations() {
    let dir = TempDir::new().unwrap();
    let (model, calib) = fixture(&dir);
    let (out, report) = (path(&dir, "p"), path(&dir, "r.json"));
    let base = ["prune", "--model", &model, "--calib", &calib, "--out", &out, "--report", &report];
    let with = |extra: &[&str]| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(extra);
        code(&wanda(&args))
    };
    assert_eq!(with(&["--nm", "2:4", "--group", "per-layer"]), 2);
    assert_eq!(with(&["--nm", "2:4", "--sparsity", "0.5"]), 2);
    assert_eq!(with(&[]), 2);
    assert_eq!(with(&["--sparsity", "1.0"]), 2);
    assert_eq!(with(&["--sparsity", "0.5", "--group", "diagonal"]), 2);
    assert_eq!(with(&["--sparsity", "0.5", "--group", "in:0"]), 2);
    assert_eq!(with(&["--nm", "2:3"]), 2);
    assert_eq!(with(&["--sparsity", "0.5", "--method", "obs"]), 2);
    assert_eq!(with(&["--sparsity", "0.5", "--update", "iterative:8", "--group", "per-layer"]), 2);
    assert_eq!(with(&["--nm", "2:4"]), 0);
    assert_eq!(with(&["--sparsity", "0.5", "--update", "iterative:8", "--group", "in:8"]), 0);
}

#[test]
fn second_order_without_dampening_fails_on_rank_deficient_batch() {
    let dir = TempDir::new().unwrap();
    let model = path(&dir, "m");
    let calib = path(&dir, "c.bin");
    wanda(&["gen-model", "--dims", "16,8", "--out", &model]);
    wanda(&["gen-calib", "--tokens", "4", "--dim", "16", "--out", &calib]);
    let args = |lambda: &'static str| {
        vec![
            "prune".to_owned(), "--model".into(), model.clone(), "--calib".into(), calib.clone(),
            "--method".into(), "sparsegpt".into(), "--sparsity".into(), "0.5".into(),
            "--lambda".into(), lambda.into(), "--out".into(), path(&dir, "p"),
            "--report".into(), path(&dir, "r.json"),
        ]
    };
    let run = |lambda| {
        let a = args(lambda);
        code(&wanda(&a.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    assert_eq!(run("0"), 3);
    assert_eq!(run("auto"), 0);
    assert_eq!(run("-1"), 2);
}

#[test]
fn missing_or_corrupt_inputs_exit_with_io_code() {
    let dir = TempDir::new().unwrap();
    let (model, calib) = fixture(&dir);
    let (out, report) = (path(&dir, "p"), path(&dir, "r.json"));
    let missing = path(&dir, "nope");
    let run = |m: &str, c: &str| {
        code(&wanda(&[
            "prune", "--model", m, "--calib", c, "--sparsity", "0.5", "--out", &out, "--report", &report,
        ]))
    };
    assert_eq!(run(&missing, &calib), 4);
    assert_eq!(run(&model, &missing), 4);
    let short = path(&dir, "short.bin");
    let bytes = fs::read(&calib).unwrap();
    fs::write(&short, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(run(&model, &short), 4);

    let narrow = path(&dir, "narrow.bin");
    wanda(&["gen-calib", "--tokens", "8", "--dim", "12", "--out", &narrow]);
    assert_eq!(run(&model, &narrow), 2);
}

#[test]
fn eval_of_a_model_against_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let (model, calib) = fixture(&dir);
    let eval = wanda(&["eval", "--dense", &model, "--pruned", &model, "--calib", &calib, "--json"]);
    assert_eq!(code(&eval), 0);
    let ev: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(ev["output_error_rel"], 0.0);
    assert_eq!(ev["recon_error_rel"], 0.0);
}

#[test]
fn compare_emits_one_block_per_config() {
    let dir = TempDir::new().unwrap();
    let model = path(&dir, "m");
    let calib = path(&dir, "c.bin");
    wanda(&["gen-model", "--dims", "32,32,32", "--seed", "2", "--out", &model]);
    wanda(&["gen-calib", "--tokens", "256", "--dim", "32", "--seed", "2", "--out", &calib]);
    let config = path(&dir, "configs.json");
    fs::write(
        &config,
        r#"{"configs": [
            {"label": "mag", "method": "magnitude", "sparsity": 0.5},
            {"label": "wanda", "method": "wanda", "sparsity": 0.5}
        ]}"#,
    )
    .unwrap();
    let (report, csv) = (path(&dir, "cmp.json"), path(&dir, "cmp.csv"));
    let run = wanda(&[
        "compare", "--model", &model, "--calib", &calib, "--config", &config, "--report", &report,
        "--csv", &csv, "--no-timings",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let json = read_json(&report);
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let err = |k: usize| rows[k]["report"]["totals"]["recon_error_rel"].as_f64().unwrap();
    assert!(err(1) < err(0));
    let csv_text = fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 1 + 2 * 2);
    assert!(csv_text.lines().skip(1).all(|l| l.ends_with(",0.0")));

    fs::write(&config, r#"{"configs": [{"method": "wanda", "sparsity": 0.5, "bogus": 1}]}"#).unwrap();
    let bad = wanda(&["compare", "--model", &model, "--calib", &calib, "--config", &config]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn check_reduction_and_oracle_commands() {
    let ok = wanda(&["check-reduction"]);
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("max relative deviation"));

    assert_eq!(code(&wanda(&["oracle", "--cin", "13"])), 2);
    let table = wanda(&["oracle", "--cin", "8", "--rows", "6"]);
    assert_eq!(code(&table), 0);
    let text = String::from_utf8_lossy(&table.stdout);
    for method in ["oracle", "magnitude", "wanda", "sparsegpt"] {
        assert!(text.lines().any(|l| l.starts_with(method)), "{text}");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let (model, calib) = fixture(&dir);
    let run = |threads: &str| {
        let (out, report) = (path(&dir, &format!("p{threads}")), path(&dir, &format!("r{threads}.json")));
        let r = wanda(&[
            "--threads", threads, "prune", "--model", &model, "--calib", &calib, "--method",
            "sparsegpt", "--update", "sequential", "--sparsity", "0.6", "--out", &out, "--report",
            &report, "--no-timings",
        ]);
        assert_eq!(code(&r), 0);
        (out, fs::read(&report).unwrap())
    };
    let (p1, r1) = run("1");
    let (p8, r8) = run("8");
    assert!(same_dir_contents(Path::new(&p1), Path::new(&p8)));
    assert_eq!(r1, r8);
    assert_eq!(code(&wanda(&["--threads", "0", "check-reduction"])), 2);
}
