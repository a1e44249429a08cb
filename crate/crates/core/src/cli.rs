//! Command-line front end: `simulate`, `train`, `impute`, `aggregate` and
//! `diagnose`. Every command writes into `--out DIR` together with a
//! `manifest.json` describing inputs, settings and outputs. Failures print a
//! single JSON line on stderr and exit nonzero.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::boosting::{load_model, predict, save_model, BoostedModel};
use crate::data::{
    cost_ratio_to_alpha, load_csv, parse_cost_ratio, write_rows, CsvSchema, TrainConfig,
};
use crate::diagnostics::{
    baseline_influence_for, partial_dependence_with_points, relative_influence, write_decile_table,
    write_empirical_table, write_pd_table, DEFAULT_PD_POINTS,
};
use crate::error::{Error, Result};
use crate::selection::train_with_selection;
use crate::synth::{generate, SynthSpec};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "quantboost",
    version,
    about = "Cost-sensitive quantile boosting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic train/test pair with known conditional quantiles.
    Simulate(SimulateArgs),
    /// Fit a model, choosing the number of trees by cross-validation.
    Train(TrainArgs),
    /// Score rows with a saved model.
    Impute(ImputeArgs),
    /// Combine observed and imputed values into per-stratum totals.
    Aggregate(AggregateArgs),
    /// Partial dependence and relative influence tables for a saved model.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    train_rows: usize,
    #[arg(long, default_value_t = 5000)]
    test_rows: usize,
    #[arg(long, default_value_t = 3)]
    predictors: usize,
    #[arg(long, default_value_t = crate::data::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    count_mode: bool,
    /// Quantile levels written as oracle columns in the test file.
    #[arg(long = "oracle-alpha", default_values_t = [0.75])]
    oracle_alpha: Vec<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated predictor columns; defaults to every unclaimed column.
    #[arg(long, value_delimiter = ',')]
    predictors: Option<Vec<String>>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    weights_column: Option<String>,
    #[arg(long)]
    stratum_column: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    response: String,
    #[arg(long, conflicts_with = "cost_ratio")]
    alpha: Option<f64>,
    /// Cost of underestimating relative to overestimating, as `U:V`.
    #[arg(long)]
    cost_ratio: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_trees: Option<usize>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    min_node: Option<usize>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    id_column: Option<String>,
    /// Copied through to the predictions for later aggregation.
    #[arg(long)]
    stratum_column: Option<String>,
    /// Use only the first N trees (0 gives the initial constant).
    #[arg(long)]
    n_trees: Option<usize>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Output of `impute`, with a stratum column.
    #[arg(long)]
    predictions: PathBuf,
    /// Observed values for sampled rows: `row_id`, stratum and value columns.
    #[arg(long)]
    observed: Option<PathBuf>,
    #[arg(long, default_value = "observed")]
    observed_column: String,
    #[arg(long, default_value = "stratum")]
    stratum_column: String,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Training CSV the model was fit on.
    #[arg(long)]
    data: PathBuf,
    /// Needed for the permutation baseline.
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    weights_column: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PD_POINTS)]
    pd_points: usize,
    #[arg(long, default_value_t = 50)]
    baseline_replicates: usize,
    #[arg(long)]
    skip_baseline: bool,
    /// Cap on trees per baseline refit; defaults to the model's own setting.
    #[arg(long)]
    baseline_max_trees: Option<usize>,
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report("usage", first);
            return 2;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Impute(a) => impute(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            report(e.kind(), &e.to_string());
            1
        }
    }
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

struct OutDir {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    /// Registers `name` as an output and returns its full path.
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn finish(
        mut self,
        command: &'static str,
        seed: Option<u64>,
        config: Value,
        inputs: &[&Path],
    ) -> Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| digest(p))
            .collect::<Result<Vec<_>>>()?;
        self.outputs.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    for &alpha in &a.oracle_alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "oracle alpha must lie in (0, 1), got {alpha}"
            )));
        }
    }
    let base = SynthSpec {
        n_rows: a.train_rows,
        n_predictors: a.predictors,
        seed: a.seed,
        count_mode: a.count_mode,
        ..Default::default()
    };
    let (train, _) = generate(&base)?;
    let (test, oracle) = generate(&SynthSpec {
        n_rows: a.test_rows,
        stream: 1,
        ..base
    })?;

    let mut out = OutDir::create(&a.out)?;
    let train_path = out.path("train.csv");
    train.save_csv(&train_path)?;

    let oracle_names: Vec<String> = a
        .oracle_alpha
        .iter()
        .map(|al| format!("oracle_q{al}"))
        .collect();
    let mut header: Vec<&str> = vec!["row_id"];
    header.extend(test.predictor_names().iter().map(String::as_str));
    header.push("y");
    header.extend(oracle_names.iter().map(String::as_str));
    let y = test.require_response()?;
    let rows = (0..test.n_rows())
        .map(|i| {
            let x = test.row(i);
            let mut r = vec![test.row_ids()[i].clone()];
            r.extend(x.iter().map(f64::to_string));
            r.push(y[i].to_string());
            r.extend(
                a.oracle_alpha
                    .iter()
                    .map(|&al| oracle.quantile(&x, al).to_string()),
            );
            r
        })
        .collect();
    out.write_with("test.csv", |w| write_rows(w, &header, rows))?;

    let config = json!({
        "train_rows": a.train_rows,
        "test_rows": a.test_rows,
        "predictors": a.predictors,
        "count_mode": a.count_mode,
        "oracle_alpha": a.oracle_alpha,
        "response": "y",
        "id_column": "row_id",
    });
    out.finish("simulate", Some(a.seed), config, &[])
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let alpha = match (a.alpha, &a.cost_ratio) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "--alpha and --cost-ratio are mutually exclusive".into(),
            ))
        }
        (Some(alpha), None) => alpha,
        (None, Some(ratio)) => {
            let (u, v) = parse_cost_ratio(ratio)?;
            cost_ratio_to_alpha(u, v)?
        }
        (None, None) => TrainConfig::default().alpha,
    };
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        alpha,
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        max_trees: a.max_trees.unwrap_or(d.max_trees),
        splits_per_tree: a.splits.unwrap_or(d.splits_per_tree),
        min_node_size: a.min_node.unwrap_or(d.min_node_size),
        subsample_fraction: a.subsample.unwrap_or(d.subsample_fraction),
        cv_folds: a.folds.unwrap_or(d.cv_folds),
        seed: a.seed.unwrap_or(d.seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn data_schema(d: &DataArgs, response: Option<String>) -> CsvSchema {
    CsvSchema {
        response,
        predictors: d.predictors.clone(),
        weight: d.weights_column.clone(),
        id: d.id_column.clone(),
        stratum: d.stratum_column.clone(),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let data = load_csv(
        &a.data.data,
        &data_schema(&a.data, Some(a.response.clone())),
    )?;
    let (model, cv) = train_with_selection(&data, &cfg)?;

    let mut out = OutDir::create(&a.out)?;
    save_model(&model, out.path("model.json"))?;
    out.write_with("cv_curve.csv", |w| cv.write_table(w))?;

    let final_deviance = model
        .training
        .deviance_trace
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    let config = json!({
        "train": cfg,
        "cost_ratio": a.cost_ratio,
        "response": a.response,
        "predictors": model.predictor_names,
        "id_column": a.data.id_column,
        "weights_column": a.data.weights_column,
        "stratum_column": a.data.stratum_column,
        "best_iterations": cv.best_iterations,
        "training_deviance": final_deviance,
    });
    out.finish("train", Some(cfg.seed), config, &[&a.data.data])?;
    println!(
        "best_iterations={} training_deviance={}",
        cv.best_iterations, final_deviance
    );
    Ok(())
}

fn impute(a: ImputeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let schema = CsvSchema {
        response: None,
        predictors: Some(model.predictor_names.clone()),
        weight: None,
        id: a.id_column.clone(),
        stratum: a.stratum_column.clone(),
    };
    let data = load_csv(&a.data, &schema)?;
    let values = predict(&model, &data, a.n_trees)?;

    let mut header = vec!["row_id", "imputed_value"];
    if data.stratum().is_some() {
        header.push("stratum");
    }
    let rows = (0..data.n_rows())
        .map(|i| {
            let mut r = vec![data.row_ids()[i].clone(), values[i].to_string()];
            if let Some(s) = data.stratum() {
                r.push(s[i].clone());
            }
            r
        })
        .collect();
    let mut out = OutDir::create(&a.out)?;
    out.write_with("predictions.csv", |w| write_rows(w, &header, rows))?;

    let config = json!({
        "n_trees": a.n_trees.unwrap_or(model.n_trees()),
        "alpha": model.alpha,
        "id_column": a.id_column,
        "stratum_column": a.stratum_column,
    });
    out.finish("impute", None, config, &[&a.model, &a.data])
}

/// `(row_id, stratum, value)` records from a headed CSV.
fn read_values(
    path: &Path,
    value_col: &str,
    stratum_col: &str,
) -> Result<Vec<(String, String, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let (id_i, s_i, v_i) = (find("row_id")?, find(stratum_col)?, find(value_col)?);
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        let raw = cell(v_i);
        let v = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumeric {
                row: r + 1,
                column: value_col.to_string(),
                value: raw.to_string(),
            })?;
        rows.push((cell(id_i).to_string(), cell(s_i).to_string(), v));
    }
    Ok(rows)
}

#[derive(Default)]
struct Totals {
    observed: Vec<f64>,
    imputed: Vec<f64>,
}

/// Sum of values sorted by value, so totals do not depend on input row order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let imputed = read_values(&a.predictions, "imputed_value", &a.stratum_column)?;
    let observed = match &a.observed {
        Some(p) => read_values(p, &a.observed_column, &a.stratum_column)?,
        None => Vec::new(),
    };

    let mut imputed_ids = HashSet::new();
    for (id, _, _) in &imputed {
        if !imputed_ids.insert(id.as_str()) {
            return Err(Error::DuplicateRowId(id.clone()));
        }
    }
    let mut observed_ids = HashSet::new();
    for (id, _, _) in &observed {
        if !observed_ids.insert(id.as_str()) {
            return Err(Error::DuplicateRowId(id.clone()));
        }
    }
    let mut overlap: Vec<&&str> = observed_ids.intersection(&imputed_ids).collect();
    overlap.sort();
    if let Some(id) = overlap.first() {
        return Err(Error::OverlappingRowId(id.to_string()));
    }

    let mut strata: BTreeMap<String, Totals> = BTreeMap::new();
    let mut all = Totals::default();
    for (_, s, v) in &observed {
        strata.entry(s.clone()).or_default().observed.push(*v);
        all.observed.push(*v);
    }
    for (_, s, v) in &imputed {
        strata.entry(s.clone()).or_default().imputed.push(*v);
        all.imputed.push(*v);
    }

    let line = |level: &str, name: &str, t: &mut Totals| {
        let o = ordered_sum(&mut t.observed);
        let i = ordered_sum(&mut t.imputed);
        vec![
            level.to_string(),
            name.to_string(),
            t.observed.len().to_string(),
            t.imputed.len().to_string(),
            o.to_string(),
            i.to_string(),
            (o + i).to_string(),
        ]
    };
    let mut rows: Vec<Vec<String>> = strata
        .iter_mut()
        .map(|(s, t)| line("stratum", s, t))
        .collect();
    rows.push(line("grand", "", &mut all));

    let header = [
        "level",
        "stratum",
        "n_observed",
        "n_imputed",
        "observed_total",
        "imputed_total",
        "total",
    ];
    let mut out = OutDir::create(&a.out)?;
    out.write_with("totals.csv", |w| write_rows(w, &header, rows))?;

    let config = json!({
        "observed_column": a.observed_column,
        "stratum_column": a.stratum_column,
    });
    let mut inputs: Vec<&Path> = vec![&a.predictions];
    if let Some(p) = &a.observed {
        inputs.push(p);
    }
    out.finish("aggregate", None, config, &inputs)
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let model: BoostedModel = load_model(&a.model)?;
    let schema = CsvSchema {
        response: a.response.clone(),
        predictors: Some(model.predictor_names.clone()),
        weight: a.weights_column.clone(),
        id: a.id_column.clone(),
        stratum: None,
    };
    let data = load_csv(&a.data, &schema)?;

    let grids = model
        .predictor_names
        .iter()
        .map(|name| partial_dependence_with_points(&model, name, &data, a.pd_points))
        .collect::<Result<Vec<_>>>()?;

    let mut out = OutDir::create(&a.out)?;
    out.write_with("pd.csv", |w| write_pd_table(w, &grids))?;
    out.write_with("deciles.csv", |w| write_decile_table(w, &grids))?;

    let mut cfg = model.training.config.clone();
    if a.skip_baseline {
        let ri = relative_influence(&model, None)?;
        out.write_with("influence.csv", |w| write_empirical_table(w, &ri))?;
    } else {
        if a.response.is_none() {
            return Err(Error::InvalidConfig(
                "--response is required unless --skip-baseline is given".into(),
            ));
        }
        if let Some(t) = a.baseline_max_trees {
            cfg.max_trees = t;
        }
        let report = baseline_influence_for(&model, &data, &cfg, a.baseline_replicates)?;
        out.write_with("influence.csv", |w| report.write_table(w))?;
        out.write_with("baseline_samples.csv", |w| report.write_samples(w))?;
    }

    let config = json!({
        "pd_points": a.pd_points,
        "skip_baseline": a.skip_baseline,
        "baseline_replicates": (!a.skip_baseline).then_some(a.baseline_replicates),
        "baseline_config": (!a.skip_baseline).then_some(&cfg),
        "response": a.response,
        "id_column": a.id_column,
        "weights_column": a.weights_column,
    });
    out.finish("diagnose", Some(cfg.seed), config, &[&a.model, &a.data])
}
