//! Command-line experiment runner.
//!
//! Subcommands: `gen-data`, `train`, `sweep`, `eval`, `export-ledgers`.
//! Every command is driven by a JSON config file; `--seed`, `--out` and
//! repeated `--set key=value` flags override individual fields before the
//! config is validated. Exit codes: 0 success, 1 config error, 2 numeric
//! divergence, 3 I/O error.

use crate::config::{
    execute_run, make_batch_source, prepare_data, write_run_outputs, RunConfig, RunSummary,
    LEDGERS_FILE, MODEL_BIN_FILE, MODEL_SIDECAR_FILE,
};
use crate::datagen::{export_classification_dataset, export_proposal_dataset};
use crate::error::{Error, Result};
use crate::losses::LossEvaluator;
use crate::telemetry::{evaluate, ledgers_to_csv, LedgerSet};
use crate::trainer::{replay, Model};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "eqlab", version, about = "Long-tailed classification loss laboratory")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed field.
    #[arg(long)]
    seed: Option<u64>,
    /// Override individual config fields by dotted path, e.g.
    /// `--set loss.gamma_ignore=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset files (binary features plus a JSON sidecar).
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Proposal batches to materialize (proposal datasets only).
        #[arg(long, default_value_t = 8)]
        batches: usize,
    },
    /// Train one run and write metrics, summary, ledgers and a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory; falls back to `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of a parameter grid and aggregate a CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON object mapping dotted config paths to value lists.
        #[arg(long)]
        grid: PathBuf,
        /// Output directory (one subdirectory per run plus sweep.csv).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Evaluate a checkpoint on the config's test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory holding model.bin / model.json.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay batches through a frozen checkpoint and export the ledgers.
    ExportLedgers {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory holding model.bin / model.json.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Batches to replay.
        #[arg(long, default_value_t = 200)]
        iters: u64,
        /// Output directory for ledgers.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses and runs the process command line; returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            out,
            batches,
        } => cmd_gen_data(&common, &out, batches),
        Command::Train { common, out } => cmd_train(&common, out.as_deref()).map(drop),
        Command::Sweep {
            common,
            grid,
            out,
            parallel,
        } => cmd_sweep(&common, &grid, &out, parallel),
        Command::Eval {
            common,
            checkpoint,
            out,
        } => cmd_eval(&common, &checkpoint, out.as_deref()),
        Command::ExportLedgers {
            common,
            checkpoint,
            iters,
            out,
        } => cmd_export_ledgers(&common, &checkpoint, iters, &out),
    }
}

fn load_json(path: &Path) -> Result<Value> {
    let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&doc)?)
}

/// Sets `value` at a dotted path, creating intermediate objects as needed.
pub fn set_dotted_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(Error::Config(format!("empty segment in path `{path}`")));
        }
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("path `{path}` descends into a non-object value"))
        })?;
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), new);
            return Ok(());
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one segment");
}

fn parse_override(kv: &str) -> Result<(&str, Value)> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
    // JSON literal when it parses, bare string otherwise.
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key, value))
}

fn apply_common_overrides(doc: &mut Value, common: &CommonArgs) -> Result<()> {
    for kv in &common.set {
        let (key, value) = parse_override(kv)?;
        set_dotted_path(doc, key, value)?;
    }
    if let Some(seed) = common.seed {
        set_dotted_path(doc, "seed", Value::from(seed))?;
    }
    Ok(())
}

/// Loads a run config with all command-line overrides applied.
fn load_run_config(common: &CommonArgs, out: Option<&Path>) -> Result<RunConfig> {
    let mut doc = load_json(&common.config)?;
    apply_common_overrides(&mut doc, common)?;
    if let Some(out) = out {
        set_dotted_path(&mut doc, "out_dir", Value::from(out.display().to_string()))?;
    }
    let config: RunConfig = serde_json::from_value(doc)?;
    config.validate()?;
    Ok(config)
}

fn cmd_gen_data(common: &CommonArgs, out: &Path, batches: usize) -> Result<()> {
    // Accept either a full run config or a bare dataset config.
    let mut doc = load_json(&common.config)?;
    let is_run_config = doc.get("dataset").is_some();
    if is_run_config {
        apply_common_overrides(&mut doc, common)?;
    } else {
        let mut wrapped = serde_json::json!({ "seed": 0, "dataset": doc });
        apply_common_overrides(&mut wrapped, common)?;
        doc = wrapped;
    }
    let seed = doc["seed"].as_u64().unwrap_or(0);
    let dataset: crate::config::DatasetConfig =
        serde_json::from_value(doc["dataset"].clone())?;
    dataset.validate()?;
    match &dataset {
        crate::config::DatasetConfig::Classification {
            profile,
            feature_dim,
            noise_sigma,
            test_per_class,
        } => {
            let sidecar = export_classification_dataset(
                profile,
                *feature_dim,
                *noise_sigma,
                *test_per_class,
                seed,
                out,
            )?;
            println!(
                "wrote {} ({} classes, {} train samples, counts {}..{})",
                out.display(),
                sidecar.counts.len(),
                sidecar.counts.iter().sum::<u64>(),
                sidecar.counts.iter().max().unwrap(),
                sidecar.counts.iter().min().unwrap(),
            );
        }
        crate::config::DatasetConfig::Proposals {
            profile,
            stream,
            test_per_class,
        } => {
            let sidecar =
                export_proposal_dataset(profile, stream, *test_per_class, seed, batches, out)?;
            println!(
                "wrote {} ({} proposal batches of {})",
                out.display(),
                sidecar.num_batches,
                sidecar.stream.batch_size
            );
        }
        crate::config::DatasetConfig::File { path } => {
            return Err(Error::Config(format!(
                "config points at an existing dataset ({}), nothing to generate",
                path.display()
            )));
        }
    }
    Ok(())
}

fn cmd_train(common: &CommonArgs, out: Option<&Path>) -> Result<RunSummary> {
    let config = load_run_config(common, out)?;
    let dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (use --out or out_dir)".into()))?;
    let artifacts = execute_run(&config)?;
    let summary = write_run_outputs(&dir, &config, &artifacts)?;
    println!(
        "{} seed {}: final loss {:.4}, top1 {}, rare top1 {} -> {}",
        config.loss.name(),
        summary.seed,
        summary.final_loss.unwrap_or(f64::NAN),
        opt_cell(summary.top1),
        opt_cell(summary.rare_top1),
        dir.display()
    );
    Ok(summary)
}

struct SweepRow {
    run: usize,
    params: Vec<(String, Value)>,
    outcome: std::result::Result<RunSummary, String>,
}

fn value_to_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn sweep_csv(keys: &[String], rows: &[SweepRow]) -> String {
    let mut csv = String::from("run");
    for k in keys {
        let _ = write!(csv, ",{k}");
    }
    csv.push_str(",status,error,top1,top5,rare_top1,common_top1,frequent_top1,lambda,tail_ratio\n");
    for row in rows {
        let _ = write!(csv, "{}", row.run);
        for (_, v) in &row.params {
            let _ = write!(csv, ",{}", value_to_cell(v));
        }
        match &row.outcome {
            Ok(s) => {
                let _ = write!(
                    csv,
                    ",ok,,{},{},{},{},{},{},{}",
                    opt_cell(s.top1),
                    opt_cell(s.top5),
                    opt_cell(s.rare_top1),
                    opt_cell(s.common_top1),
                    opt_cell(s.frequent_top1),
                    opt_cell(s.lambda),
                    opt_cell(s.tail_ratio),
                );
            }
            Err(msg) => {
                let _ = write!(csv, ",error,{},,,,,,,", msg.replace([',', '\n'], ";"));
            }
        }
        csv.push('\n');
    }
    csv
}

/// Expands the grid into the cross product of its value lists, in the
/// sorted key order of the JSON object.
fn expand_grid(grid: &Value) -> Result<(Vec<String>, Vec<Vec<Value>>)> {
    let map = grid
        .as_object()
        .ok_or_else(|| Error::Config("grid must be a JSON object".into()))?;
    if map.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    let mut keys = Vec::new();
    let mut lists: Vec<Vec<Value>> = Vec::new();
    for (k, v) in map {
        let list = v
            .as_array()
            .ok_or_else(|| Error::Config(format!("grid entry `{k}` must be an array")))?;
        if list.is_empty() {
            return Err(Error::Config(format!("grid entry `{k}` is empty")));
        }
        keys.push(k.clone());
        lists.push(list.clone());
    }
    let mut combos: Vec<Vec<Value>> = vec![vec![]];
    for list in &lists {
        let mut next = Vec::with_capacity(combos.len() * list.len());
        for combo in &combos {
            for v in list {
                let mut c = combo.clone();
                c.push(v.clone());
                next.push(c);
            }
        }
        combos = next;
    }
    Ok((keys, combos))
}

fn run_sweep_combo(
    base: &Value,
    keys: &[String],
    combo: &[Value],
    run: usize,
    out: &Path,
) -> SweepRow {
    let params: Vec<(String, Value)> = keys.iter().cloned().zip(combo.iter().cloned()).collect();
    let outcome = (|| -> Result<RunSummary> {
        let mut doc = base.clone();
        for (k, v) in &params {
            set_dotted_path(&mut doc, k, v.clone())?;
        }
        let dir = out.join(format!("run_{run:03}"));
        set_dotted_path(&mut doc, "out_dir", Value::from(dir.display().to_string()))?;
        let config: RunConfig = serde_json::from_value(doc)?;
        config.validate()?;
        let artifacts = execute_run(&config)?;
        write_run_outputs(&dir, &config, &artifacts)
    })();
    SweepRow {
        run,
        params,
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

fn cmd_sweep(common: &CommonArgs, grid_path: &Path, out: &Path, parallel: usize) -> Result<()> {
    let mut base = load_json(&common.config)?;
    apply_common_overrides(&mut base, common)?;
    let grid = load_json(grid_path)?;
    let (keys, combos) = expand_grid(&grid)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let workers = parallel.max(1).min(combos.len());
    let rows: Vec<SweepRow> = if workers <= 1 {
        combos
            .iter()
            .enumerate()
            .map(|(i, combo)| run_sweep_combo(&base, &keys, combo, i, out))
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<SweepRow>>> =
            combos.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= combos.len() {
                        break;
                    }
                    let row = run_sweep_combo(&base, &keys, &combos[i], i, out);
                    *slots[i].lock().unwrap() = Some(row);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("every combo ran"))
            .collect()
    };

    let csv = sweep_csv(&keys, &rows);
    let csv_path = out.join("sweep.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} runs ({} failed) -> {}",
        rows.len(),
        failed,
        csv_path.display()
    );
    Ok(())
}

fn load_checkpoint(dir: &Path) -> Result<Model> {
    Model::load(&dir.join(MODEL_BIN_FILE), &dir.join(MODEL_SIDECAR_FILE))
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let config = load_run_config(common, None)?;
    let model = load_checkpoint(checkpoint)?;
    let data = prepare_data(&config.dataset, config.seed)?;
    let report = evaluate(&model, &data.test, &data.groups, &config.k_list)?;
    let doc = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => std::fs::write(path, doc).map_err(|e| Error::io(path, e))?,
        None => println!("{doc}"),
    }
    Ok(())
}

fn cmd_export_ledgers(common: &CommonArgs, checkpoint: &Path, iters: u64, out: &Path) -> Result<()> {
    let config = load_run_config(common, None)?;
    let model = load_checkpoint(checkpoint)?;
    let data = prepare_data(&config.dataset, config.seed)?;
    let table = config
        .loss
        .requires_table()
        .then(|| data.table.clone());
    let loss = LossEvaluator::new(config.loss.clone(), table)?;
    let mut ledgers = LedgerSet::new(data.table.num_categories());
    let mut source = make_batch_source(&config, &data, config.seed)?;
    replay(&model, &mut source, &loss, iters, config.seed, &mut ledgers)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = ledgers_to_csv(&ledgers, &data.table, &data.groups)?;
    let path = out.join(LEDGERS_FILE);
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    println!("replayed {iters} batches -> {}", path.display());
    Ok(())
}
