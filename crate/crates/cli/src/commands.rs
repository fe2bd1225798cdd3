use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nrkg::eval::{
    cross_validate_kg, embeddings_tsv, fold_seed, link_prediction_eval, random_baselines, regression_metrics, sweep,
    sweep_csv, CvOptions, FoldReport, Prediction,
};
use nrkg::kg::{build_cross_modal_kg, ingest_records, make_folds, write_csv, CrossModalKg, Record};
use nrkg::synth::{generate, SyntheticSpec};
use nrkg::training::{load_checkpoint, predict, stream_rng, train, Checkpoint, TrainConfig};
use serde_json::json;

use crate::config::{self, RunOptions};
use crate::output::OutDir;
use crate::{Cli, Command};

/// A missing or contradictory option; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| {
        UsageError(format!(
            "--{flag} is required (or `{}` in the config)",
            flag.replace('-', "_")
        ))
        .into()
    })
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

#[derive(Default)]
struct Flags {
    records: Option<PathBuf>,
    graph: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    folds: Option<usize>,
    fold: Option<usize>,
    link_relation: Option<String>,
    relation: Option<String>,
    baseline_trials: Option<usize>,
    threads: Option<usize>,
    axis: Option<crate::AxisArg>,
    values: Option<Vec<f64>>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::BuildKg { .. } => "build-kg",
            Command::Train { .. } => "train",
            Command::Cv { .. } => "cv",
            Command::Sweep { .. } => "sweep",
            Command::Predict { .. } => "predict",
            Command::Linkpred { .. } => "linkpred",
            Command::Export { .. } => "export",
        }
    }

    fn flags(&self) -> Flags {
        match self.clone() {
            Command::Gen => Flags::default(),
            Command::BuildKg { records } => Flags {
                records,
                ..Default::default()
            },
            Command::Train { records, folds, fold } => Flags {
                records,
                folds,
                fold,
                ..Default::default()
            },
            Command::Cv {
                records,
                folds,
                link_relation,
                baseline_trials,
                threads,
            } => Flags {
                records,
                folds,
                link_relation,
                baseline_trials,
                threads,
                ..Default::default()
            },
            Command::Sweep {
                records,
                axis,
                values,
                folds,
                threads,
            } => Flags {
                records,
                axis,
                values,
                folds,
                threads,
                ..Default::default()
            },
            Command::Predict {
                checkpoint,
                graph,
                records,
            } => Flags {
                checkpoint,
                graph,
                records,
                ..Default::default()
            },
            Command::Linkpred {
                checkpoint,
                graph,
                relation,
                baseline_trials,
            } => Flags {
                checkpoint,
                graph,
                relation,
                baseline_trials,
                ..Default::default()
            },
            Command::Export { checkpoint, graph } => Flags {
                checkpoint,
                graph,
                ..Default::default()
            },
        }
    }
}

/// Folds the subcommand's flags into the run options.
fn apply_flags(run: &mut RunOptions, command: &Command) {
    let Flags {
        records,
        graph,
        checkpoint,
        folds,
        fold,
        link_relation,
        relation,
        baseline_trials,
        threads,
        axis,
        values,
    } = command.flags();
    set_opt(&mut run.records, records);
    set_opt(&mut run.graph, graph);
    set_opt(&mut run.checkpoint, checkpoint);
    set(&mut run.folds, folds);
    set(&mut run.fold, fold);
    set_opt(&mut run.link_relation, link_relation);
    set_opt(&mut run.relation, relation);
    set(&mut run.baseline_trials, baseline_trials);
    set(&mut run.threads, threads);
    set_opt(&mut run.axis, axis.map(Into::into));
    set_opt(&mut run.values, values);
}

/// Loads a graph from a `build-kg` dump (`.json`) or a records file.
fn load_graph(path: &Path) -> Result<CrossModalKg> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(CrossModalKg::from_json(&text)?);
    }
    Ok(build_cross_modal_kg(&read_records(path)?)?)
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    ingest_records(path).with_context(|| format!("loading records from {}", path.display()))
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    if matches!(cli.command, Command::Gen) {
        return gen(&common);
    }
    let mut table = config::read_table(common.config.as_deref())?;
    config::apply_sets(&mut table, &common.sets)?;
    let (mut train_cfg, mut run) = config::split(table)?;
    set(&mut train_cfg.seed, common.seed);
    set_opt(&mut run.out, common.out.clone());
    apply_flags(&mut run, &cli.command);

    let out_path = required(&run.out, "out")?;
    let mut out = OutDir::create(&out_path)?;
    if let Some(c) = &common.config {
        out.hash_input(c)?;
    }
    let rendered = config::render(&train_cfg, &run)?;
    out.write("config.toml", &rendered)?;

    match &cli.command {
        Command::Gen => unreachable!("handled above"),
        Command::BuildKg { .. } => build_kg(&run, &mut out)?,
        Command::Train { .. } => train_fold(&train_cfg, &run, &mut out)?,
        Command::Cv { .. } => cv(&train_cfg, &run, &mut out)?,
        Command::Sweep { .. } => sweep_cmd(&train_cfg, &run, &mut out)?,
        Command::Predict { .. } => predict_cmd(&run, &mut out)?,
        Command::Linkpred { .. } => linkpred(&run, &mut out)?,
        Command::Export { .. } => export(&run, &mut out)?,
    }
    let echo = json!({ "train": train_cfg, "run": run });
    out.finish(cli.command.name(), train_cfg.seed, echo)
}

fn gen(common: &crate::Common) -> Result<()> {
    let mut table = config::read_table(common.config.as_deref())?;
    config::apply_sets(&mut table, &common.sets)?;
    let mut spec: SyntheticSpec = config::parse(table, "synthetic spec")?;
    set(&mut spec.seed, common.seed);
    let out_path = required(&common.out, "out")?;
    let data = generate(&spec)?;
    let mut out = OutDir::create(&out_path)?;
    if let Some(c) = &common.config {
        out.hash_input(c)?;
    }
    let mut csv = Vec::new();
    write_csv(&data.records, &mut csv)?;
    out.write("records.csv", csv)?;
    out.write("ground_truth.json", pretty(&data.truth)?)?;
    println!(
        "{} records, token share {:.3}, snr {:.2}",
        data.records.len(),
        data.truth.realized_token_share,
        data.truth.realized_snr
    );
    out.finish("gen", spec.seed, serde_json::to_value(&spec)?)
}

fn records_graph(run: &RunOptions, out: &mut OutDir) -> Result<CrossModalKg> {
    let path = required(&run.records, "records")?;
    out.hash_input(&path)?;
    Ok(build_cross_modal_kg(&read_records(&path)?)?)
}

fn build_kg(run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let kg = records_graph(run, out)?;
    out.write("kg.json", kg.to_json())?;
    println!(
        "{} proxies, {} semantic nodes, {} relations, {} triples",
        kg.proxy_count(),
        kg.semantic_count(),
        kg.relations().len(),
        kg.triples().len()
    );
    Ok(())
}

fn train_fold(config: &TrainConfig, run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let kg = records_graph(run, out)?;
    let plan = make_folds(&kg, run.folds, config.seed)?;
    let roles = plan
        .folds
        .get(run.fold)
        .ok_or_else(|| UsageError(format!("--fold {} is out of range for {} folds", run.fold, run.folds)))?;
    // the same seed derivation as cross-validation
    let seed = fold_seed(config.seed, run.fold);
    let ckpt = train(&kg, roles, &TrainConfig { seed, ..config.clone() })?;

    let records: Vec<Record> = roles.test.iter().map(|&id| kg.record(id)).collect();
    let preds = predict(&ckpt, &kg, &records)?;
    let truth: Vec<f64> = records
        .iter()
        .map(|r| r.target.expect("folds hold labeled proxies"))
        .collect();
    let metrics = regression_metrics(&preds, &truth)?;
    let report = FoldReport {
        fold: run.fold,
        seed,
        n_train: roles.train.len(),
        n_validation: roles.validation.len(),
        n_test: roles.test.len(),
        best_epoch: ckpt.best_epoch,
        epochs_run: ckpt.history.len(),
        metrics,
        link: None,
        baselines: None,
        predictions: records
            .iter()
            .zip(&preds)
            .map(|(r, &p)| Prediction {
                id: r.id.clone(),
                truth: r.target.expect("labeled"),
                prediction: p,
            })
            .collect(),
    };

    let mut history = csv::Writer::from_writer(Vec::new());
    for e in &ckpt.history {
        history.serialize(e)?;
    }
    out.write("checkpoint.json", ckpt.to_json())?;
    out.write("history.csv", history.into_inner()?)?;
    out.write("report.json", pretty(&report)?)?;
    println!(
        "fold {}: best epoch {} of {}, test MSE {:.3}, R2 {:.3}",
        run.fold,
        ckpt.best_epoch,
        ckpt.history.len(),
        metrics.mse,
        metrics.r2
    );
    Ok(())
}

fn cv_options(run: &RunOptions) -> CvOptions {
    CvOptions {
        folds: run.folds,
        link_relation: run.link_relation.clone(),
        baseline_trials: run.baseline_trials,
        threads: run.threads,
    }
}

fn cv(config: &TrainConfig, run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let kg = records_graph(run, out)?;
    let outcome = cross_validate_kg(&kg, config, &cv_options(run))?;
    out.write("report.json", outcome.report.to_json() + "\n")?;
    out.write("report.csv", outcome.report.to_csv())?;
    for (i, ckpt) in outcome.checkpoints.iter().enumerate() {
        out.write(&format!("checkpoints/fold_{i}.json"), ckpt.to_json())?;
    }
    print!("{}", outcome.report.to_table());
    Ok(())
}

fn sweep_cmd(config: &TrainConfig, run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let axis = required(&run.axis, "axis")?;
    let values = required(&run.values, "values")?;
    let kg = records_graph(run, out)?;
    let rows = sweep(&kg, config, &cv_options(run), axis, &values)?;
    let table = sweep_csv(axis, &rows);
    out.write("sweep.csv", &table)?;
    out.write("sweep.json", pretty(&rows)?)?;
    print!("{table}");
    Ok(())
}

fn trained(run: &RunOptions, out: &mut OutDir) -> Result<(Checkpoint, CrossModalKg)> {
    let ckpt_path = required(&run.checkpoint, "checkpoint")?;
    let graph_path = run
        .graph
        .clone()
        .or_else(|| run.records.clone())
        .ok_or_else(|| UsageError("--graph is required (or `graph` in the config)".into()))?;
    out.hash_input(&ckpt_path)?;
    out.hash_input(&graph_path)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    Ok((ckpt, load_graph(&graph_path)?))
}

fn predict_cmd(run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let ckpt_path = required(&run.checkpoint, "checkpoint")?;
    let graph_path = required(&run.graph, "graph")?;
    let records_path = required(&run.records, "records")?;
    for p in [&ckpt_path, &graph_path, &records_path] {
        out.hash_input(p)?;
    }
    let ckpt = load_checkpoint(&ckpt_path)?;
    let kg = load_graph(&graph_path)?;
    let records = read_records(&records_path)?;
    let preds = predict(&ckpt, &kg, &records)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "prediction"])?;
    for (r, p) in records.iter().zip(&preds) {
        w.write_record([r.id.as_str(), &p.to_string()])?;
    }
    let bytes = w.into_inner()?;
    print!("{}", String::from_utf8_lossy(&bytes));
    out.write("predictions.csv", bytes)
}

fn linkpred(run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let relation = required(&run.relation, "relation")?;
    let (ckpt, kg) = trained(run, out)?;
    let train_ids: std::collections::BTreeSet<&str> = ckpt.train_ids.iter().map(String::as_str).collect();
    let (train, held_out): (Vec<_>, Vec<_>) = kg
        .proxy_ids()
        .partition(|&p| train_ids.contains(kg.node(p).label.as_str()));
    if held_out.is_empty() {
        return Err(UsageError("the graph holds no records outside the checkpoint's training set".into()).into());
    }
    let model = link_prediction_eval(&ckpt, &kg, &held_out, &relation)?;
    let mut rng = stream_rng(ckpt.config.seed, 7);
    let baselines = random_baselines(&kg, &train, &held_out, &relation, &mut rng, run.baseline_trials)?;
    out.write(
        "linkpred.json",
        pretty(&json!({ "relation": relation, "model": model, "baselines": baselines }))?,
    )?;
    println!(
        "{} queries: MRR {:.3} (distribution {:.3}, uniform {:.3}), Hits@1 {:.3}",
        model.queries, model.mrr, baselines.distribution.mrr, baselines.uniform.mrr, model.hits_at_1
    );
    Ok(())
}

fn export(run: &RunOptions, out: &mut OutDir) -> Result<()> {
    let (ckpt, kg) = trained(run, out)?;
    out.write("embeddings.tsv", embeddings_tsv(&ckpt, &kg)?)?;
    println!("{} embeddings of dimension {}", kg.node_count(), ckpt.model.dims.hidden);
    Ok(())
}
