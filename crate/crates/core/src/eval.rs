//! Metrics, cross-validation, link-prediction scoring with random
//! baselines, hyperparameter sweeps and embedding export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::kg::{build_cross_modal_kg, make_folds, CrossModalKg, FoldPlan, NodeId, NodeKind, Record};
use crate::math::{Tape, Tensor};
use crate::projection::{embed_semantic, triple_score, DictionaryKey};
use crate::training::{checkpoint_view, graft_records, predict_view, stream_rng, train, Checkpoint, TrainConfig};

/// Environment variable capping how many folds train at once.
pub const THREADS_ENV: &str = "NRKG_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MSE, MAE, RMSE and R² (about the truth mean).
pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(NrkgError::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(NrkgError::Evaluation(format!(
            "{} values are too few for R²",
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(NrkgError::DegenerateVariance("truth values are all equal".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let mse = ss_res / n;
    Ok(RegressionMetrics {
        mse,
        mae: pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        rmse: mse.sqrt(),
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        Self { mean, std }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits_at_1: f64,
    pub queries: usize,
}

/// Metrics from 1-based ranks.
pub fn rank_metrics(ranks: &[usize]) -> Result<LinkMetrics> {
    if ranks.is_empty() {
        return Err(NrkgError::Evaluation("no ranking queries".into()));
    }
    let n = ranks.len() as f64;
    Ok(LinkMetrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        mr: ranks.iter().sum::<usize>() as f64 / n,
        hits_at_1: ranks.iter().filter(|&&r| r == 1).count() as f64 / n,
        queries: ranks.len(),
    })
}

/// One held-out proxy and the tokens it truly links to.
#[derive(Clone, Debug, PartialEq)]
struct LinkQuery {
    proxy: NodeId,
    truth: BTreeSet<NodeId>,
}

/// Semantic heads of `relation` anywhere in the graph, by node id.
fn candidates(kg: &CrossModalKg, relation: &str) -> Result<(usize, Vec<NodeId>)> {
    let rel = kg
        .relation_id(relation)
        .ok_or_else(|| NrkgError::Lookup(format!("relation {relation:?}")))?;
    let cands: BTreeSet<NodeId> = kg
        .triples()
        .iter()
        .filter(|t| t.relation == rel)
        .map(|t| t.head)
        .collect();
    if cands.is_empty() {
        return Err(NrkgError::Evaluation(format!(
            "relation {relation:?} has no candidates"
        )));
    }
    Ok((rel.0, cands.into_iter().collect()))
}

fn queries(kg: &CrossModalKg, relation: usize, proxies: &[NodeId]) -> Vec<LinkQuery> {
    proxies
        .iter()
        .filter_map(|&p| {
            let truth: BTreeSet<NodeId> = kg
                .triples()
                .iter()
                .filter(|t| t.tail == p && t.relation.0 == relation)
                .map(|t| t.head)
                .collect();
            (!truth.is_empty()).then_some(LinkQuery { proxy: p, truth })
        })
        .collect()
}

/// Ranks candidates for held-out proxies by `|e_c + r - e_m|`, where `e_m` is
/// the projected (pre-GCN) embedding; one query per true link, with the
/// proxy's other true links filtered out. Ties go to the lower node id.
pub fn link_prediction_eval(
    ckpt: &Checkpoint,
    kg: &CrossModalKg,
    held_out: &[NodeId],
    relation: &str,
) -> Result<LinkMetrics> {
    let (rel, cands) = candidates(kg, relation)?;
    let model = &ckpt.model;
    let r = embed_semantic(&model.dictionary, &model.params, DictionaryKey::Relation(rel))?;
    let entity: Vec<Tensor> = cands
        .iter()
        .map(|&c| {
            let s = kg.semantic_index(c).expect("candidates are semantic");
            embed_semantic(&model.dictionary, &model.params, DictionaryKey::Entity(s))
        })
        .collect::<Result<_>>()?;
    let qs = queries(kg, rel, held_out);
    let mut ranks = Vec::new();
    for q in &qs {
        let feats = Tensor::matrix(
            1,
            kg.feature_dim(),
            kg.node(q.proxy).features.clone().unwrap_or_default(),
        )?;
        let mut tape = Tape::new();
        let e = model.npl.embed(&mut tape, &model.params, feats)?;
        let e_m = tape.value(e).values().to_vec();
        let scores: Vec<f64> = entity
            .iter()
            .map(|h| triple_score(h.values(), r.values(), &e_m))
            .collect();
        for (ti, _) in cands.iter().enumerate().filter(|(_, c)| q.truth.contains(c)) {
            let better = cands
                .iter()
                .enumerate()
                .filter(|(ci, c)| {
                    !q.truth.contains(c) && (scores[*ci] < scores[ti] || (scores[*ci] == scores[ti] && *ci < ti))
                })
                .count();
            ranks.push(better + 1);
        }
    }
    rank_metrics(&ranks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub uniform: LinkMetrics,
    pub distribution: LinkMetrics,
    /// Standard error of the uniform MRR across trials.
    pub uniform_mrr_stderr: f64,
    /// Closed form `H_c / c` averaged over the queries.
    pub uniform_expected_mrr: f64,
    pub trials: usize,
}

fn harmonic(c: usize) -> f64 {
    (1..=c).map(|k| 1.0 / k as f64).sum()
}

/// Order drawn by repeatedly picking proportionally to weight; zero-weight
/// items follow in uniform random order.
fn weighted_order<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let mut rest: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] <= 0.0).collect();
    let mut out = Vec::with_capacity(weights.len());
    while !pool.is_empty() {
        let total: f64 = pool.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (j, &i) in pool.iter().enumerate() {
            if u < weights[i] {
                pick = j;
                break;
            }
            u -= weights[i];
        }
        out.push(pool.remove(pick));
    }
    rest.shuffle(rng);
    out.extend(rest);
    out
}

/// Rank of every true item in a candidate order, other true items filtered.
fn ranks_in_order(order: &[usize], truth: &BTreeSet<usize>) -> Vec<usize> {
    let mut ranks = Vec::new();
    let mut others = 0;
    for c in order {
        if truth.contains(c) {
            ranks.push(others + 1);
        } else {
            others += 1;
        }
    }
    ranks
}

/// Uniform and label-frequency random rankings of the same queries.
pub fn random_baselines<R: Rng + ?Sized>(
    kg: &CrossModalKg,
    train: &[NodeId],
    held_out: &[NodeId],
    relation: &str,
    rng: &mut R,
    trials: usize,
) -> Result<BaselineReport> {
    if trials == 0 {
        return Err(NrkgError::Usage("at least one trial is needed".into()));
    }
    let (rel, cands) = candidates(kg, relation)?;
    let index: BTreeMap<NodeId, usize> = cands.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut weights = vec![0.0; cands.len()];
    for q in queries(kg, rel, train) {
        q.truth.iter().for_each(|t| weights[index[t]] += 1.0);
    }
    let qs: Vec<BTreeSet<usize>> = queries(kg, rel, held_out)
        .into_iter()
        .map(|q| q.truth.iter().map(|t| index[t]).collect())
        .collect();
    let n_queries: usize = qs.iter().map(BTreeSet::len).sum();
    if n_queries == 0 {
        return Err(NrkgError::Evaluation("held-out proxies have no links to rank".into()));
    }
    let expected = qs
        .iter()
        .map(|t| {
            let c = cands.len() - t.len() + 1;
            t.len() as f64 * harmonic(c) / c as f64
        })
        .sum::<f64>()
        / n_queries as f64;

    let mut uniform = Vec::with_capacity(trials);
    let mut distribution = Vec::with_capacity(trials);
    let all: Vec<usize> = (0..cands.len()).collect();
    for _ in 0..trials {
        let mut u_ranks = Vec::with_capacity(n_queries);
        let mut d_ranks = Vec::with_capacity(n_queries);
        for truth in &qs {
            let mut order = all.clone();
            order.shuffle(rng);
            u_ranks.extend(ranks_in_order(&order, truth));
            d_ranks.extend(ranks_in_order(&weighted_order(&weights, rng), truth));
        }
        uniform.push(rank_metrics(&u_ranks)?);
        distribution.push(rank_metrics(&d_ranks)?);
    }
    let average = |ms: &[LinkMetrics]| LinkMetrics {
        mrr: ms.iter().map(|m| m.mrr).sum::<f64>() / ms.len() as f64,
        mr: ms.iter().map(|m| m.mr).sum::<f64>() / ms.len() as f64,
        hits_at_1: ms.iter().map(|m| m.hits_at_1).sum::<f64>() / ms.len() as f64,
        queries: n_queries,
    };
    let mrrs: Vec<f64> = uniform.iter().map(|m| m.mrr).collect();
    let spread = Summary::of(&mrrs).std;
    Ok(BaselineReport {
        uniform: average(&uniform),
        distribution: average(&distribution),
        uniform_mrr_stderr: spread / (trials as f64).sqrt(),
        uniform_expected_mrr: expected,
        trials,
    })
}

/// Options of a cross-validation run beyond the training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub folds: usize,
    /// Relation scored by link prediction on each test fold.
    pub link_relation: Option<String>,
    pub baseline_trials: usize,
    /// Fold parallelism; 0 reads the environment.
    pub threads: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 6,
            link_relation: None,
            baseline_trials: 100,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: f64,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: RegressionMetrics,
    pub link: Option<LinkMetrics>,
    pub baselines: Option<BaselineReport>,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: TrainConfig,
    pub options: CvOptions,
    pub folds: Vec<FoldReport>,
    pub mse: Summary,
    pub mae: Summary,
    pub rmse: Summary,
    pub r2: Summary,
    pub mrr: Option<Summary>,
    pub mr: Option<Summary>,
    pub hits_at_1: Option<Summary>,
    pub uniform_mrr: Option<Summary>,
    pub distribution_mrr: Option<Summary>,
}

pub struct CvOutcome {
    pub report: CvReport,
    pub checkpoints: Vec<Checkpoint>,
}

/// Seed of fold `fold`, derived so folds are independent of execution order.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    stream_rng(seed, 1000 + fold as u64).next_u64()
}

fn thread_count(requested: usize, jobs: usize) -> usize {
    let n = if requested > 0 {
        requested
    } else {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&n: &usize| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    n.clamp(1, jobs.max(1))
}

/// Runs `job(i)` for `0..n` on up to `threads` workers; results in index order.
fn parallel_map<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn run_fold(
    kg: &CrossModalKg,
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
    options: &CvOptions,
) -> Result<(FoldReport, Checkpoint)> {
    let roles = &plan.folds[fold];
    let seed = fold_seed(config.seed, fold);
    let cfg = TrainConfig { seed, ..config.clone() };
    let ckpt = train(kg, roles, &cfg)?;

    let records: Vec<Record> = roles.test.iter().map(|&id| kg.record(id)).collect();
    let base = checkpoint_view(&ckpt, kg)?;
    let (view, positions) = graft_records(&base, &records, 0.0, seed)?;
    let preds = predict_view(&ckpt, &view, &positions)?;
    let truth: Vec<f64> = records.iter().map(|r| r.target.expect("labeled proxies")).collect();
    let metrics = regression_metrics(&preds, &truth)?;

    let (link, baselines) = match &options.link_relation {
        Some(rel) => {
            let link = link_prediction_eval(&ckpt, kg, &roles.test, rel)?;
            let mut rng = stream_rng(seed, 7);
            let b = random_baselines(kg, &roles.train, &roles.test, rel, &mut rng, options.baseline_trials)?;
            (Some(link), Some(b))
        }
        None => (None, None),
    };
    let report = FoldReport {
        fold,
        seed,
        n_train: roles.train.len(),
        n_validation: roles.validation.len(),
        n_test: roles.test.len(),
        best_epoch: ckpt.best_epoch,
        epochs_run: ckpt.history.len(),
        metrics,
        link,
        baselines,
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
    Ok((report, ckpt))
}

/// k-fold cross-validation over a built graph.
pub fn cross_validate_kg(kg: &CrossModalKg, config: &TrainConfig, options: &CvOptions) -> Result<CvOutcome> {
    config.validate()?;
    let plan = make_folds(kg, options.folds, config.seed)?;
    let threads = thread_count(options.threads, plan.folds.len());
    let results = parallel_map(plan.folds.len(), threads, |i| run_fold(kg, &plan, i, config, options))?;
    let (folds, checkpoints): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let pick = |f: fn(&FoldReport) -> f64| Summary::of(&folds.iter().map(f).collect::<Vec<_>>());
    let has_link = folds.iter().all(|f| f.link.is_some());
    let link_pick = |f: fn(&FoldReport) -> f64| has_link.then(|| pick(f));
    let report = CvReport {
        config: config.clone(),
        options: options.clone(),
        mse: pick(|f| f.metrics.mse),
        mae: pick(|f| f.metrics.mae),
        rmse: pick(|f| f.metrics.rmse),
        r2: pick(|f| f.metrics.r2),
        mrr: link_pick(|f| f.link.expect("checked").mrr),
        mr: link_pick(|f| f.link.expect("checked").mr),
        hits_at_1: link_pick(|f| f.link.expect("checked").hits_at_1),
        uniform_mrr: link_pick(|f| f.baselines.as_ref().expect("checked").uniform.mrr),
        distribution_mrr: link_pick(|f| f.baselines.as_ref().expect("checked").distribution.mrr),
        folds,
    };
    Ok(CvOutcome { report, checkpoints })
}

/// Builds the graph from records, then cross-validates.
pub fn cross_validate(records: &[Record], config: &TrainConfig, options: &CvOptions) -> Result<CvOutcome> {
    cross_validate_kg(&build_cross_modal_kg(records)?, config, options)
}

impl CvReport {
    /// One row per fold, then a `mean ± std` row.
    pub fn to_csv(&self) -> String {
        let link = self.mrr.is_some();
        let mut out = String::from("fold,mse,mae,rmse,r2");
        if link {
            out.push_str(",mrr,mr,hits_at_1,uniform_mrr,distribution_mrr");
        }
        out.push('\n');
        for f in &self.folds {
            let m = &f.metrics;
            out.push_str(&format!("{},{},{},{},{}", f.fold, m.mse, m.mae, m.rmse, m.r2));
            if let (Some(l), Some(b)) = (&f.link, &f.baselines) {
                out.push_str(&format!(
                    ",{},{},{},{},{}",
                    l.mrr, l.mr, l.hits_at_1, b.uniform.mrr, b.distribution.mrr
                ));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "mean ± std,{},{},{},{}",
            self.mse, self.mae, self.rmse, self.r2
        ));
        if link {
            let s = |x: &Option<Summary>| x.expect("link summaries present").to_string();
            out.push_str(&format!(
                ",{},{},{},{},{}",
                s(&self.mrr),
                s(&self.mr),
                s(&self.hits_at_1),
                s(&self.uniform_mrr),
                s(&self.distribution_mrr)
            ));
        }
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![vec!["metric".to_string(), "mean ± std".to_string()]];
        let mut add = |name: &str, s: Option<Summary>| {
            if let Some(s) = s {
                rows.push(vec![name.to_string(), s.to_string()]);
            }
        };
        add("MSE", Some(self.mse));
        add("MAE", Some(self.mae));
        add("RMSE", Some(self.rmse));
        add("R2", Some(self.r2));
        add("MRR", self.mrr);
        add("MR", self.mr);
        add("Hits@1", self.hits_at_1);
        add("MRR uniform", self.uniform_mrr);
        add("MRR distribution", self.distribution_mrr);
        let w = rows.iter().map(|r| r[0].chars().count()).max().unwrap_or(0);
        rows.iter().map(|r| format!("{:<w$}  {}\n", r[0], r[1])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GammaA,
    GammaB,
    MaskFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::GammaA => "gamma_a",
            SweepAxis::GammaB => "gamma_b",
            SweepAxis::MaskFraction => "mask_fraction",
        }
    }

    pub fn apply(self, config: &TrainConfig, value: f64) -> TrainConfig {
        let mut c = config.clone();
        match self {
            SweepAxis::GammaA => c.gamma_a = value,
            SweepAxis::GammaB => c.gamma_b = value,
            SweepAxis::MaskFraction => c.mask_fraction = value,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mse: Summary,
    pub report: CvReport,
}

/// Cross-validates once per value of one hyperparameter.
pub fn sweep(
    kg: &CrossModalKg,
    config: &TrainConfig,
    options: &CvOptions,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(NrkgError::Usage("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let report = cross_validate_kg(kg, &axis.apply(config, v), options)?.report;
            Ok(SweepRow {
                value: v,
                mse: report.mse,
                report,
            })
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{},mse_mean,mse_std,mse\n", axis.name());
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.value, r.mse.mean, r.mse.std, r.mse));
    }
    out
}

/// Projected embedding of every node of `kg` as TSV, in node-id order.
pub fn embeddings_tsv(ckpt: &Checkpoint, kg: &CrossModalKg) -> Result<String> {
    let model = &ckpt.model;
    let h = model.dims.hidden;
    let mut out = String::from("node_id\tkind\tlabel");
    (0..h).for_each(|i| out.push_str(&format!("\te{i}")));
    out.push('\n');
    for (i, node) in kg.nodes().iter().enumerate() {
        let (kind, e) = match node.kind {
            NodeKind::Semantic => {
                let s = kg.semantic_index(NodeId(i)).expect("semantic node");
                (
                    "semantic",
                    embed_semantic(&model.dictionary, &model.params, DictionaryKey::Entity(s))?,
                )
            }
            NodeKind::Proxy => {
                let feats = Tensor::matrix(1, kg.feature_dim(), node.features.clone().unwrap_or_default())?;
                let mut tape = Tape::new();
                let v = model.npl.embed(&mut tape, &model.params, feats)?;
                ("proxy", tape.value(v).clone())
            }
        };
        out.push_str(&format!("{i}\t{kind}\t{}", node.label));
        e.values().iter().for_each(|x| out.push_str(&format!("\t{x}")));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(ckpt: &Checkpoint, kg: &CrossModalKg, path: &Path) -> Result<()> {
    std::fs::write(path, embeddings_tsv(ckpt, kg)?)?;
    Ok(())
}
