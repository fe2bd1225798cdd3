//! The training loop, its schedules, and inference on new records.

mod checkpoint;
mod config;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_FORMAT_VERSION};
pub use config::{LrSchedule, Reduction, TrainConfig, Variant};

use crate::error::{NrkgError, Result};
use crate::gnn::{loss_mse, total_loss};
use crate::kg::{
    mask_proxy_nodes, mask_semantic_edges, propagation_operator, CrossModalKg, FoldRoles, KgView, LocalTriple, Record,
};
use crate::math::{adam_step, backward_into, AdamHyper, AdamState, SparseMatrix, Tape, Tensor, Var};
use crate::model::{ModelDims, ModelParams};
use crate::projection::{loss_cll, loss_ppl, loss_ppl_attached, ppl_targets, project_nodes, sample_negatives};

// Independent RNG streams drawn from the one seed.
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const TAG_MASK_SALT: u64 = 0x7a67_6d61_736b;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Learning-rate schedule state.
#[derive(Clone, Debug, PartialEq)]
pub struct LrScheduler {
    initial: f64,
    gamma: f64,
    step: usize,
    schedule: LrSchedule,
    stale: usize,
    decays: i32,
}

impl LrScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            initial: config.lr,
            gamma: config.lr_decay_gamma,
            step: config.lr_decay_step,
            schedule: config.lr_schedule,
            stale: 0,
            decays: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial * self.gamma.powi(self.decays)
    }

    pub fn decays(&self) -> i32 {
        self.decays
    }

    /// Advances after an epoch (0-based) whose validation loss did or did not improve.
    pub fn end_epoch(&mut self, epoch: usize, improved: bool) {
        match self.schedule {
            LrSchedule::Plateau => {
                self.stale = if improved { 0 } else { self.stale + 1 };
                if self.stale >= self.step {
                    self.decays += 1;
                    self.stale = 0;
                }
            }
            LrSchedule::Step => {
                if (epoch + 1).is_multiple_of(self.step) {
                    self.decays += 1;
                }
            }
        }
    }
}

/// Patience counter on the validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub best: f64,
    pub stale: usize,
    pub patience: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            patience,
        }
    }

    /// Records a loss; true on strict improvement.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

/// Loss values of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_cll: f64,
    pub train_ppl: f64,
    pub validation_loss: f64,
    pub validation_mse: f64,
}

/// Component values of a total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub cll: f64,
    pub ppl: f64,
}

/// Everything needed to evaluate the loss on one view.
struct LossBatch {
    view: KgView,
    adjacency: Arc<SparseMatrix>,
    labeled: Vec<usize>,
    targets: Tensor,
    positives: Vec<LocalTriple>,
    ppl_nodes: Vec<usize>,
    /// Members of `ppl_nodes` with at least one incident triple.
    ppl_count: usize,
}

/// Drops `floor(fraction * tags)` of the records' tags, chosen under `seed`.
fn mask_record_tags(records: &[Record], fraction: f64, seed: u64) -> Vec<Record> {
    let mut slots: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| (0..r.tags.len()).map(move |j| (i, j)))
        .collect();
    let count = (fraction * slots.len() as f64).floor() as usize;
    if count == 0 {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TAG_MASK_SALT);
    slots.shuffle(&mut rng);
    let drop: BTreeSet<(usize, usize)> = slots[..count].iter().copied().collect();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| Record {
            tags: r
                .tags
                .iter()
                .enumerate()
                .filter(|(j, _)| !drop.contains(&(i, *j)))
                .map(|(_, t)| t.clone())
                .collect(),
            ..r.clone()
        })
        .collect()
}

/// Grafts records into a view after hiding `floor(mask_fraction * tags)` of
/// their tags. Records already in the view are not duplicated.
pub fn graft_records(view: &KgView, records: &[Record], mask_fraction: f64, seed: u64) -> Result<(KgView, Vec<usize>)> {
    let fresh: Vec<Record> = records
        .iter()
        .filter(|r| view.proxy_by_record(&r.id).is_none())
        .cloned()
        .collect();
    let masked = mask_record_tags(&fresh, mask_fraction, seed);
    let (out, _) = view.graft(&masked)?;
    let positions = records
        .iter()
        .map(|r| out.proxy_by_record(&r.id).expect("grafted above"))
        .collect();
    Ok((out, positions))
}

/// The view a fold trains on: held-out proxies removed, then semantic edges masked.
pub fn training_view(kg: &CrossModalKg, fold: &FoldRoles, config: &TrainConfig) -> Result<KgView> {
    let mut held_out: BTreeSet<_> = kg.proxy_ids().collect();
    for id in &fold.train {
        held_out.remove(id);
    }
    let view = mask_proxy_nodes(kg, &held_out)?;
    mask_semantic_edges(&view, config.mask_fraction, config.seed)
}

fn standardize(view: &KgView, labeled: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    let vals: Vec<f64> = labeled
        .iter()
        .map(|&p| (view.proxies()[p].target.expect("labeled") - mean) / std)
        .collect();
    Tensor::matrix(vals.len().max(1), 1, vals)
}

impl LossBatch {
    /// Loss over `proxies`; `all_triples` also scores triples not touching them.
    fn new(
        view: KgView,
        config: &TrainConfig,
        proxies: &[usize],
        all_triples: bool,
        mean: f64,
        std: f64,
    ) -> Result<Self> {
        let labeled: Vec<usize> = proxies
            .iter()
            .copied()
            .filter(|&p| view.proxies()[p].target.is_some())
            .collect();
        if labeled.is_empty() {
            return Err(NrkgError::EmptyBatch("no labeled proxies".into()));
        }
        let locals: BTreeSet<usize> = proxies.iter().map(|&p| view.proxy_local(p)).collect();
        let positives = view
            .triples()
            .iter()
            .filter(|t| all_triples || locals.contains(&t.tail))
            .copied()
            .collect();
        let targets = standardize(&view, &labeled, mean, std)?;
        let adjacency = Arc::new(propagation_operator(&view, config.gcn_directed));
        let ppl_count = locals.iter().filter(|&&m| view.incoming(m).next().is_some()).count();
        Ok(Self {
            ppl_nodes: locals.into_iter().collect(),
            ppl_count,
            view,
            adjacency,
            labeled,
            targets,
            positives,
        })
    }
}

/// Node representations fed to the decoder: GCN output, or the projection itself for the MLP variant.
fn encode(
    tape: &mut Tape,
    model: &ModelParams,
    view: &KgView,
    adjacency: &Arc<SparseMatrix>,
    variant: Variant,
) -> Result<(Var, Var)> {
    let nodes = project_nodes(tape, &model.params, &model.dictionary, &model.npl, view)?;
    let hidden = match variant {
        Variant::Gcn => model.gcn.forward(tape, &model.params, adjacency, nodes)?,
        Variant::Mlp => nodes,
    };
    Ok((nodes, hidden))
}

fn batch_loss(
    tape: &mut Tape,
    model: &ModelParams,
    batch: &LossBatch,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<(Var, LossParts)> {
    let (nodes, hidden) = encode(tape, model, &batch.view, &batch.adjacency, config.variant)?;
    let relations = model.dictionary.relations(tape, &model.params);

    let cll = if batch.positives.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let negatives = sample_negatives(&batch.view, &batch.positives, rng, config.negatives_per_positive)?;
        let l = loss_cll(tape, nodes, relations, &batch.positives, &negatives, config.margin)?;
        match config.aux_reduction {
            Reduction::Sum => l,
            Reduction::Mean => tape.scale(l, 1.0 / negatives.len() as f64),
        }
    };
    let ppl = if config.ppl_bidirectional {
        loss_ppl_attached(tape, &batch.view, nodes, relations, &batch.ppl_nodes)?
    } else {
        let targets = ppl_targets(
            &batch.view,
            tape.value(nodes),
            &model.params[model.dictionary.relation].value,
            &batch.ppl_nodes,
            config.ppl_estimator,
        )?;
        loss_ppl(tape, nodes, &targets)?
    };
    let ppl = match config.aux_reduction {
        Reduction::Sum => ppl,
        Reduction::Mean => tape.scale(ppl, 1.0 / batch.ppl_count.max(1) as f64),
    };

    let rows: Vec<usize> = batch.labeled.iter().map(|&p| batch.view.proxy_local(p)).collect();
    let h = tape.gather_rows(hidden, &rows)?;
    let pred = model.decoder.forward(tape, &model.params, h, rng, training)?;
    let mse = loss_mse(tape, pred, &batch.targets)?;
    let mse_term = if config.disable_regression {
        tape.scale(mse, 0.0)
    } else {
        mse
    };
    let total = total_loss(tape, mse_term, cll, ppl, config.gamma_a, config.gamma_b)?;
    let parts = LossParts {
        total: tape.scalar(total),
        mse: tape.scalar(mse),
        cll: tape.scalar(cll),
        ppl: tape.scalar(ppl),
    };
    Ok((total, parts))
}

/// The training objective over every proxy of `view`, targets standardized
/// by `(mean, std)`. Negatives and dropout masks come from `rng`.
pub fn view_objective(
    tape: &mut Tape,
    model: &ModelParams,
    view: &KgView,
    config: &TrainConfig,
    (mean, std): (f64, f64),
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<(Var, LossParts)> {
    let all: Vec<usize> = (0..view.proxy_count()).collect();
    let batch = LossBatch::new(view.clone(), config, &all, true, mean, std)?;
    batch_loss(tape, model, &batch, config, rng, training)
}

fn target_stats(view: &KgView) -> Result<(f64, f64)> {
    let ys: Vec<f64> = view.proxies().iter().filter_map(|p| p.target).collect();
    if ys.is_empty() {
        return Err(NrkgError::EmptyBatch("training fold has no labeled proxies".into()));
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let std = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
    // a single distinct label leaves nothing to scale
    Ok((mean, if std > 1e-12 { std } else { 1.0 }))
}

/// Trains one fold and returns the parameters of the best validation epoch.
pub fn train(kg: &CrossModalKg, fold: &FoldRoles, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    if fold.validation.is_empty() {
        return Err(NrkgError::Split("fold has no validation proxies".into()));
    }
    // the held-out proxies are gone before anything reads the graph
    let view = training_view(kg, fold, config)?;
    let (target_mean, target_std) = target_stats(&view)?;

    let val_records: Vec<Record> = fold.validation.iter().map(|&id| kg.record(id)).collect();
    // validation belongs to the training stage, so its tags are masked alike
    let (val_view, val_positions) = graft_records(&view, &val_records, config.mask_fraction, config.seed)?;
    let train_positions: Vec<usize> = (0..view.proxy_count()).collect();
    let train_batch = LossBatch::new(view, config, &train_positions, true, target_mean, target_std)?;
    let val_batch = LossBatch::new(val_view, config, &val_positions, false, target_mean, target_std)?;

    let dims = ModelDims {
        semantic_nodes: train_batch.view.semantic_count(),
        relations: train_batch.view.relation_count(),
        feature_dim: kg.feature_dim(),
        hidden: config.hidden,
        gcn_layers: match config.variant {
            Variant::Gcn => config.gcn_layers,
            Variant::Mlp => 0,
        },
        target_dim: 1,
    };
    let mut model = ModelParams::init(dims, config.dropout, &mut stream_rng(config.seed, STREAM_INIT))?;
    let mut train_rng = stream_rng(config.seed, STREAM_TRAIN);
    let mut val_rng = stream_rng(config.seed, STREAM_VALIDATION);
    let mut adam = AdamState::new(&model.params, AdamHyper::default());
    let mut scheduler = LrScheduler::new(config);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);

    let mut best = model.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        let lr = scheduler.lr();
        let mut tape = Tape::new();
        let (loss, parts) = batch_loss(&mut tape, &model, &train_batch, config, &mut train_rng, true)?;
        if !parts.total.is_finite() {
            return Err(NrkgError::Diverged {
                epoch,
                loss: parts.total,
            });
        }
        backward_into(&tape, loss, &mut model.params)?;
        adam_step(&mut adam, &mut model.params, lr);

        let mut tape = Tape::new();
        let (_, val) = batch_loss(&mut tape, &model, &val_batch, config, &mut val_rng, false)?;
        if !val.total.is_finite() {
            return Err(NrkgError::Diverged { epoch, loss: val.total });
        }
        history.push(EpochLog {
            epoch,
            lr,
            train_loss: parts.total,
            train_mse: parts.mse,
            train_cll: parts.cll,
            train_ppl: parts.ppl,
            validation_loss: val.total,
            validation_mse: val.mse,
        });
        let improved = stopper.observe(val.total);
        if improved {
            best_epoch = epoch;
            best.iter_mut()
                .zip(&model.params)
                .for_each(|(b, p)| b.clone_from(&p.value));
        }
        scheduler.end_epoch(epoch, improved);
        if stopper.should_stop() {
            break;
        }
    }

    for (p, b) in model.params.iter_mut().zip(best) {
        p.value = b;
        p.zero_grad();
    }
    Ok(Checkpoint {
        config: config.clone(),
        model,
        semantic_labels: train_batch.view.semantic_labels().to_vec(),
        relation_names: train_batch.view.relation_names().to_vec(),
        target_mean,
        target_std,
        train_ids: train_batch.view.proxies().iter().map(|p| p.record_id.clone()).collect(),
        masked_edges: train_batch.view.masked_edges().to_vec(),
        best_epoch,
        best_validation_loss: stopper.best,
        history,
        rng_word_pos: train_rng.get_word_pos(),
    })
}

/// Rebuilds the exact view the checkpoint was trained on.
pub fn checkpoint_view(ckpt: &Checkpoint, kg: &CrossModalKg) -> Result<KgView> {
    let train: BTreeSet<&str> = ckpt.train_ids.iter().map(String::as_str).collect();
    let held_out = kg
        .proxy_ids()
        .filter(|&id| !train.contains(kg.node(id).label.as_str()))
        .collect();
    let view = mask_proxy_nodes(kg, &held_out)?.remove_edges(&ckpt.masked_edges);
    if view.proxy_count() != ckpt.train_ids.len() {
        return Err(NrkgError::Checkpoint(format!(
            "graph holds {} of the {} training records",
            view.proxy_count(),
            ckpt.train_ids.len()
        )));
    }
    if view.semantic_labels() != ckpt.semantic_labels.as_slice()
        || view.relation_names() != ckpt.relation_names.as_slice()
    {
        return Err(NrkgError::Checkpoint(
            "graph vocabulary differs from the checkpoint".into(),
        ));
    }
    Ok(view)
}

/// Eval-mode predictions (original target scale) for proxies of a view.
pub fn predict_view(ckpt: &Checkpoint, view: &KgView, proxies: &[usize]) -> Result<Vec<f64>> {
    if proxies.is_empty() {
        return Ok(Vec::new());
    }
    let model = &ckpt.model;
    let adjacency = Arc::new(propagation_operator(view, ckpt.config.gcn_directed));
    let mut tape = Tape::new();
    let (_, hidden) = encode(&mut tape, model, view, &adjacency, ckpt.config.variant)?;
    let rows: Vec<usize> = proxies.iter().map(|&p| view.proxy_local(p)).collect();
    let h = tape.gather_rows(hidden, &rows)?;
    // eval mode never draws from the generator
    let mut rng = stream_rng(ckpt.config.seed, STREAM_VALIDATION);
    let pred = model.decoder.forward(&mut tape, &model.params, h, &mut rng, false)?;
    Ok(tape
        .value(pred)
        .values()
        .iter()
        .map(|z| z * ckpt.target_std + ckpt.target_mean)
        .collect())
}

/// Predicts targets of `records` by grafting them into the training graph.
///
/// Records already present in the training graph are not duplicated.
/// Predictions come back in input order.
pub fn predict(ckpt: &Checkpoint, base_kg: &CrossModalKg, records: &[Record]) -> Result<Vec<f64>> {
    let d = ckpt.model.dims.feature_dim;
    if let Some(r) = records.iter().find(|r| r.features.len() != d) {
        return Err(NrkgError::Dimension(format!(
            "record {:?} has {} features, expected d_f = {d}",
            r.id,
            r.features.len()
        )));
    }
    let view = checkpoint_view(ckpt, base_kg)?;
    let (view, positions) = graft_records(&view, records, 0.0, ckpt.config.seed)?;
    predict_view(ckpt, &view, &positions)
}

/// Predictions for every training proxy, keyed by record id.
pub fn fitted_values(ckpt: &Checkpoint, kg: &CrossModalKg) -> Result<Vec<(String, f64)>> {
    let view = checkpoint_view(ckpt, kg)?;
    let positions: Vec<usize> = (0..view.proxy_count()).collect();
    let preds = predict_view(ckpt, &view, &positions)?;
    Ok(view.proxies().iter().map(|p| p.record_id.clone()).zip(preds).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_cross_modal_kg, make_folds, Tag};
    use crate::synth::{generate, SyntheticSpec};

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 16,
            epochs: 40,
            early_stop_patience: 10,
            ..Default::default()
        }
    }

    fn small_kg(tags: bool) -> CrossModalKg {
        let mut spec = SyntheticSpec {
            n_records: 60,
            min_token_count: 2,
            ..Default::default()
        };
        if tags {
            spec.annotated_fraction = 1.0;
            spec.relations.truncate(1);
            spec.relations[0].tokens = 4;
        } else {
            spec.relations.clear();
        }
        build_cross_modal_kg(&generate(&spec).unwrap().records).unwrap()
    }

    #[test]
    fn plateau_schedule_halves_after_stale_window() {
        let mut s = LrScheduler::new(&TrainConfig {
            lr: 0.008,
            lr_decay_step: 3,
            ..Default::default()
        });
        for e in 0..3 {
            s.end_epoch(e, false);
        }
        assert_eq!(s.decays(), 1);
        s.end_epoch(3, true);
        s.end_epoch(4, false);
        s.end_epoch(5, false);
        assert_eq!(s.decays(), 1);
        s.end_epoch(6, false);
        assert_eq!(s.decays(), 2);
        assert_eq!(s.lr(), 0.008 * 0.5 * 0.5);
    }

    #[test]
    fn step_schedule_decays_every_window() {
        let cfg = TrainConfig {
            lr: 0.005,
            lr_decay_step: 1,
            lr_schedule: LrSchedule::Step,
            ..Default::default()
        };
        let mut s = LrScheduler::new(&cfg);
        for e in 0..10 {
            s.end_epoch(e, true);
        }
        assert_eq!(s.decays(), 10);
        assert_eq!(s.lr(), 0.005 * 0.5f64.powi(10));
    }

    #[test]
    fn stopper_resets_on_strict_improvement() {
        let mut s = EarlyStopper::new(2);
        assert!(s.observe(3.0));
        assert!(!s.observe(3.0));
        assert_eq!(s.stale, 1);
        assert!(s.observe(2.0));
        assert_eq!(s.stale, 0);
        s.observe(2.5);
        s.observe(2.5);
        assert!(s.should_stop());
    }

    #[test]
    fn plain_regression_loss_decreases() {
        let spec = SyntheticSpec {
            n_records: 80,
            relations: vec![],
            noise_sigma: Some(0.0),
            ..Default::default()
        };
        let kg = build_cross_modal_kg(&generate(&spec).unwrap().records).unwrap();
        let plan = make_folds(&kg, 6, 0).unwrap();
        let cfg = TrainConfig {
            variant: Variant::Mlp,
            gamma_a: 0.0,
            gamma_b: 0.0,
            mask_fraction: 1.0,
            dropout: 0.0,
            epochs: 10,
            ..small_config()
        };
        let ck = train(&kg, &plan.folds[0], &cfg).unwrap();
        let losses: Vec<f64> = ck.history.iter().map(|h| h.train_loss).collect();
        assert_eq!(losses.len(), 10);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn same_seed_same_checkpoint_and_best_epoch_is_minimal() {
        let kg = small_kg(true);
        let plan = make_folds(&kg, 6, 1).unwrap();
        let a = train(&kg, &plan.folds[0], &small_config()).unwrap();
        let b = train(&kg, &plan.folds[0], &small_config()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let best = a.history[a.best_epoch].validation_loss;
        assert_eq!(best, a.best_validation_loss);
        assert!(a.history[..a.best_epoch].iter().all(|h| best <= h.validation_loss));
    }

    #[test]
    fn prediction_contract() {
        let kg = small_kg(true);
        let plan = make_folds(&kg, 6, 2).unwrap();
        let ck = train(&kg, &plan.folds[0], &small_config()).unwrap();

        let fitted = fitted_values(&ck, &kg).unwrap();
        let (id, value) = &fitted[3];
        let rec = kg.record(kg.proxy_by_record(id).unwrap());
        assert!((predict(&ck, &kg, std::slice::from_ref(&rec)).unwrap()[0] - value).abs() <= 1e-9);

        let test: Vec<Record> = plan.folds[0].test.iter().map(|&p| kg.record(p)).collect();
        let all = predict(&ck, &kg, &test).unwrap();
        assert_eq!(all.len(), test.len());
        let reversed: Vec<Record> = test.iter().rev().cloned().collect();
        let back = predict(&ck, &kg, &reversed).unwrap();
        for (x, y) in all.iter().zip(back.iter().rev()) {
            assert!((x - y).abs() < 1e-9);
        }

        let bare = Record {
            id: "bare".into(),
            tags: vec![],
            ..test[0].clone()
        };
        assert!(predict(&ck, &kg, std::slice::from_ref(&bare)).unwrap()[0].is_finite());

        let odd = Record {
            tags: vec![Tag::new("processedBy", "nope")],
            ..bare.clone()
        };
        match predict(&ck, &kg, &[odd]) {
            Err(NrkgError::Vocabulary(t)) => assert_eq!(t, vec!["nope".to_string()]),
            other => panic!("{other:?}"),
        }
        let short = Record {
            features: vec![0.5, 0.5],
            ..bare
        };
        match predict(&ck, &kg, &[short]) {
            Err(NrkgError::Dimension(m)) => assert!(m.contains("d_f = 7"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let kg = small_kg(true);
        let plan = make_folds(&kg, 6, 3).unwrap();
        let ck = train(&kg, &plan.folds[1], &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        save_checkpoint(&loaded, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        assert_eq!(loaded.rng_word_pos, ck.rng_word_pos);

        let test: Vec<Record> = plan.folds[1].test.iter().map(|&p| kg.record(p)).collect();
        let a = predict(&ck, &kg, &test).unwrap();
        let b = predict(&loaded, &kg, &test).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

        std::fs::write(&path, &first[..first.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NrkgError::Checkpoint(_))));
    }

    #[test]
    fn no_validation_is_a_split_error() {
        let kg = small_kg(false);
        let plan = make_folds(&kg, 6, 0).unwrap();
        let fold = FoldRoles {
            validation: vec![],
            ..plan.folds[0].clone()
        };
        assert!(matches!(train(&kg, &fold, &small_config()), Err(NrkgError::Split(_))));
    }

    #[test]
    fn tag_masking_drops_floor_share() {
        let recs: Vec<Record> = (0..4)
            .map(|i| Record {
                id: format!("r{i}"),
                features: vec![1.0],
                target: Some(0.0),
                tags: vec![Tag::new("a", "x"), Tag::new("a", "y"), Tag::new("b", "z")],
            })
            .collect();
        let count = |rs: &[Record]| rs.iter().map(|r| r.tags.len()).sum::<usize>();
        assert_eq!(count(&mask_record_tags(&recs, 0.5, 1)), 6);
        assert_eq!(count(&mask_record_tags(&recs, 0.3, 1)), 9);
        assert_eq!(count(&mask_record_tags(&recs, 1.0, 1)), 0);
        assert_eq!(mask_record_tags(&recs, 0.5, 4), mask_record_tags(&recs, 0.5, 4));
    }
}
