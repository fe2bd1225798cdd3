//! Projection of the cross-modal graph into the canonical embedding space.
//!
//! Semantic nodes and relations come from a learnable dictionary (entity rows
//! are L2-normalized, relation rows are used raw). Proxy nodes are embedded
//! from their numeric features alone by the numerical projection layer, so
//! unseen proxies can be embedded at inference time. Two losses shape the
//! space: a translation margin loss over `h + r ~ t` and a projection loss
//! pulling each proxy towards the centre of its incident `h + r` points.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::kg::{KgView, LocalTriple};
use crate::math::{l2_normalize, Parameter, SparseMatrix, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::model::AffineSlots;

/// Entity and relation tables (slots into the model's parameter list).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticDictionary {
    pub entity: usize,
    pub relation: usize,
}

/// What to look up in the dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DictionaryKey {
    Entity(usize),
    Relation(usize),
}

impl SemanticDictionary {
    /// All entity rows, normalized, on the tape.
    pub fn entities(&self, tape: &mut Tape, params: &[Parameter]) -> Result<Var> {
        let raw = tape.param(self.entity, &params[self.entity]);
        tape.l2_normalize(raw)
    }

    /// All relation rows, raw.
    pub fn relations(&self, tape: &mut Tape, params: &[Parameter]) -> Var {
        tape.param(self.relation, &params[self.relation])
    }
}

/// Dictionary lookup: entity rows are normalized, relation rows returned as stored.
pub fn embed_semantic(dict: &SemanticDictionary, params: &[Parameter], key: DictionaryKey) -> Result<Tensor> {
    let (slot, row, what) = match key {
        DictionaryKey::Entity(i) => (dict.entity, i, "entity"),
        DictionaryKey::Relation(i) => (dict.relation, i, "relation"),
    };
    let table = &params[slot].value;
    if row >= table.rows() {
        return Err(NrkgError::Lookup(format!("{what} {row} of {}", table.rows())));
    }
    let v = Tensor::matrix(1, table.cols(), table.row(row).to_vec())?;
    match key {
        DictionaryKey::Entity(_) => Ok(l2_normalize(&v)?.reshaped(&[table.cols()])?),
        DictionaryKey::Relation(_) => v.reshaped(&[table.cols()]),
    }
}

/// MLP from numeric features to the canonical space (before normalization).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericalProjectionLayer {
    pub layers: Vec<AffineSlots>,
}

impl NumericalProjectionLayer {
    pub fn input_dim(&self, params: &[Parameter]) -> usize {
        params[self.layers[0].weight].value.rows()
    }

    /// Raw MLP output; LeakyReLU between layers, none after the last.
    pub fn forward(&self, tape: &mut Tape, params: &[Parameter], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(l.weight, &params[l.weight]);
            let b = tape.param(l.bias, &params[l.bias]);
            h = tape.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Normalized proxy embeddings for a `m x d_f` feature matrix.
    pub fn embed(&self, tape: &mut Tape, params: &[Parameter], features: Tensor) -> Result<Var> {
        let d = self.input_dim(params);
        if features.cols() != d {
            return Err(NrkgError::Dimension(format!(
                "features have {} columns, projection expects d_f = {d}",
                features.cols()
            )));
        }
        let x = tape.constant(features);
        let raw = self.forward(tape, params, x)?;
        tape.l2_normalize(raw)
    }
}

/// Canonical embedding of one proxy from its feature vector.
pub fn embed_proxy(npl: &NumericalProjectionLayer, params: &[Parameter], features: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = Tensor::matrix(1, features.len().max(1), features.to_vec())?;
    let e = npl.embed(&mut tape, params, x)?;
    tape.value(e).reshaped(&[tape.value(e).cols()])
}

/// Translation distance `|h + r - t|`.
pub fn triple_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Distances of many triples as an `n x 1` column on the tape.
pub fn triple_scores(tape: &mut Tape, nodes: Var, relations: Var, triples: &[LocalTriple]) -> Result<Var> {
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let h = tape.gather_rows(nodes, &heads)?;
    let r = tape.gather_rows(relations, &rels)?;
    let t = tape.gather_rows(nodes, &tails)?;
    let hr = tape.add(h, r)?;
    let diff = tape.sub(hr, t)?;
    Ok(tape.row_norms(diff))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorruptedSlot {
    Head,
    Tail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NegativeTriple {
    pub triple: LocalTriple,
    pub corrupted: CorruptedSlot,
}

const RANDOM_ATTEMPTS: usize = 64;

/// `k` filtered corruptions per positive, in positive order.
///
/// Each corruption flips a fair coin for the slot and replaces it with a
/// uniformly drawn node of the same kind; triples present in the view are
/// rejected.
pub fn sample_negatives<R: Rng + ?Sized>(
    view: &KgView,
    positives: &[LocalTriple],
    rng: &mut R,
    k: usize,
) -> Result<Vec<NegativeTriple>> {
    if k == 0 {
        return Err(NrkgError::Usage("negatives per positive must be at least 1".into()));
    }
    let known: HashSet<LocalTriple> = view.triples().iter().chain(positives).copied().collect();
    let n_sem = view.semantic_count();
    let n_all = view.node_count();
    let range_of = |local: usize| if local < n_sem { 0..n_sem } else { n_sem..n_all };
    let corrupt = |t: &LocalTriple, slot: CorruptedSlot, node: usize| {
        let mut c = *t;
        match slot {
            CorruptedSlot::Head => c.head = node,
            CorruptedSlot::Tail => c.tail = node,
        }
        c
    };

    let mut out = Vec::with_capacity(positives.len() * k);
    for pos in positives {
        for _ in 0..k {
            let mut found = None;
            for _ in 0..RANDOM_ATTEMPTS {
                let slot = if rng.random::<bool>() {
                    CorruptedSlot::Head
                } else {
                    CorruptedSlot::Tail
                };
                let range = range_of(match slot {
                    CorruptedSlot::Head => pos.head,
                    CorruptedSlot::Tail => pos.tail,
                });
                let cand = corrupt(pos, slot, rng.random_range(range));
                if !known.contains(&cand) {
                    found = Some(NegativeTriple {
                        triple: cand,
                        corrupted: slot,
                    });
                    break;
                }
            }
            if found.is_none() {
                let valid: Vec<NegativeTriple> = [CorruptedSlot::Head, CorruptedSlot::Tail]
                    .into_iter()
                    .flat_map(|slot| {
                        let range = range_of(match slot {
                            CorruptedSlot::Head => pos.head,
                            CorruptedSlot::Tail => pos.tail,
                        });
                        range.map(move |n| (slot, n))
                    })
                    .map(|(slot, n)| NegativeTriple {
                        triple: corrupt(pos, slot, n),
                        corrupted: slot,
                    })
                    .filter(|neg| !known.contains(&neg.triple))
                    .collect();
                if valid.is_empty() {
                    return Err(NrkgError::Sampling(format!("no valid corruption of {pos:?}")));
                }
                found = Some(valid[rng.random_range(0..valid.len())]);
            }
            out.push(found.expect("set above"));
        }
    }
    Ok(out)
}

/// Margin ranking loss `sum max(0, s(pos) - s(neg) + margin)`.
///
/// `negatives` are paired with positives in blocks of `negatives.len() / positives.len()`.
pub fn loss_cll(
    tape: &mut Tape,
    nodes: Var,
    relations: Var,
    positives: &[LocalTriple],
    negatives: &[NegativeTriple],
    margin: f64,
) -> Result<Var> {
    if positives.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    if negatives.is_empty() || !negatives.len().is_multiple_of(positives.len()) {
        return Err(NrkgError::Dimension(format!(
            "{} negatives cannot be paired with {} positives",
            negatives.len(),
            positives.len()
        )));
    }
    let k = negatives.len() / positives.len();
    let paired: Vec<LocalTriple> = positives.iter().flat_map(|p| std::iter::repeat_n(*p, k)).collect();
    let neg: Vec<LocalTriple> = negatives.iter().map(|n| n.triple).collect();
    let s_pos = triple_scores(tape, nodes, relations, &paired)?;
    let s_neg = triple_scores(tape, nodes, relations, &neg)?;
    let gap = tape.sub(s_pos, s_neg)?;
    let shift = tape.constant(Tensor::filled(&[paired.len(), 1], margin));
    let shifted = tape.add(gap, shift)?;
    let hinge = tape.relu(shifted);
    Ok(tape.sum(hinge))
}

/// Mean of a non-empty point set; `None` when empty.
pub fn fermat_target_mean(points: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = points.first()?;
    let mut acc = vec![0.0; first.len()];
    for p in points {
        acc.iter_mut().zip(p).for_each(|(a, x)| *a += x);
    }
    let n = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Sum of Euclidean distances from `e` to every point.
pub fn fermat_objective(e: &[f64], points: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| distance(e, p)).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Geometric median by Weiszfeld iteration started from the centroid.
///
/// Stops when a step is shorter than `tol` or after `max_iter` steps; an
/// iterate landing within `tol` of a data point returns that point.
pub fn geometric_median_weiszfeld(points: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut y = fermat_target_mean(points).ok_or_else(|| NrkgError::EmptyBatch("no points".into()))?;
    for _ in 0..max_iter {
        let mut num = vec![0.0; y.len()];
        let mut den = 0.0;
        for p in points {
            let d = distance(&y, p);
            if d < tol {
                return Ok(p.clone());
            }
            let w = 1.0 / d;
            num.iter_mut().zip(p).for_each(|(a, x)| *a += w * x);
            den += w;
        }
        let next: Vec<f64> = num.into_iter().map(|a| a / den).collect();
        let step = distance(&next, &y);
        y = next;
        if step < tol {
            break;
        }
    }
    Ok(y)
}

/// How the per-proxy Fermat target is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PplEstimator {
    #[default]
    Mean,
    Weiszfeld,
}

pub const WEISZFELD_TOL: f64 = 1e-9;
pub const WEISZFELD_MAX_ITER: usize = 1000;

/// Incident `h + r` points of a node, from current embedding values.
pub fn incident_points(view: &KgView, nodes: &Tensor, relations: &Tensor, tail: usize) -> Vec<Vec<f64>> {
    view.incoming(tail)
        .map(|t| {
            nodes
                .row(t.head)
                .iter()
                .zip(relations.row(t.relation))
                .map(|(h, r)| h + r)
                .collect()
        })
        .collect()
}

/// Detached Fermat targets for the given proxy-local nodes; nodes with no
/// incident triples are skipped.
pub fn ppl_targets(
    view: &KgView,
    nodes: &Tensor,
    relations: &Tensor,
    proxies: &[usize],
    estimator: PplEstimator,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for &m in proxies {
        let pts = incident_points(view, nodes, relations, m);
        let target = match estimator {
            PplEstimator::Mean => fermat_target_mean(&pts),
            PplEstimator::Weiszfeld if pts.is_empty() => None,
            PplEstimator::Weiszfeld => Some(geometric_median_weiszfeld(&pts, WEISZFELD_TOL, WEISZFELD_MAX_ITER)?),
        };
        if let Some(t) = target {
            out.push((m, t));
        }
    }
    Ok(out)
}

/// `sum |e_m - target_m|` against constant targets.
pub fn loss_ppl(tape: &mut Tape, nodes: Var, targets: &[(usize, Vec<f64>)]) -> Result<Var> {
    if targets.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let idx: Vec<usize> = targets.iter().map(|(m, _)| *m).collect();
    let rows: Vec<Vec<f64>> = targets.iter().map(|(_, t)| t.clone()).collect();
    let e = tape.gather_rows(nodes, &idx)?;
    let c = tape.constant(Tensor::from_rows(&rows)?);
    let diff = tape.sub(e, c)?;
    let d = tape.row_norms(diff);
    Ok(tape.sum(d))
}

/// Projection loss with the mean target kept on the tape, so gradients also
/// reach the heads and relations forming each target.
pub fn loss_ppl_attached(tape: &mut Tape, view: &KgView, nodes: Var, relations: Var, proxies: &[usize]) -> Result<Var> {
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    let mut triples = Vec::new();
    for &m in proxies {
        let incident: Vec<LocalTriple> = view.incoming(m).copied().collect();
        if incident.is_empty() {
            continue;
        }
        let w = 1.0 / incident.len() as f64;
        for t in incident {
            entries.push((rows.len(), triples.len(), w));
            triples.push(t);
        }
        rows.push(m);
    }
    if rows.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let h = tape.gather_rows(nodes, &heads)?;
    let r = tape.gather_rows(relations, &rels)?;
    let p = tape.add(h, r)?;
    let avg = Arc::new(SparseMatrix::from_entries(rows.len(), triples.len(), entries)?);
    let target = tape.sparse_matmul(avg, p)?;
    let e = tape.gather_rows(nodes, &rows)?;
    let diff = tape.sub(e, target)?;
    let d = tape.row_norms(diff);
    Ok(tape.sum(d))
}

/// Embedding image of a view: one unit row per node, raw relation rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalKg {
    pub node_embeddings: Tensor,
    pub relation_embeddings: Tensor,
}

impl CanonicalKg {
    pub fn node(&self, local: usize) -> &[f64] {
        self.node_embeddings.row(local)
    }

    pub fn relation(&self, r: usize) -> &[f64] {
        self.relation_embeddings.row(r)
    }

    pub fn score(&self, t: &LocalTriple) -> f64 {
        triple_score(self.node(t.head), self.relation(t.relation), self.node(t.tail))
    }

    /// Margin loss evaluated directly on stored embeddings.
    pub fn cll(&self, positives: &[LocalTriple], negatives: &[NegativeTriple], margin: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let n = tape.constant(self.node_embeddings.clone());
        let r = tape.constant(self.relation_embeddings.clone());
        let l = loss_cll(&mut tape, n, r, positives, negatives, margin)?;
        Ok(tape.scalar(l))
    }

    /// Projection loss with mean targets for every proxy of the view.
    pub fn ppl(&self, view: &KgView) -> Result<f64> {
        let proxies: Vec<usize> = (0..view.proxy_count()).map(|p| view.proxy_local(p)).collect();
        let targets = ppl_targets(
            view,
            &self.node_embeddings,
            &self.relation_embeddings,
            &proxies,
            PplEstimator::Mean,
        )?;
        Ok(targets.iter().map(|(m, t)| distance(self.node(*m), t)).sum())
    }
}

/// Semantic rows then proxy rows, in view-local order.
pub fn project_nodes(
    tape: &mut Tape,
    params: &[Parameter],
    dict: &SemanticDictionary,
    npl: &NumericalProjectionLayer,
    view: &KgView,
) -> Result<Var> {
    let sem = dict.entities(tape, params)?;
    if view.proxy_count() == 0 {
        return Ok(sem);
    }
    let rows: Vec<Vec<f64>> = view.proxies().iter().map(|p| p.features.clone()).collect();
    let prox = npl.embed(tape, params, Tensor::from_rows(&rows)?)?;
    if view.semantic_count() == 0 {
        return Ok(prox);
    }
    tape.concat_rows(sem, prox)
}

/// Evaluates the projection of a whole view.
pub fn project(
    params: &[Parameter],
    dict: &SemanticDictionary,
    npl: &NumericalProjectionLayer,
    view: &KgView,
) -> Result<CanonicalKg> {
    let mut tape = Tape::new();
    let nodes = project_nodes(&mut tape, params, dict, npl, view)?;
    Ok(CanonicalKg {
        node_embeddings: tape.value(nodes).clone(),
        relation_embeddings: params[dict.relation].value.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_cross_modal_kg, Record, Tag};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dict_params(entity: Vec<Vec<f64>>, relation: Vec<Vec<f64>>) -> (SemanticDictionary, Vec<Parameter>) {
        let params = vec![
            Parameter::new("e", Tensor::from_rows(&entity).unwrap()),
            Parameter::new("r", Tensor::from_rows(&relation).unwrap()),
        ];
        (SemanticDictionary { entity: 0, relation: 1 }, params)
    }

    #[test]
    fn dictionary_normalizes_entities_only() {
        let (d, p) = dict_params(vec![vec![3.0, 4.0, 0.0]], vec![vec![3.0, 4.0, 0.0]]);
        assert_eq!(
            embed_semantic(&d, &p, DictionaryKey::Entity(0)).unwrap().values(),
            &[0.6, 0.8, 0.0]
        );
        assert_eq!(
            embed_semantic(&d, &p, DictionaryKey::Relation(0)).unwrap().values(),
            &[3.0, 4.0, 0.0]
        );
        assert_eq!(
            embed_semantic(&d, &p, DictionaryKey::Entity(0)).unwrap(),
            embed_semantic(&d, &p, DictionaryKey::Entity(0)).unwrap()
        );
        assert!(matches!(
            embed_semantic(&d, &p, DictionaryKey::Entity(1)),
            Err(NrkgError::Lookup(_))
        ));
    }

    #[test]
    fn triple_score_examples() {
        assert_eq!(triple_score(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(triple_score(&[0.3, -2.0], &[0.0, 0.0], &[0.3, -2.0]), 0.0);
        assert_eq!(triple_score(&[0.0, 0.0], &[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn fermat_mean_examples() {
        assert_eq!(fermat_target_mean(&[vec![2.0, 0.0]]), Some(vec![2.0, 0.0]));
        assert_eq!(
            fermat_target_mean(&[vec![0.0, 0.0], vec![2.0, 0.0]]),
            Some(vec![1.0, 0.0])
        );
        assert_eq!(fermat_target_mean(&[]), None);
        let s = 3f64.sqrt();
        let tri = [vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, s]];
        let mean = fermat_target_mean(&tri).unwrap();
        let med = geometric_median_weiszfeld(&tri, 1e-12, 1000).unwrap();
        assert!(distance(&mean, &med) < 1e-9);
    }

    #[test]
    fn weiszfeld_examples() {
        assert_eq!(
            geometric_median_weiszfeld(&[vec![1.5, -2.0]], 1e-9, 100).unwrap(),
            vec![1.5, -2.0]
        );
        let med = geometric_median_weiszfeld(&[vec![0.0], vec![0.0], vec![10.0]], 1e-9, 1000).unwrap();
        assert!(med[0].abs() < 1e-6, "{med:?}");
        let sq = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let med = geometric_median_weiszfeld(&sq, 1e-9, 1000).unwrap();
        assert!(distance(&med, &[0.5, 0.5]) < 1e-9);
    }

    fn tiny_view() -> KgView {
        let recs = vec![
            Record {
                id: "p0".into(),
                features: vec![1.0],
                target: None,
                tags: vec![Tag::new("r", "X")],
            },
            Record {
                id: "p1".into(),
                features: vec![1.0],
                target: None,
                tags: vec![],
            },
            Record {
                id: "p2".into(),
                features: vec![1.0],
                target: None,
                tags: vec![],
            },
        ];
        build_cross_modal_kg(&recs).unwrap().full_view()
    }

    #[test]
    fn negatives_are_filtered() {
        let view = tiny_view();
        let pos = view.triples().to_vec();
        assert_eq!(pos.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = sample_negatives(&view, &pos, &mut rng, 50).unwrap();
        let p1 = view.proxy_local(1);
        let p2 = view.proxy_local(2);
        for n in &negs {
            assert_eq!(n.corrupted, CorruptedSlot::Tail);
            assert!(n.triple.tail == p1 || n.triple.tail == p2);
        }
    }

    #[test]
    fn negative_count_and_determinism() {
        let recs: Vec<Record> = (0..10)
            .map(|i| Record {
                id: format!("p{i}"),
                features: vec![1.0],
                target: None,
                tags: vec![Tag::new("r", format!("T{}", i % 3))],
            })
            .collect();
        let view = build_cross_modal_kg(&recs).unwrap().full_view();
        let pos = view.triples().to_vec();
        let a = sample_negatives(&view, &pos, &mut ChaCha8Rng::seed_from_u64(5), 2).unwrap();
        let b = sample_negatives(&view, &pos, &mut ChaCha8Rng::seed_from_u64(5), 2).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        assert!(sample_negatives(&view, &pos, &mut ChaCha8Rng::seed_from_u64(5), 0).is_err());
    }

    #[test]
    fn no_valid_corruption_is_an_error() {
        let recs = vec![Record {
            id: "p".into(),
            features: vec![1.0],
            target: None,
            tags: vec![Tag::new("r", "X")],
        }];
        let view = build_cross_modal_kg(&recs).unwrap().full_view();
        let pos = view.triples().to_vec();
        let err = sample_negatives(&view, &pos, &mut ChaCha8Rng::seed_from_u64(1), 1).unwrap_err();
        assert!(matches!(err, NrkgError::Sampling(_)));
    }

    /// Embeddings laid out so that positive/negative distances are chosen exactly.
    fn scored(pos_dist: f64, neg_dist: f64) -> (CanonicalKg, Vec<LocalTriple>, Vec<NegativeTriple>) {
        // nodes: 0 origin, 1 at pos_dist, 2 at neg_dist along x
        let nodes = Tensor::from_rows(&[vec![0.0, 0.0], vec![pos_dist, 0.0], vec![neg_dist, 0.0]]).unwrap();
        let rels = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let pos = vec![LocalTriple {
            head: 0,
            relation: 0,
            tail: 1,
        }];
        let neg = vec![NegativeTriple {
            triple: LocalTriple {
                head: 0,
                relation: 0,
                tail: 2,
            },
            corrupted: CorruptedSlot::Tail,
        }];
        (
            CanonicalKg {
                node_embeddings: nodes,
                relation_embeddings: rels,
            },
            pos,
            neg,
        )
    }

    #[test]
    fn cll_examples() {
        let (c, p, n) = scored(0.0, 2.0);
        assert_eq!(c.cll(&p, &n, 1.0).unwrap(), 0.0);
        let (c, p, n) = scored(2.0, 0.0);
        assert_eq!(c.cll(&p, &n, 1.0).unwrap(), 3.0);
        let (c, p, n) = scored(1.5, 1.5);
        assert_eq!(c.cll(&p, &n, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ppl_examples() {
        let mut tape = Tape::new();
        let nodes = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let l = loss_ppl(&mut tape, nodes, &[(0, vec![1.0, 0.0])]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let l = loss_ppl(&mut tape, nodes, &[(0, vec![0.0, 1.0])]).unwrap();
        assert_eq!(tape.scalar(l), 2f64.sqrt());
        let l = loss_ppl(&mut tape, nodes, &[]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn attached_and_detached_ppl_agree_in_value() {
        let view = tiny_view();
        let nodes = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let rels = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, -0.2]]).unwrap();
        let proxies: Vec<usize> = (0..3).map(|p| view.proxy_local(p)).collect();
        let targets = ppl_targets(&view, &nodes, &rels, &proxies, PplEstimator::Mean).unwrap();
        assert_eq!(targets.len(), 1);
        let mut tape = Tape::new();
        let n = tape.constant(nodes);
        let r = tape.constant(rels);
        let a = loss_ppl(&mut tape, n, &targets).unwrap();
        let b = loss_ppl_attached(&mut tape, &view, n, r, &proxies).unwrap();
        assert!((tape.scalar(a) - tape.scalar(b)).abs() < 1e-15);
    }
}
