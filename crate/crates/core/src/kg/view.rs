//! Owned subgraph views used for training, validation and inference.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{token_key, CrossModalKg, NodeId, RelationCategory};
use super::record::Record;
use crate::error::{NrkgError, Result};
use crate::math::{SparseMatrix, Tensor};

/// A proxy node inside a view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewProxy {
    pub record_id: String,
    pub features: Vec<f64>,
    pub target: Option<f64>,
    /// Node in the source graph; `None` for proxies grafted from new records.
    pub origin: Option<NodeId>,
}

/// Triple over view-local node indices: semantic node `s` is `s`, proxy `p`
/// is `semantic_count + p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// A structural edge named by labels, stable across views of the same graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// A subgraph: every semantic node and relation of the source graph, a
/// subset of its proxies (plus any grafted ones) and the structural triples
/// among them.
#[derive(Clone, Debug, PartialEq)]
pub struct KgView {
    semantic_labels: Vec<String>,
    semantic_keys: BTreeMap<String, usize>,
    relation_names: Vec<String>,
    link_relations: BTreeSet<usize>,
    proxies: Vec<ViewProxy>,
    triples: Vec<LocalTriple>,
    masked_edges: Vec<EdgeLabel>,
}

impl KgView {
    pub fn semantic_count(&self) -> usize {
        self.semantic_labels.len()
    }

    pub fn proxy_count(&self) -> usize {
        self.proxies.len()
    }

    pub fn node_count(&self) -> usize {
        self.semantic_count() + self.proxy_count()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn semantic_labels(&self) -> &[String] {
        &self.semantic_labels
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn proxies(&self) -> &[ViewProxy] {
        &self.proxies
    }

    pub fn triples(&self) -> &[LocalTriple] {
        &self.triples
    }

    /// Edges removed by [`mask_semantic_edges`] or [`KgView::remove_edges`].
    pub fn masked_edges(&self) -> &[EdgeLabel] {
        &self.masked_edges
    }

    pub fn proxy_local(&self, p: usize) -> usize {
        self.semantic_count() + p
    }

    pub fn is_proxy_local(&self, local: usize) -> bool {
        local >= self.semantic_count()
    }

    pub fn semantic_local(&self, token: &str) -> Option<usize> {
        self.semantic_keys.get(&token_key(token)).copied()
    }

    pub fn relation_local(&self, name: &str) -> Option<usize> {
        self.relation_names.iter().position(|r| r == name.trim())
    }

    pub fn proxy_by_record(&self, record_id: &str) -> Option<usize> {
        self.proxies.iter().position(|p| p.record_id == record_id)
    }

    fn label(&self, local: usize) -> &str {
        if self.is_proxy_local(local) {
            &self.proxies[local - self.semantic_count()].record_id
        } else {
            &self.semantic_labels[local]
        }
    }

    pub fn edge_label(&self, t: &LocalTriple) -> EdgeLabel {
        EdgeLabel {
            head: self.label(t.head).to_string(),
            relation: self.relation_names[t.relation].clone(),
            tail: self.label(t.tail).to_string(),
        }
    }

    /// Triples whose tail is the given local node.
    pub fn incoming(&self, local: usize) -> impl Iterator<Item = &LocalTriple> {
        self.triples.iter().filter(move |t| t.tail == local)
    }

    /// Drops the named edges; unknown labels are ignored.
    pub fn remove_edges(&self, edges: &[EdgeLabel]) -> KgView {
        let drop: HashSet<&EdgeLabel> = edges.iter().collect();
        let mut out = self.clone();
        let mut removed = Vec::new();
        out.triples.retain(|t| {
            let label = self.edge_label(t);
            if drop.contains(&label) {
                removed.push(label);
                false
            } else {
                true
            }
        });
        out.masked_edges.extend(removed);
        out
    }

    /// Adds proxies for `records` plus their tag triples.
    ///
    /// Records whose id already names a proxy in the view are not added
    /// again. Returns the proxy position of every input record, in order.
    pub fn graft(&self, records: &[Record]) -> Result<(KgView, Vec<usize>)> {
        let d = self.proxies.first().map(|p| p.features.len());
        let mut unknown = BTreeSet::new();
        for r in records {
            if let Some(d) = d {
                if r.features.len() != d {
                    return Err(NrkgError::Dimension(format!(
                        "record {:?} has {} features, expected d_f = {d}",
                        r.id,
                        r.features.len()
                    )));
                }
            }
            for tag in &r.tags {
                if self.semantic_local(&tag.token).is_none() {
                    unknown.insert(tag.token.trim().to_string());
                }
                if !self.relation_names.is_empty()
                    && self
                        .relation_local(&tag.relation)
                        .is_none_or(|r| !self.link_relations.contains(&r))
                {
                    unknown.insert(format!("{} (relation)", tag.relation.trim()));
                }
            }
        }
        if !unknown.is_empty() {
            return Err(NrkgError::Vocabulary(unknown.into_iter().collect()));
        }

        let mut out = self.clone();
        let mut existing: HashSet<LocalTriple> = out.triples.iter().copied().collect();
        let mut positions = Vec::with_capacity(records.len());
        for r in records {
            if let Some(p) = out.proxy_by_record(&r.id) {
                positions.push(p);
                continue;
            }
            out.proxies.push(ViewProxy {
                record_id: r.id.clone(),
                features: r.features.clone(),
                target: r.target,
                origin: None,
            });
            let p = out.proxies.len() - 1;
            positions.push(p);
            let tail = out.proxy_local(p);
            for tag in &r.tags {
                let t = LocalTriple {
                    head: out.semantic_local(&tag.token).expect("checked above"),
                    relation: out.relation_local(&tag.relation).expect("checked above"),
                    tail,
                };
                if existing.insert(t) {
                    out.triples.push(t);
                }
            }
        }
        Ok((out, positions))
    }
}

impl CrossModalKg {
    /// The whole graph as a view.
    pub fn full_view(&self) -> KgView {
        mask_proxy_nodes(self, &BTreeSet::new()).expect("empty mask is valid")
    }
}

/// Training view without the `held_out` proxies and every triple touching them.
///
/// Semantic nodes are always retained, even when their degree drops to zero.
pub fn mask_proxy_nodes(kg: &CrossModalKg, held_out: &BTreeSet<NodeId>) -> Result<KgView> {
    if let Some(bad) = held_out.iter().find(|n| !kg.is_proxy(**n)) {
        return Err(NrkgError::Usage(format!(
            "node {} is not a proxy and cannot be masked",
            bad.0
        )));
    }
    let n_sem = kg.semantic_count();
    let semantic_labels: Vec<String> = kg.semantic_ids().map(|n| kg.node(n).label.clone()).collect();
    let semantic_keys = semantic_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (token_key(l), i))
        .collect();
    let relation_names = kg.relations().iter().map(|r| r.name.clone()).collect();
    let link_relations = kg
        .relations()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.category == RelationCategory::SemanticLink)
        .map(|(i, _)| i)
        .collect();

    let mut local_of = vec![None; kg.node_count()];
    let mut proxies = Vec::new();
    for id in kg.proxy_ids().filter(|id| !held_out.contains(id)) {
        let node = kg.node(id);
        local_of[id.0] = Some(n_sem + proxies.len());
        proxies.push(ViewProxy {
            record_id: node.label.clone(),
            features: node.features.clone().unwrap_or_default(),
            target: node.target,
            origin: Some(id),
        });
    }
    for (s, id) in kg.semantic_ids().enumerate() {
        local_of[id.0] = Some(s);
    }
    let triples = kg
        .triples()
        .iter()
        .filter_map(|t| {
            Some(LocalTriple {
                head: local_of[t.head.0]?,
                relation: t.relation.0,
                tail: local_of[t.tail.0]?,
            })
        })
        .collect();
    Ok(KgView {
        semantic_labels,
        semantic_keys,
        relation_names,
        link_relations,
        proxies,
        triples,
        masked_edges: Vec::new(),
    })
}

/// Removes `floor(fraction * m)` of the `m` proxy-incident triples, chosen
/// uniformly under `seed`.
pub fn mask_semantic_edges(view: &KgView, fraction: f64, seed: u64) -> Result<KgView> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(NrkgError::Usage(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let mut maskable: Vec<usize> = (0..view.triples.len())
        .filter(|&i| view.is_proxy_local(view.triples[i].tail))
        .collect();
    let count = (fraction * maskable.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(view.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    maskable.shuffle(&mut rng);
    let drop: HashSet<usize> = maskable[..count].iter().copied().collect();
    let mut out = view.clone();
    out.triples = Vec::with_capacity(view.triples.len() - count);
    for (i, t) in view.triples.iter().enumerate() {
        if drop.contains(&i) {
            out.masked_edges.push(view.edge_label(t));
        } else {
            out.triples.push(*t);
        }
    }
    Ok(out)
}

fn adjacency_sets(view: &KgView, directed: bool) -> Vec<BTreeSet<usize>> {
    let n = view.node_count();
    let mut adj: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for t in &view.triples {
        // messages flow head -> tail
        adj[t.tail].insert(t.head);
        if !directed {
            adj[t.head].insert(t.tail);
        }
    }
    adj
}

/// `D^-1/2 (A + I) D^-1/2` over the view's nodes as a sparse operator.
pub fn propagation_operator(view: &KgView, directed: bool) -> SparseMatrix {
    let adj = adjacency_sets(view, directed);
    let inv_sqrt: Vec<f64> = adj.iter().map(|s| 1.0 / (s.len() as f64).sqrt()).collect();
    let entries = adj
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)))
        .map(|(i, j)| (i, j, inv_sqrt[i] * inv_sqrt[j]))
        .collect();
    SparseMatrix::from_entries(adj.len(), adj.len(), entries).expect("indices in range")
}

/// Dense form of [`propagation_operator`].
pub fn normalized_adjacency(view: &KgView, directed: bool) -> Tensor {
    propagation_operator(view, directed).to_dense()
}
