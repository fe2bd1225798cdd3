//! The cross-modal knowledge graph and its construction from records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::record::{validate_records, Record, Tag};
use crate::error::{NrkgError, Result};

/// Name of the attribute relation carrying proxy feature vectors.
pub const FEATURE_RELATION: &str = "hasFeature";
/// Name of the attribute relation carrying proxy targets.
pub const TARGET_RELATION: &str = "hasTarget";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Proxy,
    Semantic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationCategory {
    SemanticLink,
    FeatureAttr,
    TargetAttr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub category: RelationCategory,
}

/// A node: a proxy carries its record's numeric attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Record id for proxies, first-seen token spelling for semantic nodes.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
}

/// A semantic-to-semantic link `(head token, relation, tail token)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticLink {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Token matching key: trimmed and case-folded.
pub fn token_key(token: &str) -> String {
    token.trim().to_lowercase()
}

/// Typed triple store mixing proxy nodes, semantic nodes and relations.
///
/// Proxy nodes occupy ids `0..proxy_count` in record order; semantic nodes
/// follow in first-seen order. Structural triples always point from the
/// semantic side into the proxy, so proxies only ever appear as tails.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalKg {
    nodes: Vec<Node>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    vocab: BTreeMap<String, NodeId>,
    relation_index: BTreeMap<String, RelationId>,
    proxy_count: usize,
    feature_dim: usize,
}

impl CrossModalKg {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, id: RelationId) -> &Relation {
        &self.relations[id.0]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name.trim()).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn vocab(&self) -> &BTreeMap<String, NodeId> {
        &self.vocab
    }

    pub fn semantic_node(&self, token: &str) -> Option<NodeId> {
        self.vocab.get(&token_key(token)).copied()
    }

    pub fn proxy_count(&self) -> usize {
        self.proxy_count
    }

    pub fn semantic_count(&self) -> usize {
        self.nodes.len() - self.proxy_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn proxy_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.proxy_count).map(NodeId)
    }

    pub fn semantic_ids(&self) -> impl Iterator<Item = NodeId> {
        (self.proxy_count..self.nodes.len()).map(NodeId)
    }

    /// Row of a semantic node in the entity dictionary.
    pub fn semantic_index(&self, id: NodeId) -> Option<usize> {
        (id.0 >= self.proxy_count && id.0 < self.nodes.len()).then(|| id.0 - self.proxy_count)
    }

    pub fn is_proxy(&self, id: NodeId) -> bool {
        id.0 < self.proxy_count
    }

    pub fn proxy_by_record(&self, record_id: &str) -> Option<NodeId> {
        self.nodes[..self.proxy_count]
            .iter()
            .position(|n| n.label == record_id)
            .map(NodeId)
    }

    /// Structural triples incident to `node` (as head or tail).
    pub fn incident(&self, node: NodeId) -> impl Iterator<Item = &Triple> {
        self.triples.iter().filter(move |t| t.head == node || t.tail == node)
    }

    /// Degree of a node in the structural graph.
    pub fn degree(&self, node: NodeId) -> usize {
        self.incident(node).count()
    }

    /// The record a proxy node was built from, tags rebuilt from its triples.
    pub fn record(&self, proxy: NodeId) -> Record {
        let node = &self.nodes[proxy.0];
        let tags = self
            .triples
            .iter()
            .filter(|t| t.tail == proxy)
            .map(|t| Tag::new(&self.relations[t.relation.0].name, &self.nodes[t.head.0].label))
            .collect();
        Record {
            id: node.label.clone(),
            features: node.features.clone().unwrap_or_default(),
            target: node.target,
            tags,
        }
    }

    /// Copy with one proxy's numeric payload replaced. Values are not checked
    /// for finiteness, which lets tests plant poisoned held-out data.
    pub fn with_proxy_values(&self, proxy: NodeId, features: Vec<f64>, target: Option<f64>) -> Result<Self> {
        if !self.is_proxy(proxy) {
            return Err(NrkgError::Usage(format!("node {} is not a proxy", proxy.0)));
        }
        if features.len() != self.feature_dim {
            return Err(NrkgError::Dimension(format!(
                "{} features given, expected d_f = {}",
                features.len(),
                self.feature_dim
            )));
        }
        let mut out = self.clone();
        out.nodes[proxy.0].features = Some(features);
        out.nodes[proxy.0].target = target;
        Ok(out)
    }

    pub(crate) fn from_parts(nodes: Vec<Node>, relations: Vec<Relation>, triples: Vec<Triple>) -> Result<Self> {
        let proxy_count = nodes.iter().take_while(|n| n.kind == NodeKind::Proxy).count();
        if nodes[proxy_count..].iter().any(|n| n.kind == NodeKind::Proxy) {
            return Err(NrkgError::parse("nodes", "proxy nodes must precede semantic nodes"));
        }
        let feature_dim = nodes.first().and_then(|n| n.features.as_ref()).map_or(0, Vec::len);
        let mut vocab = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate().skip(proxy_count) {
            if vocab.insert(token_key(&n.label), NodeId(i)).is_some() {
                return Err(NrkgError::parse("nodes", format!("duplicate token {:?}", n.label)));
            }
        }
        let mut relation_index = BTreeMap::new();
        for (i, r) in relations.iter().enumerate() {
            if relation_index.insert(r.name.clone(), RelationId(i)).is_some() {
                return Err(NrkgError::parse(
                    "relations",
                    format!("duplicate relation {:?}", r.name),
                ));
            }
        }
        for t in &triples {
            if t.head.0 >= nodes.len() || t.tail.0 >= nodes.len() || t.relation.0 >= relations.len() {
                return Err(NrkgError::parse("triples", format!("dangling reference in {t:?}")));
            }
            if relations[t.relation.0].category != RelationCategory::SemanticLink {
                return Err(NrkgError::parse("triples", "attribute relation used structurally"));
            }
            if t.head.0 < proxy_count {
                return Err(NrkgError::parse("triples", format!("proxy-headed triple {t:?}")));
            }
        }
        Ok(Self {
            nodes,
            relations,
            triples,
            vocab,
            relation_index,
            proxy_count,
            feature_dim,
        })
    }
}

/// Builds the graph from records with no semantic-semantic links.
pub fn build_cross_modal_kg(records: &[Record]) -> Result<CrossModalKg> {
    build_cross_modal_kg_with_links(records, &[])
}

/// Builds the graph; every `proxy -rel-> token` tag is stored reversed as
/// `token -rel-> proxy`. Semantic links are kept in their given direction.
pub fn build_cross_modal_kg_with_links(records: &[Record], links: &[SemanticLink]) -> Result<CrossModalKg> {
    if records.is_empty() {
        return Err(NrkgError::Usage("cannot build a graph from zero records".into()));
    }
    validate_records(records)?;

    let mut nodes: Vec<Node> = records
        .iter()
        .map(|r| Node {
            kind: NodeKind::Proxy,
            label: r.id.clone(),
            features: Some(r.features.clone()),
            target: r.target,
        })
        .collect();
    let mut relations = vec![
        Relation {
            name: FEATURE_RELATION.into(),
            category: RelationCategory::FeatureAttr,
        },
        Relation {
            name: TARGET_RELATION.into(),
            category: RelationCategory::TargetAttr,
        },
    ];
    let mut relation_index: BTreeMap<String, RelationId> = relations
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.clone(), RelationId(i)))
        .collect();
    let mut vocab: BTreeMap<String, NodeId> = BTreeMap::new();

    let mut intern_relation = |name: &str, relations: &mut Vec<Relation>| -> Result<RelationId> {
        let name = name.trim();
        if let Some(&id) = relation_index.get(name) {
            if relations[id.0].category != RelationCategory::SemanticLink {
                return Err(NrkgError::Usage(format!(
                    "tag relation {name:?} is reserved for attributes"
                )));
            }
            return Ok(id);
        }
        let id = RelationId(relations.len());
        relations.push(Relation {
            name: name.into(),
            category: RelationCategory::SemanticLink,
        });
        relation_index.insert(name.into(), id);
        Ok(id)
    };
    let mut intern_token = |token: &str, nodes: &mut Vec<Node>| -> NodeId {
        *vocab.entry(token_key(token)).or_insert_with(|| {
            nodes.push(Node {
                kind: NodeKind::Semantic,
                label: token.trim().to_string(),
                features: None,
                target: None,
            });
            NodeId(nodes.len() - 1)
        })
    };

    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    for (p, r) in records.iter().enumerate() {
        for tag in &r.tags {
            let rel = intern_relation(&tag.relation, &mut relations)?;
            let head = intern_token(&tag.token, &mut nodes);
            let t = Triple {
                head,
                relation: rel,
                tail: NodeId(p),
            };
            if seen.insert(t) {
                triples.push(t);
            }
        }
    }
    for link in links {
        let rel = intern_relation(&link.relation, &mut relations)?;
        let head = intern_token(&link.head, &mut nodes);
        let tail = intern_token(&link.tail, &mut nodes);
        let t = Triple {
            head,
            relation: rel,
            tail,
        };
        if seen.insert(t) {
            triples.push(t);
        }
    }
    CrossModalKg::from_parts(nodes, relations, triples)
}
