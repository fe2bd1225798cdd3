//! JSON dump of a [`CrossModalKg`].
//!
//! Layout (arrays ordered by id):
//!
//! ```text
//! {
//!   "format": "nrkg-kg", "format_version": 1,
//!   "nodes":     [{"id", "kind": "Proxy"|"Semantic", "label", "features"?, "target"?}],
//!   "relations": [{"id", "name", "category": "SemanticLink"|"FeatureAttr"|"TargetAttr"}],
//!   "triples":   [{"head", "relation", "tail"}]
//! }
//! ```
//!
//! Proxy nodes come first; `features`/`target` are present only on proxies.

use serde::{Deserialize, Serialize};

use super::graph::{CrossModalKg, Node, NodeId, NodeKind, Relation, RelationCategory, RelationId, Triple};
use crate::error::{NrkgError, Result};

pub const KG_FORMAT: &str = "nrkg-kg";
pub const KG_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DumpNode {
    id: usize,
    kind: NodeKind,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DumpRelation {
    id: usize,
    name: String,
    category: RelationCategory,
}

#[derive(Serialize, Deserialize)]
struct DumpTriple {
    head: usize,
    relation: usize,
    tail: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KgDump {
    format: String,
    format_version: u32,
    nodes: Vec<DumpNode>,
    relations: Vec<DumpRelation>,
    triples: Vec<DumpTriple>,
}

impl CrossModalKg {
    pub fn to_json(&self) -> String {
        let dump = KgDump {
            format: KG_FORMAT.into(),
            format_version: KG_FORMAT_VERSION,
            nodes: self
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, n)| DumpNode {
                    id,
                    kind: n.kind,
                    label: n.label.clone(),
                    features: n.features.clone(),
                    target: n.target,
                })
                .collect(),
            relations: self
                .relations()
                .iter()
                .enumerate()
                .map(|(id, r)| DumpRelation {
                    id,
                    name: r.name.clone(),
                    category: r.category,
                })
                .collect(),
            triples: self
                .triples()
                .iter()
                .map(|t| DumpTriple {
                    head: t.head.0,
                    relation: t.relation.0,
                    tail: t.tail.0,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: KgDump = serde_json::from_str(text).map_err(|e| NrkgError::parse("kg dump", e.to_string()))?;
        if dump.format != KG_FORMAT || dump.format_version != KG_FORMAT_VERSION {
            return Err(NrkgError::parse(
                "kg dump",
                format!("unsupported format {} v{}", dump.format, dump.format_version),
            ));
        }
        if dump.nodes.iter().enumerate().any(|(i, n)| n.id != i)
            || dump.relations.iter().enumerate().any(|(i, r)| r.id != i)
        {
            return Err(NrkgError::parse("kg dump", "ids must be dense and ordered"));
        }
        let nodes = dump
            .nodes
            .into_iter()
            .map(|n| Node {
                kind: n.kind,
                label: n.label,
                features: n.features,
                target: n.target,
            })
            .collect();
        let relations = dump
            .relations
            .into_iter()
            .map(|r| Relation {
                name: r.name,
                category: r.category,
            })
            .collect();
        let triples = dump
            .triples
            .into_iter()
            .map(|t| Triple {
                head: NodeId(t.head),
                relation: RelationId(t.relation),
                tail: NodeId(t.tail),
            })
            .collect();
        CrossModalKg::from_parts(nodes, relations, triples)
    }
}
