//! Cross-modal knowledge graph: ingestion, construction, views, folds and
//! the normalized adjacency used for propagation.

mod dump;
mod folds;
mod graph;
mod record;
mod view;

pub use dump::{KG_FORMAT, KG_FORMAT_VERSION};
pub use folds::{make_folds, FoldPlan, FoldRoles, MAX_FOLD_RETRIES};
pub use graph::{
    build_cross_modal_kg, build_cross_modal_kg_with_links, token_key, CrossModalKg, Node, NodeId, NodeKind, Relation,
    RelationCategory, RelationId, SemanticLink, Triple, FEATURE_RELATION, TARGET_RELATION,
};
pub use record::{ingest_records, read_csv, read_jsonl, validate_records, write_csv, Record, Tag};
pub use view::{
    mask_proxy_nodes, mask_semantic_edges, normalized_adjacency, propagation_operator, EdgeLabel, KgView, LocalTriple,
    ViewProxy,
};
