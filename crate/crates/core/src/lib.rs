//! Numerical reasoning over cross-modal knowledge graphs.
//!
//! Records carrying numeric feature vectors, semantic tags and scalar targets
//! are assembled into a cross-modal knowledge graph. Semantic nodes and
//! relations are embedded by a learnable dictionary, proxy nodes by a
//! numerical projection layer, and a GCN plus property decoder regresses the
//! targets. Training jointly minimizes the regression loss, a translation
//! margin loss, and a projection loss towards the mean of each proxy's
//! incident `head + relation` points.

pub mod error;
pub mod eval;
pub mod gnn;
pub mod kg;
pub mod math;
pub mod model;
pub mod projection;
pub mod synth;
pub mod training;

pub use error::{NrkgError, Result};
