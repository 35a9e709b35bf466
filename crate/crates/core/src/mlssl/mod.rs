//! Multi-label semi-supervised classifier over all stage decisions.
//!
//! One network scores every stage at once. Training combines a label
//! term on known cells, a graph-smoothness term tying neighbouring rows to
//! similar scores, and a penalty on any reject-then-approve pair within a
//! row.

mod graph;
mod losses;
mod model;
mod tml;

pub use graph::{build_graph, sls_loss, SimilarityGraph, GRAPH_FLOOR};
pub use losses::{lc_loss, tc_loss};
pub use model::{
    signs_from_scores, train_mlssl, GraphMode, MlsslClassifier, MlsslConfig, MlsslDocument, MlsslFit,
    MlsslTerms, Prediction, GLOBAL_GRAPH_LIMIT,
};
pub use tml::{tml, MulticlassLabel};
