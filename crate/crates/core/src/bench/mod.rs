//! Coreset baselines and evaluation protocols.

mod coreset;
mod eval;
pub mod metrics;

pub use coreset::{coreset_herding, coreset_kcenter, coreset_random, herding_select, kcenter_select};
pub use eval::{
    bundle_hash, eval_link_prediction, eval_node_classification, eval_transfer, split_edges,
    train_on_synthetic, EdgeSplit, EvalReport, Protocol,
};
