//! Graph datasets: in-memory representation, the on-disk directory format,
//! adjacency normalisation and train/val/test splits.

mod graph;
mod io;
mod normalize;
mod split;

pub use graph::{toy_graph, Graph};
pub use io::{import_linqs, load_graph, save_graph, Meta};
pub use normalize::{mean_adjacency, normalize_adjacency, with_self_loops};
pub use split::{make_inductive_split, make_transductive_split, Split, SplitMode};
