use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;

use super::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Transductive,
    Inductive,
}

/// Disjoint node index sets. In inductive mode `obs ∪ ind == test`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub obs: Vec<usize>,
    pub ind: Vec<usize>,
}

impl Split {
    /// Nodes whose features and edges are visible while training.
    pub fn visible_mask(&self, n_nodes: usize) -> Vec<bool> {
        match self.mode {
            SplitMode::Transductive => vec![true; n_nodes],
            SplitMode::Inductive => {
                let mut keep = vec![true; n_nodes];
                for &u in &self.ind {
                    keep[u] = false;
                }
                keep
            }
        }
    }
}

/// Samples `per_class_train` training and `per_class_val` validation nodes from
/// every class; everything else is test.
///
/// Classes are visited in ascending order; within a class the node ids are
/// shuffled (ascending ids, Fisher-Yates) and the prefix is taken.
pub fn make_transductive_split(
    g: &Graph,
    seed: u64,
    per_class_train: usize,
    per_class_val: usize,
) -> Result<Split> {
    let mut rng = Rng::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.n_classes()];
    for (u, &y) in g.labels().iter().enumerate() {
        by_class[y].push(u);
    }
    let need = per_class_train + per_class_val;
    let mut assigned = vec![0u8; g.n_nodes()];
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < need {
            return Err(Error::Config(format!(
                "class {c} has {} nodes, split needs {need}",
                nodes.len()
            )));
        }
        rng.shuffle(nodes);
        for &u in &nodes[..per_class_train] {
            assigned[u] = 1;
        }
        for &u in &nodes[per_class_train..need] {
            assigned[u] = 2;
        }
    }
    let pick = |tag: u8| -> Vec<usize> { (0..g.n_nodes()).filter(|&u| assigned[u] == tag).collect() };
    Ok(Split {
        mode: SplitMode::Transductive,
        train: pick(1),
        val: pick(2),
        test: pick(0),
        obs: Vec::new(),
        ind: Vec::new(),
    })
}

/// Moves `floor(ind_fraction · |test|)` test nodes into the unseen set and
/// returns the split with the observed training view (edges touching unseen
/// nodes removed; node ids are unchanged).
pub fn make_inductive_split(
    g: &Graph,
    base: &Split,
    seed: u64,
    ind_fraction: f64,
) -> Result<(Split, Graph)> {
    if !(ind_fraction > 0.0 && ind_fraction < 1.0) {
        return Err(Error::Config(format!(
            "ind_fraction must lie in (0, 1), got {ind_fraction}"
        )));
    }
    let mut rng = Rng::derive(seed, 0x1D);
    let mut test = base.test.clone();
    rng.shuffle(&mut test);
    let n_ind = (ind_fraction * test.len() as f64).floor() as usize;
    let mut ind = test[..n_ind].to_vec();
    let mut obs = test[n_ind..].to_vec();
    ind.sort_unstable();
    obs.sort_unstable();
    let split = Split {
        mode: SplitMode::Inductive,
        train: base.train.clone(),
        val: base.val.clone(),
        test: base.test.clone(),
        obs,
        ind,
    };
    let view = g.edge_subgraph(&split.visible_mask(g.n_nodes()));
    Ok((split, view))
}
