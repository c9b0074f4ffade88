use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{mean_adjacency, normalize_adjacency, with_self_loops, Graph};
use crate::numkit::{checkpoint, CsrMatrix, Input, ParamStore, Rng, SparseOperand, Tape, Tensor, Var};

use super::{GatLayer, GcnLayer, SageLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    Gcn,
    Sage,
    Gat,
}

impl std::fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TeacherKind::Gcn => "gcn",
            TeacherKind::Sage => "sage",
            TeacherKind::Gat => "gat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherArch {
    pub kind: TeacherKind,
    pub in_dim: usize,
    /// Hidden width; for GAT the per-head width.
    pub hidden: usize,
    pub out_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f32,
}

impl TeacherArch {
    /// Two layers; GCN/SAGE hidden 64 with dropout 0.5, GAT 8 heads × 8 with dropout 0.6.
    pub fn new(kind: TeacherKind, in_dim: usize, out_dim: usize) -> Self {
        let (hidden, heads, dropout) = match kind {
            TeacherKind::Gat => (8, 8, 0.6),
            _ => (64, 1, 0.5),
        };
        Self {
            kind,
            in_dim,
            hidden,
            out_dim,
            layers: 2,
            heads,
            dropout,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TeacherLayer {
    Gcn(GcnLayer),
    Sage(SageLayer),
    Gat(GatLayer),
}

/// Graph-derived constants a teacher needs, built once per graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub norm_adj: Arc<SparseOperand>,
    pub mean_adj: Arc<SparseOperand>,
    pub self_loops: Arc<CsrMatrix>,
}

impl GraphContext {
    pub fn new(g: &Graph) -> Self {
        Self {
            norm_adj: SparseOperand::symmetric(normalize_adjacency(g)),
            mean_adj: SparseOperand::new(mean_adjacency(g)),
            self_loops: Arc::new(with_self_loops(g)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub arch: TeacherArch,
    pub store: ParamStore,
    pub layers: Vec<TeacherLayer>,
}

impl TeacherModel {
    pub fn new(arch: TeacherArch, seed: u64) -> Result<Self> {
        if arch.layers == 0 || arch.hidden == 0 || arch.heads == 0 || arch.in_dim == 0 || arch.out_dim == 0 {
            return Err(Error::Config("teacher dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", arch.dropout)));
        }
        let mut rng = Rng::derive(seed, 0x7E);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(arch.layers);
        let mut d_in = arch.in_dim;
        for l in 0..arch.layers {
            let last = l + 1 == arch.layers;
            let prefix = format!("layer{l}");
            let layer = match arch.kind {
                TeacherKind::Gcn => {
                    let o = if last { arch.out_dim } else { arch.hidden };
                    TeacherLayer::Gcn(GcnLayer::new(&mut store, &prefix, d_in, o, &mut rng))
                }
                TeacherKind::Sage => {
                    let o = if last { arch.out_dim } else { arch.hidden };
                    TeacherLayer::Sage(SageLayer::new(&mut store, &prefix, d_in, o, &mut rng))
                }
                TeacherKind::Gat => {
                    let layer = if last {
                        GatLayer::new(&mut store, &prefix, d_in, 1, arch.out_dim, false, &mut rng)
                    } else {
                        GatLayer::new(&mut store, &prefix, d_in, arch.heads, arch.hidden, true, &mut rng)
                    };
                    TeacherLayer::Gat(layer)
                }
            };
            d_in = match &layer {
                TeacherLayer::Gcn(l) => l.out_dim,
                TeacherLayer::Sage(l) => l.out_dim,
                TeacherLayer::Gat(l) => l.out_dim(),
            };
            layers.push(layer);
        }
        Ok(Self { arch, store, layers })
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    /// Node features as the first-layer input (sparse when mostly zero).
    pub fn input(&self, tape: &mut Tape, g: &Graph) -> Input {
        if g.feature_density() < 0.25 {
            Input::Sparse(g.sparse_features())
        } else {
            Input::Dense(tape.constant(g.features().clone()))
        }
    }

    /// Logits `[N × K]`. Dropout on every layer input applies only when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, x: &Input, mut rng: Option<&mut Rng>) -> Result<Var> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(r) = rng.as_deref_mut() {
                h = h.dropout(tape, self.arch.dropout, r)?;
            }
            let y = match layer {
                TeacherLayer::Gcn(g) => g.forward(tape, &self.store, &ctx.norm_adj, &h)?,
                TeacherLayer::Sage(s) => s.forward(tape, &self.store, &ctx.mean_adj, &h)?,
                TeacherLayer::Gat(a) => a.forward(tape, &self.store, &ctx.self_loops, &h)?,
            };
            let y = if l == last {
                y
            } else if self.arch.kind == TeacherKind::Gat {
                tape.elu(y)
            } else {
                tape.relu(y)
            };
            h = Input::Dense(y);
        }
        match h {
            Input::Dense(v) => Ok(v),
            Input::Sparse(_) => unreachable!("layers emit dense values"),
        }
    }

    /// Evaluation-mode logits.
    pub fn predict(&self, g: &Graph) -> Result<Tensor> {
        self.predict_with(g, &GraphContext::new(g))
    }

    pub fn predict_with(&self, g: &Graph, ctx: &GraphContext) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = self.input(&mut tape, g);
        let y = self.forward(&mut tape, ctx, &x, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Architecture and training record stored next to a teacher checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSidecar {
    pub arch: TeacherArch,
    pub hyper: super::TrainHyper,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_teacher(path: &Path, model: &TeacherModel, sidecar: &TeacherSidecar) -> Result<()> {
    checkpoint::save(path, &model.store)?;
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(sidecar)?).map_err(|e| Error::io(&sp, e))
}

pub fn load_teacher(path: &Path) -> Result<(TeacherModel, TeacherSidecar)> {
    let sp = sidecar_path(path);
    let side: TeacherSidecar = serde_json::from_slice(&fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    let mut model = TeacherModel::new(side.arch.clone(), side.seed)?;
    checkpoint::load_into(&mut model.store, &checkpoint::read(path)?)?;
    Ok((model, side))
}
