use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::Graph;
use crate::numkit::{checkpoint, Input, ParamStore, Rng, Tape, Tensor, Var};

use super::{FrKanLayer, FrKanPlusLayer, LinearLayer, SplineGrid, SplineKanLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StudentKind {
    FrkanPlus,
    Frkan,
    SplineKan,
    Mlp,
}

impl std::fmt::Display for StudentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudentKind::FrkanPlus => "frkan_plus",
            StudentKind::Frkan => "frkan",
            StudentKind::SplineKan => "spline_kan",
            StudentKind::Mlp => "mlp",
        })
    }
}

/// Architecture description; also the JSON sidecar stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentArch {
    pub kind: StudentKind,
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    /// Fourier grid size `g` (ignored by spline and MLP students).
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub dropout: f32,
    #[serde(default)]
    pub standardize: bool,
    /// Zero-input-centered FR-KAN+ layers (see `FrKanPlusLayer`).
    #[serde(default = "default_true")]
    pub centered: bool,
}

fn default_grid() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl StudentArch {
    pub fn new(kind: StudentKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            hidden: Vec::new(),
            out_dim,
            grid: 1,
            dropout: 0.0,
            standardize: false,
            centered: true,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim];
        d.extend(&self.hidden);
        d.push(self.out_dim);
        d
    }
}

#[derive(Debug, Clone)]
pub enum StudentLayer {
    FrKanPlus(FrKanPlusLayer),
    FrKan(FrKanLayer),
    Spline(SplineKanLayer),
    Linear(LinearLayer),
}

impl StudentLayer {
    pub fn param_count(&self) -> usize {
        match self {
            StudentLayer::FrKanPlus(l) => l.param_count(),
            StudentLayer::FrKan(l) => l.param_count(),
            StudentLayer::Spline(l) => l.param_count(),
            StudentLayer::Linear(l) => l.param_count(),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Input) -> Result<Var> {
        match self {
            StudentLayer::FrKanPlus(l) => l.forward(tape, store, x),
            StudentLayer::FrKan(l) => l.forward(tape, store, x),
            StudentLayer::Spline(l) => l.forward(tape, store, x),
            StudentLayer::Linear(l) => l.forward(tape, store, x),
        }
    }
}

/// Per-feature affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    /// Constant columns get unit scale.
    pub fn fit(x: &Tensor, rows: &[usize]) -> Result<Self> {
        let (_, d) = x.dims2()?;
        if rows.is_empty() {
            return Err(Error::Config("standardizer needs at least one row".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0f64; d];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; d];
        for &r in rows {
            for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-8 { sd as f32 } else { 1.0 }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    arch: StudentArch,
    standardizer: Option<Standardizer>,
}

/// A feature-to-logit network. It never sees the graph structure.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub arch: StudentArch,
    pub store: ParamStore,
    pub layers: Vec<StudentLayer>,
    pub standardizer: Option<Standardizer>,
}

impl StudentModel {
    pub fn new(arch: StudentArch, seed: u64) -> Result<Self> {
        if arch.in_dim == 0 || arch.out_dim == 0 || arch.hidden.contains(&0) {
            return Err(Error::Config("student layer widths must be positive".into()));
        }
        if arch.grid == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", arch.dropout)));
        }
        let mut rng = Rng::derive(seed, 0x57);
        let mut store = ParamStore::new();
        let dims = arch.dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, w) in dims.windows(2).enumerate() {
            let prefix = format!("layer{l}");
            let (i, o) = (w[0], w[1]);
            layers.push(match arch.kind {
                StudentKind::FrkanPlus => {
                    StudentLayer::FrKanPlus(
                    FrKanPlusLayer::new(&mut store, &prefix, i, o, arch.grid, &mut rng).with_centering(arch.centered),
                )
                }
                StudentKind::Frkan => StudentLayer::FrKan(FrKanLayer::new(&mut store, &prefix, i, o, arch.grid, &mut rng)),
                StudentKind::SplineKan => {
                    StudentLayer::Spline(SplineKanLayer::new(&mut store, &prefix, i, o, SplineGrid::default(), &mut rng))
                }
                StudentKind::Mlp => StudentLayer::Linear(LinearLayer::new(&mut store, &prefix, i, o, true, &mut rng)),
            });
        }
        Ok(Self {
            arch,
            store,
            layers,
            standardizer: None,
        })
    }

    /// Fits the input standardizer on `rows` if the architecture asks for one.
    pub fn fit_input(&mut self, features: &Tensor, rows: &[usize]) -> Result<()> {
        if self.arch.standardize {
            self.standardizer = Some(Standardizer::fit(features, rows)?);
        }
        Ok(())
    }

    /// Node features as a layer input: sparse when they are mostly zero and
    /// no standardization applies.
    pub fn input(&self, tape: &mut Tape, g: &Graph) -> Input {
        match &self.standardizer {
            Some(s) => Input::Dense(tape.constant(s.apply(g.features()))),
            None if g.feature_density() < 0.25 => Input::Sparse(g.sparse_features()),
            None => Input::Dense(tape.constant(g.features().clone())),
        }
    }

    /// Logits `[B × K]`. Hidden MLP layers use ReLU; hidden KAN layers are
    /// squashed with tanh so the next periodic layer sees bounded inputs.
    /// Dropout applies only when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, x: &Input, rng: Option<&mut Rng>) -> Result<Var> {
        Ok(*self.forward_layers(tape, x, rng)?.last().expect("at least one layer"))
    }

    /// Output of every layer after its activation; the last entry is the logits.
    pub fn forward_layers(&self, tape: &mut Tape, x: &Input, mut rng: Option<&mut Rng>) -> Result<Vec<Var>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        let mut outs = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(r) = rng.as_deref_mut() {
                h = h.dropout(tape, self.arch.dropout, r)?;
            }
            let mut y = layer.forward(tape, &self.store, &h)?;
            if l < last {
                y = match layer {
                    StudentLayer::Linear(_) => tape.relu(y),
                    _ => tape.tanh(y),
                };
            }
            outs.push(y);
            h = Input::Dense(y);
        }
        Ok(outs)
    }

    /// Evaluation-mode logits for every node.
    pub fn predict(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = self.input(&mut tape, g);
        let y = self.forward(&mut tape, &x, None)?;
        Ok(tape.value(y).clone())
    }

    /// Evaluation-mode representation of every node: the last hidden layer,
    /// or the logits when there is no hidden layer.
    pub fn embed(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = self.input(&mut tape, g);
        let outs = self.forward_layers(&mut tape, &x, None)?;
        let pick = if outs.len() > 1 { outs[outs.len() - 2] } else { outs[0] };
        Ok(tape.value(pick).clone())
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the parameters to `path` and the architecture to `path` with a
    /// `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)?;
        let side = Sidecar {
            arch: self.arch.clone(),
            standardizer: self.standardizer.clone(),
        };
        let sp = Self::sidecar_path(path);
        fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = Self::sidecar_path(path);
        let side: Sidecar = serde_json::from_slice(&fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
        let mut model = Self::new(side.arch, 0)?;
        model.standardizer = side.standardizer;
        checkpoint::load_into(&mut model.store, &checkpoint::read(path)?)?;
        Ok(model)
    }
}

pub fn count_params(model: &StudentModel) -> usize {
    model.count_params()
}
