use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{load_graph, make_inductive_split, make_transductive_split, Graph, Split, SplitMode};
use crate::sadsd::DistillConfig;
use crate::students::{StudentArch, StudentKind};
use crate::teachers::{TeacherArch, TeacherKind, TrainHyper};

/// Student architecture apart from the dataset-dependent input and output widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentSpec {
    pub kind: StudentKind,
    pub hidden: Vec<usize>,
    pub grid: usize,
    pub dropout: f32,
    pub standardize: bool,
    pub centered: bool,
}

impl Default for StudentSpec {
    /// FR-KAN+ with `g = 1` and one hidden layer of width 24.
    fn default() -> Self {
        Self {
            kind: StudentKind::FrkanPlus,
            hidden: vec![24],
            grid: 1,
            dropout: 0.0,
            standardize: false,
            centered: true,
        }
    }
}

impl StudentSpec {
    pub fn arch(&self, in_dim: usize, out_dim: usize) -> StudentArch {
        StudentArch {
            kind: self.kind,
            in_dim,
            hidden: self.hidden.clone(),
            out_dim,
            grid: self.grid,
            dropout: self.dropout,
            standardize: self.standardize,
            centered: self.centered,
        }
    }
}

/// Everything one multi-seed run needs. Unset JSON keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub mode: SplitMode,
    pub ind_fraction: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub row_normalize: bool,
    pub teacher: TeacherKind,
    pub teacher_hyper: TrainHyper,
    pub student: StudentSpec,
    pub distill: DistillConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/cora"),
            mode: SplitMode::Transductive,
            ind_fraction: 0.2,
            train_per_class: 20,
            val_per_class: 30,
            row_normalize: false,
            teacher: TeacherKind::Gcn,
            teacher_hyper: TrainHyper::default(),
            student: StudentSpec::default(),
            distill: DistillConfig::default(),
            seeds: (0..5).collect(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!("dataset directory {} not found", self.dataset.display())));
        }
        if self.mode == SplitMode::Inductive && !(self.ind_fraction > 0.0 && self.ind_fraction < 1.0) {
            return Err(Error::Config(format!("ind_fraction must lie in (0, 1), got {}", self.ind_fraction)));
        }
        if self.student.grid == 0 {
            return Err(Error::Config("grid size must be positive".into()));
        }
        self.distill.validate()
    }

    /// Short dataset name for reports (the directory's last component).
    pub fn dataset_name(&self) -> String {
        self.dataset
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.dataset.display().to_string())
    }

    pub fn load_graph(&self) -> Result<Graph> {
        let mut g = load_graph(&self.dataset)?;
        if self.row_normalize {
            g.row_normalize_features();
        }
        Ok(g)
    }

    pub fn split(&self, g: &Graph, seed: u64) -> Result<Split> {
        let base = make_transductive_split(g, seed, self.train_per_class, self.val_per_class)?;
        match self.mode {
            SplitMode::Transductive => Ok(base),
            SplitMode::Inductive => Ok(make_inductive_split(g, &base, seed, self.ind_fraction)?.0),
        }
    }

    pub fn teacher_arch(&self, g: &Graph) -> TeacherArch {
        TeacherArch::new(self.teacher, g.n_feats(), g.n_classes())
    }

    pub fn student_arch(&self, g: &Graph) -> StudentArch {
        self.student.arch(g.n_feats(), g.n_classes())
    }
}
