use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{Graph, Split, SplitMode};
use crate::metrics::accuracy;
use crate::numkit::{log_softmax_rows_data, softmax_rows_data, AdamConfig, AdamState, Rng, Tape, Tensor};

use super::{GraphContext, TeacherArch, TeacherModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub patience: usize,
    /// Keep the epoch with the lowest validation loss instead of the highest
    /// validation accuracy.
    pub select_by_loss: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 300,
            patience: 50,
            select_by_loss: false,
        }
    }
}

/// Frozen teacher predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub logits: Tensor,
    pub tau: f32,
    /// `softmax(logits / τ)` per row.
    pub softened: Tensor,
    pub argmax: Vec<usize>,
}

impl TeacherOutput {
    pub fn new(logits: Tensor, tau: f32) -> Result<Self> {
        let (n, k) = logits.dims2()?;
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        if !logits.is_finite() {
            return Err(Error::NonFinite {
                op: "teacher_logits".into(),
            });
        }
        let scaled: Vec<f32> = logits.data().iter().map(|v| v / tau).collect();
        let softened = Tensor::new(&[n, k], softmax_rows_data(&scaled, k))?;
        let argmax = logits.argmax_rows();
        Ok(Self {
            logits,
            tau,
            softened,
            argmax,
        })
    }

    pub fn with_tau(&self, tau: f32) -> Result<Self> {
        Self::new(self.logits.clone(), tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub obs_acc: Option<f64>,
    pub ind_acc: Option<f64>,
    pub secs_per_epoch: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub model: TeacherModel,
    /// Predictions on the training graph (full graph, or the observed view in
    /// inductive mode). This is what students distil from.
    pub output: TeacherOutput,
    /// Evaluation logits: the training-graph rows, except unseen nodes which
    /// come from one final inference on the full graph.
    pub eval_logits: Tensor,
    pub report: TeacherReport,
}

/// Supervised training with Adam and early stopping on validation accuracy
/// (equal accuracies are ranked by validation loss).
///
/// In inductive mode the model only ever sees the observed view: edges
/// touching unseen nodes are removed. The best-validation parameters are
/// restored before the final predictions are made.
pub fn train_teacher(g: &Graph, split: &Split, arch: TeacherArch, hyper: TrainHyper, seed: u64) -> Result<TrainedTeacher> {
    if split.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    if arch.in_dim != g.n_feats() || arch.out_dim != g.n_classes() {
        return Err(Error::Config(format!(
            "teacher {}→{} does not fit a graph with {} features and {} classes",
            arch.in_dim,
            arch.out_dim,
            g.n_feats(),
            g.n_classes()
        )));
    }
    let view = match split.mode {
        SplitMode::Transductive => None,
        SplitMode::Inductive => Some(g.edge_subgraph(&split.visible_mask(g.n_nodes()))),
    };
    let train_graph = view.as_ref().unwrap_or(g);
    let ctx = GraphContext::new(train_graph);

    let mut model = TeacherModel::new(arch, seed)?;
    let mut adam = AdamState::new(&model.store, AdamConfig::with_lr(hyper.lr, hyper.weight_decay));
    let mut rng = Rng::derive(seed, 0xD0);
    let labels = train_graph.labels();
    let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();

    let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, model.store.snapshot());
    let mut epochs_run = 0;
    let start = Instant::now();
    for epoch in 0..hyper.epochs {
        epochs_run = epoch + 1;
        let mut tape = Tape::new();
        let x = model.input(&mut tape, train_graph);
        let logits = model.forward(&mut tape, &ctx, &x, Some(&mut rng))?;
        let loss = tape.cross_entropy(logits, &split.train, &train_y)?;
        let lv = tape.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::Diverged { epoch, loss: lv });
        }
        let grads = tape.backward(loss)?;
        model.store.absorb(&grads);
        adam.step(&mut model.store)?;

        let eval = model.predict_with(train_graph, &ctx)?;
        let val = accuracy(&eval, labels, &split.val);
        let vloss = mean_nll(&eval, labels, &split.val);
        let improved = if hyper.select_by_loss {
            vloss < best.1
        } else {
            val > best.0 || (val == best.0 && vloss < best.1)
        };
        if improved {
            best = (val, vloss, epoch, model.store.snapshot());
        } else if epoch - best.2 >= hyper.patience {
            break;
        }
    }
    let secs_per_epoch = start.elapsed().as_secs_f64() / epochs_run.max(1) as f64;
    model.store.restore(&best.3);
    log::debug!("teacher best epoch {} val {:.2}", best.2, best.0);

    let logits = model.predict_with(train_graph, &ctx)?;
    let mut eval_logits = logits.clone();
    let (mut obs_acc, mut ind_acc) = (None, None);
    if view.is_some() {
        let full = model.predict(g)?;
        let k = g.n_classes();
        for &u in &split.ind {
            eval_logits.data_mut()[u * k..(u + 1) * k].copy_from_slice(full.row(u));
        }
        obs_acc = Some(accuracy(&eval_logits, g.labels(), &split.obs));
        ind_acc = Some(accuracy(&eval_logits, g.labels(), &split.ind));
    }
    let report = TeacherReport {
        best_epoch: best.2,
        epochs_run,
        train_acc: accuracy(&eval_logits, g.labels(), &split.train),
        val_acc: accuracy(&eval_logits, g.labels(), &split.val),
        test_acc: accuracy(&eval_logits, g.labels(), &split.test),
        obs_acc,
        ind_acc,
        secs_per_epoch,
    };
    Ok(TrainedTeacher {
        model,
        output: TeacherOutput::new(logits, 1.0)?,
        eval_logits,
        report,
    })
}

/// Mean negative log-likelihood over `idx` (0 for an empty set).
pub fn mean_nll(logits: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let k = logits.shape()[1];
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let logp = log_softmax_rows_data(logits.row(i), k);
            -(logp[labels[i]] as f64)
        })
        .sum();
    total / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphio::toy_graph;
    use crate::teachers::TeacherKind;

    #[test]
    fn softened_rows_sum_to_one() {
        let out = TeacherOutput::new(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap(), 2.0).unwrap();
        for r in 0..2 {
            let s: f32 = out.softened.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert_eq!(out.argmax, vec![2, 2]);
        assert!(TeacherOutput::new(out.logits.clone(), 0.0).is_err());
    }

    #[test]
    fn toy_memorisation() {
        let g = toy_graph();
        let split = Split {
            mode: SplitMode::Transductive,
            train: vec![0, 1, 2, 3],
            val: vec![0, 1, 2, 3],
            test: vec![],
            obs: vec![],
            ind: vec![],
        };
        for kind in [TeacherKind::Gcn, TeacherKind::Sage, TeacherKind::Gat] {
            let mut arch = TeacherArch::new(kind, 2, 2);
            arch.dropout = 0.0;
            let hyper = TrainHyper {
                epochs: 500,
                patience: 500,
                ..TrainHyper::default()
            };
            let t = train_teacher(&g, &split, arch, hyper, 0).unwrap();
            assert_eq!(t.report.train_acc, 100.0, "{kind}");
        }
    }
}
