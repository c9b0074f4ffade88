use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{Graph, Split, SplitMode};
use crate::metrics::accuracy;
use crate::numkit::{AdamConfig, AdamState, Rng, Tape, Tensor};
use crate::students::StudentModel;
use crate::teachers::TeacherOutput;

use super::{
    agreement_factors, ce_loss, edge_attention, edge_importance, edge_sampling_probs, edge_weighted_mean, kl_rows,
    reweight, sample_edges, total_loss, AttentionSampler, EdgeContext, ProbConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub tau: f32,
    pub lambda: f32,
    pub weight_true: f32,
    pub weight_false: f32,
    pub prob_floor: f32,
    pub prob_ceil: f32,
    /// Attention width `H`.
    pub attn_dim: usize,
    /// Initial `β`.
    pub beta: f32,
    pub lr: f32,
    pub weight_decay: f32,
    pub sampler_lr: f32,
    pub epochs: usize,
    pub patience: usize,
    /// Average the KL of both endpoints of each sampled pair instead of the source only.
    pub both_endpoints: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            lambda: 0.3,
            weight_true: 1.2,
            weight_false: 0.8,
            prob_floor: 0.05,
            prob_ceil: 0.95,
            attn_dim: 64,
            beta: 1.0,
            lr: 0.01,
            weight_decay: 5e-4,
            sampler_lr: 0.01,
            epochs: 300,
            patience: 100,
            both_endpoints: false,
        }
    }
}

impl DistillConfig {
    pub fn probs(&self) -> ProbConfig {
        ProbConfig {
            prob_floor: self.prob_floor,
            prob_ceil: self.prob_ceil,
            weight_true: self.weight_true,
            weight_false: self.weight_false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.probs().validate()
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f32,
    pub kd: f32,
    pub total: f32,
    /// Directed pairs in `𝒩` (twice the sampled undirected edges).
    pub n_sampled: usize,
    pub beta: f32,
    pub p_min: f32,
    pub p_mean: f32,
    pub p_max: f32,
    /// Probabilities outside the clamp bounds after reweighting.
    pub p_out_of_bounds: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub obs_acc: Option<f64>,
    pub ind_acc: Option<f64>,
    /// Epochs whose sampled set was empty (KD term 0).
    pub empty_samples: usize,
    pub secs_per_epoch: f64,
}

#[derive(Debug, Clone)]
pub struct DistillResult {
    pub history: Vec<EpochRecord>,
    pub report: StudentReport,
    /// Evaluation logits of the restored student for every node.
    pub logits: Tensor,
}

impl DistillResult {
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.history {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Trains `student` (and `sampler`) against a frozen teacher.
///
/// Each epoch: student logits; attention over `A + I` from the sampler's
/// projections; per-edge probabilities from `Φ`; reweighting by the current
/// teacher/student agreement; one Bernoulli draw per edge; then
/// `λ·CE + (1−λ)·τ²·KD` is minimised jointly over student and sampler. The
/// draw is a constant mask, so the sampler learns through the `p`-weighting
/// of the KD term. The best-validation student is restored at the end.
///
/// In inductive mode the sampled edges come from the observed view, which
/// `teacher` must have been computed on; unseen nodes only appear at the
/// final evaluation.
pub fn distill_train(
    g: &Graph,
    split: &Split,
    teacher: &TeacherOutput,
    student: &mut StudentModel,
    sampler: &mut AttentionSampler,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillResult> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    if teacher.logits.shape() != [g.n_nodes(), g.n_classes()] {
        return Err(Error::shape(
            "distill_train",
            format!("teacher logits {:?} for {} nodes, {} classes", teacher.logits.shape(), g.n_nodes(), g.n_classes()),
        ));
    }
    if student.arch.out_dim != g.n_classes() || student.arch.in_dim != g.n_feats() {
        return Err(Error::Config("student does not match the graph".into()));
    }
    let view = match split.mode {
        SplitMode::Transductive => None,
        SplitMode::Inductive => Some(g.edge_subgraph(&split.visible_mask(g.n_nodes()))),
    };
    let train_graph = view.as_ref().unwrap_or(g);
    let ctx = EdgeContext::new(train_graph);
    let edges = Arc::new(ctx.edges.clone());
    let pcfg = cfg.probs();
    let soft = Arc::new(teacher.with_tau(cfg.tau)?.softened);
    let labels = g.labels();

    student.fit_input(g.features(), &split.train)?;
    let mut opt_s = AdamState::new(&student.store, AdamConfig::with_lr(cfg.lr, cfg.weight_decay));
    let mut opt_a = AdamState::new(&sampler.store, AdamConfig::with_lr(cfg.sampler_lr, 0.0));
    let mut drop_rng = Rng::derive(seed, 0x5D);
    let mut edge_rng = Rng::derive(seed, 0xB3);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, student.store.snapshot());
    let mut empty_samples = 0;
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = student.input(&mut tape, train_graph);
        let logits = student.forward(&mut tape, &x, Some(&mut drop_rng))?;
        let student_argmax = tape.value(logits).argmax_rows();

        let sx = if g.feature_density() < 0.25 {
            crate::numkit::Input::Sparse(train_graph.sparse_features())
        } else {
            crate::numkit::Input::Dense(tape.constant(train_graph.features().clone()))
        };
        let (q, k) = sampler.query_key(&mut tape, &sx)?;
        let alpha = edge_attention(&mut tape, &ctx.pattern, q, k)?;
        let phi = edge_importance(&mut tape, &ctx, alpha)?;
        let lb = tape.param(&sampler.store, sampler.log_beta);
        let p0 = edge_sampling_probs(&mut tape, phi, lb, &pcfg)?;
        let factors = agreement_factors(&ctx.edges, &teacher.argmax, &student_argmax, &pcfg);
        let p = reweight(&mut tape, p0, factors, &pcfg)?;

        let pv = tape.value(p).data();
        let p_out_of_bounds = pv.iter().filter(|&&v| !(pcfg.prob_floor..=pcfg.prob_ceil).contains(&v)).count();
        let (p_min, p_max) = pv.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let p_mean = if pv.is_empty() { 0.0 } else { pv.iter().sum::<f32>() / pv.len() as f32 };
        let mask = Arc::new(sample_edges(pv, &mut edge_rng));
        let n_sampled = 2 * mask.iter().filter(|&&m| m).count();
        if n_sampled == 0 {
            empty_samples += 1;
        }

        let kl = kl_rows(&mut tape, logits, &soft, cfg.tau)?;
        let kd = edge_weighted_mean(&mut tape, kl, p, &edges, &mask)?;
        let kd = tape.scale(kd, cfg.tau * cfg.tau);
        let ce = ce_loss(&mut tape, logits, labels, &split.train)?;
        let total = total_loss(&mut tape, ce, kd, cfg.lambda)?;
        let (cev, kdv, tv) = (tape.value(ce).data()[0], tape.value(kd).data()[0], tape.value(total).data()[0]);
        if !tv.is_finite() {
            return Err(Error::Diverged { epoch, loss: tv });
        }
        let grads = tape.backward(total)?;
        student.store.absorb(&grads);
        sampler.store.absorb(&grads);
        opt_s.step(&mut student.store)?;
        opt_a.step(&mut sampler.store)?;

        let eval = student.predict(g)?;
        let val = accuracy(&eval, labels, &split.val);
        let vloss = crate::teachers::mean_nll(&eval, labels, &split.val);
        history.push(EpochRecord {
            epoch,
            ce: cev,
            kd: kdv,
            total: tv,
            n_sampled,
            beta: sampler.beta(),
            p_min,
            p_mean,
            p_max,
            p_out_of_bounds,
            train_acc: accuracy(&eval, labels, &split.train),
            val_acc: val,
            test_acc: accuracy(&eval, labels, &split.test),
        });
        if val > best.0 || (val == best.0 && vloss < best.1) {
            best = (val, vloss, epoch, student.store.snapshot());
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    let epochs_run = history.len();
    let secs_per_epoch = start.elapsed().as_secs_f64() / epochs_run.max(1) as f64;
    student.store.restore(&best.3);
    let logits = student.predict(g)?;
    let inductive = split.mode == SplitMode::Inductive;
    let report = StudentReport {
        best_epoch: best.2,
        epochs_run,
        train_acc: accuracy(&logits, labels, &split.train),
        val_acc: accuracy(&logits, labels, &split.val),
        test_acc: accuracy(&logits, labels, &split.test),
        obs_acc: inductive.then(|| accuracy(&logits, labels, &split.obs)),
        ind_acc: inductive.then(|| accuracy(&logits, labels, &split.ind)),
        empty_samples,
        secs_per_epoch,
    };
    Ok(DistillResult {
        history,
        report,
        logits,
    })
}
