use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{Graph, SplitMode};
use crate::metrics::MeanStd;
use crate::numkit::checkpoint;
use crate::sadsd::{distill_train, AttentionSampler, EpochRecord};
use crate::students::StudentModel;
use crate::teachers::{save_teacher, train_teacher, TeacherArch, TeacherOutput, TeacherSidecar, TrainedTeacher};

use super::{for_each_seed, RunConfig};

/// Accuracies of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ind_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub train: MeanStd,
    pub val: MeanStd,
    pub test: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ind: Option<MeanStd>,
}

impl Summary {
    pub fn of(per_seed: &[SeedMetrics]) -> Self {
        let col = |f: fn(&SeedMetrics) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        let opt = |f: fn(&SeedMetrics) -> Option<f64>| {
            let v: Option<Vec<f64>> = per_seed.iter().map(f).collect();
            v.map(|v| MeanStd::of(&v))
        };
        Self {
            train: col(|s| s.train_acc),
            val: col(|s| s.val_acc),
            test: col(|s| s.test_acc),
            obs: opt(|s| s.obs_acc),
            ind: opt(|s| s.ind_acc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub params: usize,
    pub per_seed: Vec<SeedMetrics>,
    /// Absent when the model was not trained in this run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
}

impl ModelMetrics {
    fn new(model: String, params: usize, per_seed: Vec<SeedMetrics>) -> Self {
        let summary = (!per_seed.is_empty()).then(|| Summary::of(&per_seed));
        Self {
            model,
            params,
            per_seed,
            summary,
        }
    }
}

/// Wall-clock measurements, kept apart from the reproducible metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub teacher_secs_per_epoch: Vec<f64>,
    pub student_secs_per_epoch: Vec<f64>,
}

/// The reproducible part of a run report (`metrics.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub mode: SplitMode,
    pub seeds: Vec<u64>,
    pub teacher: ModelMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student: Option<ModelMetrics>,
    /// Teacher parameters over student parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub timing: Timing,
    /// Per-seed distillation histories (empty for teacher-only runs).
    pub histories: Vec<Vec<EpochRecord>>,
}

/// Where `distill` gets its teacher from.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherSource {
    /// Train one teacher per seed in-process.
    Live,
    /// Read `teacher_logits_seed{s}.bin` files written by `train-teacher`.
    Logits(PathBuf),
}

pub fn teacher_logits_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("teacher_logits_seed{seed}.bin"))
}

pub fn teacher_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("teacher_seed{seed}.ckpt"))
}

pub fn student_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("student_seed{seed}.ckpt"))
}

fn checkpoint_dir(out: Option<&Path>) -> Result<Option<PathBuf>> {
    match out {
        None => Ok(None),
        Some(o) => {
            let d = o.join("checkpoints");
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            Ok(Some(d))
        }
    }
}

/// Teacher checkpoint plus the logits `--teacher-logits` reads back.
fn save_teacher_outputs(dir: &Path, cfg: &RunConfig, arch: TeacherArch, seed: u64, t: &TrainedTeacher) -> Result<()> {
    let side = TeacherSidecar {
        arch,
        hyper: cfg.teacher_hyper,
        seed,
        best_epoch: t.report.best_epoch,
        val_acc: t.report.val_acc,
        test_acc: t.report.test_acc,
    };
    save_teacher(&teacher_checkpoint_path(dir, seed), &t.model, &side)?;
    checkpoint::save_matrix(&teacher_logits_path(dir, seed), &t.output.logits)
}

struct TeacherSeed {
    metrics: SeedMetrics,
    params: usize,
    secs_per_epoch: f64,
}

/// Trains one teacher per seed. With `out`, writes checkpoints, the
/// training-graph logits of every seed, and the reports.
pub fn run_teachers(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let g = cfg.load_graph()?;
    let ckpt = checkpoint_dir(out)?;
    let seeds = for_each_seed(&cfg.seeds, |seed| {
        let split = cfg.split(&g, seed)?;
        let arch = cfg.teacher_arch(&g);
        let t = train_teacher(&g, &split, arch.clone(), cfg.teacher_hyper, seed)?;
        log::info!("teacher seed {seed}: test {:.2}", t.report.test_acc);
        if let Some(d) = &ckpt {
            save_teacher_outputs(d, cfg, arch, seed, &t)?;
        }
        let r = &t.report;
        Ok(TeacherSeed {
            metrics: SeedMetrics {
                seed,
                best_epoch: r.best_epoch,
                epochs_run: r.epochs_run,
                train_acc: r.train_acc,
                val_acc: r.val_acc,
                test_acc: r.test_acc,
                obs_acc: r.obs_acc,
                ind_acc: r.ind_acc,
            },
            params: t.model.count_params(),
            secs_per_epoch: r.secs_per_epoch,
        })
    })?;
    let output = RunOutput {
        metrics: MetricsRecord {
            dataset: cfg.dataset_name(),
            mode: cfg.mode,
            seeds: cfg.seeds.clone(),
            teacher: ModelMetrics::new(
                cfg.teacher.to_string(),
                seeds[0].params,
                seeds.iter().map(|s| s.metrics.clone()).collect(),
            ),
            student: None,
            compression: None,
        },
        timing: Timing {
            teacher_secs_per_epoch: seeds.iter().map(|s| s.secs_per_epoch).collect(),
            student_secs_per_epoch: Vec::new(),
        },
        histories: Vec::new(),
    };
    if let Some(o) = out {
        write_reports(o, cfg, &output)?;
    }
    Ok(output)
}

struct DistillSeed {
    teacher: Option<TeacherSeed>,
    student: SeedMetrics,
    student_params: usize,
    secs_per_epoch: f64,
    history: Vec<EpochRecord>,
}

/// Teacher (live or from stored logits), then SA-DSD distillation, per seed.
/// With `out`, live teachers are saved like `run_teachers` saves them.
pub fn run_distill(cfg: &RunConfig, source: &TeacherSource, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let g = cfg.load_graph()?;
    let ckpt = checkpoint_dir(out)?;
    let seeds = for_each_seed(&cfg.seeds, |seed| distill_seed(cfg, &g, source, ckpt.as_deref(), seed))?;

    let teacher = match source {
        TeacherSource::Live => {
            let ts: Vec<&TeacherSeed> = seeds.iter().map(|s| s.teacher.as_ref().expect("live teacher")).collect();
            ModelMetrics::new(
                cfg.teacher.to_string(),
                ts[0].params,
                ts.iter().map(|t| t.metrics.clone()).collect(),
            )
        }
        TeacherSource::Logits(_) => ModelMetrics::new(
            cfg.teacher.to_string(),
            crate::teachers::TeacherModel::new(cfg.teacher_arch(&g), 0)?.count_params(),
            Vec::new(),
        ),
    };
    let student = ModelMetrics::new(
        cfg.student.kind.to_string(),
        seeds[0].student_params,
        seeds.iter().map(|s| s.student.clone()).collect(),
    );
    let compression = Some(teacher.params as f64 / student.params as f64);
    let output = RunOutput {
        metrics: MetricsRecord {
            dataset: cfg.dataset_name(),
            mode: cfg.mode,
            seeds: cfg.seeds.clone(),
            teacher,
            student: Some(student),
            compression,
        },
        timing: Timing {
            teacher_secs_per_epoch: seeds.iter().filter_map(|s| s.teacher.as_ref().map(|t| t.secs_per_epoch)).collect(),
            student_secs_per_epoch: seeds.iter().map(|s| s.secs_per_epoch).collect(),
        },
        histories: seeds.into_iter().map(|s| s.history).collect(),
    };
    if let Some(o) = out {
        write_reports(o, cfg, &output)?;
    }
    Ok(output)
}

fn distill_seed(
    cfg: &RunConfig,
    g: &Graph,
    source: &TeacherSource,
    ckpt: Option<&Path>,
    seed: u64,
) -> Result<DistillSeed> {
    let split = cfg.split(g, seed)?;
    let (teacher_out, teacher) = match source {
        TeacherSource::Live => {
            let t = train_teacher(g, &split, cfg.teacher_arch(g), cfg.teacher_hyper, seed)?;
            if let Some(d) = ckpt {
                save_teacher_outputs(d, cfg, cfg.teacher_arch(g), seed, &t)?;
            }
            let r = &t.report;
            let ts = TeacherSeed {
                metrics: SeedMetrics {
                    seed,
                    best_epoch: r.best_epoch,
                    epochs_run: r.epochs_run,
                    train_acc: r.train_acc,
                    val_acc: r.val_acc,
                    test_acc: r.test_acc,
                    obs_acc: r.obs_acc,
                    ind_acc: r.ind_acc,
                },
                params: t.model.count_params(),
                secs_per_epoch: r.secs_per_epoch,
            };
            (t.output, Some(ts))
        }
        TeacherSource::Logits(dir) => {
            let logits = checkpoint::read_matrix(&teacher_logits_path(dir, seed))?;
            (TeacherOutput::new(logits, 1.0)?, None)
        }
    };
    let mut student = StudentModel::new(cfg.student_arch(g), seed)?;
    let mut sampler = AttentionSampler::new(g.n_feats(), cfg.distill.attn_dim, cfg.distill.beta, seed)?;
    let res = distill_train(g, &split, &teacher_out, &mut student, &mut sampler, &cfg.distill, seed)?;
    log::info!("student seed {seed}: test {:.2}", res.report.test_acc);
    if let Some(d) = ckpt {
        student.save(&student_checkpoint_path(d, seed))?;
    }
    let r = &res.report;
    Ok(DistillSeed {
        teacher,
        student: SeedMetrics {
            seed,
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
            train_acc: r.train_acc,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            obs_acc: r.obs_acc,
            ind_acc: r.ind_acc,
        },
        student_params: student.count_params(),
        secs_per_epoch: r.secs_per_epoch,
        history: res.history,
    })
}

/// `config.json`, `metrics.json`, `timing.json`, `results.csv` and one
/// `history_seed{s}.jsonl` per distilled seed.
pub fn write_reports(out: &Path, cfg: &RunConfig, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("metrics.json"), &run.metrics)?;
    write_json(&out.join("timing.json"), &run.timing)?;
    let csv = out.join("results.csv");
    fs::write(&csv, results_csv(&run.metrics)).map_err(|e| Error::io(&csv, e))?;
    for (seed, history) in cfg.seeds.iter().zip(&run.histories) {
        let p = out.join(format!("history_seed{seed}.jsonl"));
        let mut body = String::new();
        for rec in history {
            body.push_str(&serde_json::to_string(rec)?);
            body.push('\n');
        }
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// One row per (model, seed).
pub fn results_csv(m: &MetricsRecord) -> String {
    let mut s = String::from("role,model,seed,params,best_epoch,train_acc,val_acc,test_acc,obs_acc,ind_acc\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let models = std::iter::once(("teacher", &m.teacher)).chain(m.student.as_ref().map(|s| ("student", s)));
    for (role, mm) in models {
        for r in &mm.per_seed {
            let _ = writeln!(
                s,
                "{role},{},{},{},{},{:.4},{:.4},{:.4},{},{}",
                mm.model,
                r.seed,
                mm.params,
                r.best_epoch,
                r.train_acc,
                r.val_acc,
                r.test_acc,
                opt(r.obs_acc),
                opt(r.ind_acc)
            );
        }
    }
    s
}
