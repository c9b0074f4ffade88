//! Multi-seed orchestration, reports, benchmarking and sweeps behind the CLI.

mod config;
mod run;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::Graph;
use crate::metrics::MeanStd;
use crate::numkit::checkpoint;
use crate::students::StudentModel;
use crate::teachers::{load_teacher, train_teacher, GraphContext, TeacherModel};

pub use config::{RunConfig, StudentSpec};
pub use run::{
    results_csv, run_distill, run_teachers, student_checkpoint_path, teacher_checkpoint_path, teacher_logits_path,
    write_reports, MetricsRecord, ModelMetrics, RunOutput, SeedMetrics, Summary, TeacherSource, Timing,
};

/// Worker threads for seed fan-out: `KDST_THREADS`, default 1.
pub fn worker_count() -> usize {
    std::env::var("KDST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs `f` for every seed on up to `worker_count()` threads and returns the
/// results in seed order. The first error (in seed order) wins.
pub fn for_each_seed<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let workers = worker_count().min(seeds.len()).max(1);
    if workers == 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = (0..seeds.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Median and spread of repeated timings, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub runs: usize,
}

/// Times `f` `runs` times after `warmup` untimed calls.
pub fn measure_latency(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(Error::Config("latency needs at least one run".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut t = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64() * 1e3);
    }
    t.sort_by(f64::total_cmp);
    let median_ms = if runs % 2 == 1 {
        t[runs / 2]
    } else {
        0.5 * (t[runs / 2 - 1] + t[runs / 2])
    };
    Ok(LatencyStats {
        median_ms,
        min_ms: t[0],
        max_ms: t[runs - 1],
        runs,
    })
}

pub const LATENCY_WARMUP: usize = 10;
pub const LATENCY_RUNS: usize = 100;

/// Teacher-versus-student size and full-graph inference latency. The ratio
/// compares these two models only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub teacher: String,
    pub student: String,
    pub teacher_params: usize,
    pub student_params: usize,
    /// Teacher parameters over student parameters.
    pub compression: f64,
    pub teacher_latency: LatencyStats,
    pub student_latency: LatencyStats,
}

pub fn teacher_latency(model: &TeacherModel, g: &Graph, warmup: usize, runs: usize) -> Result<LatencyStats> {
    let ctx = GraphContext::new(g);
    measure_latency(warmup, runs, || model.predict_with(g, &ctx).map(drop))
}

pub fn student_latency(model: &StudentModel, g: &Graph, warmup: usize, runs: usize) -> Result<LatencyStats> {
    measure_latency(warmup, runs, || model.predict(g).map(drop))
}

pub fn benchmark_models(teacher: &TeacherModel, student: &StudentModel, g: &Graph) -> Result<BenchReport> {
    let (tp, sp) = (teacher.count_params(), student.count_params());
    Ok(BenchReport {
        teacher: teacher.arch.kind.to_string(),
        student: student.arch.kind.to_string(),
        teacher_params: tp,
        student_params: sp,
        compression: tp as f64 / sp as f64,
        teacher_latency: teacher_latency(teacher, g, LATENCY_WARMUP, LATENCY_RUNS)?,
        student_latency: student_latency(student, g, LATENCY_WARMUP, LATENCY_RUNS)?,
    })
}

/// Loads both checkpoints (each with its `.json` sidecar) and benchmarks them on `g`.
pub fn benchmark_checkpoints(teacher: &Path, student: &Path, g: &Graph) -> Result<BenchReport> {
    let (t, _) = load_teacher(teacher)?;
    let s = StudentModel::load(student)?;
    if t.arch.in_dim != g.n_feats() || s.arch.in_dim != g.n_feats() {
        return Err(Error::Config("checkpoint input width does not match the dataset".into()));
    }
    benchmark_models(&t, &s, g)
}

/// One cell of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f32,
    pub grid: usize,
    pub test: MeanStd,
    pub params: usize,
}

/// Distils every `(λ, g)` pair over `cfg.seeds`, training one teacher per
/// seed and reusing it across the grid. Rows are ordered by λ, then g.
pub fn sweep(cfg: &RunConfig, lambdas: &[f32], grids: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let g = cfg.load_graph()?;
    let teachers = for_each_seed(&cfg.seeds, |seed| {
        let split = cfg.split(&g, seed)?;
        let t = train_teacher(&g, &split, cfg.teacher_arch(&g), cfg.teacher_hyper, seed)?;
        Ok((split, t.output))
    })?;
    let mut rows = Vec::with_capacity(lambdas.len() * grids.len());
    for &lambda in lambdas {
        for &grid in grids {
            let mut c = cfg.clone();
            c.distill.lambda = lambda;
            c.student.grid = grid;
            c.validate()?;
            let accs = for_each_seed(&cfg.seeds, |seed| {
                let i = cfg.seeds.iter().position(|&s| s == seed).expect("seed from list");
                let (split, teacher) = &teachers[i];
                let mut student = StudentModel::new(c.student_arch(&g), seed)?;
                let mut sampler =
                    crate::sadsd::AttentionSampler::new(g.n_feats(), c.distill.attn_dim, c.distill.beta, seed)?;
                let r = crate::sadsd::distill_train(&g, split, teacher, &mut student, &mut sampler, &c.distill, seed)?;
                Ok((r.report.test_acc, student.count_params()))
            })?;
            let test = MeanStd::of(&accs.iter().map(|a| a.0).collect::<Vec<_>>());
            log::info!("sweep lambda {lambda} grid {grid}: {test}");
            rows.push(SweepRow {
                lambda,
                grid,
                test,
                params: accs[0].1,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,grid,mean_acc,std_acc,params\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4},{:.4},{}\n", r.lambda, r.grid, r.test.mean, r.test.std, r.params));
    }
    s
}

/// Writes the student's representation of every node (last hidden layer, or
/// logits without one) as a matrix file, and the labels as little-endian i32.
pub fn export_embeddings(student: &StudentModel, g: &Graph, embeddings: &Path, labels: &Path) -> Result<()> {
    let emb = student.embed(g)?;
    checkpoint::save_matrix(embeddings, &emb)?;
    let bytes: Vec<u8> = g.labels().iter().flat_map(|&l| (l as i32).to_le_bytes()).collect();
    fs::write(labels, bytes).map_err(|e| Error::io(labels, e))
}
