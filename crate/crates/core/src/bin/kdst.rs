use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kdst::bench::{self, RunConfig, TeacherSource};
use kdst::graphio::{import_linqs, load_graph, save_graph, SplitMode};
use kdst::students::{StudentKind, StudentModel};
use kdst::teachers::TeacherKind;
use kdst::{Error, Result};

#[derive(Parser)]
#[command(name = "kdst", version, about = "Distil GNN teachers into Fourier-KAN students")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one teacher per seed and report accuracies.
    TrainTeacher(RunArgs),
    /// Train (or load) teachers and distil students with SA-DSD.
    Distill(DistillArgs),
    /// Parameter counts and inference latency of a teacher/student checkpoint pair.
    Benchmark(BenchArgs),
    /// Distil over a grid of λ and grid sizes.
    Sweep(SweepArgs),
    /// Dump student node representations and labels.
    ExportEmbeddings(ExportArgs),
    /// Convert a LINQS citation dump (`<stem>.content` / `<stem>.cites`) into a dataset directory.
    ImportDataset(ImportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<SplitMode>,
    #[arg(long, value_enum, alias = "arch")]
    teacher: Option<TeacherKind>,
    #[arg(long, value_enum)]
    student: Option<StudentKind>,
    /// Seed count (`5` means 0..5) or an explicit list (`0,3,7`).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Hidden widths of the student, comma separated; empty for none.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    ind_fraction: Option<f64>,
    /// L1-normalise every feature row before training.
    #[arg(long)]
    row_normalize: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory with `teacher_logits_seed{s}.bin` from `train-teacher`
    /// (its `checkpoints/` folder) instead of training teachers here.
    #[arg(long)]
    teacher_logits: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    teacher_checkpoint: PathBuf,
    #[arg(long)]
    student_checkpoint: PathBuf,
    #[arg(long)]
    row_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    lambdas: String,
    #[arg(long, default_value = "1,2,4,8")]
    grids: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    student_checkpoint: PathBuf,
    #[arg(long)]
    row_normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory holding `<stem>.content` and `<stem>.cites`.
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    stem: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if s.contains(',') {
        return parse_list(s, "seed");
    }
    let n: u64 = s.trim().parse().map_err(|_| Error::Config(format!("bad seed count '{s}'")))?;
    Ok((0..n).collect())
}

impl RunArgs {
    /// Defaults, then the JSON file, then explicit flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = v.clone();
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.teacher {
            c.teacher = v;
        }
        if let Some(v) = self.student {
            c.student.kind = v;
        }
        if let Some(v) = &self.seeds {
            c.seeds = parse_seeds(v)?;
        }
        if let Some(v) = self.lambda {
            c.distill.lambda = v;
        }
        if let Some(v) = self.tau {
            c.distill.tau = v;
        }
        if let Some(v) = self.grid_size {
            c.student.grid = v;
        }
        if let Some(v) = &self.hidden {
            c.student.hidden = parse_list(v, "hidden width")?;
        }
        if let Some(v) = self.ind_fraction {
            c.ind_fraction = v;
        }
        if self.row_normalize {
            c.row_normalize = true;
        }
        if let Some(v) = self.epochs {
            c.teacher_hyper.epochs = v;
            c.distill.epochs = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    println!("effective config: {}", serde_json::to_string(cfg)?);
    Ok(())
}

fn print_summary(m: &bench::MetricsRecord) {
    let line = |role: &str, mm: &bench::ModelMetrics| {
        let Some(s) = &mm.summary else {
            return;
        };
        print!("{role} {} ({} params): test {}", mm.model, mm.params, s.test);
        if let (Some(o), Some(i)) = (s.obs, s.ind) {
            print!(", obs {o}, ind {i}");
        }
        println!();
    };
    line("teacher", &m.teacher);
    if let Some(s) = &m.student {
        line("student", s);
    }
    if let Some(c) = m.compression {
        println!("teacher/student parameter ratio {c:.2}x");
    }
}

fn read_graph(dir: &Path, row_normalize: bool) -> Result<kdst::graphio::Graph> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} not found", dir.display())));
    }
    let mut g = load_graph(dir)?;
    if row_normalize {
        g.row_normalize_features();
    }
    Ok(g)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::TrainTeacher(a) => {
            let cfg = a.resolve()?;
            echo_config(&cfg)?;
            let out = a.out_or("runs/teacher");
            let r = bench::run_teachers(&cfg, Some(&out))?;
            print_summary(&r.metrics);
            println!("reports in {}", out.display());
        }
        Command::Distill(a) => {
            let cfg = a.run.resolve()?;
            echo_config(&cfg)?;
            let out = a.run.out_or("runs/distill");
            let source = match a.teacher_logits {
                Some(d) => TeacherSource::Logits(d),
                None => TeacherSource::Live,
            };
            let r = bench::run_distill(&cfg, &source, Some(&out))?;
            print_summary(&r.metrics);
            println!("reports in {}", out.display());
        }
        Command::Benchmark(a) => {
            let g = read_graph(&a.dataset, a.row_normalize)?;
            let r = bench::benchmark_checkpoints(&a.teacher_checkpoint, &a.student_checkpoint, &g)?;
            println!(
                "{}: {} params, median {:.3} ms | {}: {} params, median {:.3} ms | teacher/student parameter ratio {:.2}x",
                r.teacher,
                r.teacher_params,
                r.teacher_latency.median_ms,
                r.student,
                r.student_params,
                r.student_latency.median_ms,
                r.compression
            );
            if let Some(out) = a.out {
                std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
                let p = out.join("benchmark.json");
                std::fs::write(&p, serde_json::to_string_pretty(&r)? + "\n").map_err(|e| Error::Io { path: p, source: e })?;
            }
        }
        Command::Sweep(a) => {
            let mut cfg = a.run.resolve()?;
            if a.run.seeds.is_none() && a.run.config.is_none() {
                cfg.seeds = vec![0, 1];
            }
            echo_config(&cfg)?;
            let lambdas: Vec<f32> = parse_list(&a.lambdas, "lambda")?;
            let grids: Vec<usize> = parse_list(&a.grids, "grid size")?;
            if lambdas.is_empty() || grids.is_empty() {
                return Err(Error::Config("sweep needs at least one lambda and one grid size".into()));
            }
            let rows = bench::sweep(&cfg, &lambdas, &grids)?;
            let out = a.run.out_or("runs/sweep");
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let p = out.join("sweep.csv");
            let csv = bench::sweep_csv(&rows);
            print!("{csv}");
            std::fs::write(&p, csv).map_err(|e| Error::Io { path: p, source: e })?;
        }
        Command::ExportEmbeddings(a) => {
            let g = read_graph(&a.dataset, a.row_normalize)?;
            let s = StudentModel::load(&a.student_checkpoint)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
            bench::export_embeddings(&s, &g, &a.out.join("embeddings.bin"), &a.out.join("labels.bin"))?;
            println!("wrote {}", a.out.display());
        }
        Command::ImportDataset(a) => {
            let g = import_linqs(&a.src, &a.stem)?;
            save_graph(&g, &a.out)?;
            println!(
                "{} nodes, {} edges, {} features, {} classes -> {}",
                g.n_nodes(),
                g.n_edges(),
                g.n_feats(),
                g.n_classes(),
                a.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
