//! The `radkd` command line: simulate drives, fit the teacher, label,
//! train the student, evaluate, benchmark and run inference.
//!
//! Drives live in one directory as `drive-<seed>.radkd`; the label file for
//! a drive has the same stem with the `.labels` extension.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::par::Exec;
use crate::pipeline::{
    bench_pipelines, evaluate, train_on_prepared, BenchReport, DatasetPlan, DrivePredictions, PreparedDrive,
};
use crate::sim::{generate_drive, plan_drive, Drive, DriveSpec, LabelVector, ObjectKind};
use crate::student::StudentModel;
use crate::teacher::{feature_rows, fit_teacher_mlp, Teacher, TeacherConfig, TeacherTrainConfig};
use crate::train::{split_drives, TrainConfig};

pub const DRIVE_EXT: &str = "radkd";
pub const LABELS_EXT: &str = "labels";

#[derive(Debug, Parser)]
#[command(
    name = "radkd",
    version,
    about = "Teacher-student distillation for radar debris detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic drives, one file per seed.
    Simulate(SimulateArgs),
    /// Fit the teacher MLP on simulator ground truth.
    TrainTeacher(TrainTeacherArgs),
    /// Label drives with a trained teacher.
    Label(LabelArgs),
    /// Train the student on teacher labels.
    TrainStudent(TrainStudentArgs),
    /// Score the student against teacher labels and ground truth.
    Eval(EvalArgs),
    /// Per-frame latency of student and teacher on the same frames.
    Bench(BenchArgs),
    /// Run the student over one drive and write per-frame probabilities.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// DriveSpec JSON; defaults to the randomised scenario.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Half-open seed range `a..b`.
    #[arg(long, default_value = "1000..1050")]
    pub seeds: String,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub drives: PathBuf,
    /// JSON with optional `teacher` (TeacherConfig) and `training` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub drives: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainStudentArgs {
    #[arg(long)]
    pub drives: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// TrainConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub drives: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    /// Adds teacher range rows and teacher latency.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-frame CSV; defaults to `<report>.frames.csv`.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Which drives to score, using the split of the training config.
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
    /// TrainConfig JSON that defines the split.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub drives: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Overrides the teacher's accumulation depth K.
    #[arg(long)]
    pub accumulation_depth: Option<usize>,
    /// JSON output; defaults to `bench.json` in the drives directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub drive: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

/// Settings file for `train-teacher`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherJob {
    pub teacher: TeacherConfig,
    pub training: TeacherTrainConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::TrainTeacher(a) => train_teacher(&a),
        Command::Label(a) => label(&a),
        Command::TrainStudent(a) => train_student(&a),
        Command::Eval(a) => eval(&a),
        Command::Bench(a) => bench(&a),
        Command::Infer(a) => infer(&a),
    }
}

/// Parses `a..b` into the seeds `a, a+1, ..., b-1`; empty ranges are errors.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seed range `{s}` is not of the form a..b"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b <= a {
        return Err(Error::Config(format!("seed range `{s}` is empty")));
    }
    Ok((a..b).collect())
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(T::default()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn drive_file_name(seed: u64) -> String {
    format!("drive-{seed}.{DRIVE_EXT}")
}

/// Drive files in `dir`, sorted by name.
pub fn list_drives(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "drives directory {} does not exist",
            dir.display()
        )));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == DRIVE_EXT))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::UnusableDataset(format!(
            "no .{DRIVE_EXT} files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn labels_path_for(drive: &Path, labels_dir: &Path) -> PathBuf {
    let stem = drive.file_stem().unwrap_or_default();
    labels_dir.join(Path::new(stem).with_extension(LABELS_EXT))
}

fn read_paired(drive_path: &Path, labels_dir: &Path) -> Result<(Drive, Vec<Option<LabelVector>>)> {
    let drive = io::read_drive(drive_path)?;
    let labels = io::read_labels(labels_path_for(drive_path, labels_dir))?;
    io::check_label_pairing(&labels, &drive)?;
    Ok((drive, labels))
}

fn display_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec: DriveSpec = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => DatasetPlan::default().spec,
    };
    spec.validate()?;
    let seeds = parse_seed_range(&a.seeds)?;
    fs::create_dir_all(&a.out)?;
    for seed in seeds {
        let plan = plan_drive(&spec, seed)?;
        let debris = plan.objects.iter().filter(|o| o.kind == ObjectKind::Debris).count();
        let drive = generate_drive(&spec, seed)?;
        let positives: usize = drive.frames.iter().map(|f| f.ground_truth.count()).sum();
        let path = a.out.join(drive_file_name(seed));
        io::write_drive(&path, &drive)?;
        println!(
            "{}: frames {} debris {} clutter {} positive bins {}",
            path.display(),
            drive.frames.len(),
            debris,
            plan.objects.len() - debris,
            positives
        );
    }
    Ok(())
}

fn train_teacher(a: &TrainTeacherArgs) -> Result<()> {
    let job: TeacherJob = load_or_default(&a.config)?;
    let exec = Exec::default();
    let mut rows = Vec::new();
    for p in list_drives(&a.drives)? {
        let drive = io::read_drive(&p)?;
        rows.push(feature_rows(&drive, &job.teacher, exec)?);
    }
    let (params, history) = fit_teacher_mlp(&rows, &job.teacher, &job.training, exec)?;
    io::write_weights(&a.out, &io::ModelWeights::Teacher(params.clone()))?;
    let hist = a.history.clone().unwrap_or_else(|| with_suffix(&a.out, ".history.csv"));
    io::write_teacher_history(&hist, &history)?;
    let best = history
        .iter()
        .filter(|h| h.threshold == params.config.decision_threshold)
        .max_by(|x, y| x.val_r0.unwrap_or(0.0).total_cmp(&y.val_r0.unwrap_or(0.0)));
    println!("epochs run: {}", history.len() - 1);
    if let Some(b) = best {
        println!(
            "validation R0 {} at epoch {} (decision threshold {})",
            b.val_r0.map_or("n/a".into(), |r| format!("{r:.4}")),
            b.epoch,
            params.config.decision_threshold
        );
    }
    println!("wrote {} and {}", a.out.display(), hist.display());
    Ok(())
}

fn label(a: &LabelArgs) -> Result<()> {
    let params = io::read_teacher(&a.teacher)?;
    fs::create_dir_all(&a.out)?;
    let exec = Exec::default();
    let (mut frames, mut absent) = (0usize, 0usize);
    for p in list_drives(&a.drives)? {
        let drive = io::read_drive(&p)?;
        let teacher = Teacher::new(params.clone(), drive.geometry)?;
        let labels = teacher.label_drive(&drive, exec)?;
        let out = labels_path_for(&p, &a.out);
        io::write_labels(&out, &labels, drive.geometry.n_range)?;
        let n_absent = labels.iter().filter(|l| l.is_none()).count();
        println!("{}: {} frames, {} abstained", out.display(), labels.len(), n_absent);
        frames += labels.len();
        absent += n_absent;
    }
    let fraction = if frames == 0 {
        0.0
    } else {
        absent as f64 / frames as f64
    };
    println!("abstention fraction {fraction:.4} ({absent} of {frames} frames)");
    Ok(())
}

fn prepared(
    drives: &Path,
    labels: &Path,
    crop_offset: usize,
    config: &TrainConfig,
) -> Result<(Vec<PathBuf>, Vec<PreparedDrive>)> {
    let paths = list_drives(drives)?;
    let prepared = paths
        .iter()
        .map(|p| {
            let (d, l) = read_paired(p, labels)?;
            PreparedDrive::new(&d, l, crop_offset, config.input_scaling)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((paths, prepared))
}

fn train_student(a: &TrainStudentArgs) -> Result<()> {
    let config: TrainConfig = load_or_default(&a.config)?;
    config.validate()?;
    let exec = Exec::default();
    let model = StudentModel::init(config.seed).with_scaling(config.input_scaling);
    let (paths, drives) = prepared(&a.drives, &a.labels, model.crop_offset(), &config)?;
    let t0 = Instant::now();
    let (split, outcome) = train_on_prepared(&drives, model, &config, exec)?;
    io::write_weights(&a.out, &io::ModelWeights::Student(outcome.model.clone()))?;
    let hist = a.history.clone().unwrap_or_else(|| with_suffix(&a.out, ".history.csv"));
    io::write_student_history(&hist, &outcome.history)?;
    let names = |idx: &[usize]| {
        idx.iter()
            .map(|&i| display_name(&paths[i]))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("train drives: {}", names(&split.train));
    println!("val drives: {}", names(&split.val));
    println!("test drives: {}", names(&split.test));
    for h in &outcome.history {
        println!(
            "epoch {:>3} train {:.6} val {:.6} R0 {} R1 {}",
            h.epoch,
            h.train_loss,
            h.val_loss,
            h.val_r0.map_or("n/a".into(), |r| format!("{r:.4}")),
            h.val_r1.map_or("n/a".into(), |r| format!("{r:.4}"))
        );
    }
    println!(
        "best epoch {} after {:.1} s; wrote {} and {}",
        outcome.best_epoch,
        t0.elapsed().as_secs_f64(),
        a.out.display(),
        hist.display()
    );
    Ok(())
}

fn bins(v: &LabelVector) -> String {
    v.positives().map(|j| j.to_string()).collect::<Vec<_>>().join(" ")
}

fn eval(a: &EvalArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config("threshold must lie in (0, 1)".into()));
    }
    let student = io::read_student(&a.student)?;
    let teacher_params = a.teacher.as_ref().map(io::read_teacher).transpose()?;
    let config: TrainConfig = load_or_default(&a.config)?;
    let mut paths = list_drives(&a.drives)?;
    if a.split != SplitChoice::All {
        let split = split_drives(paths.len(), &config.split, config.seed)?;
        let idx = match a.split {
            SplitChoice::Train => split.train,
            SplitChoice::Val => split.val,
            _ => split.test,
        };
        paths = idx.into_iter().map(|i| paths[i].clone()).collect();
        if paths.is_empty() {
            return Err(Error::UnusableDataset("the chosen split has no drives".into()));
        }
    }
    let exec = Exec::default();
    let mut preds = Vec::with_capacity(paths.len());
    let mut geometry = None;
    let (mut student_ms, mut teacher_ms, mut timed) = (0.0f64, 0.0f64, 0usize);
    for p in &paths {
        let (drive, labels) = read_paired(p, &a.labels)?;
        geometry.get_or_insert(drive.geometry);
        let t = Instant::now();
        let probs = student.predict_drive(&drive, exec)?;
        student_ms += t.elapsed().as_secs_f64() * 1e3;
        if let Some(params) = &teacher_params {
            let teacher = Teacher::new(params.clone(), drive.geometry)?;
            let t = Instant::now();
            teacher.label_drive(&drive, exec)?;
            teacher_ms += t.elapsed().as_secs_f64() * 1e3;
        }
        timed += drive.frames.len();
        preds.push(DrivePredictions {
            name: display_name(p),
            speeds: drive.frames.iter().map(|f| f.host_speed).collect(),
            ground_truth: drive.frames.iter().map(|f| f.ground_truth.clone()).collect(),
            teacher_labels: labels,
            student_probabilities: probs,
            include_teacher: teacher_params.is_some(),
        });
    }
    let geometry = geometry.expect("at least one drive");
    let mut report = evaluate(&preds, &geometry, a.threshold)?;
    if timed > 0 {
        report.student_mean_latency_ms = Some(student_ms / timed as f64);
        if teacher_params.is_some() {
            report.teacher_mean_latency_ms = Some(teacher_ms / timed as f64);
            report.speedup_factor = Some(teacher_ms / student_ms);
        }
        report
            .notes
            .push("latencies are wall-clock per frame over whole drives with the default execution mode; use `bench` for controlled timing".into());
    }
    report.check()?;
    io::write_json(&a.report, &report)?;
    println!("{}", report.to_table());

    let frames_path = a
        .frames
        .clone()
        .unwrap_or_else(|| with_suffix(&a.report, ".frames.csv"));
    let mut rows = Vec::new();
    for d in &preds {
        let student_labels = d.student_labels(a.threshold);
        for (i, s) in student_labels.iter().enumerate() {
            rows.push(vec![
                d.name.clone(),
                i.to_string(),
                d.speeds[i].to_string(),
                d.teacher_labels[i].is_some().to_string(),
                d.teacher_labels[i].as_ref().map(bins).unwrap_or_default(),
                bins(s),
                bins(&d.ground_truth[i]),
            ]);
        }
    }
    io::write_csv(
        &frames_path,
        &[
            "drive",
            "frame",
            "hostSpeed",
            "teacherPresent",
            "teacherBins",
            "studentBins",
            "truthBins",
        ],
        rows,
    )?;
    println!("wrote {} and {}", a.report.display(), frames_path.display());
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    let student = io::read_student(&a.student)?;
    let mut params = io::read_teacher(&a.teacher)?;
    if let Some(k) = a.accumulation_depth {
        params.config.accumulation_depth = k;
    }
    let path = list_drives(&a.drives)?.remove(0);
    let drive = io::read_drive(&path)?;
    let teacher = Teacher::new(params, drive.geometry)?;
    let report: BenchReport = bench_pipelines(&drive, &student, &teacher, a.warmup, a.reps)?;
    println!("bench drive {}", display_name(&path));
    for (name, s) in [("student", report.student), ("teacher", report.teacher)] {
        println!(
            "{name:<8} mean {:.3} ms  median {:.3} ms  p95 {:.3} ms  ({} samples)",
            s.mean_ms, s.median_ms, s.p95_ms, s.samples
        );
    }
    println!(
        "accumulation depth K = {}; speedup factor {:.3}",
        report.accumulation_depth, report.speedup_factor
    );
    let out = a.out.clone().unwrap_or_else(|| a.drives.join("bench.json"));
    io::write_json(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config("threshold must lie in (0, 1)".into()));
    }
    let student = io::read_student(&a.student)?;
    let drive = io::read_drive(&a.drive)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(&a.out)?);
    let n = drive.geometry.n_range;
    write!(w, "frame")?;
    for j in 0..n {
        write!(w, ",p{j}")?;
    }
    writeln!(w, ",detections")?;
    for (i, f) in drive.frames.iter().enumerate() {
        let p = student.predict(&f.map)?;
        write!(w, "{i}")?;
        for v in &p {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", bins(&LabelVector::from_scores(&p, a.threshold)))?;
    }
    w.flush()?;
    println!("wrote {} rows to {}", drive.frames.len(), a.out.display());
    Ok(())
}
