//! End-to-end orchestration shared by the command-line tool and the
//! acceptance suite: dataset generation, teacher fitting and labelling,
//! student training, evaluation, and latency benchmarking.
//!
//! Drives are reduced to [`PreparedDrive`]s (scaled student crops, labels,
//! speeds) as soon as they are labelled, so full maps never pile up in memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bench, first_detection_range, score_frames, DriveColumn, EvalReport, LatencyStats, ScoreSet};
use crate::par::Exec;
use crate::sim::{generate_drive_with, Drive, DriveSpec, LabelVector, RadarGeometry};
use crate::student::{assemble_input, scaled_crop, InputScaling, StudentModel};
use crate::teacher::{
    feature_rows, fit_teacher_mlp, Teacher, TeacherConfig, TeacherEpoch, TeacherParams, TeacherTrainConfig,
};
use crate::train::{
    assign_weights, selective_filter, split_drives, train_student, DriveSplit, LabeledSample, TrainConfig, TrainOutcome,
};

/// Seeds and scene generator for the default synthetic dataset. The teacher
/// is fitted on its own drives, disjoint from the student's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct DatasetPlan {
    pub spec: DriveSpec,
    pub seeds: Vec<u64>,
    pub teacher_seeds: Vec<u64>,
}

impl Default for DatasetPlan {
    fn default() -> Self {
        Self {
            spec: DriveSpec {
                n_frames: 81,
                ..DriveSpec::default_scenario()
            },
            seeds: (1000..1050).collect(),
            teacher_seeds: (9000..9032).collect(),
        }
    }
}

/// What the student pipeline keeps of a labelled drive.
#[derive(Debug, Clone)]
pub struct PreparedDrive {
    pub seed: u64,
    pub geometry: RadarGeometry,
    pub speeds: Vec<f32>,
    pub ground_truth: Vec<LabelVector>,
    pub teacher_labels: Vec<Option<LabelVector>>,
    crops: Vec<Vec<f32>>,
    crop_offset: usize,
    scaling: InputScaling,
}

impl PreparedDrive {
    pub fn new(
        drive: &Drive,
        teacher_labels: Vec<Option<LabelVector>>,
        crop_offset: usize,
        scaling: InputScaling,
    ) -> Result<Self> {
        if teacher_labels.len() != drive.frames.len() {
            return Err(Error::Shape(format!(
                "{} labels for a drive of {} frames",
                teacher_labels.len(),
                drive.frames.len()
            )));
        }
        let crops = drive
            .frames
            .iter()
            .map(|f| scaled_crop(&f.map, crop_offset, scaling))
            .collect::<Result<_>>()?;
        Ok(Self {
            seed: drive.seed,
            geometry: drive.geometry,
            speeds: drive.frames.iter().map(|f| f.host_speed).collect(),
            ground_truth: drive.frames.iter().map(|f| f.ground_truth.clone()).collect(),
            teacher_labels,
            crops,
            crop_offset,
            scaling,
        })
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    /// Frames admitted by the selective-training rule.
    pub fn samples(&self) -> Result<Vec<LabeledSample>> {
        selective_filter(&self.teacher_labels)
            .into_iter()
            .map(|i| {
                let target = self.teacher_labels[i].clone().expect("filter keeps present labels");
                LabeledSample::from_crop(self.crops[i].clone(), target)
            })
            .collect()
    }

    pub fn student_probabilities(&self, model: &StudentModel, exec: Exec) -> Result<Vec<Vec<f32>>> {
        if model.crop_offset() != self.crop_offset || model.scaling() != self.scaling {
            return Err(Error::Config(
                "student crop offset or input scaling differs from the prepared drive".into(),
            ));
        }
        let n = self.geometry.n_range;
        exec.try_map(&self.crops, |c| model.forward_input(&assemble_input(c, n)?))
    }
}

/// Generates and labels one drive, keeping only what the student side needs.
pub fn prepare_drive(
    spec: &DriveSpec,
    seed: u64,
    teacher: &Teacher,
    crop_offset: usize,
    scaling: InputScaling,
    exec: Exec,
) -> Result<PreparedDrive> {
    let drive = generate_drive_with(spec, seed, exec)?;
    let labels = teacher.label_drive(&drive, exec)?;
    PreparedDrive::new(&drive, labels, crop_offset, scaling)
}

/// Fits the teacher MLP on ground truth of freshly generated drives.
pub fn fit_teacher(
    spec: &DriveSpec,
    seeds: &[u64],
    config: &TeacherConfig,
    train_config: &TeacherTrainConfig,
    exec: Exec,
) -> Result<(TeacherParams, Vec<TeacherEpoch>)> {
    let rows = seeds
        .iter()
        .map(|&s| feature_rows(&generate_drive_with(spec, s, exec)?, config, exec))
        .collect::<Result<Vec<_>>>()?;
    fit_teacher_mlp(&rows, config, train_config, exec)
}

/// Training samples from every drive, with positive weights assigned.
pub fn build_samples(drives: &[&PreparedDrive], per_frame_weight: bool) -> Result<Vec<LabeledSample>> {
    let mut samples = Vec::new();
    for d in drives {
        samples.extend(d.samples()?);
    }
    assign_weights(&mut samples, per_frame_weight)?;
    Ok(samples)
}

/// Validation samples weighted with the training set's global ratio.
pub fn weighted_like(
    drives: &[&PreparedDrive],
    train: &[LabeledSample],
    per_frame_weight: bool,
) -> Result<Vec<LabeledSample>> {
    let mut samples = Vec::new();
    for d in drives {
        samples.extend(d.samples()?);
    }
    if per_frame_weight {
        if !samples.is_empty() {
            assign_weights(&mut samples, true)?;
        }
    } else if let Some(w) = train.first().map(|s| s.weight_pos) {
        samples.iter_mut().for_each(|s| s.weight_pos = w);
    }
    Ok(samples)
}

/// Whole-drive split, selective filtering and student training.
pub fn train_on_prepared(
    drives: &[PreparedDrive],
    model: StudentModel,
    config: &TrainConfig,
    exec: Exec,
) -> Result<(DriveSplit, TrainOutcome)> {
    let split = split_drives(drives.len(), &config.split, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &drives[i]).collect::<Vec<_>>();
    let train = build_samples(&pick(&split.train), config.per_frame_weight)?;
    let val = weighted_like(&pick(&split.val), &train, config.per_frame_weight)?;
    let outcome = train_student(&train, &val, model, config, exec)?;
    Ok((split, outcome))
}

/// Student predictions and optional teacher labels for one drive, ready to
/// be scored.
#[derive(Debug, Clone)]
pub struct DrivePredictions {
    pub name: String,
    pub speeds: Vec<f32>,
    pub ground_truth: Vec<LabelVector>,
    pub teacher_labels: Vec<Option<LabelVector>>,
    pub student_probabilities: Vec<Vec<f32>>,
    /// Whether `teacher_labels` should also be reported as a detector.
    pub include_teacher: bool,
}

impl DrivePredictions {
    pub fn from_prepared(
        drive: &PreparedDrive,
        model: &StudentModel,
        include_teacher: bool,
        exec: Exec,
    ) -> Result<Self> {
        Ok(Self {
            name: format!("seed {}", drive.seed),
            speeds: drive.speeds.clone(),
            ground_truth: drive.ground_truth.clone(),
            teacher_labels: drive.teacher_labels.clone(),
            student_probabilities: drive.student_probabilities(model, exec)?,
            include_teacher,
        })
    }

    pub fn student_labels(&self, threshold: f32) -> Vec<LabelVector> {
        self.student_probabilities
            .iter()
            .map(|p| LabelVector::from_scores(p, threshold))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every drive and the pooled set; latency fields are left empty.
pub fn evaluate(drives: &[DrivePredictions], geometry: &RadarGeometry, threshold: f32) -> Result<EvalReport> {
    let mut columns = Vec::with_capacity(drives.len());
    let (mut all_t, mut all_gt, mut all_p) = (Vec::new(), Vec::new(), Vec::new());
    let mut teacher_gt = (Vec::new(), Vec::new());
    let mut with_teacher = false;
    for d in drives {
        let pred = d.student_labels(threshold);
        let gt: Vec<Option<LabelVector>> = d.ground_truth.iter().cloned().map(Some).collect();
        let student_pred: Vec<Option<LabelVector>> = pred.iter().cloned().map(Some).collect();
        let teacher_range = if d.include_teacher {
            with_teacher = true;
            for (t, g) in d.teacher_labels.iter().zip(&d.ground_truth) {
                if let Some(t) = t {
                    teacher_gt.0.push(Some(g.clone()));
                    teacher_gt.1.push(t.clone());
                }
            }
            Some(first_detection_range(&d.ground_truth, &d.teacher_labels, geometry)?)
        } else {
            None
        };
        columns.push(DriveColumn {
            name: d.name.clone(),
            student_max_range_m: first_detection_range(&d.ground_truth, &student_pred, geometry)?,
            teacher_max_range_m: teacher_range,
            vs_teacher: score_frames(&d.teacher_labels, &pred)?,
            vs_ground_truth: score_frames(&gt, &pred)?,
        });
        all_t.extend(d.teacher_labels.iter().cloned());
        all_gt.extend(gt);
        all_p.extend(pred);
    }
    let overall = DriveColumn {
        name: "all".into(),
        student_max_range_m: mean(columns.iter().map(|c| c.student_max_range_m)).unwrap_or(0.0),
        teacher_max_range_m: if with_teacher {
            mean(columns.iter().filter_map(|c| c.teacher_max_range_m))
        } else {
            None
        },
        vs_teacher: score_frames(&all_t, &all_p)?,
        vs_ground_truth: score_frames(&all_gt, &all_p)?,
    };
    let teacher_vs_ground_truth: Option<ScoreSet> = if with_teacher {
        Some(score_frames(&teacher_gt.0, &teacher_gt.1)?)
    } else {
        None
    };
    let report = EvalReport {
        decision_threshold: threshold,
        drives: columns,
        overall,
        teacher_vs_ground_truth,
        student_mean_latency_ms: None,
        teacher_mean_latency_ms: None,
        speedup_factor: None,
        notes: vec!["ground-truth rows compare against simulator truth, which a real deployment does not have".into()],
    };
    report.check()?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchReport {
    pub student: LatencyStats,
    pub teacher: LatencyStats,
    pub accumulation_depth: usize,
    pub speedup_factor: f64,
}

/// Per-frame latency of both pipelines on the same frames of `drive`,
/// single-threaded. Only frames where the teacher does its full work (history
/// filled, host above critical speed) are timed.
pub fn bench_pipelines(
    drive: &Drive,
    student: &StudentModel,
    teacher: &Teacher,
    warmup: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let k = teacher.config().accumulation_depth;
    let frames: Vec<usize> = (k.saturating_sub(1)..drive.frames.len())
        .filter(|&i| drive.frames[i].host_speed >= teacher.config().min_speed)
        .collect();
    if frames.is_empty() {
        return Err(Error::UnusableDataset(
            "no frame of the benchmark drive is above the critical speed with a full history".into(),
        ));
    }
    let student_stats = bench(frames.len(), warmup, repetitions, |i| {
        std::hint::black_box(student.predict(&drive.frames[frames[i]].map)?);
        Ok(())
    })?;
    let teacher_stats = bench(frames.len(), warmup, repetitions, |i| {
        let f = frames[i];
        let history: Vec<_> = drive.frames[f + 1 - k..=f].iter().collect();
        std::hint::black_box(teacher.process(&history)?);
        Ok(())
    })?;
    Ok(BenchReport {
        student: student_stats,
        teacher: teacher_stats,
        accumulation_depth: k,
        speedup_factor: teacher_stats.mean_ms / student_stats.mean_ms,
    })
}
