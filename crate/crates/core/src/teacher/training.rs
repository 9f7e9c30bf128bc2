use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::r_scores;
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::par::Exec;
use crate::sim::{Drive, LabelVector, RadarGeometry};

use super::features::{FeatureVector, N_FEATURES};
use super::mlp::{mlp_input, Mlp};
use super::{postprocess, Teacher, TeacherConfig, TeacherParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TeacherTrainConfig {
    pub adam: AdamConfig,
    /// Rows (range bins) per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of drives held out for early stopping.
    pub validation_fraction: f64,
    /// Candidate decision thresholds; the one with the best validation R₀
    /// replaces `decisionThreshold` in the trained parameters. Empty keeps
    /// the configured threshold.
    pub threshold_grid: Vec<f32>,
    pub seed: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                lr: 2e-4,
                ..AdamConfig::default()
            },
            batch_size: 256,
            max_epochs: 80,
            patience: 5,
            validation_fraction: 0.2,
            threshold_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99],
            seed: 11,
        }
    }
}

impl TeacherTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batchSize and maxEpochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validationFraction must lie in [0, 1)".into()));
        }
        if self.threshold_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("thresholdGrid values must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Exact-bin recall of the post-processed labels against ground truth on
    /// the validation drives, at `threshold`.
    pub val_r0: Option<f64>,
    pub threshold: f32,
}

/// Features and ground truth for every frame the teacher does not abstain on,
/// restricted to bins `first_bin..` outside the near-field blind zone.
#[derive(Debug, Clone, Default)]
pub struct FeatureRows {
    pub first_bin: usize,
    pub frames: Vec<(Vec<FeatureVector>, LabelVector)>,
}

/// Collects feature rows for one drive with the given teacher settings.
pub fn feature_rows(drive: &Drive, config: &TeacherConfig, exec: Exec) -> Result<FeatureRows> {
    let teacher = Teacher::new(
        TeacherParams {
            config: *config,
            mlp: Mlp::zeros(),
        },
        drive.geometry,
    )?;
    let k = config.accumulation_depth;
    let first = teacher.first_bin();
    let frames = exec.try_map_range(drive.frames.len(), |i| {
        if i + 1 < k {
            return Ok(None);
        }
        let history: Vec<_> = drive.frames[i + 1 - k..=i].iter().collect();
        match teacher.features(&history) {
            Ok(f) => Ok(Some((
                f[first..].to_vec(),
                LabelVector::from_bools(drive.frames[i].ground_truth.bins()[first..].to_vec()),
            ))),
            Err(Error::BelowCriticalSpeed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    Ok(FeatureRows {
        first_bin: first,
        frames: frames.into_iter().flatten().collect(),
    })
}

struct Standardiser {
    mean: [f32; N_FEATURES],
    std: [f32; N_FEATURES],
}

impl Standardiser {
    fn fit(rows: &[&FeatureRows]) -> Self {
        let mut sum = [0.0f64; N_FEATURES];
        let mut sq = [0.0f64; N_FEATURES];
        let mut n = 0u64;
        for r in rows {
            for (feats, _) in &r.frames {
                for f in feats {
                    let x = mlp_input(f);
                    for d in 0..N_FEATURES {
                        sum[d] += x[d] as f64;
                        sq[d] += (x[d] as f64).powi(2);
                    }
                    n += 1;
                }
            }
        }
        let n = n.max(1) as f64;
        let mut mean = [0.0f32; N_FEATURES];
        let mut std = [1.0f32; N_FEATURES];
        for d in 0..N_FEATURES {
            let m = sum[d] / n;
            let v = (sq[d] / n - m * m).max(0.0);
            mean[d] = m as f32;
            if v.sqrt() > 1e-6 {
                std[d] = v.sqrt() as f32;
            }
        }
        Self { mean, std }
    }

    fn apply(&self, f: &FeatureVector) -> [f32; N_FEATURES] {
        let x = mlp_input(f);
        std::array::from_fn(|d| (x[d] - self.mean[d]) / self.std[d])
    }
}

struct Table {
    x: Vec<[f32; N_FEATURES]>,
    y: Vec<bool>,
    /// Row offsets of each frame, for post-processing per frame.
    frames: Vec<(usize, usize)>,
}

impl Table {
    fn build(rows: &[&FeatureRows], norm: &Standardiser) -> Self {
        let mut t = Table {
            x: Vec::new(),
            y: Vec::new(),
            frames: Vec::new(),
        };
        for r in rows {
            for (feats, truth) in &r.frames {
                let start = t.x.len();
                t.x.extend(feats.iter().map(|f| norm.apply(f)));
                t.y.extend_from_slice(truth.bins());
                t.frames.push((start, t.x.len()));
            }
        }
        t
    }
}

fn row_loss(p: f32, y: bool, w: f32) -> f64 {
    let d = (p - if y { 1.0 } else { 0.0 }) as f64;
    if y {
        w as f64 * d * d
    } else {
        d * d
    }
}

/// Validation loss, plus the best R₀ over `thresholds` and the first
/// threshold reaching it.
fn evaluate(mlp: &Mlp, t: &Table, w: f32, thresholds: &[f32]) -> Result<(f64, Option<f64>, f32)> {
    let probs: Vec<f32> = t.x.iter().map(|x| mlp.forward_row(x)).collect();
    let loss = probs.iter().zip(&t.y).map(|(&p, &y)| row_loss(p, y, w)).sum::<f64>() / t.x.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("teacher MLP loss {loss}")));
    }
    let truth: Vec<LabelVector> = t
        .frames
        .iter()
        .map(|&(a, b)| LabelVector::from_bools(t.y[a..b].to_vec()))
        .collect();
    let mut best: Option<(Option<f64>, f32)> = None;
    for &threshold in thresholds {
        let pred: Vec<LabelVector> = t
            .frames
            .iter()
            .map(|&(a, b)| postprocess(&probs[a..b], threshold))
            .collect();
        let (r0, _) = r_scores(&truth, &pred)?;
        if best.is_none_or(|(b, _)| r0.unwrap_or(0.0) > b.unwrap_or(0.0)) {
            best = Some((r0, threshold));
        }
    }
    let (r0, threshold) = best.expect("at least one threshold");
    Ok((loss, r0, threshold))
}

const CHUNK: usize = 64;

/// Fits the teacher MLP on simulator ground truth with the weighted MSE used
/// for the student, holding out whole drives for early stopping on R₀.
/// Feature standardisation is folded into the first layer of the result.
pub fn train_teacher_mlp(
    drives: &[Drive],
    config: &TeacherConfig,
    train_config: &TeacherTrainConfig,
    exec: Exec,
) -> Result<(TeacherParams, Vec<TeacherEpoch>)> {
    let geometry: RadarGeometry = drives
        .first()
        .ok_or_else(|| Error::UnusableDataset("no drives to train the teacher on".into()))?
        .geometry;
    if drives.iter().any(|d| d.geometry != geometry) {
        return Err(Error::Config("teacher training drives differ in geometry".into()));
    }
    let rows = exec.try_map(drives, |d| feature_rows(d, config, Exec::Sequential))?;
    fit_teacher_mlp(&rows, config, train_config, exec)
}

/// As [`train_teacher_mlp`] on precomputed per-drive feature rows.
pub fn fit_teacher_mlp(
    rows: &[FeatureRows],
    config: &TeacherConfig,
    train_config: &TeacherTrainConfig,
    exec: Exec,
) -> Result<(TeacherParams, Vec<TeacherEpoch>)> {
    config.validate()?;
    train_config.validate()?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    order.shuffle(&mut rng);
    let n_val = if rows.len() > 1 {
        ((rows.len() as f64 * train_config.validation_fraction).round() as usize).min(rows.len() - 1)
    } else {
        0
    };
    let val_rows: Vec<&FeatureRows> = order[..n_val].iter().map(|&i| &rows[i]).collect();
    let train_rows: Vec<&FeatureRows> = order[n_val..].iter().map(|&i| &rows[i]).collect();

    let norm = Standardiser::fit(&train_rows);
    let train = Table::build(&train_rows, &norm);
    if train.x.is_empty() {
        return Err(Error::UnusableDataset(
            "teacher abstained on every training frame".into(),
        ));
    }
    let val = if val_rows.is_empty() {
        None
    } else {
        Some(Table::build(&val_rows, &norm))
    };
    let positives = train.y.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::UnusableDataset(
            "no ground-truth positives in teacher training data".into(),
        ));
    }
    let w = (train.y.len() - positives) as f32 / positives as f32;
    let thresholds = if train_config.threshold_grid.is_empty() {
        vec![config.decision_threshold]
    } else {
        train_config.threshold_grid.clone()
    };

    let mut mlp = Mlp::random(train_config.seed);
    let mut adam = {
        let params: Vec<&Tensor> = mlp.layers().iter().flat_map(|l| [l.weights(), l.bias()]).collect();
        AdamState::new(train_config.adam, params)
    };
    let monitor = val.as_ref().unwrap_or(&train);
    let (train0, _, _) = evaluate(&mlp, &train, w, &thresholds[..1])?;
    let (val0, r0, thr0) = evaluate(&mlp, monitor, w, &thresholds)?;
    let mut history = vec![TeacherEpoch {
        epoch: 0,
        train_loss: train0,
        val_loss: val0,
        val_r0: r0,
        threshold: thr0,
    }];
    // Checkpoint on validation R₀, ties broken by validation loss.
    let key = |r0: Option<f64>, loss: f64| (r0.unwrap_or(0.0), -loss);
    let mut best = (key(r0, val0), 0usize, mlp.clone(), thr0);
    let mut idx: Vec<usize> = (0..train.x.len()).collect();

    for epoch in 1..=train_config.max_epochs {
        idx.shuffle(&mut rng);
        let mut sse = 0.0f64;
        for batch in idx.chunks(train_config.batch_size) {
            let scale = 2.0 / batch.len() as f32;
            let parts = exec.map(&batch.chunks(CHUNK).collect::<Vec<_>>(), |chunk| {
                let mut g = zero_grads(&mlp);
                let mut loss = 0.0f64;
                for &r in *chunk {
                    let y = train.y[r];
                    let target = if y { 1.0 } else { 0.0 };
                    let wt = if y { w } else { 1.0 };
                    let p = mlp.accumulate_row(&train.x[r], |p| scale * wt * (p - target), &mut g);
                    loss += row_loss(p, y, w);
                }
                (loss, g)
            });
            let mut total = zero_grads(&mlp);
            for (loss, g) in parts {
                sse += loss;
                for (t, part) in total.iter_mut().zip(g.iter()) {
                    for (a, b) in t.iter_mut().zip(part) {
                        *a += b;
                    }
                }
            }
            let shapes: Vec<Vec<usize>> = mlp
                .layers()
                .iter()
                .flat_map(|l| [l.weights().shape().to_vec(), l.bias().shape().to_vec()])
                .collect();
            let grads: Vec<Tensor> = total
                .into_iter()
                .zip(shapes)
                .map(|(g, s)| Tensor::new(s, g))
                .collect::<Result<_>>()?;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> = mlp.layers_mut().iter_mut().flat_map(|l| l.params_mut()).collect();
            adam.step(&mut params, &grad_refs)
                .map_err(|e| Error::Divergence(format!("teacher epoch {epoch}: {e}")))?;
        }
        let train_loss = sse / train.x.len() as f64;
        let (val_loss, val_r0, threshold) = evaluate(&mlp, monitor, w, &thresholds)?;
        history.push(TeacherEpoch {
            epoch,
            train_loss,
            val_loss,
            val_r0,
            threshold,
        });
        let k = key(val_r0, val_loss);
        if k > best.0 {
            best = (k, epoch, mlp.clone(), threshold);
        } else if epoch - best.1 >= train_config.patience {
            break;
        }
    }
    let mut mlp = best.2;
    mlp.fold_input_normalisation(&norm.mean, &norm.std);
    Ok((
        TeacherParams {
            config: TeacherConfig {
                decision_threshold: best.3,
                ..*config
            },
            mlp,
        },
        history,
    ))
}

fn zero_grads(mlp: &Mlp) -> [Vec<f32>; 6] {
    let l = mlp.layers();
    [
        vec![0.0; l[0].weights().len()],
        vec![0.0; l[0].bias().len()],
        vec![0.0; l[1].weights().len()],
        vec![0.0; l[1].bias().len()],
        vec![0.0; l[2].weights().len()],
        vec![0.0; l[2].bias().len()],
    ]
}
