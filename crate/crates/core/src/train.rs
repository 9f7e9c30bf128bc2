//! Student training: selective filtering, weighted MSE, Adam with early
//! stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::r_scores;
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::par::Exec;
use crate::sim::{LabelVector, RangeAzimuthMap};
use crate::student::{assemble_input, scaled_crop, InputScaling, StudentGrads, StudentModel, CROP_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub split: SplitFractions,
    pub seed: u64,
    /// Use each frame's own `|Y⁻|/|Y⁺|` instead of the training-set ratio.
    pub per_frame_weight: bool,
    pub decision_threshold: f32,
    pub input_scaling: InputScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 30,
            early_stop_patience: 5,
            split: SplitFractions::default(),
            seed: 7,
            per_frame_weight: false,
            decision_threshold: 0.5,
            input_scaling: InputScaling::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|f| !(0.0..=1.0).contains(f))
            || (s.train + s.val + s.test - 1.0).abs() > 1e-6
        {
            return Err(Error::Config(format!(
                "split fractions must be in [0,1] and sum to 1, got {s:?}"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batchSize must be at least 1".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::Config("decisionThreshold must lie in (0, 1)".into()));
        }
        let a = self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Drive indices assigned to each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriveSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Whole-drive split after a seeded shuffle. Counts are rounded, with the
/// remainder going to the test split.
pub fn split_drives(n_drives: usize, fractions: &SplitFractions, seed: u64) -> Result<DriveSplit> {
    let mut idx: Vec<usize> = (0..n_drives).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n_drives as f64) * fractions.train).round() as usize;
    let n_val = (((n_drives as f64) * fractions.val).round() as usize).min(n_drives - n_train.min(n_drives));
    let n_train = n_train.min(n_drives);
    let mut split = DriveSplit {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Frames where the teacher produced a label with at least one positive.
pub fn selective_filter(labels: &[Option<LabelVector>]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().filter(|l| l.any()).map(|_| i))
        .collect()
}

/// One training example. Only the scaled crop is stored; the coordinate
/// channels are appended by [`LabeledSample::input`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    crop: Vec<f32>,
    pub target: LabelVector,
    pub weight_pos: f32,
}

impl LabeledSample {
    pub fn new(map: &RangeAzimuthMap, offset: usize, scaling: InputScaling, target: LabelVector) -> Result<Self> {
        Self::from_crop(scaled_crop(map, offset, scaling)?, target)
    }

    /// From a crop already passed through the model's input scaling.
    pub fn from_crop(crop: Vec<f32>, target: LabelVector) -> Result<Self> {
        if crop.len() != target.len() * CROP_WIDTH {
            return Err(Error::Shape(format!(
                "crop holds {} values for a {}-bin label",
                crop.len(),
                target.len()
            )));
        }
        Ok(Self {
            crop,
            weight_pos: frame_weight(&target).unwrap_or(1.0),
            target,
        })
    }

    pub fn n_range(&self) -> usize {
        self.target.len()
    }

    /// `[3, n_range, 30]` network input.
    pub fn input(&self) -> Tensor {
        assemble_input(&self.crop, self.n_range()).expect("crop length checked on construction")
    }
}

fn frame_weight(target: &LabelVector) -> Option<f32> {
    let pos = target.count();
    (pos > 0).then(|| (target.len() - pos) as f32 / pos as f32)
}

/// `|Y⁻| / |Y⁺|` over every element of every target.
pub fn positive_weight<'a>(targets: impl IntoIterator<Item = &'a LabelVector>) -> Result<f32> {
    let (mut pos, mut total) = (0u64, 0u64);
    for t in targets {
        pos += t.count() as u64;
        total += t.len() as u64;
    }
    if pos == 0 {
        return Err(Error::UnusableDataset(
            "no positive bins in the training targets".into(),
        ));
    }
    Ok(((total - pos) as f64 / pos as f64) as f32)
}

/// Sets every sample's positive weight: the global ratio, or each frame's own.
pub fn assign_weights(samples: &mut [LabeledSample], per_frame: bool) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::UnusableDataset("no training samples".into()));
    }
    if per_frame {
        for s in samples.iter_mut() {
            s.weight_pos =
                frame_weight(&s.target).ok_or_else(|| Error::UnusableDataset("sample without positives".into()))?;
        }
    } else {
        let w = positive_weight(samples.iter().map(|s| &s.target))?;
        samples.iter_mut().for_each(|s| s.weight_pos = w);
    }
    Ok(())
}

/// Per-element weights: `weight_pos` on positives, 1 elsewhere.
pub fn element_weights(target: &LabelVector, weight_pos: f32) -> Vec<f32> {
    target
        .bins()
        .iter()
        .map(|&b| if b { weight_pos } else { 1.0 })
        .collect()
}

fn check_batch(pred: &[Vec<f32>], target: &[LabelVector], weight_pos: &[f32]) -> Result<()> {
    if pred.len() != target.len() || pred.len() != weight_pos.len() {
        return Err(Error::Shape(format!(
            "wmse batch sizes differ: {} predictions, {} targets, {} weights",
            pred.len(),
            target.len(),
            weight_pos.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("wmse over an empty batch".into()));
    }
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() || t.len() != target[0].len() {
            return Err(Error::Shape(format!(
                "prediction {} vs target {} bins",
                p.len(),
                t.len()
            )));
        }
    }
    Ok(())
}

/// Mean over all `N × M` elements of `w (ŷ − y)²`.
pub fn wmse(pred: &[Vec<f32>], target: &[LabelVector], weight_pos: &[f32]) -> Result<f64> {
    check_batch(pred, target, weight_pos)?;
    let m = target[0].len();
    let mut sum = 0.0f64;
    for ((p, t), &w) in pred.iter().zip(target).zip(weight_pos) {
        sum += frame_sse(p, t, w);
    }
    Ok(sum / (pred.len() * m) as f64)
}

fn frame_sse(p: &[f32], t: &LabelVector, w: f32) -> f64 {
    p.iter()
        .zip(t.bins())
        .map(|(&yh, &y)| {
            let d = yh as f64 - if y { 1.0 } else { 0.0 };
            if y {
                w as f64 * d * d
            } else {
                d * d
            }
        })
        .sum()
}

/// `∂wmse/∂ŷ = 2 w (ŷ − y) / (N·M)`.
pub fn wmse_gradient(pred: &[Vec<f32>], target: &[LabelVector], weight_pos: &[f32]) -> Result<Vec<Vec<f32>>> {
    check_batch(pred, target, weight_pos)?;
    let scale = 2.0 / (pred.len() * target[0].len()) as f32;
    Ok(pred
        .iter()
        .zip(target)
        .zip(weight_pos)
        .map(|((p, t), &w)| frame_gradient(p, t, w, scale))
        .collect())
}

fn frame_gradient(p: &[f32], t: &LabelVector, w: f32, scale: f32) -> Vec<f32> {
    p.iter()
        .zip(t.bins())
        .map(|(&yh, &y)| if y { scale * w * (yh - 1.0) } else { scale * yh })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_r0: Option<f64>,
    pub val_r1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StudentModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Loss and thresholded predictions of `model` over `samples`.
pub fn evaluate_samples(
    model: &StudentModel,
    samples: &[LabeledSample],
    threshold: f32,
    exec: Exec,
) -> Result<(f64, Vec<LabelVector>)> {
    let probs = exec.try_map(samples, |s| model.forward_input(&s.input()))?;
    let m = samples.first().map_or(1, LabeledSample::n_range);
    let sse: f64 = probs
        .iter()
        .zip(samples)
        .map(|(p, s)| frame_sse(p, &s.target, s.weight_pos))
        .sum();
    let loss = sse / (samples.len().max(1) * m) as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite evaluation loss {loss}")));
    }
    let labels = probs.iter().map(|p| LabelVector::from_scores(p, threshold)).collect();
    Ok((loss, labels))
}

fn validation_record(
    model: &StudentModel,
    val: &[LabeledSample],
    epoch: usize,
    train_loss: f64,
    threshold: f32,
    exec: Exec,
) -> Result<EpochRecord> {
    let (val_loss, pred) = evaluate_samples(model, val, threshold, exec)?;
    let truth: Vec<LabelVector> = val.iter().map(|s| s.target.clone()).collect();
    let (val_r0, val_r1) = r_scores(&truth, &pred)?;
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_loss,
        val_r0,
        val_r1,
    })
}

/// Adam on WMSE. Epoch 0 in the history is the untrained model. Stops once the
/// validation loss has not improved for `early_stop_patience` epochs and
/// returns the best-validation checkpoint. When `val` is empty the training
/// loss stands in for the validation loss.
pub fn train_student(
    train: &[LabeledSample],
    val: &[LabeledSample],
    model: StudentModel,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::UnusableDataset(
            "no training samples after selective filtering".into(),
        ));
    }
    if train.iter().all(|s| !s.target.any()) {
        return Err(Error::UnusableDataset("training targets contain no positives".into()));
    }
    let threshold = config.decision_threshold;
    let monitor = if val.is_empty() { train } else { val };

    let mut model = model;
    let mut adam = AdamState::new(config.adam, model.params());
    let (train0, _) = evaluate_samples(&model, train, threshold, exec)?;
    let mut history = vec![validation_record(&model, monitor, 0, train0, threshold, exec)?];
    let mut best = (history[0].val_loss, 0usize, model.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = train[0].n_range();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let scale = 2.0 / (batch.len() * m) as f32;
            let per_sample = exec.try_map(batch, |&i| -> Result<(f64, StudentGrads)> {
                let s = &train[i];
                let trace = model.forward_trace(&s.input())?;
                let p = trace.probabilities();
                let g = frame_gradient(p, &s.target, s.weight_pos, scale);
                Ok((frame_sse(p, &s.target, s.weight_pos), model.backward(&trace, &g)?))
            })?;
            let mut grads = StudentGrads::zeros_like(&model);
            for (loss, g) in &per_sample {
                sse += loss;
                grads.add(g);
            }
            let grad_refs: Vec<&Tensor> = grads.0.iter().collect();
            let mut params = model.params_mut();
            adam.step(&mut params, &grad_refs)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
        }
        let train_loss = sse / (train.len() * m) as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: training loss {train_loss}")));
        }
        let record = validation_record(&model, monitor, epoch, train_loss, threshold, exec)?;
        let improved = record.val_loss < best.0;
        history.push(record);
        if improved {
            best = (history[epoch].val_loss, epoch, model.clone());
        } else if epoch - best.1 >= config.early_stop_patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        best_epoch: best.1,
        history,
    })
}
