//! The CNN student: crop the middle azimuth window, append CoordConv channels,
//! and run five convolutions down to one probability per range bin.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2dLayer, ConvCache, Tensor};
use crate::par::Exec;
use crate::sim::{Drive, RangeAzimuthMap};

pub const CROP_WIDTH: usize = 30;
pub const N_STAGES: usize = 5;
pub const INPUT_CHANNELS: usize = 3;

/// Centered crop offset for a map with `n_azimuth` bins.
pub fn default_crop_offset(n_azimuth: usize) -> usize {
    n_azimuth.saturating_sub(CROP_WIDTH) / 2
}

/// Copies azimuth bins `offset..offset + 30` of every range row.
pub fn crop_azimuth(map: &RangeAzimuthMap, offset: usize) -> Result<Vec<f32>> {
    if offset + CROP_WIDTH > map.n_azimuth() {
        return Err(Error::Config(format!(
            "crop offset {offset} + {CROP_WIDTH} exceeds {} azimuth bins",
            map.n_azimuth()
        )));
    }
    let mut out = Vec::with_capacity(map.n_range() * CROP_WIDTH);
    for j in 0..map.n_range() {
        out.extend_from_slice(&map.row(j)[offset..offset + CROP_WIDTH]);
    }
    Ok(out)
}

/// Range and azimuth coordinate channels, each `[n_range × n_azimuth]` row-major.
///
/// `R[n, :] = n / (n_range − 1)` and `A[:, m] = 2·|m − A_max/2| / A_max` with
/// `A_max = n_azimuth − 1`.
pub fn coordconv_channels(n_range: usize, n_azimuth: usize) -> (Vec<f32>, Vec<f32>) {
    let r_max = (n_range.max(2) - 1) as f64;
    let a_max = (n_azimuth.max(2) - 1) as f64;
    let mut r = Vec::with_capacity(n_range * n_azimuth);
    let mut a = Vec::with_capacity(n_range * n_azimuth);
    for n in 0..n_range {
        let rv = (n as f64 / r_max) as f32;
        for m in 0..n_azimuth {
            r.push(rv);
            a.push((2.0 * (m as f64 - a_max / 2.0).abs() / a_max) as f32);
        }
    }
    (r, a)
}

/// How the cropped magnitudes are scaled before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputScaling {
    Linear,
    #[default]
    Log1p,
}

impl InputScaling {
    pub fn tag(self) -> u8 {
        match self {
            InputScaling::Linear => 0,
            InputScaling::Log1p => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(InputScaling::Linear),
            1 => Some(InputScaling::Log1p),
            _ => None,
        }
    }

    pub fn apply(self, x: f32) -> f32 {
        match self {
            InputScaling::Linear => x,
            InputScaling::Log1p => (1.0 + x.max(0.0)).ln(),
        }
    }
}

/// Both coordinate channels for a `[n_range × 30]` crop, concatenated and
/// cached per range extent.
fn cached_coordconv(n_range: usize) -> Arc<Vec<f32>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f32>>>>> = OnceLock::new();
    let mut map = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    map.entry(n_range)
        .or_insert_with(|| {
            let (mut r, a) = coordconv_channels(n_range, CROP_WIDTH);
            r.extend_from_slice(&a);
            Arc::new(r)
        })
        .clone()
}

/// `[3, n_range, 30]` input from an already scaled crop.
pub fn assemble_input(scaled_crop: &[f32], n_range: usize) -> Result<Tensor> {
    if scaled_crop.len() != n_range * CROP_WIDTH {
        return Err(Error::Shape(format!(
            "crop holds {} values, expected {n_range}×{CROP_WIDTH}",
            scaled_crop.len()
        )));
    }
    let coords = cached_coordconv(n_range);
    let mut data = Vec::with_capacity(INPUT_CHANNELS * n_range * CROP_WIDTH);
    data.extend_from_slice(scaled_crop);
    data.extend_from_slice(&coords);
    Tensor::new(vec![INPUT_CHANNELS, n_range, CROP_WIDTH], data)
}

/// Cropped and scaled magnitudes, `[n_range × 30]`.
pub fn scaled_crop(map: &RangeAzimuthMap, offset: usize, scaling: InputScaling) -> Result<Vec<f32>> {
    let mut crop = crop_azimuth(map, offset)?;
    crop.iter_mut().for_each(|x| *x = scaling.apply(*x));
    if crop.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("student input"));
    }
    Ok(crop)
}

/// `[3, n_range, 30]`: scaled crop, range channel, azimuth channel.
pub fn student_input(map: &RangeAzimuthMap, offset: usize, scaling: InputScaling) -> Result<Tensor> {
    assemble_input(&scaled_crop(map, offset, scaling)?, map.n_range())
}

/// Layer shapes: (outC, inC, kernel, stride, padding, activation).
type Stage = (usize, usize, (usize, usize), (usize, usize), (usize, usize), Activation);

pub const STAGES: [Stage; N_STAGES] = [
    (8, 3, (5, 5), (1, 2), (2, 2), Activation::Relu),
    (16, 8, (3, 5), (1, 2), (1, 2), Activation::Relu),
    (16, 16, (3, 4), (1, 2), (1, 1), Activation::Relu),
    (16, 16, (3, 4), (1, 1), (1, 0), Activation::Relu),
    (1, 16, (3, 1), (1, 1), (1, 0), Activation::Sigmoid),
];

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    layers: Vec<Conv2dLayer>,
    crop_offset: usize,
    scaling: InputScaling,
}

/// Per-layer activations from a training forward pass.
pub struct StudentTrace {
    caches: Vec<ConvCache>,
}

impl StudentTrace {
    pub fn probabilities(&self) -> &[f32] {
        self.caches.last().expect("five stages").output().data()
    }
}

/// Gradients for every parameter tensor in [`StudentModel::params`] order.
#[derive(Debug, Clone)]
pub struct StudentGrads(pub Vec<Tensor>);

impl StudentGrads {
    pub fn zeros_like(model: &StudentModel) -> Self {
        StudentGrads(model.params().iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn add(&mut self, other: &StudentGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

/// The fixed five-stage network with all-zero weights and a centered crop.
pub fn default_architecture() -> StudentModel {
    let layers = STAGES
        .iter()
        .map(|&(o, i, k, s, p, a)| Conv2dLayer::zeros(o, i, k, s, p, a).expect("fixed stage"))
        .collect();
    StudentModel {
        layers,
        crop_offset: default_crop_offset(256),
        scaling: InputScaling::default(),
    }
}

impl StudentModel {
    /// Validates layers against the fixed stage table.
    pub fn from_layers(layers: Vec<Conv2dLayer>, crop_offset: usize, scaling: InputScaling) -> Result<Self> {
        if layers.len() != N_STAGES {
            return Err(Error::Shape(format!(
                "student has {} stages, expected {N_STAGES}",
                layers.len()
            )));
        }
        for (idx, (l, &(o, i, k, s, p, a))) in layers.iter().zip(STAGES.iter()).enumerate() {
            if l.out_channels() != o
                || l.in_channels() != i
                || l.kernel_size() != k
                || l.stride() != s
                || l.padding() != p
                || l.activation() != a
            {
                return Err(Error::Shape(format!(
                    "student stage {idx} does not match the fixed architecture"
                )));
            }
        }
        Ok(Self {
            layers,
            crop_offset,
            scaling,
        })
    }

    /// Uniform fan-in scaled weights (He bound for ReLU stages), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut model = default_architecture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let (kh, kw) = layer.kernel_size();
            let fan_in = (layer.in_channels() * kh * kw) as f32;
            let bound = match layer.activation() {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                _ => (3.0 / fan_in).sqrt(),
            };
            for w in layer.kernel_mut().data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn with_crop_offset(mut self, offset: usize) -> Self {
        self.crop_offset = offset;
        self
    }

    pub fn with_scaling(mut self, scaling: InputScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn layers(&self) -> &[Conv2dLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2dLayer] {
        &mut self.layers
    }

    pub fn crop_offset(&self) -> usize {
        self.crop_offset
    }

    pub fn scaling(&self) -> InputScaling {
        self.scaling
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2dLayer::param_count).sum()
    }

    /// Kernel and bias of each stage, in order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [l.kernel(), l.bias()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn input(&self, map: &RangeAzimuthMap) -> Result<Tensor> {
        student_input(map, self.crop_offset, self.scaling)
    }

    /// Probability per range bin for an already assembled input.
    pub fn forward_input(&self, input: &Tensor) -> Result<Vec<f32>> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x.into_data())
    }

    pub fn predict(&self, map: &RangeAzimuthMap) -> Result<Vec<f32>> {
        self.forward_input(&self.input(map)?)
    }

    pub fn predict_drive(&self, drive: &Drive, exec: Exec) -> Result<Vec<Vec<f32>>> {
        exec.try_map(&drive.frames, |f| self.predict(&f.map))
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<StudentTrace> {
        let mut caches: Vec<ConvCache> = Vec::with_capacity(N_STAGES);
        caches.push(self.layers[0].forward_cached(input)?);
        for layer in &self.layers[1..] {
            let next = layer.forward_cached(caches.last().expect("non-empty").output())?;
            caches.push(next);
        }
        Ok(StudentTrace { caches })
    }

    /// Back-propagates `grad_probs` (d loss / d probability, one per range bin).
    pub fn backward(&self, trace: &StudentTrace, grad_probs: &[f32]) -> Result<StudentGrads> {
        let out_shape = trace.caches[N_STAGES - 1].output().shape().to_vec();
        let mut grad = Tensor::new(out_shape, grad_probs.to_vec())?;
        let mut grads: Vec<Tensor> = Vec::with_capacity(2 * N_STAGES);
        for idx in (0..N_STAGES).rev() {
            let g = self.layers[idx].backward(&trace.caches[idx], &grad, idx > 0)?;
            grads.push(g.bias);
            grads.push(g.kernel);
            if let Some(gi) = g.input {
                grad = gi;
            }
        }
        grads.reverse();
        Ok(StudentGrads(grads))
    }
}

/// Probability vector for one frame.
pub fn student_forward(map: &RangeAzimuthMap, model: &StudentModel) -> Result<Vec<f32>> {
    model.predict(map)
}
