use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Tensor};

use super::features::N_FEATURES;

pub const HIDDEN: usize = 16;

/// Network input for a raw feature row: magnitudes and the CFAR ratio are
/// log-compressed, persistence and spread pass through.
pub fn mlp_input(f: &[f32; N_FEATURES]) -> [f32; N_FEATURES] {
    [
        f[0].max(0.0).ln_1p(),
        f[1].max(0.0).ln_1p(),
        f[2].max(0.0).ln_1p(),
        f[3],
        f[4],
    ]
}

/// The teacher's detection network, 5 → 16 → 16 → 1 (ReLU, ReLU, sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

const SHAPES: [(usize, usize, Activation); 3] = [
    (N_FEATURES, HIDDEN, Activation::Relu),
    (HIDDEN, HIDDEN, Activation::Relu),
    (HIDDEN, 1, Activation::Sigmoid),
];

impl Mlp {
    pub fn zeros() -> Self {
        Self {
            layers: SHAPES.iter().map(|&(i, o, a)| DenseLayer::zeros(i, o, a)).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = SHAPES
            .iter()
            .map(|&(i, o, a)| {
                let bound = (6.0 / (i + o) as f32).sqrt();
                let w = (0..i * o).map(|_| rng.random_range(-bound..bound)).collect();
                DenseLayer::new(Tensor::new(vec![o, i], w).expect("shape"), Tensor::zeros(&[o]), a).expect("shape")
            })
            .collect();
        Self { layers }
    }

    /// Checks layers against the fixed architecture.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != SHAPES.len() {
            return Err(Error::Shape(format!(
                "teacher MLP has {} layers, expected {}",
                layers.len(),
                SHAPES.len()
            )));
        }
        for (l, &(i, o, a)) in layers.iter().zip(&SHAPES) {
            if l.inputs() != i || l.outputs() != o || l.activation() != a {
                return Err(Error::Shape(format!(
                    "teacher MLP layer {}→{} {:?} does not match {}→{} {:?}",
                    l.inputs(),
                    l.outputs(),
                    l.activation(),
                    i,
                    o,
                    a
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Probability for one raw feature row.
    pub fn score(&self, features: &[f32; N_FEATURES]) -> f32 {
        self.forward_row(&mlp_input(features))
    }

    pub fn forward_row(&self, x: &[f32; N_FEATURES]) -> f32 {
        let mut h1 = [0.0f32; HIDDEN];
        let mut h2 = [0.0f32; HIDDEN];
        let mut out = [0.0f32; 1];
        self.layers[0].forward_slice(x, &mut h1);
        self.layers[1].forward_slice(&h1, &mut h2);
        self.layers[2].forward_slice(&h2, &mut out);
        out[0]
    }

    /// Accumulates `dL/dθ` for one row given `dL/dŷ` into `grads`, laid out
    /// as `[w0, b0, w1, b1, w2, b2]`. Returns the prediction.
    pub(crate) fn accumulate_row(
        &self,
        x: &[f32; N_FEATURES],
        dloss: impl Fn(f32) -> f32,
        grads: &mut [Vec<f32>; 6],
    ) -> f32 {
        let mut h1 = [0.0f32; HIDDEN];
        let mut h2 = [0.0f32; HIDDEN];
        let mut out = [0.0f32; 1];
        self.layers[0].forward_slice(x, &mut h1);
        self.layers[1].forward_slice(&h1, &mut h2);
        self.layers[2].forward_slice(&h2, &mut out);
        let g_out = [dloss(out[0])];
        let mut g2 = [0.0f32; HIDDEN];
        let mut g1 = [0.0f32; HIDDEN];
        let [w0, b0, w1, b1, w2, b2] = grads;
        self.layers[2].backward_slice(&h2, &out, &g_out, Some(&mut g2), w2, b2);
        self.layers[1].backward_slice(&h1, &h2, &g2, Some(&mut g1), w1, b1);
        self.layers[0].backward_slice(x, &h1, &g1, None, w0, b0);
        out[0]
    }

    /// Rewrites the first layer so the network takes raw features instead
    /// of `(x − mean) / std`.
    pub(crate) fn fold_input_normalisation(&mut self, mean: &[f32; N_FEATURES], std: &[f32; N_FEATURES]) {
        let first = &mut self.layers[0];
        let n_in = first.inputs();
        let n_out = first.outputs();
        let mut shift = vec![0.0f32; n_out];
        {
            let w = first.weights_mut().data_mut();
            for o in 0..n_out {
                for i in 0..n_in {
                    let scaled = w[o * n_in + i] / std[i];
                    w[o * n_in + i] = scaled;
                    shift[o] += scaled * mean[i];
                }
            }
        }
        for (b, s) in first.bias_mut().data_mut().iter_mut().zip(shift) {
            *b -= s;
        }
    }
}
