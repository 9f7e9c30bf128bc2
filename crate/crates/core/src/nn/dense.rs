use crate::error::{Error, Result};

use super::tensor::{Activation, Tensor};

/// Fully connected layer, `y = act(W x + b)` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "dense weights must be [out, in], got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::Shape(format!(
                "dense bias {:?} does not match {} outputs",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Forward on a raw slice; used on hot paths where a `Tensor` per row is
    /// unnecessary.
    pub fn forward_slice(&self, x: &[f32], out: &mut [f32]) {
        let n_in = self.inputs();
        debug_assert_eq!(x.len(), n_in);
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weights.data()[o * n_in..(o + 1) * n_in];
            let z: f32 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + self.bias.data()[o];
            *y = self.activation.apply(z);
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() != [self.inputs()] {
            return Err(Error::Shape(format!(
                "dense expects [{}], got {:?}",
                self.inputs(),
                input.shape()
            )));
        }
        let mut out = vec![0.0; self.outputs()];
        self.forward_slice(input.data(), &mut out);
        let t = Tensor::new(vec![self.outputs()], out)?;
        t.ensure_finite("dense forward")?;
        Ok(t)
    }

    /// Accumulates parameter gradients into `gw`/`gb` and writes the input
    /// gradient into `gx`. `y` is the forward output for `x`.
    pub fn backward_slice(
        &self,
        x: &[f32],
        y: &[f32],
        grad_out: &[f32],
        gx: Option<&mut [f32]>,
        gw: &mut [f32],
        gb: &mut [f32],
    ) {
        let n_in = self.inputs();
        let mut gx = gx;
        if let Some(g) = gx.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for o in 0..self.outputs() {
            let d = grad_out[o] * self.activation.derivative_from_output(y[o]);
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let grow = &mut gw[o * n_in..(o + 1) * n_in];
            for (g, v) in grow.iter_mut().zip(x) {
                *g += d * v;
            }
            if let Some(g) = gx.as_deref_mut() {
                let wrow = &self.weights.data()[o * n_in..(o + 1) * n_in];
                for (gi, w) in g.iter_mut().zip(wrow) {
                    *gi += d * w;
                }
            }
        }
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let y = self.forward(input)?;
        if grad_out.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "grad_out {:?} does not match dense output {:?}",
                grad_out.shape(),
                y.shape()
            )));
        }
        let mut gx = vec![0.0; self.inputs()];
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.outputs()];
        self.backward_slice(input.data(), y.data(), grad_out.data(), Some(&mut gx), &mut gw, &mut gb);
        let grads = DenseGrads {
            input: Tensor::new(vec![self.inputs()], gx)?,
            weights: Tensor::new(self.weights.shape().to_vec(), gw)?,
            bias: Tensor::new(vec![self.outputs()], gb)?,
        };
        for t in [&grads.input, &grads.weights, &grads.bias] {
            t.ensure_finite("dense backward")?;
        }
        Ok(grads)
    }
}

pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    layer.forward(input)
}

pub fn dense_backward(input: &Tensor, layer: &DenseLayer, grad_out: &Tensor) -> Result<DenseGrads> {
    layer.backward(input, grad_out)
}
