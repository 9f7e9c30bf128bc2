//! Minimal dense-array kernel: exactly the operators the fixed teacher and
//! student graphs need, with hand-written gradients and no autodiff graph.

mod adam;
mod conv;
mod dense;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dLayer, ConvCache, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use tensor::{Activation, Tensor};

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
