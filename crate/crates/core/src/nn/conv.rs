use crate::error::{Error, Result};

use super::tensor::{Activation, Tensor};

/// 2-D cross-correlation layer over a `[C, H, W]` input with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    kernel: Tensor,
    bias: Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
    activation: Activation,
}

/// Values kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_shape: [usize; 3],
    plan: Plan,
    /// `[m × kH·kW·C]` receptive fields, one row per virtual output.
    patches: Vec<f32>,
    output: Tensor,
}

impl ConvCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Patch layout. Output `(oy, ox)` maps to virtual row `oy·ow_v + ox`,
/// whose receptive field for kernel row `ki` starts at float
/// `ki·wp·c + row·row_stride` of the padded channels-last buffer.
#[derive(Debug, Clone)]
struct Plan {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    /// Padded row width in pixels, widened so rows tile the stride.
    wp: usize,
    ow_v: usize,
    row_stride: usize,
    m: usize,
    buf_len: usize,
}

impl Conv2dLayer {
    pub fn new(
        kernel: Tensor,
        bias: Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
        activation: Activation,
    ) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "conv kernel must be [outC, inC, kH, kW], got {:?}",
                kernel.shape()
            )));
        }
        if bias.shape() != [kernel.shape()[0]] {
            return Err(Error::Shape(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                kernel.shape()[0]
            )));
        }
        if kernel.shape().contains(&0) {
            return Err(Error::Shape("conv kernel has a zero extent".into()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
            activation,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_size: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        activation: Activation,
    ) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, kernel_size.0, kernel_size.1]),
            Tensor::zeros(&[out_channels]),
            stride,
            padding,
            activation,
        )
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut Tensor {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.kernel, &mut self.bias]
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Output spatial extents for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let axis = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = n + 2 * p;
            if padded < k {
                return Err(Error::Shape(format!(
                    "kernel extent {k} exceeds padded input extent {padded}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(h, kh, self.stride.0, self.padding.0)?,
            axis(w, kw, self.stride.1, self.padding.1)?,
        ))
    }

    fn geometry(&self, input: &Tensor) -> Result<Geometry> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("conv input must be [C, H, W], got {s:?}")));
        }
        if s[0] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                s[0]
            )));
        }
        let (oh, ow) = self.output_extent(s[1], s[2])?;
        Ok(Geometry {
            c: s[0],
            h: s[1],
            w: s[2],
            oh,
            ow,
        })
    }

    fn plan(&self, g: &Geometry) -> Plan {
        let (kh, kw) = self.kernel_size();
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let c = g.c;
        let mut wp = g.w + 2 * pw;
        let (ow_v, row_stride) = if g.ow == 1 {
            (1, sh * wp * c)
        } else {
            while !(sh * wp).is_multiple_of(sw) {
                wp += 1;
            }
            (sh * wp / sw, sw * c)
        };
        let m = g.oh * ow_v;
        let hp = g.h + 2 * ph;
        let reach = (kh - 1) * wp * c + (m - 1) * row_stride + kw * c;
        Plan {
            c,
            h: g.h,
            w: g.w,
            oh: g.oh,
            ow: g.ow,
            wp,
            ow_v,
            row_stride,
            m,
            buf_len: reach.max(hp * wp * c),
        }
    }

    /// `[C, H, W]` into a zero-padded `[H + 2pH, Wp, C]` buffer.
    fn pad_channels_last(&self, input: &[f32], plan: &Plan) -> Vec<f32> {
        let (ph, pw) = self.padding;
        let (c, h, w, wp) = (plan.c, plan.h, plan.w, plan.wp);
        let mut buf = vec![0.0f32; plan.buf_len];
        for ci in 0..c {
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for y in 0..h {
                let base = ((y + ph) * wp + pw) * c + ci;
                for (x, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                    buf[base + x * c] = v;
                }
            }
        }
        buf
    }

    /// Kernel as a `[kH·kW·C, outC]` matrix with rows ordered `(ki, kj, c)`.
    fn kernel_matrix(&self) -> Vec<f32> {
        let [oc, c, kh, kw] = self.kernel_dims();
        let k = self.kernel.data();
        let mut out = vec![0.0f32; kh * kw * c * oc];
        for o in 0..oc {
            for ci in 0..c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        out[((ki * kw + kj) * c + ci) * oc + o] = k[((o * c + ci) * kh + ki) * kw + kj];
                    }
                }
            }
        }
        out
    }

    /// Gathers every virtual row's receptive field; each kernel row is one
    /// contiguous run of `kW·C` floats in the padded buffer.
    fn patches(&self, padded: &[f32], plan: &Plan) -> Vec<f32> {
        let [_, c, kh, kw] = self.kernel_dims();
        let run = kw * c;
        let kdim = kh * run;
        let mut out = vec![0.0f32; plan.m * kdim];
        for (r, row) in out.chunks_exact_mut(kdim).enumerate() {
            for (ki, dst) in row.chunks_exact_mut(run).enumerate() {
                let start = ki * plan.wp * c + r * plan.row_stride;
                dst.copy_from_slice(&padded[start..start + run]);
            }
        }
        out
    }

    fn kernel_dims(&self) -> [usize; 4] {
        let s = self.kernel.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Forward pass keeping what [`Conv2dLayer::backward`] needs.
    pub fn forward_cached(&self, input: &Tensor) -> Result<ConvCache> {
        let g = self.geometry(input)?;
        let plan = self.plan(&g);
        let padded = self.pad_channels_last(input.data(), &plan);
        let patches = self.patches(&padded, &plan);
        drop(padded);
        let [oc, c, kh, kw] = self.kernel_dims();
        let kdim = kh * kw * c;
        let wmat = self.kernel_matrix();
        // Virtual output rows r = oy·ow_v + ox; columns ox ≥ ow are discarded.
        let mut virt = vec![0.0f32; plan.m * oc];
        // SAFETY: patches is [m × kdim], wmat is [kdim × oc], virt is [m × oc],
        // all dense row-major.
        unsafe {
            matrixmultiply::sgemm(
                plan.m,
                kdim,
                oc,
                1.0,
                patches.as_ptr(),
                kdim as isize,
                1,
                wmat.as_ptr(),
                oc as isize,
                1,
                0.0,
                virt.as_mut_ptr(),
                oc as isize,
                1,
            );
        }
        let p = plan.oh * plan.ow;
        let mut out = vec![0.0f32; oc * p];
        let bias = self.bias.data();
        for oy in 0..plan.oh {
            for ox in 0..plan.ow {
                let src = &virt[(oy * plan.ow_v + ox) * oc..][..oc];
                for (o, &v) in src.iter().enumerate() {
                    out[o * p + oy * plan.ow + ox] = self.activation.apply(v + bias[o]);
                }
            }
        }
        let output = Tensor::new(vec![oc, plan.oh, plan.ow], out)?;
        output.ensure_finite("conv2d forward")?;
        Ok(ConvCache {
            input_shape: [g.c, g.h, g.w],
            plan,
            patches,
            output,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.output)
    }

    /// Gradients w.r.t. input (when requested), kernel and bias. The activation
    /// derivative is applied to `grad_out` first.
    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor, need_input_grad: bool) -> Result<ConvGrads> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::Shape(format!(
                "grad_out {:?} does not match conv output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        if cache.input_shape[0] != self.in_channels() {
            return Err(Error::Shape("conv cache does not belong to this layer".into()));
        }
        let plan = &cache.plan;
        let [oc, c, kh, kw] = self.kernel_dims();
        let kdim = kh * kw * c;
        let p = plan.oh * plan.ow;

        // Pre-activation gradient in the virtual [m × oc] layout, zero on
        // discarded columns.
        let mut pre = vec![0.0f32; plan.m * oc];
        let mut grad_bias = vec![0.0f32; oc];
        let (go, y) = (grad_out.data(), cache.output.data());
        for o in 0..oc {
            for oy in 0..plan.oh {
                for ox in 0..plan.ow {
                    let i = o * p + oy * plan.ow + ox;
                    let v = go[i] * self.activation.derivative_from_output(y[i]);
                    pre[(oy * plan.ow_v + ox) * oc + o] = v;
                    grad_bias[o] += v;
                }
            }
        }

        let mut kgrad = vec![0.0f32; kdim * oc];
        // SAFETY: patches read transposed as [kdim × m]; pre is [m × oc];
        // kgrad is [kdim × oc] dense.
        unsafe {
            matrixmultiply::sgemm(
                kdim,
                plan.m,
                oc,
                1.0,
                cache.patches.as_ptr(),
                1,
                kdim as isize,
                pre.as_ptr(),
                oc as isize,
                1,
                0.0,
                kgrad.as_mut_ptr(),
                oc as isize,
                1,
            );
        }
        let mut grad_kernel = vec![0.0f32; oc * c * kh * kw];
        for o in 0..oc {
            for ci in 0..c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        grad_kernel[((o * c + ci) * kh + ki) * kw + kj] = kgrad[((ki * kw + kj) * c + ci) * oc + o];
                    }
                }
            }
        }

        let input = if need_input_grad {
            let wmat = self.kernel_matrix();
            let mut dpatch = vec![0.0f32; plan.m * kdim];
            // SAFETY: pre is [m × oc]; wmat read transposed as [oc × kdim];
            // dpatch is [m × kdim] dense.
            unsafe {
                matrixmultiply::sgemm(
                    plan.m,
                    oc,
                    kdim,
                    1.0,
                    pre.as_ptr(),
                    oc as isize,
                    1,
                    wmat.as_ptr(),
                    1,
                    oc as isize,
                    0.0,
                    dpatch.as_mut_ptr(),
                    kdim as isize,
                    1,
                );
            }
            let run = kw * c;
            let mut gbuf = vec![0.0f32; plan.buf_len];
            for (r, row) in dpatch.chunks_exact(kdim).enumerate() {
                for (ki, src) in row.chunks_exact(run).enumerate() {
                    let start = ki * plan.wp * c + r * plan.row_stride;
                    for (d, v) in gbuf[start..start + run].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            let (ph, pw) = self.padding;
            let (h, w, wp) = (plan.h, plan.w, plan.wp);
            let mut gi = vec![0.0f32; c * h * w];
            for ci in 0..c {
                for yy in 0..h {
                    let base = ((yy + ph) * wp + pw) * c + ci;
                    for x in 0..w {
                        gi[(ci * h + yy) * w + x] = gbuf[base + x * c];
                    }
                }
            }
            let gi = Tensor::new(vec![c, h, w], gi)?;
            gi.ensure_finite("conv2d backward")?;
            Some(gi)
        } else {
            None
        };

        let kernel = Tensor::new(self.kernel.shape().to_vec(), grad_kernel)?;
        let bias = Tensor::new(vec![oc], grad_bias)?;
        kernel.ensure_finite("conv2d backward")?;
        bias.ensure_finite("conv2d backward")?;
        Ok(ConvGrads { input, kernel, bias })
    }
}

pub fn conv2d_forward(input: &Tensor, layer: &Conv2dLayer) -> Result<Tensor> {
    layer.forward(input)
}

/// Returns `(grad_input, grad_kernel, grad_bias)`.
pub fn conv2d_backward(input: &Tensor, layer: &Conv2dLayer, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let cache = layer.forward_cached(input)?;
    let g = layer.backward(&cache, grad_out, true)?;
    Ok((g.input.expect("input gradient requested"), g.kernel, g.bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 6-loop cross-correlation in f64, independent of im2col/sgemm.
    fn naive_pre_activation(
        input: &[f64],
        [c, h, w]: [usize; 3],
        kernel: &[f64],
        [oc, kh, kw]: [usize; 3],
        bias: &[f64],
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
    ) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (y * sh + ki) as isize - ph as isize;
                                let ix = (x * sw + kj) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input[(ci * h + iy as usize) * w + ix as usize]
                                    * kernel[((o * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + x] = acc;
                }
            }
        }
        (out, oh, ow)
    }

    fn act64(a: Activation, x: f64) -> f64 {
        match a {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::None => x,
        }
    }

    fn random_layer(
        rng: &mut ChaCha8Rng,
        oc: usize,
        ic: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        act: Activation,
    ) -> Conv2dLayer {
        let kernel: Vec<f32> = (0..oc * ic * k.0 * k.1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.random_range(-0.5..0.5)).collect();
        Conv2dLayer::new(
            Tensor::new(vec![oc, ic, k.0, k.1], kernel).unwrap(),
            Tensor::new(vec![oc], bias).unwrap(),
            stride,
            pad,
            act,
        )
        .unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn to64(t: &Tensor) -> Vec<f64> {
        t.data().iter().map(|&v| v as f64).collect()
    }

    #[test]
    fn zero_input_relu_gives_zero() {
        let layer = Conv2dLayer::new(
            Tensor::filled(&[1, 1, 1, 1], 3.0),
            Tensor::zeros(&[1]),
            (1, 1),
            (0, 0),
            Activation::Relu,
        )
        .unwrap();
        let out = conv2d_forward(&Tensor::zeros(&[1, 1, 1]), &layer).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let layer = Conv2dLayer::new(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
            (1, 1),
            (1, 1),
            Activation::None,
        )
        .unwrap();
        let out = conv2d_forward(&Tensor::filled(&[1, 3, 3], 1.0), &layer).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(out.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(out.data()[corner], 4.0);
        }
        assert_eq!(out.data()[1], 6.0);
    }

    #[test]
    fn matches_naive_reference() {
        let configs = [
            ((3, 3), (1, 1), (1, 1)),
            ((5, 5), (1, 2), (2, 2)),
            ((3, 4), (2, 1), (1, 0)),
            ((2, 3), (2, 2), (0, 1)),
        ];
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &(k, s, p) in &configs {
                let layer = random_layer(&mut rng, 3, 2, k, s, p, Activation::None);
                let input = random_tensor(&mut rng, &[2, 8, 6]);
                let got = conv2d_forward(&input, &layer).unwrap();
                let (want, oh, ow) = naive_pre_activation(
                    &to64(&input),
                    [2, 8, 6],
                    &to64(layer.kernel()),
                    [3, k.0, k.1],
                    &to64(layer.bias()),
                    s,
                    p,
                );
                assert_eq!(got.shape(), &[3, oh, ow]);
                for (a, b) in got.data().iter().zip(&want) {
                    assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let layer = Conv2dLayer::zeros(1, 2, (3, 3), (1, 1), (1, 1), Activation::None).unwrap();
        assert!(matches!(
            conv2d_forward(&Tensor::zeros(&[3, 4, 4]), &layer),
            Err(Error::Shape(_))
        ));
        let big = Conv2dLayer::zeros(1, 1, (5, 5), (1, 1), (0, 0), Activation::None).unwrap();
        assert!(big.forward(&Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = random_layer(&mut rng, 3, 2, (3, 3), (1, 1), (1, 1), Activation::Sigmoid);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let (gi, gk, gb) = conv2d_backward(&input, &layer, &Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(gi.data().iter().chain(gk.data()).chain(gb.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_is_spatial_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = random_layer(&mut rng, 3, 2, (3, 3), (1, 1), (1, 1), Activation::None);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let go = random_tensor(&mut rng, &[3, 4, 4]);
        let (_, _, gb) = conv2d_backward(&input, &layer, &go).unwrap();
        for o in 0..3 {
            let s: f32 = go.data()[o * 16..(o + 1) * 16].iter().sum();
            assert!((gb.data()[o] - s).abs() < 1e-5);
        }
    }

    #[test]
    fn grad_out_shape_checked() {
        let layer = Conv2dLayer::zeros(1, 1, (3, 3), (1, 1), (1, 1), Activation::None).unwrap();
        assert!(conv2d_backward(&Tensor::zeros(&[1, 4, 4]), &layer, &Tensor::zeros(&[1, 3, 3])).is_err());
    }

    /// Central finite differences on an f64 re-implementation of the forward
    /// pass; a coordinate is skipped when a ReLU pre-activation changes sign
    /// inside the ±h probe.
    #[test]
    fn gradients_match_finite_differences() {
        const H: f64 = 1e-3;
        let configs = [
            ((3, 3), (1, 1), (1, 1), Activation::None),
            ((3, 3), (1, 1), (1, 1), Activation::Relu),
            ((2, 3), (2, 1), (0, 1), Activation::Sigmoid),
            ((3, 2), (1, 2), (1, 0), Activation::Relu),
        ];
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            for &(k, s, p, act) in &configs {
                let layer = random_layer(&mut rng, 3, 2, k, s, p, act);
                let input = random_tensor(&mut rng, &[2, 4, 4]);
                let out = layer.forward(&input).unwrap();
                let go = random_tensor(&mut rng, out.shape());
                let (gi, gk, gb) = conv2d_backward(&input, &layer, &go).unwrap();

                let x0 = to64(&input);
                let k0 = to64(layer.kernel());
                let b0 = to64(layer.bias());
                let c = to64(&go);
                let eval = |x: &[f64], kk: &[f64], bb: &[f64]| {
                    let (pre, _, _) = naive_pre_activation(x, [2, 4, 4], kk, [3, k.0, k.1], bb, s, p);
                    let loss: f64 = pre.iter().zip(&c).map(|(z, ci)| act64(act, *z) * ci).sum();
                    (loss, pre)
                };
                let (_, pre0) = eval(&x0, &k0, &b0);
                let mut probe = |which: usize, idx: usize, analytic: f32| {
                    let mut vs = [x0.clone(), k0.clone(), b0.clone()];
                    vs[which][idx] += H;
                    let (lp, prep) = eval(&vs[0], &vs[1], &vs[2]);
                    vs[which][idx] -= 2.0 * H;
                    let (lm, prem) = eval(&vs[0], &vs[1], &vs[2]);
                    if act == Activation::Relu
                        && pre0
                            .iter()
                            .zip(prep.iter().zip(&prem))
                            .any(|(z, (a, b))| (z.signum() != a.signum()) || (z.signum() != b.signum()))
                    {
                        skipped += 1;
                        return;
                    }
                    let fd = (lp - lm) / (2.0 * H);
                    let a = analytic as f64;
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                    assert!(rel < 1e-3, "seed {seed} param {which}[{idx}]: {a} vs {fd}");
                    checked += 1;
                };
                for (i, &g) in gi.data().iter().enumerate() {
                    probe(0, i, g);
                }
                for (i, &g) in gk.data().iter().enumerate() {
                    probe(1, i, g);
                }
                for (i, &g) in gb.data().iter().enumerate() {
                    probe(2, i, g);
                }
            }
        }
        assert!(checked > 10 * skipped, "checked {checked}, skipped {skipped}");
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = random_layer(&mut rng, 4, 3, (3, 3), (1, 2), (1, 1), Activation::Relu);
        let input = random_tensor(&mut rng, &[3, 40, 12]);
        let a = layer.forward(&input).unwrap();
        let b = layer.forward(&input).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
