//! Independent oracles shared by the integration tests and the acceptance
//! suite: brute-force metric counting and f64 reference forward passes.

#![allow(dead_code)]

use radar_kd::nn::{Activation, Conv2dLayer, DenseLayer};

pub fn act64(a: Activation, z: f64) -> f64 {
    match a {
        Activation::None => z,
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// Direct-loop convolution on `[C, H, W]` input with `[O, C, kH, kW]`
/// kernel; returns pre-activations `[O, oH, oW]` and the output extents.
#[allow(clippy::too_many_arguments)]
pub fn conv_pre(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    b: &[f64],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = b[oc];
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let yy = (y * sh + i) as isize - ph as isize;
                            let xx = (xo * sw + j) as isize - pw as isize;
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            s += k[((oc * c + ic) * kh + i) * kw + j] * x[(ic * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xo] = s;
            }
        }
    }
    (out, oh, ow)
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// f64 parameters of one conv layer.
#[derive(Clone)]
pub struct Conv64 {
    pub k: Vec<f64>,
    pub b: Vec<f64>,
    pub o: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub s: (usize, usize),
    pub p: (usize, usize),
    pub act: Activation,
}

impl Conv64 {
    pub fn of(l: &Conv2dLayer) -> Self {
        let (kh, kw) = l.kernel_size();
        Self {
            k: to64(l.kernel().data()),
            b: to64(l.bias().data()),
            o: l.out_channels(),
            c: l.in_channels(),
            kh,
            kw,
            s: l.stride(),
            p: l.padding(),
            act: l.activation(),
        }
    }

    /// `(pre-activation, activated output, oh, ow)`.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>, usize, usize) {
        let (pre, oh, ow) = conv_pre(
            x,
            (self.c, h, w),
            &self.k,
            (self.o, self.kh, self.kw),
            &self.b,
            self.s,
            self.p,
        );
        let out = pre.iter().map(|&z| act64(self.act, z)).collect();
        (pre, out, oh, ow)
    }
}

/// f64 dense layer forward: `(pre, out)`.
pub fn dense64(l: &DenseLayer, w: &[f64], b: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n_in = l.inputs();
    let pre: Vec<f64> = (0..l.outputs())
        .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
        .collect();
    let out = pre.iter().map(|&z| act64(l.activation(), z)).collect();
    (pre, out)
}

/// Brute-force R₀, R₁, P₀, P₁ and specificity by explicit counting over
/// `[N][M]` boolean grids, written independently of the library. Frames
/// whose truth is `None` are skipped; precision and specificity only count
/// frames whose truth has a positive.
pub struct Counts {
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub specificity: Option<f64>,
}

fn frac(a: usize, b: usize) -> Option<f64> {
    if b == 0 {
        None
    } else {
        Some(a as f64 / b as f64)
    }
}

fn window_hit(v: &[bool], j: usize) -> bool {
    let lo = j.saturating_sub(1);
    let hi = (j + 1).min(v.len() - 1);
    (lo..=hi).any(|k| v[k])
}

pub fn brute_force(truth: &[Option<Vec<bool>>], pred: &[Vec<bool>]) -> Counts {
    let (mut tp_den, mut r0n, mut r1n) = (0, 0, 0);
    let (mut p_den, mut p0n, mut p1n) = (0, 0, 0);
    let (mut tn, mut neg) = (0, 0);
    for (t, p) in truth.iter().zip(pred) {
        let Some(t) = t else { continue };
        for j in 0..t.len() {
            if t[j] {
                tp_den += 1;
                if p[j] {
                    r0n += 1;
                }
                if window_hit(p, j) {
                    r1n += 1;
                }
            }
        }
        if !t.iter().any(|&b| b) {
            continue;
        }
        for j in 0..p.len() {
            if p[j] {
                p_den += 1;
                if t[j] {
                    p0n += 1;
                }
                if window_hit(t, j) {
                    p1n += 1;
                }
            }
            if !t[j] {
                neg += 1;
                if !p[j] {
                    tn += 1;
                }
            }
        }
    }
    Counts {
        r0: frac(r0n, tp_den),
        r1: frac(r1n, tp_den),
        p0: frac(p0n, p_den),
        p1: frac(p1n, p_den),
        specificity: frac(tn, neg),
    }
}
