//! Softmax classifiers with flat parameter vectors and hand-written backward
//! passes: an MLP (`dim → hidden → C`, tanh) for vectors and a tiny convnet
//! (3×3 conv → tanh → 2×2 average pool → 3×3 conv → tanh → global average pool →
//! dense) for `H×W×C` images.
//!
//! The output layer starts at zero, so an untrained model predicts the uniform
//! distribution.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    TinyConvnet,
}

pub const MLP_HIDDEN: usize = 32;
pub const CONV_CHANNELS: [usize; 2] = [8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arch {
    Mlp { input: usize, hidden: usize },
    Conv { h: usize, w: usize, c: usize, c1: usize, c2: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Arch,
    classes: usize,
    pub params: Vec<f64>,
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &mut Tensor) {
    for i in 0..z.rows() {
        let row = z.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct ConvShape {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

/// 3×3 same-padded convolution over one `H×W×Cin` image; weights `[Cout][3][3][Cin]`.
fn conv_forward(s: &ConvShape, input: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    for y in 0..s.h {
        for x in 0..s.w {
            let o = &mut out[(y * s.w + x) * s.cout..][..s.cout];
            o.copy_from_slice(b);
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < s.h) else { continue };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|&v| v < s.w) else { continue };
                    let inp = &input[(iy * s.w + ix) * s.cin..][..s.cin];
                    for (co, acc) in o.iter_mut().enumerate() {
                        let wk = &w[((co * 3 + ky) * 3 + kx) * s.cin..][..s.cin];
                        *acc += inp.iter().zip(wk).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the input gradient.
fn conv_backward(
    s: &ConvShape,
    input: &[f64],
    w: &[f64],
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    for y in 0..s.h {
        for x in 0..s.w {
            let g = &d_out[(y * s.w + x) * s.cout..][..s.cout];
            for (co, &gv) in g.iter().enumerate() {
                db[co] += gv;
            }
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < s.h) else { continue };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|&v| v < s.w) else { continue };
                    let off = (iy * s.w + ix) * s.cin;
                    for (co, &gv) in g.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let wo = ((co * 3 + ky) * 3 + kx) * s.cin;
                        for ci in 0..s.cin {
                            dw[wo + ci] += gv * input[off + ci];
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            for ci in 0..s.cin {
                                di[off + ci] += gv * w[wo + ci];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-sample activations kept for the backward pass.
pub struct Cache {
    input: Tensor,
    /// MLP: hidden tanh outputs. Convnet: per sample, conv1 tanh output,
    /// pooled map, conv2 tanh output and the globally pooled features.
    acts: Vec<Vec<f64>>,
    pub probs: Tensor,
}

impl Model {
    /// Builds a model for samples of `sample_shape` (`[dim]` or `[H, W, C]`).
    pub fn new(kind: ModelKind, sample_shape: &[usize], classes: usize, rng: &mut Rng) -> Result<Self> {
        let arch = match (kind, sample_shape) {
            (ModelKind::Mlp, &[input]) => Arch::Mlp { input, hidden: MLP_HIDDEN },
            (ModelKind::TinyConvnet, &[h, w, c]) if h >= 2 && w >= 2 => {
                Arch::Conv { h, w, c, c1: CONV_CHANNELS[0], c2: CONV_CHANNELS[1] }
            }
            _ => {
                return Err(Error::Config(format!("model {kind:?} cannot take samples of shape {sample_shape:?}")));
            }
        };
        let mut params = Vec::new();
        let mut layer = |fan_in: usize, weights: usize, biases: usize, zero: bool| {
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive sigma");
            for _ in 0..weights {
                params.push(if zero { 0.0 } else { normal.sample(rng) });
            }
            params.extend(std::iter::repeat_n(0.0, biases));
        };
        match arch {
            Arch::Mlp { input, hidden } => {
                layer(input, hidden * input, hidden, false);
                layer(hidden, classes * hidden, classes, true);
            }
            Arch::Conv { c, c1, c2, .. } => {
                layer(9 * c, c1 * 9 * c, c1, false);
                layer(9 * c1, c2 * 9 * c1, c2, false);
                layer(c2, classes * c2, classes, true);
            }
        }
        Ok(Self { arch, classes, params })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want: Vec<usize> = match self.arch {
            Arch::Mlp { input, .. } => vec![input],
            Arch::Conv { h, w, c, .. } => vec![h, w, c],
        };
        if x.shape().len() < 2 || x.shape()[1..] != want[..] {
            return Err(Error::Shape(format!("model expects samples of shape {want:?}, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Softmax predictions `[n, classes]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.probs)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Cache> {
        self.check_input(x)?;
        let n = x.rows();
        let k = self.classes;
        let mut logits = Tensor::zeros(vec![n, k]);
        let mut acts = Vec::with_capacity(n);
        let p = &self.params;
        match self.arch {
            Arch::Mlp { input, hidden } => {
                let (w1, rest) = p.split_at(hidden * input);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(k * hidden);
                for i in 0..n {
                    let xi = x.row(i);
                    let h: Vec<f64> = (0..hidden)
                        .map(|j| {
                            let wr = &w1[j * input..][..input];
                            (b1[j] + wr.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()).tanh()
                        })
                        .collect();
                    dense(w2, b2, &h, logits.row_mut(i));
                    acts.push(h);
                }
            }
            Arch::Conv { h, w, c, c1, c2 } => {
                let (w1, rest) = p.split_at(c1 * 9 * c);
                let (b1, rest) = rest.split_at(c1);
                let (w2, rest) = rest.split_at(c2 * 9 * c1);
                let (b2, rest) = rest.split_at(c2);
                let (w3, b3) = rest.split_at(k * c2);
                let (ph, pw) = (h / 2, w / 2);
                for i in 0..n {
                    let mut a1 = vec![0.0; h * w * c1];
                    conv_forward(&ConvShape { h, w, cin: c, cout: c1 }, x.row(i), w1, b1, &mut a1);
                    a1.iter_mut().for_each(|v| *v = v.tanh());
                    let pooled = avg_pool2(&a1, h, w, c1);
                    let mut a2 = vec![0.0; ph * pw * c2];
                    conv_forward(&ConvShape { h: ph, w: pw, cin: c1, cout: c2 }, &pooled, w2, b2, &mut a2);
                    a2.iter_mut().for_each(|v| *v = v.tanh());
                    let mut feat = vec![0.0; c2];
                    for px in a2.chunks_exact(c2) {
                        feat.iter_mut().zip(px).for_each(|(f, v)| *f += v);
                    }
                    let area = (ph * pw) as f64;
                    feat.iter_mut().for_each(|f| *f /= area);
                    dense(w3, b3, &feat, logits.row_mut(i));
                    acts.push(a1);
                    acts.push(pooled);
                    acts.push(a2);
                    acts.push(feat);
                }
            }
        }
        softmax_rows(&mut logits);
        Ok(Cache { input: x.clone(), acts, probs: logits })
    }

    /// Parameter gradient given `d_probs = ∂L/∂(softmax output)`.
    pub fn backward(&self, cache: &Cache, d_probs: &Tensor) -> Result<Vec<f64>> {
        if d_probs.shape() != cache.probs.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match predictions {:?}",
                d_probs.shape(),
                cache.probs.shape()
            )));
        }
        let n = cache.probs.rows();
        let k = self.classes;
        let mut grad = vec![0.0; self.params.len()];
        let p = &self.params;
        let dz_of = |i: usize| -> Vec<f64> {
            let pr = cache.probs.row(i);
            let g = d_probs.row(i);
            let dot: f64 = pr.iter().zip(g).map(|(a, b)| a * b).sum();
            pr.iter().zip(g).map(|(pv, gv)| pv * (gv - dot)).collect()
        };
        match self.arch {
            Arch::Mlp { input, hidden } => {
                let w2 = &p[hidden * input + hidden..][..k * hidden];
                let (gw1, rest) = grad.split_at_mut(hidden * input);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(k * hidden);
                for i in 0..n {
                    let h = &cache.acts[i];
                    let dz = dz_of(i);
                    let dh = dense_backward(w2, h, &dz, gw2, gb2);
                    let xi = cache.input.row(i);
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        gb1[j] += da;
                        gw1[j * input..][..input].iter_mut().zip(xi).for_each(|(g, x)| *g += da * x);
                    }
                }
            }
            Arch::Conv { h, w, c, c1, c2 } => {
                let o2 = c1 * 9 * c + c1;
                let o3 = o2 + c2 * 9 * c1 + c2;
                let w2 = &p[o2..][..c2 * 9 * c1];
                let w3 = &p[o3..][..k * c2];
                let (gw1, rest) = grad.split_at_mut(c1 * 9 * c);
                let (gb1, rest) = rest.split_at_mut(c1);
                let (gw2, rest) = rest.split_at_mut(c2 * 9 * c1);
                let (gb2, rest) = rest.split_at_mut(c2);
                let (gw3, gb3) = rest.split_at_mut(k * c2);
                let (ph, pw) = (h / 2, w / 2);
                let area = (ph * pw) as f64;
                for i in 0..n {
                    let [a1, pooled, a2, feat] = &cache.acts[4 * i..4 * i + 4] else { unreachable!() };
                    let dz = dz_of(i);
                    let dfeat = dense_backward(w3, feat, &dz, gw3, gb3);
                    let mut d2 = vec![0.0; ph * pw * c2];
                    for (dv, av) in d2.chunks_exact_mut(c2).zip(a2.chunks_exact(c2)) {
                        for ch in 0..c2 {
                            dv[ch] = dfeat[ch] / area * (1.0 - av[ch] * av[ch]);
                        }
                    }
                    let mut dpool = vec![0.0; ph * pw * c1];
                    conv_backward(&ConvShape { h: ph, w: pw, cin: c1, cout: c2 }, pooled, w2, &d2, gw2, gb2, Some(&mut dpool));
                    let mut d1 = vec![0.0; h * w * c1];
                    for y in 0..ph * 2 {
                        for x in 0..pw * 2 {
                            for ch in 0..c1 {
                                let a = a1[(y * w + x) * c1 + ch];
                                d1[(y * w + x) * c1 + ch] =
                                    0.25 * dpool[((y / 2) * pw + x / 2) * c1 + ch] * (1.0 - a * a);
                            }
                        }
                    }
                    conv_backward(&ConvShape { h, w, cin: c, cout: c1 }, cache.input.row(i), &[], &d1, gw1, gb1, None);
                }
            }
        }
        Ok(grad)
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = b[j] + w[j * m..][..m].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates dense-layer gradients and returns the input gradient.
fn dense_backward(w: &[f64], x: &[f64], dz: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let m = x.len();
    let mut dx = vec![0.0; m];
    for (j, &d) in dz.iter().enumerate() {
        gb[j] += d;
        let wr = &w[j * m..][..m];
        let gr = &mut gw[j * m..][..m];
        for t in 0..m {
            gr[t] += d * x[t];
            dx[t] += d * wr[t];
        }
    }
    dx
}

/// 2×2 average pooling, floor semantics for odd sides.
fn avg_pool2(a: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; ph * pw * c];
    for y in 0..ph * 2 {
        for x in 0..pw * 2 {
            for ch in 0..c {
                out[((y / 2) * pw + x / 2) * c + ch] += 0.25 * a[(y * w + x) * c + ch];
            }
        }
    }
    out
}
