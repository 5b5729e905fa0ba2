//! Training-batch augmentation: base (pad, crop, flip), cutout, mixup, RandAug,
//! and all of them combined.
//!
//! Batches are `[n, H, W, C]` images in [0, 1] with soft labels `[n, classes]`.
//! Each stage draws from its own RNG stream derived from the batch seed, so the
//! base stage of `all` makes exactly the same draws as the `base` pipeline.
//! Vector batches (`[n, dim]`) only go through mixup; the image stages are
//! identities there.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tag, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Base,
    Cutout,
    Mixup,
    RandAug,
    All,
}

impl Technique {
    pub const ALL: [Technique; 5] = [Self::Base, Self::Cutout, Self::Mixup, Self::RandAug, Self::All];

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Cutout => "cutout",
            Self::Mixup => "mixup",
            Self::RandAug => "randaug",
            Self::All => "all",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    /// Zero padding before the random crop; `None` means ⌈H/8⌉.
    pub pad: Option<usize>,
    pub flip: bool,
    /// Cutout square side; `None` means H/2.
    pub cutout_size: Option<usize>,
    /// Beta(α, α) parameter; α ≤ 0 turns mixup off.
    pub mixup_alpha: f64,
    pub randaug_n: usize,
    /// Strength in [0, 10].
    pub randaug_m: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { pad: None, flip: true, cutout_size: None, mixup_alpha: 1.0, randaug_n: 2, randaug_m: 5.0 }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=10.0).contains(&self.randaug_m) {
            return Err(Error::Config(format!("randaug_m must lie in [0, 10], got {}", self.randaug_m)));
        }
        if !self.mixup_alpha.is_finite() {
            return Err(Error::Config("mixup_alpha must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub technique: Technique,
    pub params: AugmentParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ImageDims {
    fn of(x: &Tensor) -> Option<Self> {
        match *x.shape() {
            [_, h, w, c] => Some(Self { h, w, c }),
            _ => None,
        }
    }

    fn len(self) -> usize {
        self.h * self.w * self.c
    }

    fn at(self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }
}

fn stage_rng(seed: u64, stage: &str) -> Rng {
    rng_from(derive_seed(seed, &[tag(stage)]))
}

impl Pipeline {
    pub fn new(technique: Technique, params: AugmentParams) -> Self {
        Self { technique, params }
    }

    /// Augments a batch. Same inputs and seed give bit-identical output.
    pub fn apply(&self, x: &Tensor, y: &Tensor, seed: u64) -> Result<(Tensor, Tensor)> {
        if x.rows() != y.rows() {
            return Err(Error::Shape(format!("{} samples but {} label rows", x.rows(), y.rows())));
        }
        let mut x = x.clone();
        let mut y = y.clone();
        let p = &self.params;
        let t = self.technique;
        if let Some(d) = ImageDims::of(&x) {
            base(&mut x, d, p.pad.unwrap_or(d.h.div_ceil(8)), p.flip, &mut stage_rng(seed, "base"));
            if matches!(t, Technique::RandAug | Technique::All) {
                randaug(&mut x, d, p.randaug_n, p.randaug_m, &mut stage_rng(seed, "randaug"));
            }
            if matches!(t, Technique::Cutout | Technique::All) {
                cutout(&mut x, d, p.cutout_size.unwrap_or(d.h / 2), &mut stage_rng(seed, "cutout"));
            }
        }
        if matches!(t, Technique::Mixup | Technique::All) {
            mixup(&mut x, &mut y, p.mixup_alpha, &mut stage_rng(seed, "mixup"));
        }
        Ok((x, y))
    }
}

/// Pads one image by `pad` zeros on every side, takes the `H×W` window at
/// `(oy, ox)` of the padded image, and optionally mirrors it horizontally.
pub fn crop_flip(img: &[f64], d: ImageDims, pad: usize, oy: usize, ox: usize, flip: bool) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..d.h {
        let sy = (i + oy).checked_sub(pad).filter(|&v| v < d.h);
        for j in 0..d.w {
            let sx = (j + ox).checked_sub(pad).filter(|&v| v < d.w);
            let tj = if flip { d.w - 1 - j } else { j };
            if let (Some(sy), Some(sx)) = (sy, sx) {
                for ch in 0..d.c {
                    out[d.at(i, tj, ch)] = img[d.at(sy, sx, ch)];
                }
            }
        }
    }
    out
}

pub fn base(x: &mut Tensor, d: ImageDims, pad: usize, flip: bool, rng: &mut Rng) {
    for i in 0..x.rows() {
        let oy = rng.random_range(0..=2 * pad);
        let ox = rng.random_range(0..=2 * pad);
        let f = flip && rng.random_bool(0.5);
        let out = crop_flip(x.row(i), d, pad, oy, ox, f);
        x.row_mut(i).copy_from_slice(&out);
    }
}

/// Zeros the `size × size` square whose top-left corner is
/// `(cy − size/2, cx − size/2)`, clipped to the image.
pub fn cutout_at(img: &mut [f64], d: ImageDims, cy: usize, cx: usize, size: usize) {
    let y0 = cy.saturating_sub(size / 2);
    let x0 = cx.saturating_sub(size / 2);
    let y1 = (cy + size - size / 2).min(d.h);
    let x1 = (cx + size - size / 2).min(d.w);
    for i in y0..y1 {
        for j in x0..x1 {
            for ch in 0..d.c {
                img[d.at(i, j, ch)] = 0.0;
            }
        }
    }
}

pub fn cutout(x: &mut Tensor, d: ImageDims, size: usize, rng: &mut Rng) {
    for i in 0..x.rows() {
        let cy = rng.random_range(0..d.h);
        let cx = rng.random_range(0..d.w);
        cutout_at(x.row_mut(i), d, cy, cx, size);
    }
}

/// `λ·a + (1 − λ)·b`, elementwise.
pub fn mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&p, &q)| lambda * p + (1.0 - lambda) * q).collect()
}

/// Pairs every sample with a uniformly drawn partner and mixes features and
/// labels with a per-sample λ ~ Beta(α, α).
pub fn mixup(x: &mut Tensor, y: &mut Tensor, alpha: f64, rng: &mut Rng) {
    if alpha <= 0.0 || x.rows() == 0 {
        return;
    }
    let beta = Beta::new(alpha, alpha).expect("positive alpha");
    let (x0, y0) = (x.clone(), y.clone());
    for i in 0..x.rows() {
        let j = rng.random_range(0..x.rows());
        let lambda = beta.sample(rng);
        let xm = mix(x0.row(i), x0.row(j), lambda);
        let ym = mix(y0.row(i), y0.row(j), lambda);
        x.row_mut(i).copy_from_slice(&xm);
        y.row_mut(i).copy_from_slice(&ym);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandOp {
    Invert,
    Solarize,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    Equalize,
    TranslateX,
    TranslateY,
    ShearX,
    ShearY,
}

impl RandOp {
    pub const ALL: [RandOp; 11] = [
        Self::Invert,
        Self::Solarize,
        Self::Posterize,
        Self::Contrast,
        Self::Brightness,
        Self::Sharpness,
        Self::Equalize,
        Self::TranslateX,
        Self::TranslateY,
        Self::ShearX,
        Self::ShearY,
    ];
}

/// Applies one RandAug operation at strength `m ∈ [0, 10]`. `positive` picks the
/// direction for signed operations (contrast, brightness, sharpness,
/// translations, shears).
///
/// Magnitude map with f = m/10: solarize inverts pixels above 1 − f; posterize
/// keeps 8 − round(4f) bits; contrast, brightness and sharpness use the factor
/// 1 ± 0.9f; translations move by round(0.3f·side) pixels; shears use slope
/// ±0.3f. Invert and equalize ignore m.
pub fn apply_op(img: &mut [f64], d: ImageDims, op: RandOp, m: f64, positive: bool) {
    let f = (m / 10.0).clamp(0.0, 1.0);
    let s = if positive { 1.0 } else { -1.0 };
    let factor = 1.0 + 0.9 * f * s;
    match op {
        RandOp::Invert => img.iter_mut().for_each(|v| *v = 1.0 - *v),
        RandOp::Solarize => {
            let t = 1.0 - f;
            img.iter_mut().filter(|v| **v > t).for_each(|v| *v = 1.0 - *v);
        }
        RandOp::Posterize => {
            let drop = 8 - (8.0 - (4.0 * f).round()) as u32;
            img.iter_mut().for_each(|v| {
                let b = ((*v * 255.0).round() as u32 >> drop) << drop;
                *v = b as f64 / 255.0;
            });
        }
        RandOp::Contrast => {
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            img.iter_mut().for_each(|v| *v = mean + factor * (*v - mean));
        }
        RandOp::Brightness => img.iter_mut().for_each(|v| *v *= factor),
        RandOp::Sharpness => {
            let src = img.to_vec();
            for i in 1..d.h.saturating_sub(1) {
                for j in 1..d.w.saturating_sub(1) {
                    for ch in 0..d.c {
                        let mut acc = 4.0 * src[d.at(i, j, ch)];
                        for di in 0..3 {
                            for dj in 0..3 {
                                acc += src[d.at(i + di - 1, j + dj - 1, ch)];
                            }
                        }
                        let blurred = acc / 13.0;
                        let k = d.at(i, j, ch);
                        img[k] = blurred + factor * (src[k] - blurred);
                    }
                }
            }
        }
        RandOp::Equalize => equalize(img, d),
        RandOp::TranslateX | RandOp::TranslateY | RandOp::ShearX | RandOp::ShearY => {
            let src = img.to_vec();
            let shift = |side: usize| (0.3 * f * side as f64).round() * s;
            let (cy, cx) = ((d.h as f64 - 1.0) / 2.0, (d.w as f64 - 1.0) / 2.0);
            for i in 0..d.h {
                for j in 0..d.w {
                    let (sy, sx) = match op {
                        RandOp::TranslateX => (i as f64, j as f64 - shift(d.w)),
                        RandOp::TranslateY => (i as f64 - shift(d.h), j as f64),
                        RandOp::ShearX => (i as f64, j as f64 - 0.3 * f * s * (i as f64 - cy)),
                        _ => (i as f64 - 0.3 * f * s * (j as f64 - cx), j as f64),
                    };
                    let (sy, sx) = (sy.round(), sx.round());
                    let inside = sy >= 0.0 && sx >= 0.0 && sy < d.h as f64 && sx < d.w as f64;
                    for ch in 0..d.c {
                        img[d.at(i, j, ch)] = if inside { src[d.at(sy as usize, sx as usize, ch)] } else { 0.0 };
                    }
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Per-channel histogram equalization over 256 levels.
fn equalize(img: &mut [f64], d: ImageDims) {
    let n = d.h * d.w;
    for ch in 0..d.c {
        let level = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as usize;
        let mut hist = [0usize; 256];
        for p in 0..n {
            hist[level(img[p * d.c + ch])] += 1;
        }
        let first = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
        if first == n {
            continue;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (k, &c) in hist.iter().enumerate() {
            acc += c;
            cdf[k] = acc;
        }
        for p in 0..n {
            let k = level(img[p * d.c + ch]);
            img[p * d.c + ch] = (cdf[k] - first) as f64 / (n - first) as f64;
        }
    }
}

pub fn randaug(x: &mut Tensor, d: ImageDims, n: usize, m: f64, rng: &mut Rng) {
    for i in 0..x.rows() {
        for _ in 0..n {
            let op = RandOp::ALL[rng.random_range(0..RandOp::ALL.len())];
            let positive = rng.random_bool(0.5);
            apply_op(x.row_mut(i), d, op, m, positive);
        }
    }
}
