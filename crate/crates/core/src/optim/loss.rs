//! Pixel losses and their cotangents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{softmax, RayGrad, RayOutput, RenderOutput};

/// Relative weights of the loss terms; a zero weight disables its term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub mask: f64,
    pub parsing: f64,
    /// Extra L2 on 2×-downsampled pyramid levels (full-image losses only).
    pub multiscale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            mask: 0.5,
            parsing: 0.05,
            multiscale: 0.0,
        }
    }
}

/// Supervision for one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelTarget {
    pub rgb: [f32; 3],
    pub alpha: f32,
    pub class: u8,
}

/// Supervision for a full image.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub mask: Vec<f32>,
    pub parsing: Vec<u8>,
}

impl TargetImage {
    pub fn pixel(&self, i: usize) -> PixelTarget {
        PixelTarget {
            rgb: [self.rgb[3 * i], self.rgb[3 * i + 1], self.rgb[3 * i + 2]],
            alpha: self.mask[i],
            class: self.parsing[i],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub rgb: f64,
    pub mask: f64,
    pub parsing: f64,
    pub multiscale: f64,
}

/// Weighted per-ray loss: `w_rgb·MSE(rgb) + w_mask·MSE(alpha) + w_par·CE(parsing)`,
/// each term averaged over rays (and channels for rgb). Returns the terms
/// and the cotangent of every ray output.
pub fn ray_loss<T: Real>(outputs: &[RayOutput<T>], targets: &[PixelTarget], weights: &LossWeights) -> Result<(LossTerms, Vec<RayGrad<T>>)> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::Shape(format!("{} outputs vs {} targets", outputs.len(), targets.len())));
    }
    let n = outputs.len() as f64;
    let mut terms = LossTerms::default();
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        let k = o.logits.len();
        if t.class as usize >= k {
            return Err(Error::Shape(format!("class {} outside {k} parsing classes", t.class)));
        }
        let mut g = RayGrad::zeros(k);
        for c in 0..3 {
            let d = o.rgb[c].f64() - t.rgb[c] as f64;
            terms.rgb += d * d / (3.0 * n);
            g.rgb[c] = T::c(weights.rgb * 2.0 * d / (3.0 * n));
        }
        let d = o.alpha.f64() - t.alpha as f64;
        terms.mask += d * d / n;
        g.alpha = T::c(weights.mask * 2.0 * d / n);
        if weights.parsing != 0.0 {
            let p = softmax(&o.logits);
            let pt = p[t.class as usize].f64().max(1e-30);
            terms.parsing += -pt.ln() / n;
            for (j, gl) in g.logits.iter_mut().enumerate() {
                let onehot = if j == t.class as usize { 1.0 } else { 0.0 };
                *gl = T::c(weights.parsing * (p[j].f64() - onehot) / n);
            }
        }
        grads.push(g);
    }
    terms.total = weights.rgb * terms.rgb + weights.mask * terms.mask + weights.parsing * terms.parsing;
    if !terms.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {terms:?}")));
    }
    Ok((terms, grads))
}

/// Average-pools an `h × w × c` image by 2 (odd trailing rows/cols dropped).
fn downsample(img: &[f64], w: usize, h: usize, c: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w2 * h2 * c];
    for y in 0..h2 {
        for x in 0..w2 {
            for k in 0..c {
                let at = |yy: usize, xx: usize| img[(yy * w + xx) * c + k];
                out[(y * w2 + x) * c + k] =
                    0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
            }
        }
    }
    (out, w2, h2)
}

/// Sum over pyramid levels `1..levels` of the RGB MSE at that level, and its
/// gradient with respect to the full-resolution rendered RGB.
pub fn multiscale_l2(rendered: &[f64], target: &[f64], width: usize, height: usize, levels: usize) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; rendered.len()];
    let (mut r, mut t, mut w, mut h) = (rendered.to_vec(), target.to_vec(), width, height);
    // Each level's pixel is the mean of a (2^l)² block of full-res pixels.
    let mut scale = 1usize;
    for _ in 1..levels {
        if w < 2 || h < 2 {
            break;
        }
        (r, _, _) = downsample(&r, w, h, 3);
        let (t2, w2, h2) = downsample(&t, w, h, 3);
        t = t2;
        w = w2;
        h = h2;
        scale *= 2;
        let n = (w * h * 3) as f64;
        for y in 0..h {
            for x in 0..w {
                for k in 0..3 {
                    let i = (y * w + x) * 3 + k;
                    let d = r[i] - t[i];
                    value += d * d / n;
                    let share = 2.0 * d / n / (scale * scale) as f64;
                    for yy in y * scale..(y + 1) * scale {
                        for xx in x * scale..(x + 1) * scale {
                            grad[(yy * width + xx) * 3 + k] += share;
                        }
                    }
                }
            }
        }
    }
    (value, grad)
}

/// Full-image loss with per-pixel cotangents (logit space for parsing).
pub fn loss_l2_with_grad<T: Real>(rendered: &RenderOutput<T>, target: &TargetImage, weights: &LossWeights) -> Result<(LossTerms, Vec<RayGrad<T>>)> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::Shape(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let k = rendered.classes;
    let n = rendered.pixels();
    let outputs: Vec<RayOutput<T>> = (0..n)
        .map(|i| RayOutput {
            rgb: [rendered.rgb[3 * i], rendered.rgb[3 * i + 1], rendered.rgb[3 * i + 2]],
            alpha: rendered.alpha[i],
            // log-probabilities reproduce the same softmax
            logits: rendered.parsing[i * k..(i + 1) * k].iter().map(|p| p.max(T::c(1e-30)).ln()).collect(),
            depth: rendered.depth[i],
        })
        .collect();
    let targets: Vec<PixelTarget> = (0..n).map(|i| target.pixel(i)).collect();
    let (mut terms, mut grads) = ray_loss(&outputs, &targets, weights)?;
    if weights.multiscale != 0.0 {
        let r: Vec<f64> = rendered.rgb.iter().map(|v| v.f64()).collect();
        let t: Vec<f64> = target.rgb.iter().map(|&v| v as f64).collect();
        let (v, g) = multiscale_l2(&r, &t, rendered.width, rendered.height, 3);
        terms.multiscale = v;
        terms.total += weights.multiscale * v;
        for (i, gr) in grads.iter_mut().enumerate() {
            for c in 0..3 {
                gr.rgb[c] += T::c(weights.multiscale * g[3 * i + c]);
            }
        }
    }
    Ok((terms, grads))
}

/// Weighted image loss between a render and its target.
pub fn loss_l2<T: Real>(rendered: &RenderOutput<T>, target: &TargetImage, weights: &LossWeights) -> Result<f64> {
    loss_l2_with_grad(rendered, target, weights).map(|(t, _)| t.total)
}
