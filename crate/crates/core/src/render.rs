//! Camera rays and emission-absorption volume rendering.
//!
//! Along a ray the interval `[t_near, t_far]` is cut into `n` equal bins of
//! width `δ`; sample `i` sits at `t_near + (i + u_i)·δ` with `u_i = ½`, or
//! uniform in `[0, 1)` when stratified. With `α_i = 1 − exp(−σ_i δ)` and
//! `T_i = Π_{j<i}(1 − α_j)` the weights `w_i = T_i α_i` composite color,
//! alpha, parsing logits and depth. Color is composited over the
//! background; parsing probabilities are the softmax of the composited logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{activate, Branch, FeatureTrace, FieldSample, RadianceField};
use crate::geometry::{Camera, Vec3, DEFAULT_SCENE_RADIUS};
use crate::real::{sigmoid, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3<f64>,
    pub direction: Vec3<f64>,
    pub t_near: f64,
    pub t_far: f64,
    /// False when the ray misses the scene sphere.
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub n_samples: usize,
    pub stratified: bool,
    pub background: [f64; 3],
    pub scene_radius: f64,
    /// Stop marching once transmittance falls below this; 0 disables.
    pub min_transmittance: f64,
    /// Fixed number of gradient partitions, reduced in index order.
    pub grad_chunks: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            n_samples: 48,
            stratified: true,
            background: [1.0; 3],
            scene_radius: DEFAULT_SCENE_RADIUS,
            min_transmittance: 0.0,
            grad_chunks: 4,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::invalid("at least 2 samples per ray are required"));
        }
        if !(self.scene_radius > 0.0) {
            return Err(Error::invalid("scene radius must be positive"));
        }
        if self.grad_chunks == 0 {
            return Err(Error::invalid("grad_chunks must be positive"));
        }
        Ok(())
    }
}

/// Entry and exit distances of a ray through the sphere of radius `r_scene`
/// centred on the origin, or `None` when it misses.
pub fn ray_sphere_bounds(origin: Vec3<f64>, direction: Vec3<f64>, r_scene: f64) -> Option<(f64, f64)> {
    let b = origin.dot(direction);
    let c = origin.dot(origin) - r_scene * r_scene;
    let a = direction.dot(direction);
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = ((-b - s) / a, (-b + s) / a);
    if t1 <= 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

/// One ray per pixel center, row-major, clipped to the scene sphere.
pub fn generate_rays(camera: &Camera, width: usize, height: usize, r_scene: f64) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let u = (i as f64 + 0.5) / width as f64;
            let v = (j as f64 + 0.5) / height as f64;
            rays.push(make_ray(camera, u, v, r_scene));
        }
    }
    rays
}

pub fn make_ray(camera: &Camera, u: f64, v: f64, r_scene: f64) -> Ray {
    let (origin, direction) = camera.ray_through(u, v);
    match ray_sphere_bounds(origin, direction, r_scene) {
        Some((t_near, t_far)) => Ray {
            origin,
            direction,
            t_near,
            t_far,
            hit: true,
        },
        None => Ray {
            origin,
            direction,
            t_near: 0.0,
            t_far: 0.0,
            hit: false,
        },
    }
}

/// Composited quantities of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayOutput<T> {
    pub rgb: [T; 3],
    pub alpha: T,
    pub logits: Vec<T>,
    pub depth: T,
}

/// Cotangent of a [`RayOutput`], with logits already in composited-logit space.
#[derive(Clone, Debug, PartialEq)]
pub struct RayGrad<T> {
    pub rgb: [T; 3],
    pub alpha: T,
    pub logits: Vec<T>,
    pub depth: T,
}

impl<T: Real> RayGrad<T> {
    pub fn zeros(classes: usize) -> Self {
        Self {
            rgb: [T::zero(); 3],
            alpha: T::zero(),
            logits: vec![T::zero(); classes],
            depth: T::zero(),
        }
    }
}

/// Per-sample inputs of the compositing step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSeries<T> {
    pub t: Vec<T>,
    pub delta: Vec<T>,
    pub sigma: Vec<T>,
    pub color: Vec<[T; 3]>,
    /// `n × classes`, row-major.
    pub logits: Vec<T>,
    pub classes: usize,
}

impl<T: Real> SampleSeries<T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Emission-absorption compositing over the background.
pub fn composite<T: Real>(s: &SampleSeries<T>, background: [T; 3]) -> RayOutput<T> {
    let k = s.classes;
    let mut out = RayOutput {
        rgb: [T::zero(); 3],
        alpha: T::zero(),
        logits: vec![T::zero(); k],
        depth: T::zero(),
    };
    let mut trans = T::one();
    for i in 0..s.len() {
        let a = T::one() - (-s.sigma[i] * s.delta[i]).exp();
        let w = trans * a;
        for c in 0..3 {
            out.rgb[c] += w * s.color[i][c];
        }
        for (o, l) in out.logits.iter_mut().zip(&s.logits[i * k..(i + 1) * k]) {
            *o += w * *l;
        }
        out.alpha += w;
        out.depth += w * s.t[i];
        trans *= T::one() - a;
    }
    for c in 0..3 {
        out.rgb[c] += (T::one() - out.alpha) * background[c];
    }
    out
}

/// Vector-Jacobian product of [`composite`] with respect to density, color
/// and logits of every sample.
pub fn composite_backward<T: Real>(
    s: &SampleSeries<T>,
    background: [T; 3],
    g: &RayGrad<T>,
) -> (Vec<T>, Vec<[T; 3]>, Vec<T>) {
    let n = s.len();
    let k = s.classes;
    // Background enters as (1 − A)·bg, so alpha sees g_A − g_rgb·bg.
    let g_alpha = g.alpha - (0..3).map(|c| g.rgb[c] * background[c]).sum::<T>();
    let mut trans = vec![T::one(); n + 1];
    let mut weight = vec![T::zero(); n];
    let mut value = vec![T::zero(); n];
    for i in 0..n {
        let decay = (-s.sigma[i] * s.delta[i]).exp();
        weight[i] = trans[i] * (T::one() - decay);
        trans[i + 1] = trans[i] * decay;
        let logit_dot = g.logits.iter().zip(&s.logits[i * k..(i + 1) * k]).map(|(a, b)| *a * *b).sum::<T>();
        value[i] = (0..3).map(|c| g.rgb[c] * s.color[i][c]).sum::<T>() + g_alpha + logit_dot + g.depth * s.t[i];
    }
    let mut d_sigma = vec![T::zero(); n];
    let mut d_color = vec![[T::zero(); 3]; n];
    let mut d_logits = vec![T::zero(); n * k];
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        d_sigma[i] = s.delta[i] * (trans[i + 1] * value[i] - suffix);
        suffix += weight[i] * value[i];
        for c in 0..3 {
            d_color[i][c] = weight[i] * g.rgb[c];
        }
        for (d, gl) in d_logits[i * k..(i + 1) * k].iter_mut().zip(&g.logits) {
            *d = weight[i] * *gl;
        }
    }
    (d_sigma, d_color, d_logits)
}

fn sample_positions<T: Real>(ray: &Ray, n: usize, stratified: bool, rng: &mut ChaCha8Rng) -> (Vec<T>, T) {
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let t = (0..n)
        .map(|i| {
            let jitter = if stratified { rng.gen::<f64>() } else { 0.5 };
            T::c(ray.t_near + (i as f64 + jitter) * delta)
        })
        .collect();
    (t, T::c(delta))
}

fn ray_rng(seed: u64, ray_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ray_id);
    rng
}

fn background_output<T: Real>(background: [T; 3], classes: usize) -> RayOutput<T> {
    RayOutput {
        rgb: background,
        alpha: T::zero(),
        logits: vec![T::zero(); classes],
        depth: T::zero(),
    }
}

/// Renders one ray through an arbitrary point sampler.
pub fn render_ray_with<T: Real, F>(
    sampler: &F,
    classes: usize,
    ray: &Ray,
    settings: &RenderSettings,
    seed: u64,
    ray_id: u64,
) -> RayOutput<T>
where
    F: Fn(Vec3<T>) -> FieldSample<T> + ?Sized,
{
    let bg = settings.background.map(T::c);
    if !ray.hit {
        return background_output(bg, classes);
    }
    let mut rng = ray_rng(seed, ray_id);
    let (t, delta) = sample_positions::<T>(ray, settings.n_samples, settings.stratified, &mut rng);
    let origin = ray.origin.cast::<T>();
    let dir = ray.direction.cast::<T>();
    let mut series = SampleSeries {
        classes,
        ..Default::default()
    };
    let mut trans = 1.0;
    for &ti in &t {
        let s = sampler(origin + dir * ti);
        trans *= (-(s.density * delta).f64()).exp();
        series.t.push(ti);
        series.delta.push(delta);
        series.sigma.push(s.density);
        series.color.push(s.color);
        series.logits.extend_from_slice(&s.parsing_logits);
        if trans < settings.min_transmittance {
            break;
        }
    }
    composite(&series, bg)
}

pub fn render_rays_with<T: Real, F>(
    sampler: &F,
    classes: usize,
    rays: &[Ray],
    settings: &RenderSettings,
    seed: u64,
) -> Vec<RayOutput<T>>
where
    F: Fn(Vec3<T>) -> FieldSample<T> + Sync + ?Sized,
{
    rays.par_iter()
        .enumerate()
        .map(|(i, ray)| render_ray_with(sampler, classes, ray, settings, seed, i as u64))
        .collect()
}

/// Forward-only rendering of `rays` through `field` on `branch`.
pub fn render_rays<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    rays: &[Ray],
    settings: &RenderSettings,
    seed: u64,
) -> Vec<RayOutput<T>> {
    let sampler = |p: Vec3<T>| field.sample(branch, p);
    render_rays_with(&sampler, field.classes(), rays, settings, seed)
}

/// Image-shaped render result.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// `H × W × 3`.
    pub rgb: Vec<T>,
    pub alpha: Vec<T>,
    /// `H × W × K` softmax probabilities.
    pub parsing: Vec<T>,
    pub depth: Vec<T>,
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<T: Real> RenderOutput<T> {
    pub fn from_rays(outputs: &[RayOutput<T>], width: usize, height: usize, classes: usize) -> Self {
        let mut out = RenderOutput {
            width,
            height,
            classes,
            rgb: Vec::with_capacity(outputs.len() * 3),
            alpha: Vec::with_capacity(outputs.len()),
            parsing: Vec::with_capacity(outputs.len() * classes),
            depth: Vec::with_capacity(outputs.len()),
        };
        for o in outputs {
            out.rgb.extend_from_slice(&o.rgb);
            out.alpha.push(o.alpha);
            out.parsing.extend(softmax(&o.logits));
            out.depth.push(o.depth);
        }
        out
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Class with the highest probability at each pixel.
    pub fn parsing_argmax(&self) -> Vec<u8> {
        self.parsing
            .chunks(self.classes)
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0 as u8
            })
            .collect()
    }
}

/// Renders a full image. Output is a pure function of the inputs and `seed`.
pub fn render_image<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    camera: &Camera,
    width: usize,
    height: usize,
    settings: &RenderSettings,
    seed: u64,
) -> RenderOutput<T> {
    let rays = generate_rays(camera, width, height, settings.scene_radius);
    let outs = render_rays(field, branch, &rays, settings, seed);
    RenderOutput::from_rays(&outs, width, height, field.classes())
}

/// Everything needed to replay one ray in reverse.
#[derive(Clone, Debug)]
pub struct RayTrace<T> {
    pub series: SampleSeries<T>,
    features: Vec<T>,
    layer0: Vec<T>,
    layer1: Vec<T>,
    raw: Vec<T>,
    feature_traces: Vec<FeatureTrace<T>>,
}

/// Forward pass retained for reverse-mode differentiation.
#[derive(Clone, Debug)]
pub struct RenderTape<T> {
    pub branch: Branch,
    pub sizes: Vec<usize>,
    pub mask: Vec<bool>,
    pub outputs: Vec<RayOutput<T>>,
    traces: Vec<Option<RayTrace<T>>>,
    background: [T; 3],
    chunks: usize,
}

impl<T: Real> RenderTape<T> {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

fn traced_ray<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    ray: &Ray,
    settings: &RenderSettings,
    seed: u64,
    ray_id: u64,
) -> (RayOutput<T>, Option<RayTrace<T>>) {
    let classes = field.classes();
    let bg = settings.background.map(T::c);
    if !ray.hit {
        return (background_output(bg, classes), None);
    }
    let dec = &field.decoder;
    let (c, h, o) = (field.channels(), dec.layer_len(), dec.outputs());
    let mut rng = ray_rng(seed, ray_id);
    let (t, delta) = sample_positions::<T>(ray, settings.n_samples, settings.stratified, &mut rng);
    let origin = ray.origin.cast::<T>();
    let dir = ray.direction.cast::<T>();
    let n = t.len();
    let mut tr = RayTrace {
        series: SampleSeries {
            classes,
            ..Default::default()
        },
        features: Vec::with_capacity(n * c),
        layer0: Vec::with_capacity(n * h),
        layer1: Vec::with_capacity(n * h),
        raw: Vec::with_capacity(n * o),
        feature_traces: Vec::with_capacity(n),
    };
    let mut f = vec![T::zero(); c];
    let mut p0 = vec![T::zero(); h];
    let mut p1 = vec![T::zero(); h];
    let mut raw = vec![T::zero(); o];
    let mut trans = 1.0;
    for &ti in &t {
        f.iter_mut().for_each(|v| *v = T::zero());
        let ft = field.features.query_into(origin + dir * ti, branch, &mut f);
        dec.forward_into(&f, &mut p0, &mut p1, &mut raw);
        let s = activate(&raw);
        trans *= (-(s.density * delta).f64()).exp();
        tr.series.t.push(ti);
        tr.series.delta.push(delta);
        tr.series.sigma.push(s.density);
        tr.series.color.push(s.color);
        tr.series.logits.extend_from_slice(&s.parsing_logits);
        tr.features.extend_from_slice(&f);
        tr.layer0.extend_from_slice(&p0);
        tr.layer1.extend_from_slice(&p1);
        tr.raw.extend_from_slice(&raw);
        tr.feature_traces.push(ft);
        if trans < settings.min_transmittance {
            break;
        }
    }
    (composite(&tr.series, bg), Some(tr))
}

/// Renders `rays` and keeps the per-sample state needed by [`backward`].
pub fn render_rays_tape<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    rays: &[Ray],
    settings: &RenderSettings,
    seed: u64,
) -> Result<RenderTape<T>> {
    settings.validate()?;
    let (outputs, traces): (Vec<_>, Vec<_>) = rays
        .par_iter()
        .enumerate()
        .map(|(i, ray)| traced_ray(field, branch, ray, settings, seed, i as u64))
        .unzip();
    Ok(RenderTape {
        branch,
        sizes: field.param_sizes(),
        mask: field.branch_mask(branch),
        outputs,
        traces,
        background: settings.background.map(T::c),
        chunks: settings.grad_chunks,
    })
}

/// Per-tensor gradients; `None` for tensors the rendered branch cannot reach.
pub type Gradients<T> = Vec<Option<Vec<T>>>;

fn backward_ray<T: Real>(field: &RadianceField<T>, tr: &RayTrace<T>, bg: [T; 3], g: &RayGrad<T>, buffers: &mut [Vec<T>]) {
    let (d_sigma, d_color, d_logits) = composite_backward(&tr.series, bg, g);
    let dec = &field.decoder;
    let (c, h, o, k) = (field.channels(), dec.layer_len(), dec.outputs(), dec.classes);
    let n_planes = field.plane_count();
    let (plane_bufs, dec_bufs) = buffers.split_at_mut(n_planes);
    let mut plane_grads: Vec<&mut [T]> = plane_bufs.iter_mut().map(|b| b.as_mut_slice()).collect();
    let mut dec_grads: Vec<&mut [T]> = dec_bufs.iter_mut().map(|b| b.as_mut_slice()).collect();
    let mut g_raw = vec![T::zero(); o];
    let mut g_feat = vec![T::zero(); c];
    for i in 0..tr.series.len() {
        let raw = &tr.raw[i * o..(i + 1) * o];
        g_raw[0] = d_sigma[i] * sigmoid(raw[0]);
        for ch in 0..3 {
            let col = tr.series.color[i][ch];
            g_raw[1 + ch] = d_color[i][ch] * col * (T::one() - col);
        }
        g_raw[4..].copy_from_slice(&d_logits[i * k..(i + 1) * k]);
        dec.backward_from(
            &tr.features[i * c..(i + 1) * c],
            &tr.layer0[i * h..(i + 1) * h],
            &tr.layer1[i * h..(i + 1) * h],
            &g_raw,
            &mut dec_grads,
            &mut g_feat,
        );
        field.features.backward_into(&tr.feature_traces[i], &g_feat, &mut plane_grads);
    }
}

/// Reverse pass: turns per-ray output cotangents into parameter gradients.
///
/// Rays are split into a fixed number of contiguous partitions whose
/// buffers are summed in partition order, so the result does not depend on
/// the thread count.
pub fn backward<T: Real>(field: &RadianceField<T>, tape: &RenderTape<T>, grads: &[RayGrad<T>]) -> Result<Gradients<T>> {
    if grads.len() != tape.len() {
        return Err(Error::Shape(format!("{} ray cotangents for {} taped rays", grads.len(), tape.len())));
    }
    if field.param_sizes() != tape.sizes || field.branch_mask(tape.branch) != tape.mask {
        return Err(Error::NotDifferentiable("tape was recorded on a different field".into()));
    }
    let n = tape.len();
    let chunks = tape.chunks.min(n.max(1));
    let per = n.div_ceil(chunks).max(1);
    let alloc = || -> Vec<Vec<T>> {
        tape.sizes
            .iter()
            .zip(&tape.mask)
            .map(|(&s, &m)| if m { vec![T::zero(); s] } else { Vec::new() })
            .collect()
    };
    let partials: Vec<Vec<Vec<T>>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut buf = alloc();
            for r in ci * per..((ci + 1) * per).min(n) {
                if let Some(tr) = &tape.traces[r] {
                    backward_ray(field, tr, tape.background, &grads[r], &mut buf);
                }
            }
            buf
        })
        .collect();
    let mut total = alloc();
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            for (a, b) in t.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Ok(total
        .into_iter()
        .zip(&tape.mask)
        .map(|(g, &m)| if m { Some(g) } else { None })
        .collect())
}

/// 8-bit PNG writers; values are linear and scaled by 255 with rounding.
pub mod png {
    use std::path::Path;

    use image::{GrayImage, RgbImage};

    use super::RenderOutput;
    use crate::error::{Error, Result};
    use crate::real::Real;

    /// Parsing palette: background, skin, face feature, hair, then extras.
    pub const PALETTE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [230, 180, 150],
        [200, 30, 60],
        [70, 40, 20],
        [0, 120, 255],
        [0, 200, 0],
        [255, 255, 0],
        [255, 0, 255],
    ];

    pub fn to_u8<T: Real>(v: T) -> u8 {
        (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8
    }

    fn save(img: image::DynamicImage, path: &Path) -> Result<()> {
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                source: other,
            },
        })
    }

    pub fn save_rgb<T: Real>(out: &RenderOutput<T>, path: &Path) -> Result<()> {
        let buf: Vec<u8> = out.rgb.iter().map(|&v| to_u8(v)).collect();
        let img = RgbImage::from_raw(out.width as u32, out.height as u32, buf).expect("rgb buffer size");
        save(img.into(), path)
    }

    pub fn save_alpha<T: Real>(out: &RenderOutput<T>, path: &Path) -> Result<()> {
        let buf: Vec<u8> = out.alpha.iter().map(|&v| to_u8(v)).collect();
        let img = GrayImage::from_raw(out.width as u32, out.height as u32, buf).expect("alpha buffer size");
        save(img.into(), path)
    }

    pub fn save_parsing<T: Real>(out: &RenderOutput<T>, path: &Path) -> Result<()> {
        let buf: Vec<u8> = out
            .parsing_argmax()
            .into_iter()
            .flat_map(|c| PALETTE[c as usize % PALETTE.len()])
            .collect();
        let img = RgbImage::from_raw(out.width as u32, out.height as u32, buf).expect("parsing buffer size");
        save(img.into(), path)
    }
}
