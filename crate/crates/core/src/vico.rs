//! Toy view-consistency study: a camera-conditioned discriminator trained
//! with and without real images paired with shuffled camera labels.
//!
//! Fakes are corrupted real images (box blur plus noise), so the baseline
//! task never needs the label. Adding shuffled-label negatives forces the
//! discriminator to check whether image and label agree, which is measured
//! by the AUC of matched against mismatched pairs.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_target, DatasetManifest, DatasetSpec, RenderedView, ViewSampler};
use crate::error::{Error, Result};
use crate::optim::adam::{adam_step, AdamConfig, AdamState};
use crate::optim::loss::TargetImage;
use crate::planes::normal;

/// Side of the downsampled grayscale input.
pub const INPUT_SIDE: usize = 16;
pub const IMAGE_INPUTS: usize = INPUT_SIDE * INPUT_SIDE;
/// Image plus `(sinθ, cosθ, sinφ, cosφ)`.
pub const INPUTS: usize = IMAGE_INPUTS + 4;
pub const HIDDEN: usize = 64;
const LEAK: f64 = 0.2;

/// Downsampled image with its camera angles.
#[derive(Clone, Debug, PartialEq)]
pub struct VicoSample {
    pub pixels: Vec<f64>,
    pub theta: f64,
    pub phi: f64,
    pub yaw: f64,
}

/// Camera angles carried by a label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelAngles {
    pub theta: f64,
    pub phi: f64,
    pub yaw: f64,
}

impl VicoSample {
    pub fn label(&self) -> LabelAngles {
        LabelAngles {
            theta: self.theta,
            phi: self.phi,
            yaw: self.yaw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PairKind {
    RealMatched,
    RealMismatched,
    Corrupted,
}

/// Images paired with labels, all of one kind.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub kind: PairKind,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<LabelAngles>,
}

/// BT.601 grayscale, box-filtered to `16 × 16`.
pub fn downsample_gray(img: &TargetImage) -> Result<Vec<f64>> {
    let (w, h) = (img.width, img.height);
    if w % INPUT_SIDE != 0 || h % INPUT_SIDE != 0 {
        return Err(Error::Shape(format!("{w}x{h} is not a multiple of {INPUT_SIDE}")));
    }
    let (fx, fy) = (w / INPUT_SIDE, h / INPUT_SIDE);
    let mut out = vec![0.0; IMAGE_INPUTS];
    for y in 0..h {
        for x in 0..w {
            let k = 3 * (y * w + x);
            let g = 0.299 * img.rgb[k] as f64 + 0.587 * img.rgb[k + 1] as f64 + 0.114 * img.rgb[k + 2] as f64;
            out[(y / fy) * INPUT_SIDE + x / fx] += g / (fx * fy) as f64;
        }
    }
    Ok(out)
}

pub fn samples_from_views(views: &[RenderedView]) -> Result<Vec<VicoSample>> {
    views
        .iter()
        .map(|v| {
            Ok(VicoSample {
                pixels: downsample_gray(&v.image)?,
                theta: v.record.theta,
                phi: v.record.phi,
                yaw: v.camera.pose.yaw(),
            })
        })
        .collect()
}

pub fn samples_from_manifest(manifest: &DatasetManifest, root: &Path) -> Result<Vec<VicoSample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let img = load_target(&root.join(&r.path), &root.join(r.mask_path()), &root.join(r.parsing_path()))?;
            Ok(VicoSample {
                pixels: downsample_gray(&img)?,
                theta: r.theta,
                phi: r.phi,
                yaw: r.yaw()?,
            })
        })
        .collect()
}

/// Uniformly random permutation of `0..n` (fixed points allowed).
pub fn shuffle_permutation(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("shuffling needs a batch of at least 2"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(perm)
}

pub fn shuffle_labels<L: Clone>(labels: &[L], seed: u64) -> Result<Vec<L>> {
    Ok(shuffle_permutation(labels.len(), seed)?.into_iter().map(|i| labels[i].clone()).collect())
}

/// Fraction of positions a permutation leaves in place.
pub fn fixed_point_rate(perm: &[usize]) -> f64 {
    perm.iter().enumerate().filter(|(i, &p)| *i == p).count() as f64 / perm.len().max(1) as f64
}

/// `INPUTS → 64 → 64 → 1` MLP with leaky-ReLU hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDiscriminator {
    /// `[w0, b0, w1, b1, w2, b2]`, weights row-major `out × in`.
    pub tensors: Vec<Vec<f64>>,
}

fn embed(pixels: &[f64], label: &LabelAngles) -> Vec<f64> {
    let mut x = Vec::with_capacity(INPUTS);
    x.extend_from_slice(pixels);
    x.extend([label.theta.sin(), label.theta.cos(), label.phi.sin(), label.phi.cos()]);
    x
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAK * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAK
    }
}

fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * n..(r + 1) * n].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

struct Activations {
    x: Vec<f64>,
    z0: Vec<f64>,
    a0: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    logit: f64,
}

impl ToyDiscriminator {
    pub fn shapes() -> [(usize, usize); 3] {
        [(HIDDEN, INPUTS), (HIDDEN, HIDDEN), (1, HIDDEN)]
    }

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for (out, inp) in Self::shapes() {
            let std = (2.0 / (out + inp) as f64).sqrt();
            tensors.push((0..out * inp).map(|_| normal(&mut rng) * std).collect());
            tensors.push(vec![0.0; out]);
        }
        Self { tensors }
    }

    fn forward(&self, pixels: &[f64], label: &LabelAngles) -> Activations {
        let t = &self.tensors;
        let x = embed(pixels, label);
        let z0 = matvec(&t[0], &t[1], &x);
        let a0: Vec<f64> = z0.iter().map(|&z| leaky(z)).collect();
        let z1 = matvec(&t[2], &t[3], &a0);
        let a1: Vec<f64> = z1.iter().map(|&z| leaky(z)).collect();
        let logit = matvec(&t[4], &t[5], &a1)[0];
        Activations { x, z0, a0, z1, a1, logit }
    }

    pub fn logit(&self, pixels: &[f64], label: &LabelAngles) -> f64 {
        self.forward(pixels, label).logit
    }

    /// Probability that `(image, label)` is a real, consistent pair.
    pub fn prob(&self, pixels: &[f64], label: &LabelAngles) -> f64 {
        crate::real::sigmoid(self.logit(pixels, label))
    }

    /// Accumulates `g · d logit / d params` into `grads`.
    fn backward(&self, act: &Activations, g: f64, grads: &mut [Vec<f64>]) {
        let t = &self.tensors;
        let mut g1 = vec![0.0; HIDDEN];
        for j in 0..HIDDEN {
            grads[4][j] += g * act.a1[j];
            g1[j] = g * t[4][j] * leaky_grad(act.z1[j]);
        }
        grads[5][0] += g;
        let mut g0 = vec![0.0; HIDDEN];
        for (r, &gr) in g1.iter().enumerate() {
            for c in 0..HIDDEN {
                grads[2][r * HIDDEN + c] += gr * act.a0[c];
                g0[c] += gr * t[2][r * HIDDEN + c];
            }
            grads[3][r] += gr;
        }
        for (r, g0r) in g0.iter_mut().enumerate() {
            *g0r *= leaky_grad(act.z0[r]);
            let row = &mut grads[0][r * INPUTS..(r + 1) * INPUTS];
            for (d, &xv) in row.iter_mut().zip(&act.x) {
                *d += *g0r * xv;
            }
            grads[1][r] += *g0r;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// `−log σ(l)` and `−log(1 − σ(l))` in stable form.
fn nll_real(logit: f64) -> f64 {
    crate::real::softplus(-logit)
}

fn nll_fake(logit: f64) -> f64 {
    crate::real::softplus(logit)
}

/// Mean over the batch of `−log(1 − D(image, c_s))`, with `D` clamped so the
/// log never sees less than `1e-12`. Minimizing it teaches the discriminator
/// to reject real images under shuffled labels.
pub fn vico_loss(d: &ToyDiscriminator, images: &[Vec<f64>], shuffled: &[LabelAngles]) -> Result<f64> {
    if images.len() != shuffled.len() || images.is_empty() {
        return Err(Error::Shape(format!("{} images vs {} labels", images.len(), shuffled.len())));
    }
    let total: f64 = images
        .iter()
        .zip(shuffled)
        .map(|(img, l)| -(1.0 - d.prob(img, l)).max(1e-12).ln())
        .sum();
    Ok(total / images.len() as f64)
}

/// Degradation that turns a real image into a stand-in fake.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Box-blur radius in pixels of the 16×16 input.
    pub blur_radius: usize,
    pub noise_std: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            blur_radius: 1,
            noise_std: 0.08,
        }
    }
}

pub fn corrupt(pixels: &[f64], spec: &CorruptionSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = INPUT_SIDE as isize;
    let r = spec.blur_radius as isize;
    let mut out = vec![0.0; pixels.len()];
    for y in 0..n {
        for x in 0..n {
            let (mut sum, mut cnt) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if (0..n).contains(&xx) && (0..n).contains(&yy) {
                        sum += pixels[(yy * n + xx) as usize];
                        cnt += 1.0;
                    }
                }
            }
            out[(y * n + x) as usize] = (sum / cnt + normal(rng) * spec.noise_std).clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicoConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub corruption: CorruptionSpec,
    /// Held-out pairs whose yaws differ by less than this are not counted as
    /// mismatched.
    pub min_mismatch_yaw: f64,
    /// Shuffled training pairs whose yaws differ by less than this are
    /// dropped; zero keeps every shuffled pair.
    pub shuffle_min_yaw: f64,
    /// Weight of the shuffled-label term relative to the real/fake terms.
    pub vico_weight: f64,
}

impl Default for VicoConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 32,
            lr: 1e-3,
            corruption: CorruptionSpec::default(),
            min_mismatch_yaw: PI / 6.0,
            shuffle_min_yaw: PI / 6.0,
            vico_weight: 1.0,
        }
    }
}

/// Loss trace of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DiscriminatorTrace {
    pub losses: Vec<f64>,
    /// Number of shuffled-label batches built; zero without ViCo.
    pub mismatched_batches: usize,
}

/// Trains a discriminator on real-matched positives against corrupted
/// negatives, plus real images under shuffled labels when `with_vico`.
pub fn train_discriminator(
    samples: &[VicoSample],
    with_vico: bool,
    config: &VicoConfig,
    seed: u64,
) -> Result<(ToyDiscriminator, DiscriminatorTrace)> {
    if samples.len() < 2 {
        return Err(Error::invalid("discriminator training needs at least 2 samples"));
    }
    let mut d = ToyDiscriminator::new(seed);
    let sizes: Vec<usize> = d.tensors.iter().map(Vec::len).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        },
        &sizes,
    );
    let mut trace = DiscriminatorTrace::default();
    for step in 0..config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step as u64 + 1);
        let batch = |kind: PairKind, rng: &mut ChaCha8Rng| -> Result<PairBatch> {
            let idx: Vec<usize> = (0..config.batch).map(|_| rng.gen_range(0..samples.len())).collect();
            let labels: Vec<LabelAngles> = idx.iter().map(|&i| samples[i].label()).collect();
            let images = match kind {
                PairKind::Corrupted => idx.iter().map(|&i| corrupt(&samples[i].pixels, &config.corruption, rng)).collect(),
                _ => idx.iter().map(|&i| samples[i].pixels.clone()).collect(),
            };
            if kind != PairKind::RealMismatched {
                return Ok(PairBatch { kind, images, labels });
            }
            let shuffled = shuffle_labels(&labels, rng.gen())?;
            let keep: Vec<usize> = (0..labels.len())
                .filter(|&i| yaw_gap(labels[i].yaw, shuffled[i].yaw) >= config.shuffle_min_yaw)
                .collect();
            Ok(PairBatch {
                kind,
                images: keep.iter().map(|&i| images[i].clone()).collect(),
                labels: keep.iter().map(|&i| shuffled[i]).collect(),
            })
        };
        let mut batches = vec![batch(PairKind::RealMatched, &mut rng)?, batch(PairKind::Corrupted, &mut rng)?];
        if with_vico {
            batches.push(batch(PairKind::RealMismatched, &mut rng)?);
            trace.mismatched_batches += 1;
        }
        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut loss = 0.0;
        for b in &batches {
            let n = b.images.len() as f64
                / match b.kind {
                    PairKind::RealMismatched => config.vico_weight,
                    _ => 1.0,
                };
            for (img, label) in b.images.iter().zip(&b.labels) {
                let act = d.forward(img, label);
                let p = crate::real::sigmoid(act.logit);
                let (l, g) = match b.kind {
                    PairKind::RealMatched => (nll_real(act.logit), p - 1.0),
                    PairKind::Corrupted | PairKind::RealMismatched => (nll_fake(act.logit), p),
                };
                loss += l / n;
                d.backward(&act, g / n, &mut grads);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("discriminator loss is {loss} at step {step}")));
        }
        trace.losses.push(loss);
        let opt: Vec<Option<Vec<f64>>> = grads.into_iter().map(Some).collect();
        let mut params: Vec<&mut [f64]> = d.tensors.iter_mut().map(|t| t.as_mut_slice()).collect();
        adam_step(&mut params, &opt, &mut adam)?;
    }
    if !d.is_finite() {
        return Err(Error::Numerical("discriminator weights are not finite".into()));
    }
    Ok((d, trace))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann–Whitney with average ranks).
pub fn rank_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::invalid("AUC needs non-empty positive and negative sets"));
    }
    let mut all: Vec<(f64, bool)> = positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * avg;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Absolute wrapped yaw difference in `[0, π]`.
pub fn yaw_gap(a: f64, b: f64) -> f64 {
    ((a - b + PI).rem_euclid(2.0 * PI) - PI).abs()
}

/// Held-out matched pairs and mismatched pairs built by a shuffle, keeping
/// only mismatches whose yaws differ by at least `min_yaw`.
pub fn held_out_pairs(samples: &[VicoSample], min_yaw: f64, seed: u64) -> Result<(PairBatch, PairBatch)> {
    let perm = shuffle_permutation(samples.len(), seed)?;
    let matched = PairBatch {
        kind: PairKind::RealMatched,
        images: samples.iter().map(|s| s.pixels.clone()).collect(),
        labels: samples.iter().map(VicoSample::label).collect(),
    };
    let mut mismatched = PairBatch {
        kind: PairKind::RealMismatched,
        images: Vec::new(),
        labels: Vec::new(),
    };
    for (i, &j) in perm.iter().enumerate() {
        if yaw_gap(samples[i].yaw, samples[j].yaw) >= min_yaw {
            mismatched.images.push(samples[i].pixels.clone());
            mismatched.labels.push(samples[j].label());
        }
    }
    Ok((matched, mismatched))
}

/// AUC of discriminator scores, matched pairs as positives.
pub fn mismatch_auc(d: &ToyDiscriminator, matched: &PairBatch, mismatched: &PairBatch) -> Result<f64> {
    let score = |b: &PairBatch| -> Vec<f64> { b.images.iter().zip(&b.labels).map(|(i, l)| d.logit(i, l)).collect() };
    rank_auc(&score(matched), &score(mismatched))
}

/// Fraction of held-out real (matched) and corrupted pairs classified correctly.
pub fn real_fake_accuracy(d: &ToyDiscriminator, samples: &[VicoSample], corruption: &CorruptionSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0;
    for s in samples {
        correct += (d.logit(&s.pixels, &s.label()) > 0.0) as usize;
        let fake = corrupt(&s.pixels, corruption, &mut rng);
        correct += (d.logit(&fake, &s.label()) <= 0.0) as usize;
    }
    correct as f64 / (2 * samples.len()) as f64
}

/// Paired-run experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicoExperiment {
    pub train: DatasetSpec,
    pub held_out: usize,
    pub config: VicoConfig,
}

impl Default for VicoExperiment {
    fn default() -> Self {
        Self {
            train: DatasetSpec {
                sampler: ViewSampler::Imbalanced {
                    front_fraction: 0.9,
                    pitch_max: crate::dataset::DEFAULT_PITCH_MAX,
                },
                count: 400,
                resolution: 32,
                ..DatasetSpec::default()
            },
            held_out: 200,
            config: VicoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VicoRow {
    pub seed: u64,
    pub with_vico: bool,
    pub real_fake_accuracy: f64,
    pub mismatch_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VicoSummary {
    pub seeds: usize,
    pub mean_auc_with: f64,
    pub mean_auc_without: f64,
    pub mean_auc_delta: f64,
    /// Seeds where the AUC gain reaches `0.15`.
    pub seeds_with_gain: usize,
    pub min_accuracy: f64,
}

pub const AUC_GAIN: f64 = 0.15;

/// Runs both modes for one seed; datasets depend on the seed.
pub fn run_vico_seed(exp: &VicoExperiment, seed: u64) -> Result<[VicoRow; 2]> {
    let train_spec = DatasetSpec {
        seed: exp.train.seed.wrapping_add(seed.wrapping_mul(2)),
        ..exp.train.clone()
    };
    let held_spec = DatasetSpec {
        seed: train_spec.seed.wrapping_add(1),
        count: exp.held_out,
        ..exp.train.clone()
    };
    let train = samples_from_views(&crate::dataset::render_views(&train_spec)?)?;
    let held = samples_from_views(&crate::dataset::render_views(&held_spec)?)?;
    let (matched, mismatched) = held_out_pairs(&held, exp.config.min_mismatch_yaw, seed)?;
    let mut rows = Vec::with_capacity(2);
    for with_vico in [false, true] {
        let (d, _) = train_discriminator(&train, with_vico, &exp.config, seed)?;
        rows.push(VicoRow {
            seed,
            with_vico,
            real_fake_accuracy: real_fake_accuracy(&d, &held, &exp.config.corruption, seed ^ 0x5eed),
            mismatch_auc: mismatch_auc(&d, &matched, &mismatched)?,
        });
    }
    Ok([rows[0].clone(), rows[1].clone()])
}

pub fn summarize(rows: &[VicoRow]) -> VicoSummary {
    let without: Vec<&VicoRow> = rows.iter().filter(|r| !r.with_vico).collect();
    let with: Vec<&VicoRow> = rows.iter().filter(|r| r.with_vico).collect();
    let mean = |v: &[&VicoRow]| v.iter().map(|r| r.mismatch_auc).sum::<f64>() / v.len().max(1) as f64;
    let gains = with
        .iter()
        .filter(|w| {
            without
                .iter()
                .find(|o| o.seed == w.seed)
                .is_some_and(|o| w.mismatch_auc - o.mismatch_auc >= AUC_GAIN)
        })
        .count();
    VicoSummary {
        seeds: with.len(),
        mean_auc_with: mean(&with),
        mean_auc_without: mean(&without),
        mean_auc_delta: mean(&with) - mean(&without),
        seeds_with_gain: gains,
        min_accuracy: rows.iter().map(|r| r.real_fake_accuracy).fold(f64::INFINITY, f64::min),
    }
}

pub const CSV_HEADER: &str = "seed,mode,real_fake_accuracy,mismatch_auc";

pub fn csv_line(r: &VicoRow) -> String {
    format!(
        "{},{},{:.6},{:.6}",
        r.seed,
        if r.with_vico { "vico" } else { "baseline" },
        r.real_fake_accuracy,
        r.mismatch_auc
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn label(theta: f64) -> LabelAngles {
        LabelAngles {
            theta,
            phi: 0.3,
            yaw: theta,
        }
    }

    #[test]
    fn shuffle_properties() {
        assert!(shuffle_permutation(1, 0).is_err());
        assert_eq!(shuffle_permutation(10, 4).unwrap(), shuffle_permutation(10, 4).unwrap());
        let labels: Vec<u32> = (0..50).map(|i| i % 7).collect();
        let mut s = shuffle_labels(&labels, 9).unwrap();
        let mut orig = labels.clone();
        s.sort_unstable();
        orig.sort_unstable();
        assert_eq!(s, orig);
        let swaps = (0..4000).filter(|&seed| shuffle_permutation(2, seed).unwrap() == vec![1, 0]).count();
        assert!((swaps as f64 / 4000.0 - 0.5).abs() < 0.03, "{swaps}");
        assert_eq!(fixed_point_rate(&[0, 2, 1, 3]), 0.5);
    }

    #[test]
    fn auc_basics() {
        assert_eq!(rank_auc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(rank_auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rank_auc(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!(rank_auc(&[], &[1.0]).is_err());
        // Strictly monotone transforms leave the AUC unchanged.
        let p = [0.3, 1.2, -0.4, 2.0];
        let n = [0.1, -1.0, 0.5];
        let a = rank_auc(&p, &n).unwrap();
        let f = |v: &[f64]| v.iter().map(|x: &f64| x.exp() * 3.0 + 1.0).collect::<Vec<_>>();
        assert_eq!(rank_auc(&f(&p), &f(&n)).unwrap(), a);
    }

    #[test]
    fn vico_loss_constant_half() {
        let mut d = ToyDiscriminator::new(0);
        d.tensors[4].iter_mut().for_each(|v| *v = 0.0);
        let imgs = vec![vec![0.5; IMAGE_INPUTS]; 3];
        let labels = vec![label(0.1), label(1.0), label(2.0)];
        assert_abs_diff_eq!(vico_loss(&d, &imgs, &labels).unwrap(), 2f64.ln(), epsilon = 1e-12);
        d.tensors[5][0] = -40.0;
        assert!(vico_loss(&d, &imgs, &labels).unwrap() < 1e-12);
    }

    #[test]
    fn vico_loss_matches_scalar_loop() {
        let d = ToyDiscriminator::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let imgs: Vec<Vec<f64>> = (0..5).map(|_| (0..IMAGE_INPUTS).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<LabelAngles> = (0..5).map(|i| label(i as f64 * 0.6)).collect();
        // Independent forward pass written out with plain loops.
        let t = &d.tensors;
        let mut expect = 0.0;
        for (img, l) in imgs.iter().zip(&labels) {
            let mut x = img.clone();
            x.extend([l.theta.sin(), l.theta.cos(), l.phi.sin(), l.phi.cos()]);
            let mut h0 = [0.0; HIDDEN];
            for r in 0..HIDDEN {
                let mut z = t[1][r];
                for c in 0..INPUTS {
                    z += t[0][r * INPUTS + c] * x[c];
                }
                h0[r] = if z > 0.0 { z } else { 0.2 * z };
            }
            let mut h1 = [0.0; HIDDEN];
            for r in 0..HIDDEN {
                let mut z = t[3][r];
                for c in 0..HIDDEN {
                    z += t[2][r * HIDDEN + c] * h0[c];
                }
                h1[r] = if z > 0.0 { z } else { 0.2 * z };
            }
            let mut z = t[5][0];
            for c in 0..HIDDEN {
                z += t[4][c] * h1[c];
            }
            let p = 1.0 / (1.0 + (-z).exp());
            expect -= (1.0 - p).ln() / 5.0;
        }
        assert_abs_diff_eq!(vico_loss(&d, &imgs, &labels).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn discriminator_gradient_matches_differences() {
        let d = ToyDiscriminator::new(5);
        let img: Vec<f64> = (0..IMAGE_INPUTS).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let l = label(0.8);
        let act = d.forward(&img, &l);
        let mut grads: Vec<Vec<f64>> = d.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        d.backward(&act, 1.0, &mut grads);
        for (ti, idx) in [(0, 7), (0, 300), (1, 3), (2, 100), (3, 5), (4, 9), (5, 0)] {
            let h = 1e-6;
            let mut p = d.clone();
            p.tensors[ti][idx] += h;
            let up = p.logit(&img, &l);
            p.tensors[ti][idx] -= 2.0 * h;
            let down = p.logit(&img, &l);
            assert_abs_diff_eq!(grads[ti][idx], (up - down) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn baseline_never_builds_mismatched_batches() {
        let samples: Vec<VicoSample> = (0..4)
            .map(|i| VicoSample {
                pixels: vec![i as f64 / 4.0; IMAGE_INPUTS],
                theta: i as f64,
                phi: 0.0,
                yaw: i as f64,
            })
            .collect();
        let config = VicoConfig {
            steps: 3,
            batch: 4,
            ..VicoConfig::default()
        };
        let (_, trace) = train_discriminator(&samples, false, &config, 0).unwrap();
        assert_eq!(trace.mismatched_batches, 0);
        let (_, trace) = train_discriminator(&samples, true, &config, 0).unwrap();
        assert_eq!(trace.mismatched_batches, 3);
    }
}
