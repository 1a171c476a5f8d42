//! Metrics: PSNR, mirror leakage, seam discontinuity and fusion coverage.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{oracle_render, SyntheticHeadScene};
use crate::error::{Error, Result};
use crate::field::{Branch, RadianceField};
use crate::geometry::{frame_coords, fusion_weight, sph_to_cart, Camera, FrameId, SphereFrame, SphericalCoord};
use crate::optim::loss::TargetImage;
use crate::real::Real;
use crate::render::{render_image, RenderOutput, RenderSettings};

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

/// `10·log10(1 / MSE)` for images in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("psnr of {} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { PSNR_IDENTICAL } else { -10.0 * mse.log10() })
}

/// PSNR of a render's RGB against a target image.
pub fn render_psnr<T: Real>(rendered: &RenderOutput<T>, target: &TargetImage) -> Result<f64> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::Shape("render and target resolutions differ".into()));
    }
    let a: Vec<f64> = rendered.rgb.iter().map(|v| v.f64().clamp(0.0, 1.0)).collect();
    let b: Vec<f64> = target.rgb.iter().map(|&v| v as f64).collect();
    psnr(&a, &b)
}

/// Mean PSNR of `field` over held-out views.
pub fn mean_view_psnr<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    views: &[(Camera, TargetImage)],
    settings: &RenderSettings,
    seed: u64,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::invalid("no views to evaluate"));
    }
    let mut total = 0.0;
    for (cam, target) in views {
        let out = render_image(field, branch, cam, target.width, target.height, settings, seed);
        total += render_psnr(&out, target)?;
    }
    Ok(total / views.len() as f64)
}

/// Pearson correlation of `a` and `b` over the entries where `mask` is set.
/// Zero when either side has no variance.
pub fn masked_pearson(a: &[f64], b: &[f64], mask: &[bool]) -> Result<f64> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(Error::Shape("correlation inputs differ in length".into()));
    }
    let idx: Vec<usize> = (0..a.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::invalid("empty foreground"));
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn mirror_rows(v: &[f64], width: usize, height: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                out[(y * width + x) * channels + c] = v[(y * width + width - 1 - x) * channels + c];
            }
        }
    }
    out
}

/// Correlation between the back render and the horizontally mirrored front
/// render, over pixels inside both (mirrored) head silhouettes. Values near
/// one mean the back of the head repeats the face.
#[allow(clippy::too_many_arguments)]
pub fn mirror_leakage<T: Real>(
    field: &RadianceField<T>,
    scene: &SyntheticHeadScene,
    front: &Camera,
    back: &Camera,
    resolution: usize,
    settings: &RenderSettings,
    seed: u64,
) -> Result<f64> {
    let (w, h) = (resolution, resolution);
    let front_mask = oracle_render(scene, front, w, h)?.mask;
    let back_mask = oracle_render(scene, back, w, h)?.mask;
    let front_mask: Vec<f64> = front_mask.iter().map(|&m| m as f64).collect();
    let mirrored_mask = mirror_rows(&front_mask, w, h, 1);
    let mask: Vec<bool> = (0..w * h).map(|i| back_mask[i] > 0.5 && mirrored_mask[i] > 0.5).collect();
    let f = render_image(field, Branch::Fused, front, w, h, settings, seed);
    let b = render_image(field, Branch::Fused, back, w, h, settings, seed);
    let fr: Vec<f64> = f.rgb.iter().map(|v| v.f64()).collect();
    let br: Vec<f64> = b.rgb.iter().map(|v| v.f64()).collect();
    let fr = mirror_rows(&fr, w, h, 3);
    let mask3: Vec<bool> = mask.iter().flat_map(|&m| [m; 3]).collect();
    masked_pearson(&br, &fr, &mask3)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageReport {
    pub representation: String,
    pub leakage: f64,
    pub front_psnr: f64,
    pub config_digest: String,
}

/// Lowercase hex SHA-256 of the JSON form of `value`.
pub fn config_digest<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Seam probe layout: polar angle in `[0.1π, 0.9π]` and radius in
/// `[0.2, 0.9]·r_max`, from a fixed stream.
fn probe_points(probes: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes).map(|_| (rng.gen_range(0.1 * PI..0.9 * PI), rng.gen_range(0.2..0.9))).collect()
}

fn feature_at<T: Real>(field: &RadianceField<T>, branch: Branch, frame: &SphereFrame, r: f64, theta: f64, phi: f64) -> Vec<f64> {
    let p = frame.to_world(sph_to_cart(SphericalCoord::new(r, theta, phi)));
    field.query_branch(branch, p.cast()).iter().map(|v| v.f64()).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn scene_radius<T: Real>(field: &RadianceField<T>) -> f64 {
    use crate::field::Features;
    match &field.features {
        Features::DualSphere(d) => d.r_max.f64(),
        Features::SingleSphere(s) => s.r_max.f64(),
        Features::TriPlane(t) => t.half_extent.f64(),
        Features::TriGrid(t) => t.half_extent.f64(),
    }
}

/// Seam jump of `branch` across the `φ = ±π` half-circle of `seam_frame`.
///
/// At each probe `(r, θ)` the seam jump is the feature distance between
/// `φ = π − δ/2` and `φ = −π + δ/2`; the interior jump is the mean distance
/// over the neighbouring steps `π − 3δ/2 → π − δ/2` and
/// `−π + δ/2 → −π + 3δ/2`, which stay on one side. Both are divided by the
/// angle `sinθ·δ` swept on the unit sphere. The result is the largest seam jump over the
/// median interior jump: near 1 for a continuous field.
pub fn seam_discontinuity<T: Real>(
    field: &RadianceField<T>,
    branch: Branch,
    seam_frame: FrameId,
    probes: usize,
    delta: f64,
    seed: u64,
) -> Result<f64> {
    if probes == 0 || !(delta > 0.0 && delta < 0.1) {
        return Err(Error::invalid("seam probe needs probes > 0 and 0 < delta < 0.1"));
    }
    let frame = SphereFrame::from_id(seam_frame);
    let r_max = scene_radius(field);
    let (seam, mut interior): (Vec<f64>, Vec<f64>) = probe_points(probes, seed)
        .par_iter()
        .map(|&(theta, rf)| {
            let r = rf * r_max;
            let arc = theta.sin() * delta;
            let at = |phi: f64| feature_at(field, branch, &frame, r, theta, phi);
            let (a0, a1) = (at(PI - 1.5 * delta), at(PI - 0.5 * delta));
            let (b1, b0) = (at(-PI + 0.5 * delta), at(-PI + 1.5 * delta));
            let seam = distance(&a1, &b1) / arc;
            let inner = 0.5 * (distance(&a0, &a1) + distance(&b1, &b0)) / arc;
            (seam, inner)
        })
        .unzip();
    let max_seam = seam.iter().cloned().fold(0.0, f64::max);
    interior.sort_by(|a, b| a.total_cmp(b));
    let median = interior[interior.len() / 2];
    if median <= 0.0 {
        return Ok(if max_seam <= 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(max_seam / median)
}

/// Seam statistics of a dual-sphere field: each branch at its own seam, and
/// the fused field at the worse of the two seams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeamReport {
    pub branch_a: f64,
    pub branch_b: f64,
    pub fused: f64,
}

pub fn seam_report<T: Real>(field: &RadianceField<T>, probes: usize, delta: f64, seed: u64) -> Result<SeamReport> {
    Ok(SeamReport {
        branch_a: seam_discontinuity(field, Branch::A, FrameId::A, probes, delta, seed)?,
        branch_b: seam_discontinuity(field, Branch::B, FrameId::B, probes, delta, seed)?,
        fused: seam_discontinuity(field, Branch::Fused, FrameId::A, probes, delta, seed)?.max(seam_discontinuity(
            field,
            Branch::Fused,
            FrameId::B,
            probes,
            delta,
            seed,
        )?),
    })
}

/// Minimum of `w_A + w_B` over a `grid × grid` lattice of world directions,
/// `θ_i = iπ/(n−1)`, `φ_j = −π + 2πj/(n−1)`. Lattices of size `n` and `2n−1`
/// nest, so refining never raises the minimum.
pub fn weight_cover_min(grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::invalid("coverage grid needs at least 2 points per axis"));
    }
    let (fa, fb) = (SphereFrame::a(), SphereFrame::b());
    let n1 = (grid - 1) as f64;
    let min = (0..grid)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * PI / n1;
            (0..grid)
                .map(|j| {
                    let phi = -PI + 2.0 * PI * j as f64 / n1;
                    let p = sph_to_cart(SphericalCoord::new(1.0, theta, phi));
                    let sa = frame_coords(&fa, p);
                    let sb = frame_coords(&fb, p);
                    fusion_weight(sa.theta, sa.phi) + fusion_weight(sb.theta, sb.phi)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}
