//! Procedural head-proxy scene, oracle renders and dataset manifests.
//!
//! The head is an ellipsoid textured by surface direction: a left-right
//! asymmetric face on `+z`, hair on the back and crown. Renders are exact
//! (analytic ray intersection), so masks, parsing labels and cameras are
//! ground truth.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{camera_from_view, cart_to_sph, Camera, CameraIntrinsics, CameraPose, Mat3, Vec3, CAMERA_RADIUS};
use crate::optim::fit::FitView;
use crate::optim::loss::TargetImage;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_SKIN: u8 = 1;
pub const CLASS_FEATURE: u8 = 2;
pub const CLASS_HAIR: u8 = 3;

pub const AZIMUTH_BINS: usize = 36;
/// Duplication threshold for view balancing.
pub const DEFAULT_N_THRESH: usize = 2000;
/// Laplacian-variance threshold below which an image counts as blurry.
pub const BLUR_THRESHOLD: f64 = 50.0;

/// An elliptical mark on the face, in the `(x, y)` coordinates of the unit
/// surface direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub rgb: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHeadScene {
    pub seed: u64,
    /// Ellipsoid semi-axes along x, y, z.
    pub radii: [f64; 3],
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub marks: Vec<Mark>,
    pub background: [f64; 3],
}

impl SyntheticHeadScene {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |v: f64, a: f64| v + rng.gen_range(-a..a);
        // Deliberately unequal eyes and an off-center mouth and mole.
        let base = [
            ([-0.33, 0.25], [0.10, 0.08], [0.10, 0.20, 0.55]),
            ([0.30, 0.30], [0.07, 0.06], [0.10, 0.50, 0.20]),
            ([0.06, -0.42], [0.22, 0.06], [0.75, 0.15, 0.20]),
            ([-0.47, -0.12], [0.05, 0.05], [0.35, 0.18, 0.08]),
        ];
        let marks = base
            .iter()
            .map(|&(c, r, rgb)| Mark {
                center: [jitter(c[0], 0.03), jitter(c[1], 0.03)],
                radii: r,
                rgb: rgb.map(|v: f64| jitter(v, 0.05).clamp(0.0, 1.0)),
            })
            .collect();
        Self {
            seed,
            radii: [0.20, 0.25, 0.22],
            skin: [jitter(0.92, 0.03), jitter(0.72, 0.03), jitter(0.60, 0.03)],
            hair: [jitter(0.28, 0.03), jitter(0.16, 0.03), jitter(0.08, 0.03)],
            marks,
            background: [1.0; 3],
        }
    }

    /// Color and parsing class of the surface point whose normalized
    /// ellipsoid direction is `d`.
    pub fn texture(&self, d: Vec3<f64>) -> ([f64; 3], u8) {
        let hairline = 0.62 - 0.3 * d.z;
        if d.z < -0.1 || d.y > hairline {
            let strands = 0.75 + 0.25 * (25.0 * d.x.atan2(-d.z) + 8.0 * d.y).sin();
            return (self.hair.map(|c| c * strands), CLASS_HAIR);
        }
        if d.z > 0.3 {
            for m in &self.marks {
                let u = (d.x - m.center[0]) / m.radii[0];
                let v = (d.y - m.center[1]) / m.radii[1];
                if u * u + v * v <= 1.0 {
                    return (m.rgb, CLASS_FEATURE);
                }
            }
        }
        let shade = 0.85 + 0.15 * d.z.max(0.0) - 0.1 * d.y.min(0.0);
        (self.skin.map(|c| (c * shade).min(1.0)), CLASS_SKIN)
    }

    /// First intersection of a ray with the ellipsoid.
    pub fn intersect(&self, origin: Vec3<f64>, dir: Vec3<f64>) -> Option<f64> {
        let [a, b, c] = self.radii;
        let o = Vec3::new(origin.x / a, origin.y / b, origin.z / c);
        let d = Vec3::new(dir.x / a, dir.y / b, dir.z / c);
        let qa = d.dot(d);
        let qb = o.dot(d);
        let qc = o.dot(o) - 1.0;
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return None;
        }
        let t = (-qb - disc.sqrt()) / qa;
        (t > 0.0).then_some(t)
    }

    fn shade_ray(&self, origin: Vec3<f64>, dir: Vec3<f64>) -> ([f64; 3], f32, u8) {
        match self.intersect(origin, dir) {
            Some(t) => {
                let p = origin + dir * t;
                let [a, b, c] = self.radii;
                let d = Vec3::new(p.x / a, p.y / b, p.z / c).normalized();
                let (rgb, class) = self.texture(d);
                (rgb, 1.0, class)
            }
            None => (self.background, 0.0, CLASS_BACKGROUND),
        }
    }
}

/// Exact render at pixel centers: color, hard mask and parsing labels.
pub fn oracle_render(scene: &SyntheticHeadScene, camera: &Camera, width: usize, height: usize) -> Result<TargetImage> {
    let [a, b, c] = scene.radii;
    let center = camera.pose.center();
    if (center.x / a).powi(2) + (center.y / b).powi(2) + (center.z / c).powi(2) <= 1.0 {
        return Err(Error::invalid("camera lies inside the head ellipsoid"));
    }
    let n = width * height;
    let mut img = TargetImage {
        width,
        height,
        rgb: vec![0.0; 3 * n],
        mask: vec![0.0; n],
        parsing: vec![0; n],
    };
    for j in 0..height {
        for i in 0..width {
            let (o, d) = camera.ray_through((i as f64 + 0.5) / width as f64, (j as f64 + 0.5) / height as f64);
            let (rgb, alpha, class) = scene.shade_ray(o, d);
            let k = j * width + i;
            for ch in 0..3 {
                img.rgb[3 * k + ch] = rgb[ch] as f32;
            }
            img.mask[k] = alpha;
            img.parsing[k] = class;
        }
    }
    Ok(img)
}

/// 25 floats: row-major 4×4 world-to-camera extrinsic, then the 3×3 intrinsic.
pub type CameraLabel = [f64; 25];

pub fn pose_label(pose: &CameraPose, intrinsics: &CameraIntrinsics) -> CameraLabel {
    let mut label = [0.0; 25];
    for r in 0..4 {
        for c in 0..4 {
            label[4 * r + c] = pose.extrinsic[r][c];
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            label[16 + 3 * r + c] = intrinsics.0 .0[r][c];
        }
    }
    label
}

pub fn camera_label(theta: f64, phi: f64) -> CameraLabel {
    pose_label(&camera_from_view(theta, phi, CAMERA_RADIUS), &CameraIntrinsics::default())
}

/// Rebuilds the camera of a label, checking that it is a rigid transform.
pub fn label_to_camera(label: &[f64]) -> Result<Camera> {
    if label.len() != 25 || label.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            what: "camera label",
            detail: format!("expected 25 finite values, got {}", label.len()),
        });
    }
    let mut extrinsic = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            extrinsic[r][c] = label[4 * r + c];
        }
    }
    let pose = CameraPose::from_extrinsic(extrinsic);
    let rot = pose.rotation();
    if rot.orthonormality_error() > 1e-6 || (rot.det() - 1.0).abs() > 1e-6 || extrinsic[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::Format {
            what: "camera label",
            detail: "extrinsic is not a rigid transform".into(),
        });
    }
    let mut k = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            k[r][c] = label[16 + 3 * r + c];
        }
    }
    Ok(Camera {
        pose,
        intrinsics: CameraIntrinsics(Mat3(k)),
    })
}

/// Azimuth bin of a yaw angle: 36 bins of 10°, bin 0 starting at −180°.
pub fn azimuth_bin(yaw: f64) -> usize {
    let t = (yaw + PI).rem_euclid(2.0 * PI) / (2.0 * PI);
    ((t * AZIMUTH_BINS as f64) as usize).min(AZIMUTH_BINS - 1)
}

/// How training views are drawn. Pitch is uniform in `±pitch_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewSampler {
    /// Yaw uniform over the full circle.
    Uniform { pitch_max: f64 },
    /// Yaw uniform in ±45°.
    FrontOnly { pitch_max: f64 },
    /// Front-only with probability `front_fraction`, otherwise uniform.
    Imbalanced { front_fraction: f64, pitch_max: f64 },
}

pub const DEFAULT_PITCH_MAX: f64 = 0.3;
pub const FRONT_YAW_MAX: f64 = PI / 4.0;

impl ViewSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let front = |rng: &mut ChaCha8Rng| rng.gen_range(-FRONT_YAW_MAX..=FRONT_YAW_MAX);
        let full = |rng: &mut ChaCha8Rng| rng.gen_range(-PI..PI);
        let (yaw, pm) = match *self {
            ViewSampler::Uniform { pitch_max } => (full(rng), pitch_max),
            ViewSampler::FrontOnly { pitch_max } => (front(rng), pitch_max),
            ViewSampler::Imbalanced { front_fraction, pitch_max } => {
                if rng.gen::<f64>() < front_fraction {
                    (front(rng), pitch_max)
                } else {
                    (full(rng), pitch_max)
                }
            }
        };
        let pitch = if pm > 0.0 { rng.gen_range(-pm..=pm) } else { 0.0 };
        (yaw, pitch)
    }

    pub fn validate(&self) -> Result<()> {
        let (pm, frac) = match *self {
            ViewSampler::Uniform { pitch_max } | ViewSampler::FrontOnly { pitch_max } => (pitch_max, 0.0),
            ViewSampler::Imbalanced { front_fraction, pitch_max } => (pitch_max, front_fraction),
        };
        if !(0.0..1.5).contains(&pm) || !(0.0..=1.0).contains(&frac) {
            return Err(Error::invalid("pitch_max must lie in [0, 1.5) and front_fraction in [0, 1]"));
        }
        Ok(())
    }
}

/// `uniform`, `front`, or `imbalanced:<front fraction>`.
impl FromStr for ViewSampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let pitch_max = DEFAULT_PITCH_MAX;
        let v = match s.split_once(':') {
            None if s == "uniform" => ViewSampler::Uniform { pitch_max },
            None if s == "front" || s == "front-only" => ViewSampler::FrontOnly { pitch_max },
            None if s == "imbalanced" => ViewSampler::Imbalanced {
                front_fraction: 0.9,
                pitch_max,
            },
            Some(("imbalanced", f)) => ViewSampler::Imbalanced {
                front_fraction: f.parse().map_err(|_| Error::invalid(format!("bad front fraction '{f}'")))?,
                pitch_max,
            },
            _ => return Err(Error::invalid(format!("unknown view sampler '{s}'"))),
        };
        v.validate()?;
        Ok(v)
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// RGB image path relative to the manifest directory.
    pub path: String,
    pub label: Vec<f64>,
    /// Polar angle of the camera center (world `+z` polar axis).
    pub theta: f64,
    /// Azimuth of the camera center, `atan2(y, x)`.
    pub phi: f64,
    /// Yaw bin of the camera center.
    pub bin: usize,
    pub blur: f64,
    pub dup: usize,
}

impl ManifestRecord {
    pub fn camera(&self) -> Result<Camera> {
        label_to_camera(&self.label)
    }

    pub fn yaw(&self) -> Result<f64> {
        Ok(self.camera()?.pose.yaw())
    }

    pub fn mask_path(&self) -> String {
        sibling(&self.path, "mask")
    }

    pub fn parsing_path(&self) -> String {
        sibling(&self.path, "parsing")
    }
}

fn sibling(path: &str, tag: &str) -> String {
    match path.strip_suffix(".png") {
        Some(stem) => format!("{stem}_{tag}.png"),
        None => format!("{path}_{tag}.png"),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Format {
                what: "manifest",
                detail: format!("line {}: {e}", i + 1),
            })?;
            if r.label.len() != 25 || r.label.iter().any(|v| !v.is_finite()) || r.bin >= AZIMUTH_BINS {
                return Err(Error::Format {
                    what: "manifest",
                    detail: format!("line {}: bad label or bin", i + 1),
                });
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    pub fn bin_counts(&self) -> [usize; AZIMUTH_BINS] {
        let mut counts = [0; AZIMUTH_BINS];
        for r in &self.records {
            counts[r.bin] += 1;
        }
        counts
    }
}

/// Per-bin duplication: `1` if the bin already holds `n_thresh` views,
/// otherwise `ceil(n_thresh / n_bin)`.
pub fn duplication_count(n_bin: usize, n_thresh: usize) -> usize {
    if n_bin == 0 || n_bin >= n_thresh {
        1
    } else {
        n_thresh.div_ceil(n_bin)
    }
}

pub fn balance_views(manifest: &DatasetManifest, n_thresh: usize) -> Result<DatasetManifest> {
    if manifest.records.is_empty() {
        return Err(Error::invalid("cannot balance an empty manifest"));
    }
    let counts = manifest.bin_counts();
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.dup = duplication_count(counts[r.bin], n_thresh);
    }
    Ok(out)
}

/// Variance of the 4-neighbour Laplacian of a grayscale image, with
/// reflect-101 borders (`dcb|abcd|cba`). Population variance over all pixels.
pub fn blur_score_gray(gray: &[f64], width: usize, height: usize) -> Result<f64> {
    if width < 2 || height < 2 || gray.len() != width * height {
        return Err(Error::invalid(format!("blur score needs at least a 2x2 image, got {width}x{height}")));
    }
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let i = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        i as usize
    };
    let at = |x: isize, y: isize| gray[reflect(y, height) * width + reflect(x, width)];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..height as isize {
        for x in 0..width as isize {
            let l = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            sum += l;
            sum_sq += l * l;
        }
    }
    let n = (width * height) as f64;
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Blur score of an 8-bit RGB buffer; gray = (299 R + 587 G + 114 B) / 1000
/// on the 0..255 scale.
pub fn laplacian_blur_score(rgb: &[u8], width: usize, height: usize) -> Result<f64> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    let gray: Vec<f64> = rgb
        .chunks_exact(3)
        .map(|p| (299.0 * p[0] as f64 + 587.0 * p[1] as f64 + 114.0 * p[2] as f64) / 1000.0)
        .collect();
    blur_score_gray(&gray, width, height)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB, mask and parsing PNGs of an oracle image.
pub fn save_target(img: &TargetImage, rgb_path: &Path, mask_path: &Path, parsing_path: &Path) -> Result<Vec<u8>> {
    let (w, h) = (img.width as u32, img.height as u32);
    let bytes: Vec<u8> = img.rgb.iter().map(|&v| quantize(v)).collect();
    let rgb = RgbImage::from_raw(w, h, bytes.clone()).expect("buffer sized to image");
    let mask = GrayImage::from_raw(w, h, img.mask.iter().map(|&v| quantize(v)).collect()).expect("buffer sized to image");
    let parsing = GrayImage::from_raw(w, h, img.parsing.clone()).expect("buffer sized to image");
    for (path, res) in [
        (rgb_path, rgb.save(rgb_path)),
        (mask_path, mask.save(mask_path)),
        (parsing_path, parsing.save(parsing_path)),
    ] {
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(bytes)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_target(rgb_path: &Path, mask_path: &Path, parsing_path: &Path) -> Result<TargetImage> {
    let rgb = open_image(rgb_path)?.to_rgb8();
    let mask = open_image(mask_path)?.to_luma8();
    let parsing = open_image(parsing_path)?.to_luma8();
    let (w, h) = rgb.dimensions();
    if mask.dimensions() != (w, h) || parsing.dimensions() != (w, h) {
        return Err(Error::Shape(format!("{}: companion images differ in size", rgb_path.display())));
    }
    Ok(TargetImage {
        width: w as usize,
        height: h as usize,
        rgb: rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        mask: mask.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        parsing: parsing.into_raw(),
    })
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub scene_seed: u64,
    pub sampler: ViewSampler,
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene_seed: 0,
            sampler: ViewSampler::Uniform {
                pitch_max: DEFAULT_PITCH_MAX,
            },
            count: 64,
            resolution: 64,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("dataset count must be at least 1"));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("dataset resolution must be at least 2"));
        }
        self.sampler.validate()
    }
}

/// Yaw/pitch of each view, drawn from one seeded stream.
pub fn sample_views(sampler: &ViewSampler, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sampler.sample(&mut rng)).collect()
}

/// A view rendered in memory, with its manifest record.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub record: ManifestRecord,
    pub camera: Camera,
    pub image: TargetImage,
}

fn make_record(path: String, camera: &Camera, rgb: &[u8], width: usize, height: usize) -> Result<ManifestRecord> {
    let s = cart_to_sph(camera.pose.center());
    Ok(ManifestRecord {
        path,
        label: pose_label(&camera.pose, &camera.intrinsics).to_vec(),
        theta: s.theta,
        phi: s.phi,
        bin: azimuth_bin(camera.pose.yaw()),
        blur: laplacian_blur_score(rgb, width, height)?,
        dup: 1,
    })
}

/// Renders a dataset in memory. Images pass through 8-bit quantization so
/// they match what [`make_dataset`] writes to disk.
pub fn render_views(spec: &DatasetSpec) -> Result<Vec<RenderedView>> {
    spec.validate()?;
    let scene = SyntheticHeadScene::new(spec.scene_seed);
    let res = spec.resolution;
    sample_views(&spec.sampler, spec.count, spec.seed)
        .into_par_iter()
        .enumerate()
        .map(|(i, (yaw, pitch))| {
            let camera = Camera::from_yaw_pitch(yaw, pitch);
            let mut image = oracle_render(&scene, &camera, res, res)?;
            let bytes: Vec<u8> = image.rgb.iter().map(|&v| quantize(v)).collect();
            image.rgb = bytes.iter().map(|&b| b as f32 / 255.0).collect();
            let record = make_record(format!("images/{i:06}.png"), &camera, &bytes, res, res)?;
            Ok(RenderedView { record, camera, image })
        })
        .collect()
}

/// Renders `spec.count` views into `out_dir/images` and writes the manifest.
pub fn make_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let views = render_views(spec)?;
    views.par_iter().try_for_each(|v| {
        let r = &v.record;
        save_target(&v.image, &out_dir.join(&r.path), &out_dir.join(r.mask_path()), &out_dir.join(r.parsing_path())).map(|_| ())
    })?;
    let manifest = DatasetManifest {
        records: views.into_iter().map(|v| v.record).collect(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads every manifest image as a training view, repeated `dup` times.
pub fn load_views(manifest: &DatasetManifest, root: &Path, scene_radius: f64) -> Result<Vec<FitView>> {
    if manifest.records.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let loaded: Vec<(usize, FitView)> = manifest
        .records
        .par_iter()
        .map(|r| {
            let target = load_target(&root.join(&r.path), &root.join(r.mask_path()), &root.join(r.parsing_path()))?;
            Ok((r.dup.max(1), FitView::new(r.camera()?, target, scene_radius)))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (dup, v) in loaded {
        out.extend(std::iter::repeat(v).take(dup));
    }
    Ok(out)
}

/// Directory holding a manifest path (or the path itself for directories).
pub fn manifest_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
