//! Finite-difference verification of every hand-written gradient.
//!
//! Each op is a scalar function of a list of parameter tensors, formed by
//! contracting the op's output with a fixed random cotangent. The analytic
//! gradient is evaluated at the requested precision; the reference is a
//! central difference of the same function evaluated in f64. The error is
//! normwise over a sample of coordinates: `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{activate, dense, dense_backward, Branch, Decoder, DecoderTrace, FieldConfig, RadianceField};
use crate::geometry::{Camera, Vec3};
use crate::optim::loss::{ray_loss, LossWeights, PixelTarget};
use crate::planes::{FeaturePlane, RepresentationKind, WrapMode};
use crate::real::{sigmoid, Real};
use crate::render::{backward, composite, composite_backward, generate_rays, render_rays_tape, RayGrad, RenderSettings, SampleSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GradOp {
    Linear,
    Decoder,
    Bilinear,
    SphereSet,
    Fusion,
    BranchA,
    TriPlane,
    TriGrid,
    Composite,
    EndToEnd,
    EndToEndTriPlane,
}

impl GradOp {
    pub const ALL: [GradOp; 11] = [
        GradOp::Linear,
        GradOp::Decoder,
        GradOp::Bilinear,
        GradOp::SphereSet,
        GradOp::Fusion,
        GradOp::BranchA,
        GradOp::TriPlane,
        GradOp::TriGrid,
        GradOp::Composite,
        GradOp::EndToEnd,
        GradOp::EndToEndTriPlane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Linear => "linear",
            GradOp::Decoder => "decoder",
            GradOp::Bilinear => "bilinear",
            GradOp::SphereSet => "sphere_set",
            GradOp::Fusion => "fusion",
            GradOp::BranchA => "branch_a",
            GradOp::TriPlane => "triplane",
            GradOp::TriGrid => "trigrid",
            GradOp::Composite => "composite",
            GradOp::EndToEnd => "end_to_end",
            GradOp::EndToEndTriPlane => "end_to_end_triplane",
        }
    }
}

impl std::str::FromStr for GradOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GradOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradcheck op '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub op: &'static str,
    pub precision: &'static str,
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A scalar function of parameter tensors with an analytic gradient.
trait Case {
    fn params(&self) -> Vec<Vec<f64>>;
    fn value(&self, p: &[Vec<f64>]) -> f64;
    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>>;
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::c(x)).collect()
}

fn dot<T: Real>(a: &[T], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.f64() * y).sum()
}

struct LinearCase {
    rows: usize,
    r: Vec<f64>,
    init: Vec<Vec<f64>>,
}

impl LinearCase {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let (m, n) = (5, 7);
        Self {
            rows: m,
            r: uniform_vec(rng, m, -1.0, 1.0),
            init: vec![uniform_vec(rng, m * n, -1.0, 1.0), uniform_vec(rng, m, -1.0, 1.0), uniform_vec(rng, n, -1.0, 1.0)],
        }
    }
}

impl Case for LinearCase {
    fn params(&self) -> Vec<Vec<f64>> {
        self.init.clone()
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let mut y = vec![0.0; self.rows];
        dense(&p[0], &p[1], &p[2], &mut y);
        dot(&y, &self.r)
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut gw = vec![T::zero(); p[0].len()];
        let mut gb = vec![T::zero(); p[1].len()];
        let mut gx = vec![T::zero(); p[2].len()];
        let r: Vec<T> = cast(&self.r);
        dense_backward(&p[0], &p[2], &r, &mut gx, &mut [&mut gw, &mut gb], 0);
        vec![gw, gb, gx]
    }
}

struct DecoderCase {
    shape: (usize, usize, usize),
    r: Vec<f64>,
    init: Vec<Vec<f64>>,
}

impl DecoderCase {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let (c, h, k) = (5, 7, 4);
        let dec = Decoder::<f64>::random(c, h, k, rng);
        let mut init = dec.tensors.clone();
        // Non-zero biases exercise every path.
        for i in [1, 3, 5] {
            init[i] = uniform_vec(rng, init[i].len(), -0.5, 0.5);
        }
        init.push(uniform_vec(rng, c, -1.0, 1.0));
        Self {
            shape: (c, h, k),
            r: uniform_vec(rng, 4 + k, -1.0, 1.0),
            init,
        }
    }

    fn decoder<T: Real>(&self, p: &[Vec<T>]) -> Decoder<T> {
        let (c, h, k) = self.shape;
        Decoder {
            input: c,
            hidden: h,
            classes: k,
            tensors: p[..6].to_vec(),
        }
    }
}

impl Case for DecoderCase {
    fn params(&self) -> Vec<Vec<f64>> {
        self.init.clone()
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let s = self.decoder(p).decode(&p[6]);
        let mut out = vec![s.density, s.color[0], s.color[1], s.color[2]];
        out.extend(s.parsing_logits);
        dot(&out, &self.r)
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        let dec = self.decoder(p);
        let mut trace = DecoderTrace::default();
        dec.forward_raw(&p[6], &mut trace);
        let s = activate(&trace.raw);
        let r: Vec<T> = cast(&self.r);
        let mut g_raw = r.clone();
        g_raw[0] = r[0] * sigmoid(trace.raw[0]);
        for c in 0..3 {
            g_raw[1 + c] = r[1 + c] * s.color[c] * (T::one() - s.color[c]);
        }
        let mut bufs: Vec<Vec<T>> = p[..6].iter().map(|t| vec![T::zero(); t.len()]).collect();
        let mut gx = vec![T::zero(); p[6].len()];
        {
            let mut refs: Vec<&mut [T]> = bufs.iter_mut().map(|b| b.as_mut_slice()).collect();
            dec.backward_raw(&trace, &g_raw, &mut refs, &mut gx);
        }
        bufs.push(gx);
        bufs
    }
}

struct BilinearCase {
    template: FeaturePlane<f64>,
    points: Vec<(f64, f64)>,
    r: Vec<Vec<f64>>,
}

impl BilinearCase {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut template = FeaturePlane::zeros(5, 6, 3, WrapMode::Wrap, WrapMode::Clamp).expect("valid plane");
        template.data = uniform_vec(rng, template.data.len(), -1.0, 1.0);
        // Points straddle both borders so clamping and wrapping are exercised.
        let points: Vec<(f64, f64)> = (0..16).map(|_| (rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1))).collect();
        let r = points.iter().map(|_| uniform_vec(rng, 3, -1.0, 1.0)).collect();
        Self { template, points, r }
    }

    fn plane<T: Real>(&self, data: &[T]) -> FeaturePlane<T> {
        FeaturePlane {
            height: self.template.height,
            width: self.template.width,
            channels: self.template.channels,
            data: data.to_vec(),
            wrap_u: self.template.wrap_u,
            wrap_v: self.template.wrap_v,
        }
    }
}

impl Case for BilinearCase {
    fn params(&self) -> Vec<Vec<f64>> {
        vec![self.template.data.clone()]
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let plane = self.plane(&p[0]);
        self.points
            .iter()
            .zip(&self.r)
            .map(|(&(u, v), r)| {
                let mut out = vec![0.0; 3];
                plane.gather(&plane.footprint(u, v, 0), &mut out);
                dot(&out, r)
            })
            .sum()
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        let plane = self.plane(&p[0]);
        let mut g = vec![T::zero(); p[0].len()];
        for (&(u, v), r) in self.points.iter().zip(&self.r) {
            let l = plane.footprint(T::c(u), T::c(v), 0);
            plane.scatter(&l, &cast::<T>(r), &mut g);
        }
        vec![g]
    }
}

/// Feature query of a whole representation, contracted with random cotangents.
struct FeatureCase {
    field: RadianceField<f64>,
    branch: Branch,
    points: Vec<Vec3<f64>>,
    r: Vec<Vec<f64>>,
}

impl FeatureCase {
    fn new(rng: &mut ChaCha8Rng, kind: RepresentationKind, branch: Branch) -> Self {
        let config = FieldConfig {
            kind,
            resolution: 6,
            channels: 3,
            hidden: 4,
            init_std: 1.0,
            ..FieldConfig::default()
        };
        let field = RadianceField::new(&config, rng.gen()).expect("valid config");
        let points: Vec<Vec3<f64>> = (0..24)
            .map(|_| loop {
                let p = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                if p.norm() < 0.5 && p.norm() > 1e-3 {
                    break p;
                }
            })
            .collect();
        let r = points.iter().map(|_| uniform_vec(rng, 3, -1.0, 1.0)).collect();
        Self { field, branch, points, r }
    }

    fn plane_count(&self) -> usize {
        self.field.plane_count()
    }
}

fn with_params<T: Real>(template: &RadianceField<f64>, p: &[Vec<T>]) -> RadianceField<T> {
    let mut f = template.cast::<T>();
    for (dst, src) in f.params_mut().into_iter().zip(p) {
        dst.copy_from_slice(src);
    }
    f
}

impl Case for FeatureCase {
    fn params(&self) -> Vec<Vec<f64>> {
        self.field.params().into_iter().take(self.plane_count()).map(|p| p.data.to_vec()).collect()
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let mut full = p.to_vec();
        full.extend(self.field.decoder.tensors.iter().cloned());
        let f = with_params(&self.field, &full);
        self.points.iter().zip(&self.r).map(|(&x, r)| dot(&f.query_branch(self.branch, x), r)).sum()
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut full = p.to_vec();
        full.extend(self.field.decoder.tensors.iter().map(|t| cast::<T>(t)));
        let f = with_params(&self.field, &full);
        let mut bufs: Vec<Vec<T>> = p.iter().map(|t| vec![T::zero(); t.len()]).collect();
        let mut refs: Vec<&mut [T]> = bufs.iter_mut().map(|b| b.as_mut_slice()).collect();
        let mut out = vec![T::zero(); f.channels()];
        for (&x, r) in self.points.iter().zip(&self.r) {
            out.iter_mut().for_each(|v| *v = T::zero());
            let trace = f.features.query_into(x.cast(), self.branch, &mut out);
            f.features.backward_into(&trace, &cast::<T>(r), &mut refs);
        }
        bufs
    }
}

struct CompositeCase {
    t: Vec<f64>,
    delta: f64,
    classes: usize,
    background: [f64; 3],
    g: RayGrad<f64>,
    init: Vec<Vec<f64>>,
}

impl CompositeCase {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let (n, k) = (12, 4);
        let delta = 0.05;
        let t = (0..n).map(|i| 2.0 + (i as f64 + rng.gen::<f64>()) * delta).collect();
        let g = RayGrad {
            rgb: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            alpha: rng.gen_range(-1.0..1.0),
            logits: uniform_vec(rng, k, -1.0, 1.0),
            depth: rng.gen_range(-1.0..1.0),
        };
        Self {
            t,
            delta,
            classes: k,
            background: [rng.gen(), rng.gen(), rng.gen()],
            g,
            init: vec![uniform_vec(rng, n, 0.0, 20.0), uniform_vec(rng, 3 * n, 0.0, 1.0), uniform_vec(rng, n * k, -2.0, 2.0)],
        }
    }

    fn series<T: Real>(&self, p: &[Vec<T>]) -> SampleSeries<T> {
        SampleSeries {
            t: cast(&self.t),
            delta: vec![T::c(self.delta); self.t.len()],
            sigma: p[0].clone(),
            color: p[1].chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            logits: p[2].clone(),
            classes: self.classes,
        }
    }
}

impl Case for CompositeCase {
    fn params(&self) -> Vec<Vec<f64>> {
        self.init.clone()
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let o = composite(&self.series(p), self.background);
        let g = &self.g;
        (0..3).map(|c| o.rgb[c] * g.rgb[c]).sum::<f64>() + o.alpha * g.alpha + o.depth * g.depth + dot(&o.logits, &g.logits)
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        let g = RayGrad {
            rgb: self.g.rgb.map(T::c),
            alpha: T::c(self.g.alpha),
            logits: cast(&self.g.logits),
            depth: T::c(self.g.depth),
        };
        let (ds, dc, dl) = composite_backward(&self.series(p), self.background.map(T::c), &g);
        vec![ds, dc.into_iter().flatten().collect(), dl]
    }
}

/// Weighted pixel loss of an 8×8 render with respect to every parameter.
struct EndToEndCase {
    field: RadianceField<f64>,
    branch: Branch,
    camera: Camera,
    settings: RenderSettings,
    targets: Vec<PixelTarget>,
    seed: u64,
}

const E2E_SIZE: usize = 8;

impl EndToEndCase {
    fn new(rng: &mut ChaCha8Rng, kind: RepresentationKind) -> Self {
        let config = FieldConfig {
            kind,
            resolution: 8,
            channels: 4,
            hidden: 8,
            init_std: 0.5,
            ..FieldConfig::default()
        };
        let field = RadianceField::new(&config, rng.gen()).expect("valid config");
        let camera = Camera::from_yaw_pitch(rng.gen_range(-3.0..3.0), rng.gen_range(-0.5..0.5));
        let targets = (0..E2E_SIZE * E2E_SIZE)
            .map(|_| PixelTarget {
                rgb: [rng.gen(), rng.gen(), rng.gen()],
                alpha: rng.gen(),
                class: rng.gen_range(0..config.classes as u8),
            })
            .collect();
        Self {
            field,
            branch: Branch::Fused,
            camera,
            settings: RenderSettings {
                n_samples: 16,
                ..RenderSettings::default()
            },
            targets,
            seed: rng.gen(),
        }
    }

    fn weights() -> LossWeights {
        LossWeights {
            rgb: 1.0,
            mask: 0.5,
            parsing: 0.1,
            multiscale: 0.0,
        }
    }

    fn loss_and_grad<T: Real>(&self, p: &[Vec<T>]) -> (f64, Vec<Vec<T>>) {
        let f = with_params(&self.field, p);
        let rays = generate_rays(&self.camera, E2E_SIZE, E2E_SIZE, self.settings.scene_radius);
        let tape = render_rays_tape(&f, self.branch, &rays, &self.settings, self.seed).expect("valid settings");
        let (terms, grads) = ray_loss(&tape.outputs, &self.targets, &Self::weights()).expect("finite loss");
        let g = backward(&f, &tape, &grads).expect("matching tape");
        let g = g
            .into_iter()
            .zip(p)
            .map(|(g, t)| g.unwrap_or_else(|| vec![T::zero(); t.len()]))
            .collect();
        (terms.total, g)
    }
}

impl Case for EndToEndCase {
    fn params(&self) -> Vec<Vec<f64>> {
        self.field.params().into_iter().map(|p| p.data.to_vec()).collect()
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        self.loss_and_grad(p).0
    }

    fn gradient<T: Real>(&self, p: &[Vec<T>]) -> Vec<Vec<T>> {
        self.loss_and_grad(p).1
    }
}

/// Coordinates checked per tensor: half drawn from the gradient's support.
const COORDS_PER_TENSOR: usize = 8;

fn check_case<C: Case>(case: &C, precision: Precision, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let p = case.params();
    let analytic: Vec<Vec<f64>> = match precision {
        Precision::F64 => case.gradient::<f64>(&p),
        Precision::F32 => {
            let p32: Vec<Vec<f32>> = p.iter().map(|t| cast(t)).collect();
            case.gradient::<f32>(&p32).iter().map(|t| t.iter().map(|&v| v as f64).collect()).collect()
        }
    };
    // The f32 analytic gradient is compared at the rounded parameters.
    let base: Vec<Vec<f64>> = match precision {
        Precision::F64 => p,
        Precision::F32 => p.iter().map(|t| t.iter().map(|&v| v as f32 as f64).collect()).collect(),
    };
    let (mut num, mut den_a, mut den_f) = (0.0, 0.0, 0.0);
    let mut count = 0;
    let mut work = base.clone();
    for (ti, g) in analytic.iter().enumerate() {
        let support: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let mut coords: Vec<usize> = support.choose_multiple(rng, COORDS_PER_TENSOR / 2).copied().collect();
        while coords.len() < COORDS_PER_TENSOR.min(g.len()) {
            coords.push(rng.gen_range(0..g.len()));
        }
        coords.sort_unstable();
        coords.dedup();
        for i in coords {
            let x = base[ti][i];
            let h = 1e-5 * x.abs().max(1.0);
            work[ti][i] = x + h;
            let fp = case.value(&work);
            work[ti][i] = x - h;
            let fm = case.value(&work);
            work[ti][i] = x;
            let fd = (fp - fm) / (2.0 * h);
            num += (g[i] - fd).powi(2);
            den_a += g[i] * g[i];
            den_f += fd * fd;
            count += 1;
        }
    }
    let den = den_a.max(den_f).sqrt();
    let err = if den < 1e-30 { num.sqrt() } else { num.sqrt() / den };
    (err, count)
}

/// Max normwise relative error of `op` over `trials` random configurations.
pub fn finite_difference_check(op: GradOp, precision: Precision, trials: usize, tolerance: Option<f64>, seed: u64) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::invalid("gradcheck needs at least one trial"));
    }
    let tolerance = tolerance.unwrap_or(precision.default_tolerance());
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let (err, n) = match op {
            GradOp::Linear => check_case(&LinearCase::new(&mut rng), precision, &mut rng),
            GradOp::Decoder => check_case(&DecoderCase::new(&mut rng), precision, &mut rng),
            GradOp::Bilinear => check_case(&BilinearCase::new(&mut rng), precision, &mut rng),
            GradOp::SphereSet => {
                check_case(&FeatureCase::new(&mut rng, RepresentationKind::SingleSphere, Branch::Fused), precision, &mut rng)
            }
            GradOp::Fusion => {
                check_case(&FeatureCase::new(&mut rng, RepresentationKind::DualSphere, Branch::Fused), precision, &mut rng)
            }
            GradOp::BranchA => {
                check_case(&FeatureCase::new(&mut rng, RepresentationKind::DualSphere, Branch::A), precision, &mut rng)
            }
            GradOp::TriPlane => {
                check_case(&FeatureCase::new(&mut rng, RepresentationKind::TriPlane, Branch::Fused), precision, &mut rng)
            }
            GradOp::TriGrid => {
                check_case(&FeatureCase::new(&mut rng, RepresentationKind::TriGrid, Branch::Fused), precision, &mut rng)
            }
            GradOp::Composite => check_case(&CompositeCase::new(&mut rng), precision, &mut rng),
            GradOp::EndToEnd => check_case(&EndToEndCase::new(&mut rng, RepresentationKind::DualSphere), precision, &mut rng),
            GradOp::EndToEndTriPlane => {
                check_case(&EndToEndCase::new(&mut rng, RepresentationKind::TriPlane), precision, &mut rng)
            }
        };
        if !err.is_finite() {
            return Err(Error::Numerical(format!("gradcheck of {} produced {err}", op.name())));
        }
        worst = worst.max(err);
        coordinates += n;
    }
    Ok(GradcheckReport {
        op: op.name(),
        precision: precision.name(),
        trials,
        coordinates,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}
