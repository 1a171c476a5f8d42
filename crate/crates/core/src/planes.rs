//! Feature-plane storage and wrap-aware bilinear sampling for spherical
//! tri-planes, Cartesian tri-planes and tri-grids.
//!
//! Texel addressing is half-texel centered: along an axis of `n` texels the
//! normalized coordinate `u` maps to the continuous index `u·n − 0.5`, so
//! texel `i` is hit exactly at `u = (i + 0.5) / n`. `Clamp` repeats the edge
//! texel beyond the outermost centers; `Wrap` blends texel `n−1` with texel
//! `0` across `u = 0 ≡ 1`.
//!
//! Every sampler is expressed as a short list of [`Lookup`]s (plane index,
//! four texel indices, four weights). The same list drives the forward
//! gather and the backward scatter, so the vector-Jacobian product is exact
//! by construction.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cart_to_sph, frame_coords, SphereFrame, SphericalCoord, Vec3};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WrapMode {
    Clamp,
    Wrap,
}

/// `height × width × channels` grid, channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePlane<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
    pub wrap_u: WrapMode,
    pub wrap_v: WrapMode,
}

/// Four weighted texels of one plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lookup<T> {
    pub plane: usize,
    pub texels: [usize; 4],
    pub weights: [T; 4],
}

/// At most six lookups: three planes, or three stacks blended across two layers.
#[derive(Clone, Copy, Debug)]
pub struct Lookups<T> {
    items: [Lookup<T>; 6],
    len: usize,
}

impl<T: Real> Lookups<T> {
    fn new() -> Self {
        let empty = Lookup {
            plane: 0,
            texels: [0; 4],
            weights: [T::zero(); 4],
        };
        Self { items: [empty; 6], len: 0 }
    }

    fn push(&mut self, l: Lookup<T>) {
        self.items[self.len] = l;
        self.len += 1;
    }

    pub fn as_slice(&self) -> &[Lookup<T>] {
        &self.items[..self.len]
    }

    /// Copy with every weight multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        let mut out = *self;
        for l in &mut out.items[..out.len] {
            l.weights = l.weights.map(|w| w * s);
        }
        out
    }
}

fn axis_index<T: Real>(coord: T, n: usize, mode: WrapMode) -> (usize, usize, T) {
    let x = coord * T::c(n as f64) - T::c(0.5);
    let fl = x.floor();
    let frac = x - fl;
    let i = fl.to_i64().unwrap_or(0);
    let n = n as i64;
    match mode {
        WrapMode::Clamp => (i.clamp(0, n - 1) as usize, (i + 1).clamp(0, n - 1) as usize, frac),
        WrapMode::Wrap => (i.rem_euclid(n) as usize, (i + 1).rem_euclid(n) as usize, frac),
    }
}

impl<T: Real> FeaturePlane<T> {
    pub fn zeros(height: usize, width: usize, channels: usize, wrap_u: WrapMode, wrap_v: WrapMode) -> Result<Self> {
        if height < 1 || width < 1 || channels < 1 {
            return Err(Error::invalid(format!(
                "plane dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
            wrap_u,
            wrap_v,
        })
    }

    pub fn constant(&self, value: T) -> Self {
        let mut p = self.clone();
        p.data.iter_mut().for_each(|v| *v = value);
        p
    }

    pub fn fill_normal(&mut self, rng: &mut ChaCha8Rng, std: f64) {
        for v in self.data.iter_mut() {
            *v = T::c(normal(rng) * std);
        }
    }

    pub fn texel(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn texel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Texel indices (`row * width + col`) and weights for a bilinear read.
    pub fn footprint(&self, u: T, v: T, plane: usize) -> Lookup<T> {
        let (c0, c1, fu) = axis_index(u, self.width, self.wrap_u);
        let (r0, r1, fv) = axis_index(v, self.height, self.wrap_v);
        let one = T::one();
        Lookup {
            plane,
            texels: [
                r0 * self.width + c0,
                r0 * self.width + c1,
                r1 * self.width + c0,
                r1 * self.width + c1,
            ],
            weights: [(one - fu) * (one - fv), fu * (one - fv), (one - fu) * fv, fu * fv],
        }
    }

    /// `out += Σ w_k · texel_k`.
    #[inline]
    pub fn gather(&self, l: &Lookup<T>, out: &mut [T]) {
        let c = self.channels;
        for k in 0..4 {
            let w = l.weights[k];
            if w == T::zero() {
                continue;
            }
            let src = &self.data[l.texels[k] * c..(l.texels[k] + 1) * c];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * *s;
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): `grad_k += w_k · g`.
    #[inline]
    pub fn scatter(&self, l: &Lookup<T>, grad: &[T], grad_data: &mut [T]) {
        let c = self.channels;
        for k in 0..4 {
            let w = l.weights[k];
            if w == T::zero() {
                continue;
            }
            let dst = &mut grad_data[l.texels[k] * c..(l.texels[k] + 1) * c];
            for (d, g) in dst.iter_mut().zip(grad) {
                *d += w * *g;
            }
        }
    }
}

/// Bilinear read of one plane at normalized `(u, v)`.
pub fn sample_bilinear<T: Real>(plane: &FeaturePlane<T>, u: T, v: T) -> Vec<T> {
    let mut out = vec![T::zero(); plane.channels];
    plane.gather(&plane.footprint(u, v, 0), &mut out);
    out
}

/// Common interface of a group of planes addressed through [`Lookup`]s.
pub trait PlaneGroup<T: Real> {
    fn planes(&self) -> &[FeaturePlane<T>];
    fn planes_mut(&mut self) -> &mut [FeaturePlane<T>];

    fn channels(&self) -> usize {
        self.planes()[0].channels
    }

    fn gather_all(&self, lookups: &Lookups<T>, out: &mut [T]) {
        let planes = self.planes();
        for l in lookups.as_slice() {
            planes[l.plane].gather(l, out);
        }
    }

    /// Accumulates `grad` into per-plane gradient buffers aligned with `planes()`.
    fn scatter_all(&self, lookups: &Lookups<T>, grad: &[T], grads: &mut [&mut [T]]) {
        let planes = self.planes();
        for l in lookups.as_slice() {
            planes[l.plane].scatter(l, grad, grads[l.plane]);
        }
    }
}

pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the stream identical across platforms.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn check_channels<T>(planes: &[FeaturePlane<T>]) -> Result<()> {
    let c = planes[0].channels;
    if planes.iter().any(|p| p.channels != c) {
        return Err(Error::Shape("planes in a set must share a channel count".into()));
    }
    Ok(())
}

/// `P_θr`, `P_φr`, `P_θφ`, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePlaneSet<T> {
    pub planes: Vec<FeaturePlane<T>>,
}

pub const THETA_R: usize = 0;
pub const PHI_R: usize = 1;
pub const THETA_PHI: usize = 2;
pub const SPHERE_PLANE_NAMES: [&str; 3] = ["theta_r", "phi_r", "theta_phi"];

impl<T: Real> SpherePlaneSet<T> {
    /// Square planes of `resolution²`. The `r` and `θ` axes clamp; the `φ` axis
    /// uses `phi_mode`.
    pub fn zeros(resolution: usize, channels: usize, phi_mode: WrapMode) -> Result<Self> {
        use WrapMode::Clamp;
        let planes = vec![
            FeaturePlane::zeros(resolution, resolution, channels, Clamp, Clamp)?,
            FeaturePlane::zeros(resolution, resolution, channels, phi_mode, Clamp)?,
            FeaturePlane::zeros(resolution, resolution, channels, phi_mode, Clamp)?,
        ];
        Ok(Self { planes })
    }

    pub fn from_planes(planes: Vec<FeaturePlane<T>>) -> Result<Self> {
        if planes.len() != 3 {
            return Err(Error::Shape(format!("sphere set needs 3 planes, got {}", planes.len())));
        }
        check_channels(&planes)?;
        if planes[THETA_R].wrap_u != WrapMode::Clamp
            || planes.iter().any(|p| p.wrap_v != WrapMode::Clamp)
            || planes[PHI_R].wrap_u != planes[THETA_PHI].wrap_u
        {
            return Err(Error::invalid("sphere set wrap policies: r and theta clamp, phi axes agree"));
        }
        Ok(Self { planes })
    }

    pub fn phi_mode(&self) -> WrapMode {
        self.planes[THETA_PHI].wrap_u
    }

    pub fn lookups(&self, s: SphericalCoord<T>, r_max: T) -> Lookups<T> {
        let pi = T::c(PI);
        let ur = (s.r / r_max).min(T::one()).max(T::zero());
        let ut = s.theta / pi;
        let up = (s.phi + pi) / (T::c(2.0) * pi);
        let mut out = Lookups::new();
        out.push(self.planes[THETA_R].footprint(ut, ur, THETA_R));
        out.push(self.planes[PHI_R].footprint(up, ur, PHI_R));
        out.push(self.planes[THETA_PHI].footprint(up, ut, THETA_PHI));
        out
    }
}

impl<T: Real> PlaneGroup<T> for SpherePlaneSet<T> {
    fn planes(&self) -> &[FeaturePlane<T>] {
        &self.planes
    }
    fn planes_mut(&mut self) -> &mut [FeaturePlane<T>] {
        &mut self.planes
    }
}

/// `F_θr + F_φr + F_θφ` at spherical coordinate `s`.
pub fn sample_sphere_set<T: Real>(set: &SpherePlaneSet<T>, s: SphericalCoord<T>, r_max: T) -> Vec<T> {
    let mut out = vec![T::zero(); set.channels()];
    set.gather_all(&set.lookups(s, r_max), &mut out);
    out
}

fn unit_coord<T: Real>(a: T, half_extent: T) -> T {
    ((a + half_extent) / (T::c(2.0) * half_extent)).max(T::zero()).min(T::one())
}

/// Axis-aligned `P_XY`, `P_XZ`, `P_YZ`, all clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianPlaneSet<T> {
    pub planes: Vec<FeaturePlane<T>>,
}

pub const CARTESIAN_PLANE_NAMES: [&str; 3] = ["xy", "xz", "yz"];

impl<T: Real> CartesianPlaneSet<T> {
    pub fn zeros(resolution: usize, channels: usize) -> Result<Self> {
        use WrapMode::Clamp;
        let planes = (0..3)
            .map(|_| FeaturePlane::zeros(resolution, resolution, channels, Clamp, Clamp))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { planes })
    }

    pub fn from_planes(planes: Vec<FeaturePlane<T>>) -> Result<Self> {
        if planes.len() != 3 {
            return Err(Error::Shape(format!("tri-plane needs 3 planes, got {}", planes.len())));
        }
        check_channels(&planes)?;
        Ok(Self { planes })
    }

    pub fn lookups(&self, p: Vec3<T>, half_extent: T) -> Lookups<T> {
        let (x, y, z) = (
            unit_coord(p.x, half_extent),
            unit_coord(p.y, half_extent),
            unit_coord(p.z, half_extent),
        );
        let mut out = Lookups::new();
        out.push(self.planes[0].footprint(x, y, 0));
        out.push(self.planes[1].footprint(x, z, 1));
        out.push(self.planes[2].footprint(y, z, 2));
        out
    }
}

impl<T: Real> PlaneGroup<T> for CartesianPlaneSet<T> {
    fn planes(&self) -> &[FeaturePlane<T>] {
        &self.planes
    }
    fn planes_mut(&mut self) -> &mut [FeaturePlane<T>] {
        &mut self.planes
    }
}

pub fn sample_cartesian_set<T: Real>(set: &CartesianPlaneSet<T>, p: Vec3<T>, half_extent: T) -> Vec<T> {
    let mut out = vec![T::zero(); set.channels()];
    set.gather_all(&set.lookups(p, half_extent), &mut out);
    out
}

/// Three stacks of `depth` parallel planes: `XY` layers along `z`, `XZ`
/// layers along `y`, `YZ` layers along `x`. Stored stack-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TriGridSet<T> {
    pub depth: usize,
    pub planes: Vec<FeaturePlane<T>>,
}

impl<T: Real> TriGridSet<T> {
    pub fn zeros(resolution: usize, channels: usize, depth: usize) -> Result<Self> {
        use WrapMode::Clamp;
        if depth < 1 {
            return Err(Error::invalid("tri-grid depth must be at least 1"));
        }
        let planes = (0..3 * depth)
            .map(|_| FeaturePlane::zeros(resolution, resolution, channels, Clamp, Clamp))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { depth, planes })
    }

    pub fn from_planes(depth: usize, planes: Vec<FeaturePlane<T>>) -> Result<Self> {
        if depth < 1 || planes.len() != 3 * depth {
            return Err(Error::Shape(format!(
                "tri-grid of depth {depth} needs {} planes, got {}",
                3 * depth,
                planes.len()
            )));
        }
        check_channels(&planes)?;
        Ok(Self { depth, planes })
    }

    pub fn plane_index(&self, stack: usize, layer: usize) -> usize {
        stack * self.depth + layer
    }

    pub fn lookups(&self, p: Vec3<T>, half_extent: T) -> Lookups<T> {
        let (x, y, z) = (
            unit_coord(p.x, half_extent),
            unit_coord(p.y, half_extent),
            unit_coord(p.z, half_extent),
        );
        let mut out = Lookups::new();
        for (stack, (u, v, d)) in [(x, y, z), (x, z, y), (y, z, x)].into_iter().enumerate() {
            let (l0, l1, f) = axis_index(d, self.depth, WrapMode::Clamp);
            for (layer, wd) in [(l0, T::one() - f), (l1, f)] {
                let idx = self.plane_index(stack, layer);
                let mut l = self.planes[idx].footprint(u, v, idx);
                l.weights.iter_mut().for_each(|w| *w = *w * wd);
                out.push(l);
            }
        }
        out
    }
}

impl<T: Real> PlaneGroup<T> for TriGridSet<T> {
    fn planes(&self) -> &[FeaturePlane<T>] {
        &self.planes
    }
    fn planes_mut(&mut self) -> &mut [FeaturePlane<T>] {
        &mut self.planes
    }
}

pub fn sample_trigrid<T: Real>(set: &TriGridSet<T>, p: Vec3<T>, half_extent: T) -> Vec<T> {
    let mut out = vec![T::zero(); set.channels()];
    set.gather_all(&set.lookups(p, half_extent), &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationKind {
    TriPlane,
    TriGrid,
    SingleSphere,
    DualSphere,
}

impl RepresentationKind {
    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::TriPlane => "tri-plane",
            RepresentationKind::TriGrid => "tri-grid",
            RepresentationKind::SingleSphere => "single-sphere",
            RepresentationKind::DualSphere => "dual-sphere",
        }
    }
}

impl std::str::FromStr for RepresentationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tri-plane" | "triplane" => Ok(Self::TriPlane),
            "tri-grid" | "trigrid" => Ok(Self::TriGrid),
            "single-sphere" => Ok(Self::SingleSphere),
            "dual-sphere" => Ok(Self::DualSphere),
            other => Err(Error::invalid(format!("unknown representation '{other}'"))),
        }
    }
}

/// Per-plane and overall fraction of mirrored pairs whose texel footprints
/// (indices and weights) coincide.
#[derive(Clone, Debug, Serialize)]
pub struct SharedLookupReport {
    pub per_plane: Vec<(String, f64)>,
    pub overall: f64,
}

impl SharedLookupReport {
    pub fn plane(&self, name: &str) -> Option<f64> {
        self.per_plane.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn same_footprint(a: &Lookup<f64>, b: &Lookup<f64>) -> bool {
    a.plane == b.plane && a.texels == b.texels && a.weights == b.weights
}

/// Fraction of plane lookups shared between the two points of each pair.
///
/// Spherical kinds use the world frame (single sphere) or frames A and B
/// (dual sphere); Cartesian kinds span `[-half_extent, half_extent]³`.
pub fn shared_lookup_fraction(
    kind: RepresentationKind,
    resolution: usize,
    extent: f64,
    pairs: &[(Vec3<f64>, Vec3<f64>)],
) -> Result<SharedLookupReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no point pairs"));
    }
    type Probe = Box<dyn Fn(Vec3<f64>) -> Vec<Lookup<f64>>>;
    let mut probes: Vec<(String, Probe)> = Vec::new();
    match kind {
        RepresentationKind::TriPlane => {
            let set = CartesianPlaneSet::<f64>::zeros(resolution, 1)?;
            for (i, name) in CARTESIAN_PLANE_NAMES.iter().enumerate() {
                let set = set.clone();
                probes.push((
                    name.to_string(),
                    Box::new(move |p| vec![set.lookups(p, extent).as_slice()[i]]),
                ));
            }
        }
        RepresentationKind::TriGrid => {
            let set = TriGridSet::<f64>::zeros(resolution, 1, 3)?;
            for (i, name) in CARTESIAN_PLANE_NAMES.iter().enumerate() {
                let set = set.clone();
                probes.push((
                    name.to_string(),
                    Box::new(move |p| set.lookups(p, extent).as_slice()[2 * i..2 * i + 2].to_vec()),
                ));
            }
        }
        RepresentationKind::SingleSphere | RepresentationKind::DualSphere => {
            let frames: Vec<(&str, SphereFrame)> = if kind == RepresentationKind::SingleSphere {
                vec![("", SphereFrame::world())]
            } else {
                vec![("a.", SphereFrame::a()), ("b.", SphereFrame::b())]
            };
            let set = SpherePlaneSet::<f64>::zeros(resolution, 1, WrapMode::Clamp)?;
            for (prefix, frame) in frames {
                for (i, name) in SPHERE_PLANE_NAMES.iter().enumerate() {
                    let set = set.clone();
                    probes.push((
                        format!("{prefix}{name}"),
                        Box::new(move |p| {
                            let s = if frame.id == crate::geometry::FrameId::World {
                                cart_to_sph(p)
                            } else {
                                frame_coords(&frame, p)
                            };
                            vec![set.lookups(s, extent).as_slice()[i]]
                        }),
                    ));
                }
            }
        }
    }
    let mut per_plane = Vec::with_capacity(probes.len());
    let mut shared_total = 0usize;
    for (name, probe) in &probes {
        let shared = pairs
            .iter()
            .filter(|(p, q)| {
                let (a, b) = (probe(*p), probe(*q));
                a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| same_footprint(x, y))
            })
            .count();
        shared_total += shared;
        per_plane.push((name.clone(), shared as f64 / pairs.len() as f64));
    }
    Ok(SharedLookupReport {
        per_plane,
        overall: shared_total as f64 / (pairs.len() * probes.len()) as f64,
    })
}
