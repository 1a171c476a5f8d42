//! Queryable radiance fields: the fused dual-sphere field, a single-sphere
//! field, Cartesian tri-plane and tri-grid baselines, and the shared decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cart_to_sph, frame_coords, fusion_weight, FrameId, SphereFrame, Vec3, DEFAULT_SCENE_RADIUS};
use crate::planes::{
    normal, CartesianPlaneSet, FeaturePlane, Lookups, PlaneGroup, RepresentationKind, SpherePlaneSet, TriGridSet,
    WrapMode, CARTESIAN_PLANE_NAMES, SPHERE_PLANE_NAMES,
};
use crate::real::{sigmoid, softplus, Real};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_PARSING_CLASSES: usize = 4;

/// Which sub-field a query reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
    Fused,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::A, Branch::B, Branch::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Branch::A => "A",
            Branch::B => "B",
            Branch::Fused => "fused",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Branch::A),
            "B" | "b" => Ok(Branch::B),
            "fused" | "Fused" | "F" | "f" => Ok(Branch::Fused),
            other => Err(Error::invalid(format!("unknown branch '{other}'"))),
        }
    }
}

/// Density, color and parsing logits decoded at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample<T> {
    pub density: T,
    pub color: [T; 3],
    pub parsing_logits: Vec<T>,
}

/// `C → hidden → hidden → (1 + 3 + K)` MLP with softplus hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    /// `[w0, b0, w1, b1, w2, b2]`, weights row-major `out × in`.
    pub tensors: Vec<Vec<T>>,
}

pub const DECODER_TENSOR_NAMES: [&str; 6] = ["w0", "b0", "w1", "b1", "w2", "b2"];

/// Intermediate activations of one decoder evaluation.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace<T> {
    pub input: Vec<T>,
    /// Hidden activations followed by their derivatives, per layer.
    pub layer0: Vec<T>,
    pub layer1: Vec<T>,
    pub raw: Vec<T>,
}

impl<T: Real> Decoder<T> {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        let out = 4 + classes;
        Self {
            input,
            hidden,
            classes,
            tensors: vec![
                vec![T::zero(); hidden * input],
                vec![T::zero(); hidden],
                vec![T::zero(); hidden * hidden],
                vec![T::zero(); hidden],
                vec![T::zero(); out * hidden],
                vec![T::zero(); out],
            ],
        }
    }

    /// Xavier-normal weights, zero biases.
    pub fn random(input: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut d = Self::zeros(input, hidden, classes);
        let shapes = d.shapes();
        for (t, shape) in [0usize, 2, 4].into_iter().map(|i| (i, shapes[i].clone())) {
            let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
            for v in d.tensors[t].iter_mut() {
                *v = T::c(normal(rng) * std);
            }
        }
        d
    }

    pub fn outputs(&self) -> usize {
        4 + self.classes
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let (i, h, o) = (self.input, self.hidden, self.outputs());
        vec![vec![h, i], vec![h], vec![h, h], vec![h], vec![o, h], vec![o]]
    }

    /// Length of one cached hidden layer: activations, then their derivatives.
    pub fn layer_len(&self) -> usize {
        2 * self.hidden
    }

    /// Raw outputs for feature `f`. Each hidden layer's activations and
    /// activation derivatives land in `l0` / `l1` (see [`Self::layer_len`])
    /// for a later backward pass.
    pub fn forward_into(&self, f: &[T], l0: &mut [T], l1: &mut [T], raw: &mut [T]) {
        let t = &self.tensors;
        let h = self.hidden;
        dense(&t[0], &t[1], f, &mut l0[..h]);
        softplus_layer(l0, h);
        dense(&t[2], &t[3], &l0[..h], &mut l1[..h]);
        softplus_layer(l1, h);
        dense(&t[4], &t[5], &l1[..h], raw);
    }

    /// Backpropagates `grad_raw`. Weight gradients accumulate into `grads`
    /// (aligned with `tensors`); d loss / d feature is written to `grad_input`.
    pub fn backward_from(&self, f: &[T], l0: &[T], l1: &[T], grad_raw: &[T], grads: &mut [&mut [T]], grad_input: &mut [T]) {
        let h = self.hidden;
        let t = &self.tensors;
        let mut g = vec![T::zero(); 2 * h];
        let (g1, g0) = g.split_at_mut(h);
        dense_backward(&t[4], &l1[..h], grad_raw, g1, grads, 4);
        g1.iter_mut().zip(&l1[h..]).for_each(|(g, &d)| *g *= d);
        dense_backward(&t[2], &l0[..h], g1, g0, grads, 2);
        g0.iter_mut().zip(&l0[h..]).for_each(|(g, &d)| *g *= d);
        grad_input.iter_mut().for_each(|v| *v = T::zero());
        dense_backward(&t[0], f, g0, grad_input, grads, 0);
    }

    /// Owned-buffer forward pass.
    pub fn forward_raw(&self, f: &[T], trace: &mut DecoderTrace<T>) {
        trace.input = f.to_vec();
        trace.layer0 = vec![T::zero(); self.layer_len()];
        trace.layer1 = vec![T::zero(); self.layer_len()];
        trace.raw = vec![T::zero(); self.outputs()];
        self.forward_into(f, &mut trace.layer0, &mut trace.layer1, &mut trace.raw);
    }

    pub fn backward_raw(&self, trace: &DecoderTrace<T>, grad_raw: &[T], grads: &mut [&mut [T]], grad_input: &mut [T]) {
        self.backward_from(&trace.input, &trace.layer0, &trace.layer1, grad_raw, grads, grad_input);
    }

    pub fn decode(&self, f: &[T]) -> FieldSample<T> {
        let mut trace = DecoderTrace::default();
        self.forward_raw(f, &mut trace);
        activate(&trace.raw)
    }

    pub fn cast<U: Real>(&self) -> Decoder<U> {
        Decoder {
            input: self.input,
            hidden: self.hidden,
            classes: self.classes,
            tensors: self.tensors.iter().map(|t| cast_vec(t)).collect(),
        }
    }
}

/// Output activations: softplus density, sigmoid color, raw logits.
pub fn activate<T: Real>(raw: &[T]) -> FieldSample<T> {
    FieldSample {
        density: softplus(raw[0]),
        color: [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])],
        parsing_logits: raw[4..].to_vec(),
    }
}

pub fn decode<T: Real>(decoder: &Decoder<T>, f: &[T]) -> FieldSample<T> {
    decoder.decode(f)
}

pub(crate) fn dense<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        // Eight partial sums so the compiler can vectorize the dot product.
        let mut acc = [T::zero(); 8];
        let (rc, rr) = row.split_at(cols - cols % 8);
        let (xc, xr) = x.split_at(cols - cols % 8);
        for (a, v) in rc.chunks_exact(8).zip(xc.chunks_exact(8)) {
            for k in 0..8 {
                acc[k] += a[k] * v[k];
            }
        }
        let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
        for (&a, &v) in rr.iter().zip(xr) {
            sum += a * v;
        }
        *o = b[r] + sum;
    }
}

/// Replaces the pre-activations in `layer[..h]` by softplus and writes the
/// derivative (the logistic function) into `layer[h..]`.
fn softplus_layer<T: Real>(layer: &mut [T], h: usize) {
    let (act, der) = layer.split_at_mut(h);
    for (a, d) in act.iter_mut().zip(der.iter_mut()) {
        let z = *a;
        let e = (-z.abs()).exp();
        *a = z.max(T::zero()) + e.ln_1p();
        *d = if z >= T::zero() { T::one() / (T::one() + e) } else { e / (T::one() + e) };
    }
}

/// `y = W x + b`: accumulates `dW += g xᵀ`, `db += g`, and `dx += Wᵀ g`.
pub(crate) fn dense_backward<T: Real>(w: &[T], x: &[T], g: &[T], dx: &mut [T], grads: &mut [&mut [T]], wi: usize) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == T::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += a * gr;
        }
        let gw = &mut grads[wi][r * cols..(r + 1) * cols];
        for (d, &v) in gw.iter_mut().zip(x) {
            *d += gr * v;
        }
        grads[wi + 1][r] += gr;
    }
}

pub(crate) fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|&x| U::c(x.f64())).collect()
}

fn cast_plane<T: Real, U: Real>(p: &FeaturePlane<T>) -> FeaturePlane<U> {
    FeaturePlane {
        height: p.height,
        width: p.width,
        channels: p.channels,
        data: cast_vec(&p.data),
        wrap_u: p.wrap_u,
        wrap_v: p.wrap_v,
    }
}

/// Two sphere-frame plane sets fused by the cosine weight map.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSphereField<T> {
    pub set_a: SpherePlaneSet<T>,
    pub set_b: SpherePlaneSet<T>,
    pub frame_a: SphereFrame,
    pub frame_b: SphereFrame,
    pub epsilon: T,
    pub r_max: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleSphereField<T> {
    pub set: SpherePlaneSet<T>,
    pub frame: SphereFrame,
    pub r_max: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneField<T> {
    pub set: CartesianPlaneSet<T>,
    pub half_extent: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriGridField<T> {
    pub set: TriGridSet<T>,
    pub half_extent: T,
}

/// Plane lookups behind one feature query, with the scale each group's
/// contribution received. Replaying it in reverse gives the plane gradients.
#[derive(Clone, Copy, Debug)]
pub struct FeatureTrace<T> {
    pub groups: [Option<(Lookups<T>, T)>; 2],
}

impl<T: Real> Default for FeatureTrace<T> {
    fn default() -> Self {
        Self { groups: [None, None] }
    }
}

/// Spherical coordinates of `p` in `frame`; the world frame uses the plain transform.
fn coords_in<T: Real>(frame: &SphereFrame, p: Vec3<T>) -> crate::geometry::SphericalCoord<T> {
    if frame.id == FrameId::World {
        cart_to_sph(p)
    } else {
        frame_coords(frame, p)
    }
}

impl<T: Real> DualSphereField<T> {
    /// `(w_A, w_B)` at world point `p`.
    pub fn weights(&self, p: Vec3<T>) -> (T, T) {
        let sa = frame_coords(&self.frame_a, p);
        let sb = frame_coords(&self.frame_b, p);
        (fusion_weight(sa.theta, sa.phi), fusion_weight(sb.theta, sb.phi))
    }

    fn query(&self, p: Vec3<T>, branch: Branch, out: &mut [T]) -> FeatureTrace<T> {
        let sa = frame_coords(&self.frame_a, p);
        let sb = frame_coords(&self.frame_b, p);
        let mut trace = FeatureTrace::default();
        match branch {
            Branch::A => {
                let la = self.set_a.lookups(sa, self.r_max);
                self.set_a.gather_all(&la, out);
                trace.groups[0] = Some((la, T::one()));
            }
            Branch::B => {
                let lb = self.set_b.lookups(sb, self.r_max);
                self.set_b.gather_all(&lb, out);
                trace.groups[1] = Some((lb, T::one()));
            }
            Branch::Fused => {
                let wa = fusion_weight(sa.theta, sa.phi);
                let wb = fusion_weight(sb.theta, sb.phi);
                let den = wa + wb + self.epsilon;
                let (ka, kb) = (wa / den, wb / den);
                let la = self.set_a.lookups(sa, self.r_max);
                let lb = self.set_b.lookups(sb, self.r_max);
                self.set_a.gather_all(&la.scaled(ka), out);
                self.set_b.gather_all(&lb.scaled(kb), out);
                trace.groups[0] = Some((la, ka));
                trace.groups[1] = Some((lb, kb));
            }
        }
        trace
    }
}

/// The four representations behind a common feature-query interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Features<T> {
    DualSphere(DualSphereField<T>),
    SingleSphere(SingleSphereField<T>),
    TriPlane(TriPlaneField<T>),
    TriGrid(TriGridField<T>),
}

impl<T: Real> Features<T> {
    pub fn kind(&self) -> RepresentationKind {
        match self {
            Features::DualSphere(_) => RepresentationKind::DualSphere,
            Features::SingleSphere(_) => RepresentationKind::SingleSphere,
            Features::TriPlane(_) => RepresentationKind::TriPlane,
            Features::TriGrid(_) => RepresentationKind::TriGrid,
        }
    }

    pub fn channels(&self) -> usize {
        self.groups()[0].1[0].channels
    }

    /// Named plane groups in parameter order.
    pub fn groups(&self) -> Vec<(&'static str, &[FeaturePlane<T>])> {
        match self {
            Features::DualSphere(d) => vec![("set_a", d.set_a.planes()), ("set_b", d.set_b.planes())],
            Features::SingleSphere(s) => vec![("set", s.set.planes())],
            Features::TriPlane(t) => vec![("triplane", t.set.planes())],
            Features::TriGrid(t) => vec![("trigrid", t.set.planes())],
        }
    }

    pub fn groups_mut(&mut self) -> Vec<&mut [FeaturePlane<T>]> {
        match self {
            Features::DualSphere(d) => vec![d.set_a.planes_mut(), d.set_b.planes_mut()],
            Features::SingleSphere(s) => vec![s.set.planes_mut()],
            Features::TriPlane(t) => vec![t.set.planes_mut()],
            Features::TriGrid(t) => vec![t.set.planes_mut()],
        }
    }

    fn plane_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (group, planes) in self.groups() {
            for (i, _) in planes.iter().enumerate() {
                let name = match self {
                    Features::DualSphere(_) | Features::SingleSphere(_) => SPHERE_PLANE_NAMES[i].to_string(),
                    Features::TriPlane(_) => CARTESIAN_PLANE_NAMES[i].to_string(),
                    Features::TriGrid(t) => format!("{}.{}", CARTESIAN_PLANE_NAMES[i / t.set.depth], i % t.set.depth),
                };
                names.push(format!("{group}.{name}"));
            }
        }
        names
    }

    /// Adds the feature at `p` into `out` and returns the lookup trace.
    /// Branches only matter for the dual-sphere field.
    pub fn query_into(&self, p: Vec3<T>, branch: Branch, out: &mut [T]) -> FeatureTrace<T> {
        let mut trace = FeatureTrace::default();
        match self {
            Features::DualSphere(d) => return d.query(p, branch, out),
            Features::SingleSphere(s) => {
                let l = s.set.lookups(coords_in(&s.frame, p), s.r_max);
                s.set.gather_all(&l, out);
                trace.groups[0] = Some((l, T::one()));
            }
            Features::TriPlane(t) => {
                let l = t.set.lookups(p, t.half_extent);
                t.set.gather_all(&l, out);
                trace.groups[0] = Some((l, T::one()));
            }
            Features::TriGrid(t) => {
                let l = t.set.lookups(p, t.half_extent);
                t.set.gather_all(&l, out);
                trace.groups[0] = Some((l, T::one()));
            }
        }
        trace
    }

    /// Scatters `grad` (d loss / d feature) into plane gradient buffers,
    /// laid out group by group in parameter order.
    pub fn backward_into(&self, trace: &FeatureTrace<T>, grad: &[T], plane_grads: &mut [&mut [T]]) {
        let groups = self.groups();
        let mut offset = 0;
        let mut scaled = vec![T::zero(); grad.len()];
        for (gi, (_, planes)) in groups.iter().enumerate() {
            if let Some((lookups, scale)) = &trace.groups[gi] {
                for (s, g) in scaled.iter_mut().zip(grad) {
                    *s = *scale * *g;
                }
                for l in lookups.as_slice() {
                    planes[l.plane].scatter(l, &scaled, plane_grads[offset + l.plane]);
                }
            }
            offset += planes.len();
        }
    }

    /// Which plane tensors a query on `branch` can touch.
    pub fn branch_mask(&self, branch: Branch) -> Vec<bool> {
        let groups = self.groups();
        let mut mask = Vec::new();
        for (gi, (_, planes)) in groups.iter().enumerate() {
            let on = match (self, branch) {
                (Features::DualSphere(_), Branch::A) => gi == 0,
                (Features::DualSphere(_), Branch::B) => gi == 1,
                _ => true,
            };
            mask.extend(std::iter::repeat(on).take(planes.len()));
        }
        mask
    }

    pub fn cast<U: Real>(&self) -> Features<U> {
        let sph = |s: &SpherePlaneSet<T>| SpherePlaneSet {
            planes: s.planes.iter().map(cast_plane).collect(),
        };
        match self {
            Features::DualSphere(d) => Features::DualSphere(DualSphereField {
                set_a: sph(&d.set_a),
                set_b: sph(&d.set_b),
                frame_a: d.frame_a,
                frame_b: d.frame_b,
                epsilon: U::c(d.epsilon.f64()),
                r_max: U::c(d.r_max.f64()),
            }),
            Features::SingleSphere(s) => Features::SingleSphere(SingleSphereField {
                set: sph(&s.set),
                frame: s.frame,
                r_max: U::c(s.r_max.f64()),
            }),
            Features::TriPlane(t) => Features::TriPlane(TriPlaneField {
                set: CartesianPlaneSet {
                    planes: t.set.planes.iter().map(cast_plane).collect(),
                },
                half_extent: U::c(t.half_extent.f64()),
            }),
            Features::TriGrid(t) => Features::TriGrid(TriGridField {
                set: TriGridSet {
                    depth: t.set.depth,
                    planes: t.set.planes.iter().map(cast_plane).collect(),
                },
                half_extent: U::c(t.half_extent.f64()),
            }),
        }
    }
}

/// Construction parameters shared by every representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: RepresentationKind,
    pub resolution: usize,
    pub channels: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Radius of the represented spherical region (also the Cartesian half extent).
    pub scene_radius: f64,
    pub trigrid_depth: usize,
    pub epsilon: f64,
    pub phi_mode: WrapMode,
    pub init_std: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            kind: RepresentationKind::DualSphere,
            resolution: 256,
            channels: 32,
            hidden: 64,
            classes: DEFAULT_PARSING_CLASSES,
            scene_radius: DEFAULT_SCENE_RADIUS,
            trigrid_depth: 3,
            epsilon: DEFAULT_EPSILON,
            phi_mode: WrapMode::Clamp,
            init_std: 0.1,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::invalid("plane resolution must be at least 2"));
        }
        if self.channels < 1 || self.hidden < 1 || self.classes < 1 {
            return Err(Error::invalid("channels, hidden width and classes must be positive"));
        }
        if !(self.scene_radius > 0.0) {
            return Err(Error::invalid("scene radius must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return Err(Error::invalid("fusion epsilon must lie in (0, 1e-4]"));
        }
        if self.trigrid_depth < 1 {
            return Err(Error::invalid("tri-grid depth must be at least 1"));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::invalid("init std must be non-negative"));
        }
        Ok(())
    }
}

/// Named tensor view used for optimization and checkpointing.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Feature representation plus the shared decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField<T> {
    pub features: Features<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> RadianceField<T> {
    pub fn new(config: &FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (res, c) = (config.resolution, config.channels);
        let r = T::c(config.scene_radius);
        let mut features = match config.kind {
            RepresentationKind::DualSphere => Features::DualSphere(DualSphereField {
                set_a: SpherePlaneSet::zeros(res, c, config.phi_mode)?,
                set_b: SpherePlaneSet::zeros(res, c, config.phi_mode)?,
                frame_a: SphereFrame::a(),
                frame_b: SphereFrame::b(),
                epsilon: T::c(config.epsilon),
                r_max: r,
            }),
            RepresentationKind::SingleSphere => Features::SingleSphere(SingleSphereField {
                set: SpherePlaneSet::zeros(res, c, config.phi_mode)?,
                frame: SphereFrame::world(),
                r_max: r,
            }),
            RepresentationKind::TriPlane => Features::TriPlane(TriPlaneField {
                set: CartesianPlaneSet::zeros(res, c)?,
                half_extent: r,
            }),
            RepresentationKind::TriGrid => Features::TriGrid(TriGridField {
                set: TriGridSet::zeros(res, c, config.trigrid_depth)?,
                half_extent: r,
            }),
        };
        for group in features.groups_mut() {
            for plane in group.iter_mut() {
                plane.fill_normal(&mut rng, config.init_std);
            }
        }
        let decoder = Decoder::random(c, config.hidden, config.classes, &mut rng);
        Ok(Self { features, decoder })
    }

    pub fn kind(&self) -> RepresentationKind {
        self.features.kind()
    }

    pub fn channels(&self) -> usize {
        self.features.channels()
    }

    pub fn classes(&self) -> usize {
        self.decoder.classes
    }

    pub fn query_branch(&self, branch: Branch, p: Vec3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels()];
        self.features.query_into(p, branch, &mut out);
        out
    }

    pub fn sample(&self, branch: Branch, p: Vec3<T>) -> FieldSample<T> {
        self.decoder.decode(&self.query_branch(branch, p))
    }

    pub fn plane_count(&self) -> usize {
        self.features.groups().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.features.plane_names();
        names.extend(DECODER_TENSOR_NAMES.iter().map(|n| format!("decoder.{n}")));
        names
    }

    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let names = self.param_names();
        let mut out = Vec::with_capacity(names.len());
        let mut it = names.into_iter();
        for (_, planes) in self.features.groups() {
            for p in planes {
                out.push(ParamRef {
                    name: it.next().unwrap_or_default(),
                    shape: vec![p.height, p.width, p.channels],
                    data: &p.data,
                });
            }
        }
        for (t, shape) in self.decoder.tensors.iter().zip(self.decoder.shapes()) {
            out.push(ParamRef {
                name: it.next().unwrap_or_default(),
                shape,
                data: t,
            });
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for group in self.features.groups_mut() {
            for p in group.iter_mut() {
                out.push(&mut p.data);
            }
        }
        for t in self.decoder.tensors.iter_mut() {
            out.push(t);
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.data.len()).collect()
    }

    /// Tensors that receive gradient when rendering `branch`.
    pub fn branch_mask(&self, branch: Branch) -> Vec<bool> {
        let mut mask = self.features.branch_mask(branch);
        mask.extend([true; 6]);
        mask
    }

    pub fn cast<U: Real>(&self) -> RadianceField<U> {
        RadianceField {
            features: self.features.cast(),
            decoder: self.decoder.cast(),
        }
    }

    /// Sets every plane texel to zero.
    pub fn zero_planes(&mut self) {
        for group in self.features.groups_mut() {
            for p in group.iter_mut() {
                p.data.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

/// Tri-plane or tri-grid baseline with the same query and decode interface.
pub fn build_baseline_field<T: Real>(kind: RepresentationKind, config: &FieldConfig, seed: u64) -> Result<RadianceField<T>> {
    match kind {
        RepresentationKind::TriPlane | RepresentationKind::TriGrid => {
            RadianceField::new(&FieldConfig { kind, ..config.clone() }, seed)
        }
        other => Err(Error::invalid(format!("{} is not a Cartesian baseline", other.name()))),
    }
}

pub fn query_fused<T: Real>(field: &DualSphereField<T>, p: Vec3<T>) -> Vec<T> {
    let mut out = vec![T::zero(); field.set_a.channels()];
    field.query(p, Branch::Fused, &mut out);
    out
}

pub fn query_branch<T: Real>(field: &DualSphereField<T>, branch: Branch, p: Vec3<T>) -> Vec<T> {
    let mut out = vec![T::zero(); field.set_a.channels()];
    field.query(p, branch, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::sample_sphere_set;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small(kind: RepresentationKind) -> FieldConfig {
        FieldConfig {
            kind,
            resolution: 8,
            channels: 4,
            hidden: 8,
            init_std: 1.0,
            ..FieldConfig::default()
        }
    }

    fn dual(seed: u64) -> DualSphereField<f64> {
        match RadianceField::<f64>::new(&small(RepresentationKind::DualSphere), seed).unwrap().features {
            Features::DualSphere(d) => d,
            _ => unreachable!(),
        }
    }

    #[test]
    fn fused_matches_hand_composition() {
        let d = dual(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.8;
            let sa = frame_coords(&d.frame_a, p);
            let sb = frame_coords(&d.frame_b, p);
            let fa = sample_sphere_set(&d.set_a, sa, 0.5);
            let fb = sample_sphere_set(&d.set_b, sb, 0.5);
            let (wa, wb) = (fusion_weight(sa.theta, sa.phi), fusion_weight(sb.theta, sb.phi));
            let got = query_fused(&d, p);
            for k in 0..4 {
                let expect = (wa * fa[k] + wb * fb[k]) / (wa + wb + 1e-8);
                assert_abs_diff_eq!(got[k], expect, epsilon = 1e-12);
            }
            assert_eq!(query_branch(&d, Branch::A, p), fa);
            assert_eq!(query_branch(&d, Branch::Fused, p), got);
            let bound = fa.iter().map(|v| v * v).sum::<f64>().sqrt().max(fb.iter().map(|v| v * v).sum::<f64>().sqrt());
            assert!(got.iter().map(|v| v * v).sum::<f64>().sqrt() <= bound + 1e-12);
        }
    }

    #[test]
    fn fused_where_b_vanishes() {
        let d = dual(3);
        // On the x axis B sits at its pole while A is on its equator.
        let p = Vec3::new(0.3, 0.0, 0.0);
        let (wa, wb) = d.weights(p);
        assert!(wb < 1e-20);
        let fa = query_branch(&d, Branch::A, p);
        let got = query_fused(&d, p);
        for k in 0..4 {
            assert_abs_diff_eq!(got[k], fa[k] * wa / (wa + 1e-8), epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_sets_fuse_to_constant() {
        let mut d = dual(4);
        for p in d.set_a.planes.iter_mut().chain(d.set_b.planes.iter_mut()) {
            *p = p.constant(0.25);
        }
        let got = query_fused(&d, Vec3::new(0.1, 0.2, 0.05));
        for v in got {
            assert_abs_diff_eq!(v, 0.75, epsilon = 1e-6);
        }
        for p in d.set_b.planes.iter_mut() {
            *p = p.constant(0.0);
        }
        assert_eq!(query_branch(&d, Branch::B, Vec3::new(0.1, 0.2, 0.05)), vec![0.0; 4]);
    }

    #[test]
    fn decode_zero_decoder() {
        let dec = Decoder::<f64>::zeros(4, 8, 4);
        let s = dec.decode(&[0.0; 4]);
        assert_abs_diff_eq!(s.density, std::f64::consts::LN_2);
        assert_eq!(s.color, [0.5; 3]);
        assert_eq!(s.parsing_logits, vec![0.0; 4]);
    }

    #[test]
    fn decode_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::<f64>::random(3, 5, 2, &mut rng);
        let f = [0.3, -1.2, 0.8];
        let mv = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
            (0..b.len()).map(|r| b[r] + (0..x.len()).map(|c| w[r * x.len() + c] * x[c]).sum::<f64>()).collect()
        };
        let sp = |v: Vec<f64>| v.into_iter().map(|z| (1.0 + z.exp()).ln()).collect::<Vec<_>>();
        let t = &dec.tensors;
        let h0 = sp(mv(&t[0], &t[1], &f));
        let h1 = sp(mv(&t[2], &t[3], &h0));
        let raw = mv(&t[4], &t[5], &h1);
        let s = dec.decode(&f);
        assert_abs_diff_eq!(s.density, (1.0 + raw[0].exp()).ln(), epsilon = 1e-12);
        for k in 0..3 {
            assert_abs_diff_eq!(s.color[k], 1.0 / (1.0 + (-raw[1 + k]).exp()), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.parsing_logits[1], raw[5], epsilon = 1e-12);
    }

    #[test]
    fn density_monotone_and_nonnegative() {
        let mut prev = -1.0;
        for i in -50..50 {
            let s = activate(&[i as f64, 0.0, 0.0, 0.0]);
            assert!(s.density >= 0.0 && s.density > prev);
            prev = s.density;
        }
        assert!(activate(&[-1e6f64, 0.0, 0.0, 0.0]).density >= 0.0);
    }

    #[test]
    fn baselines_share_interface() {
        for kind in [RepresentationKind::TriPlane, RepresentationKind::TriGrid] {
            let f: RadianceField<f64> = build_baseline_field(kind, &small(kind), 9).unwrap();
            let s = f.sample(Branch::Fused, Vec3::new(0.1, 0.1, 0.1));
            assert!(s.density >= 0.0);
            assert_eq!(f.param_names().len(), f.params().len());
        }
        assert!(build_baseline_field::<f64>(RepresentationKind::DualSphere, &small(RepresentationKind::DualSphere), 0).is_err());
    }

    #[test]
    fn param_names_are_unique() {
        for kind in [
            RepresentationKind::DualSphere,
            RepresentationKind::SingleSphere,
            RepresentationKind::TriPlane,
            RepresentationKind::TriGrid,
        ] {
            let f = RadianceField::<f32>::new(&small(kind), 0).unwrap();
            let names = f.param_names();
            let set: std::collections::HashSet<_> = names.iter().collect();
            assert_eq!(set.len(), names.len());
            assert_eq!(f.branch_mask(Branch::A).len(), names.len());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = FieldConfig::default();
        c.epsilon = 1e-3;
        assert!(c.validate().is_err());
        c.epsilon = 1e-8;
        c.resolution = 1;
        assert!(c.validate().is_err());
    }
}
