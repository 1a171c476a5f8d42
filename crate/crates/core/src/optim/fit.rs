//! Minibatch fitting with a phased branch schedule.
//!
//! Every step draws one training view, a branch according to the active
//! phase, and a random subset of that view's rays. The step's random stream
//! depends only on `(seed, step)`, so a run resumed from a checkpoint
//! continues exactly as an uninterrupted one.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::{Branch, RadianceField};
use crate::geometry::Camera;
use crate::optim::adam::{adam_step, AdamConfig, AdamState};
use crate::optim::loss::{ray_loss, LossTerms, LossWeights, PixelTarget, TargetImage};
use crate::planes::RepresentationKind;
use crate::render::{backward, generate_rays, render_rays_tape, Ray, RenderSettings};

/// One schedule phase: branch probabilities `[A, B, fused]` for `steps` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    pub probs: [f64; 3],
    pub steps: u64,
    /// Replaces the run's loss weights while this phase is active.
    pub loss: Option<LossWeights>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSchedule {
    pub phases: Vec<Phase>,
}

impl FitSchedule {
    /// Plain fused fitting.
    pub fn fused_only(steps: u64) -> Self {
        Self {
            phases: vec![Phase {
                probs: [0.0, 0.0, 1.0],
                steps,
                loss: None,
            }],
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Index and phase active at `step`, or `None` past the end.
    pub fn phase_at(&self, step: u64) -> Option<(usize, &Phase)> {
        let mut end = 0;
        for (i, p) in self.phases.iter().enumerate() {
            end += p.steps;
            if step < end {
                return Some((i, p));
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::invalid("schedule has no phases"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.probs.iter().any(|&x| !(x >= 0.0)) || (p.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("phase {i}: branch probabilities must be non-negative and sum to 1")));
            }
        }
        Ok(())
    }
}

/// `"33/33/34:2000,10/10/80:8000"`: percentages (or fractions) for A/B/fused
/// followed by the phase length in steps.
impl FromStr for FitSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("schedule '{s}': {m}"));
        let mut phases = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (probs, steps) = part.split_once(':').ok_or_else(|| bad("expected A/B/F:steps"))?;
            let steps: u64 = steps.trim().parse().map_err(|_| bad("step count is not an integer"))?;
            let vals: Vec<f64> = probs
                .split('/')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("probabilities are not numbers"))?;
            if vals.len() != 3 {
                return Err(bad("expected three probabilities"));
            }
            let sum: f64 = vals.iter().sum();
            let scale = if (sum - 100.0).abs() < 1e-6 {
                100.0
            } else if (sum - 1.0).abs() < 1e-9 {
                1.0
            } else {
                return Err(bad("probabilities must sum to 100 (or 1)"));
            };
            phases.push(Phase {
                probs: [vals[0] / scale, vals[1] / scale, vals[2] / scale],
                steps,
                loss: None,
            });
        }
        let schedule = FitSchedule { phases };
        schedule.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(schedule)
    }
}

impl fmt::Display for FitSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.phases.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            let pct = p.probs.map(|x| x * 100.0);
            write!(f, "{}/{}/{}:{}", pct[0], pct[1], pct[2], p.steps)?;
        }
        Ok(())
    }
}

impl Serialize for FitSchedule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FitSchedule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub rays_per_step: usize,
    pub adam: AdamConfig,
    /// Learning-rate multiplier of the decoder relative to the planes.
    pub decoder_lr_scale: f64,
    pub loss: LossWeights,
    pub render: RenderSettings,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rays_per_step: 4096,
            adam: AdamConfig::default(),
            decoder_lr_scale: 1.0,
            loss: LossWeights::default(),
            render: RenderSettings::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_step == 0 {
            return Err(Error::invalid("rays_per_step must be positive"));
        }
        if !(self.adam.lr > 0.0) || !(self.decoder_lr_scale >= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        self.render.validate()
    }
}

/// A training image with its camera and precomputed rays.
#[derive(Clone, Debug)]
pub struct FitView {
    pub camera: Camera,
    pub target: TargetImage,
    rays: Vec<Ray>,
}

impl FitView {
    pub fn new(camera: Camera, target: TargetImage, scene_radius: f64) -> Self {
        let rays = generate_rays(&camera, target.width, target.height, scene_radius);
        Self { camera, target, rays }
    }
}

/// Parameters, optimizer moments and the number of completed steps.
#[derive(Clone, Debug)]
pub struct FitState {
    pub field: RadianceField<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
}

impl FitState {
    pub fn new(field: RadianceField<f32>, config: &FitConfig) -> Self {
        let sizes = field.param_sizes();
        let mut adam = AdamState::new(config.adam, &sizes);
        let planes = field.plane_count();
        for (i, s) in adam.lr_scale.iter_mut().enumerate() {
            if i >= planes {
                *s = config.decoder_lr_scale;
            }
        }
        Self { field, adam, step: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub phase: usize,
    pub branch: Branch,
    pub view: usize,
    pub terms: LossTerms,
}

fn sample_branch(probs: &[f64; 3], u: f64) -> Branch {
    if u < probs[0] {
        Branch::A
    } else if u < probs[0] + probs[1] {
        Branch::B
    } else {
        Branch::Fused
    }
}

/// Runs the step numbered `state.step`; `None` once the schedule is exhausted.
pub fn fit_step(state: &mut FitState, views: &[FitView], schedule: &FitSchedule, config: &FitConfig) -> Result<Option<TraceRow>> {
    if views.is_empty() {
        return Err(Error::invalid("fitting needs at least one view"));
    }
    let Some((phase_idx, phase)) = schedule.phase_at(state.step) else {
        return Ok(None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(state.step + 1);
    let vi = rng.gen_range(0..views.len());
    let mut branch = sample_branch(&phase.probs, rng.gen());
    if state.field.kind() != RepresentationKind::DualSphere {
        branch = Branch::Fused;
    }
    let render_seed: u64 = rng.gen();
    let view = &views[vi];
    let n_pix = view.rays.len();
    let picks: Vec<usize> = if config.rays_per_step >= n_pix {
        (0..n_pix).collect()
    } else {
        (0..config.rays_per_step).map(|_| rng.gen_range(0..n_pix)).collect()
    };
    let rays: Vec<Ray> = picks.iter().map(|&i| view.rays[i]).collect();
    let targets: Vec<PixelTarget> = picks.iter().map(|&i| view.target.pixel(i)).collect();

    let weights = phase.loss.unwrap_or(config.loss);
    let tape = render_rays_tape(&state.field, branch, &rays, &config.render, render_seed)?;
    let (terms, ray_grads) = ray_loss(&tape.outputs, &targets, &weights)
        .map_err(|e| Error::Numerical(format!("step {}: {e}", state.step)))?;
    let grads = backward(&state.field, &tape, &ray_grads)?;
    for (g, name) in grads.iter().zip(state.field.param_names()) {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("step {}: non-finite gradient in {name}", state.step)));
            }
        }
    }
    adam_step(&mut state.field.params_mut(), &grads, &mut state.adam)?;
    let row = TraceRow {
        step: state.step,
        phase: phase_idx,
        branch,
        view: vi,
        terms,
    };
    state.step += 1;
    Ok(Some(row))
}

/// Steps until the schedule ends or `stop` steps have completed, calling
/// `on_step` after each one.
pub fn fit_until<F>(
    state: &mut FitState,
    views: &[FitView],
    schedule: &FitSchedule,
    config: &FitConfig,
    stop: u64,
    mut on_step: F,
) -> Result<Vec<TraceRow>>
where
    F: FnMut(&FitState, &TraceRow) -> Result<()>,
{
    config.validate()?;
    schedule.validate()?;
    let mut trace = Vec::new();
    while state.step < stop {
        match fit_step(state, views, schedule, config)? {
            Some(row) => {
                on_step(state, &row)?;
                trace.push(row);
            }
            None => break,
        }
    }
    Ok(trace)
}

/// Fits `field` over the whole schedule.
pub fn fit(field: RadianceField<f32>, views: &[FitView], schedule: &FitSchedule, config: &FitConfig) -> Result<(RadianceField<f32>, Vec<TraceRow>)> {
    let mut state = FitState::new(field, config);
    let trace = fit_until(&mut state, views, schedule, config, schedule.total_steps(), |_, _| Ok(()))?;
    Ok((state.field, trace))
}

pub const TRACE_HEADER: &str = "step,phase,branch,view,total,rgb,mask,parsing";

pub fn trace_line(r: &TraceRow) -> String {
    format!(
        "{},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
        r.step,
        r.phase,
        r.branch.name(),
        r.view,
        r.terms.total,
        r.terms.rgb,
        r.terms.mask,
        r.terms.parsing
    )
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&trace_line(r));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
