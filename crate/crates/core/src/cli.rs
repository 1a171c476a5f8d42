//! Command-line front end. Every command resolves and validates its full
//! [`RunConfig`] before the first filesystem write, and leaves a
//! `provenance_<command>.json` next to its outputs.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{
    balance_views, load_views, make_dataset, manifest_root, oracle_render, render_views, DatasetManifest, SyntheticHeadScene,
    ViewSampler, DEFAULT_N_THRESH, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{config_digest, mirror_leakage, psnr, seam_report, weight_cover_min, LeakageReport, SeamReport};
use crate::field::{Branch, RadianceField};
use crate::geometry::Camera;
use crate::optim::fit::{trace_line, TRACE_HEADER};
use crate::optim::{finite_difference_check, fit_until, FitSchedule, FitState, FitView, GradOp, GradcheckReport, Precision};
use crate::planes::RepresentationKind;
use crate::render::{png, render_image};
use crate::vico::{self, VicoRow};

pub const CHECKPOINT_FILE: &str = "checkpoint.sphf";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Parser)]
#[command(name = "sphfield", version, about = "Dual-sphere tri-plane neural fields on synthetic heads")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-view dataset to disk.
    MakeDataset(MakeDatasetArgs),
    /// Fit a field to a dataset.
    Fit(FitArgs),
    /// Turntable renders of a checkpoint.
    Render(RenderArgs),
    /// Evaluation metrics as a JSON report.
    Probe(ProbeArgs),
    /// Paired discriminator runs with and without shuffled-label negatives.
    Vico(VicoArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeDataset(_) => "make-dataset",
            Command::Fit(_) => "fit",
            Command::Render(_) => "render",
            Command::Probe(_) => "probe",
            Command::Vico(_) => "vico",
        }
    }
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// `uniform`, `front` or `imbalanced[:fraction]`.
    #[arg(long)]
    pub sampler: Option<ViewSampler>,
    #[arg(long)]
    pub scene_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Duplicate views of sparse azimuth bins.
    #[arg(long)]
    pub balance: bool,
    #[arg(long, default_value_t = DEFAULT_N_THRESH)]
    pub n_thresh: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory or manifest; without it the configured dataset is
    /// rendered in memory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "repr")]
    pub repr: Option<RepresentationKind>,
    /// Branch schedule, e.g. `33/33/34:2000,10/10/80:8000`.
    #[arg(long)]
    pub phases: Option<FitSchedule>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed of ray and branch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub field_seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also keep a numbered checkpoint every N steps (0 = never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    /// Stop after this many total steps even if the schedule continues.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    A,
    B,
    Fused,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::A => Branch::A,
            BranchArg::B => Branch::B,
            BranchArg::Fused => Branch::Fused,
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = BranchArg::Fused)]
    pub branch: BranchArg,
    /// Number of turntable azimuths.
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Camera pitch in radians.
    #[arg(long, default_value_t = 0.0)]
    pub pitch: f64,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Leakage,
    Seam,
    Coverage,
    Gradcheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
    Both,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Field to probe; `seam` falls back to a random field.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    /// Leakage render resolution.
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    /// Gradient check operator, or `all`.
    #[arg(long, default_value = "all")]
    pub op: String,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Both)]
    pub precision: PrecisionArg,
    /// Overrides the per-precision default tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VicoArgs {
    /// Number of seeds; each gives a baseline and a ViCo row.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Training images per seed.
    #[arg(long)]
    pub count: Option<usize>,
}

/// What every command records beside its outputs.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub args: Vec<String>,
    pub config_digest: String,
    pub config: &'a RunConfig,
}

fn parse_ops(s: &str) -> Result<Vec<GradOp>> {
    if s == "all" {
        return Ok(GradOp::ALL.to_vec());
    }
    s.split(',').map(|op| op.trim().parse()).collect()
}

/// Merges the config file and every flag, then validates.
pub fn resolve_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        c.output = o.clone();
    }
    if let Some(t) = common.threads {
        c.threads = t;
    }
    c.deterministic |= common.deterministic;
    match command {
        Command::MakeDataset(a) => {
            let d = &mut c.dataset;
            d.count = a.count.unwrap_or(d.count);
            d.resolution = a.resolution.unwrap_or(d.resolution);
            d.scene_seed = a.scene_seed.unwrap_or(d.scene_seed);
            d.seed = a.seed.unwrap_or(d.seed);
            if let Some(s) = &a.sampler {
                d.sampler = s.clone();
            }
            if a.n_thresh == 0 {
                return Err(Error::invalid("--n-thresh must be positive"));
            }
        }
        Command::Fit(a) => {
            let f = &mut c.field;
            f.kind = a.repr.unwrap_or(f.kind);
            f.resolution = a.resolution.unwrap_or(f.resolution);
            f.channels = a.channels.unwrap_or(f.channels);
            f.hidden = a.hidden.unwrap_or(f.hidden);
            if let Some(p) = &a.phases {
                c.schedule = p.clone();
            }
            c.fit.rays_per_step = a.rays.unwrap_or(c.fit.rays_per_step);
            c.fit.render.n_samples = a.samples.unwrap_or(c.fit.render.n_samples);
            c.fit.adam.lr = a.lr.unwrap_or(c.fit.adam.lr);
            c.fit.seed = a.seed.unwrap_or(c.fit.seed);
            c.field_seed = a.field_seed.unwrap_or(c.field_seed);
            if let Some(r) = &a.resume {
                if !r.is_file() {
                    return Err(Error::invalid(format!("resume checkpoint {} does not exist", r.display())));
                }
            }
            if a.data.as_ref().is_some_and(|d| !d.exists()) {
                return Err(Error::invalid("--data path does not exist"));
            }
        }
        Command::Render(a) => {
            c.render.n_samples = a.samples.unwrap_or(c.render.n_samples);
            if a.views == 0 || a.size < 2 || !a.pitch.is_finite() || a.pitch.abs() >= PI / 2.0 {
                return Err(Error::invalid("render needs --views >= 1, --size >= 2 and |pitch| < π/2"));
            }
            if !a.checkpoint.is_file() {
                return Err(Error::invalid(format!("checkpoint {} does not exist", a.checkpoint.display())));
            }
        }
        Command::Probe(a) => {
            if a.probes == 0 || !(a.delta > 0.0 && a.delta < 0.1) || a.grid < 2 || a.size < 2 || a.trials == 0 {
                return Err(Error::invalid("probe needs probes > 0, 0 < delta < 0.1, grid >= 2, size >= 2, trials > 0"));
            }
            if a.tolerance.is_some_and(|t| !(t > 0.0)) {
                return Err(Error::invalid("--tolerance must be positive"));
            }
            parse_ops(&a.op)?;
            match (&a.checkpoint, a.metric) {
                (None, Metric::Leakage) => return Err(Error::invalid("--metric leakage needs --checkpoint")),
                (Some(p), Metric::Leakage | Metric::Seam) if !p.is_file() => {
                    return Err(Error::invalid(format!("checkpoint {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        Command::Vico(a) => {
            if a.seeds == 0 {
                return Err(Error::invalid("--seeds must be at least 1"));
            }
            c.vico.config.steps = a.steps.unwrap_or(c.vico.config.steps);
            c.vico.train.count = a.count.unwrap_or(c.vico.train.count);
        }
    }
    c.sync_radius();
    c.validate()?;
    Ok(c)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        what: "json",
        detail: e.to_string(),
    })?;
    write_file(path, format!("{text}\n").as_bytes())
}

pub fn write_provenance(config: &RunConfig, command: &str, args: &[String]) -> Result<PathBuf> {
    let path = config.output.join(format!("provenance_{command}.json"));
    write_json(
        &path,
        &Provenance {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args: args.to_vec(),
            config_digest: config_digest(config),
            config,
        },
    )?;
    Ok(path)
}

pub fn cmd_make_dataset(config: &RunConfig, args: &MakeDatasetArgs) -> Result<DatasetManifest> {
    let mut manifest = make_dataset(&config.dataset, &config.output)?;
    if args.balance {
        manifest = balance_views(&manifest, args.n_thresh)?;
        manifest.save(&config.output.join(MANIFEST_FILE))?;
    }
    Ok(manifest)
}

fn training_views(config: &RunConfig, data: Option<&Path>) -> Result<Vec<FitView>> {
    let r = config.field.scene_radius;
    match data {
        Some(path) => {
            let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
            let manifest = DatasetManifest::load(&manifest_path)?;
            load_views(&manifest, &manifest_root(path), r)
        }
        None => Ok(render_views(&config.dataset)?
            .into_iter()
            .map(|v| FitView::new(v.camera, v.image, r))
            .collect()),
    }
}

/// Loss rows already on disk for steps before `step`.
fn kept_loss_rows(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
        .map(str::to_owned)
        .collect())
}

/// Checkpoint metadata; independent of where the run writes its outputs.
fn run_meta(config: &RunConfig) -> serde_json::Value {
    let portable = RunConfig {
        output: PathBuf::from("."),
        ..config.clone()
    };
    serde_json::json!({ "config_digest": config_digest(&portable), "schedule": config.schedule.to_string(), "seed": config.fit.seed })
}

/// Fits and writes `checkpoint.sphf` plus `loss.csv`; returns the final state.
pub fn cmd_fit(config: &RunConfig, args: &FitArgs) -> Result<FitState> {
    let views = training_views(config, args.data.as_deref())?;
    let mut state = match &args.resume {
        Some(p) => {
            let (state, meta) = checkpoint::load(p)?;
            if meta.field != config.field {
                return Err(Error::invalid("checkpoint field configuration differs from the run's"));
            }
            state
        }
        None => FitState::new(RadianceField::new(&config.field, config.field_seed)?, &config.fit),
    };
    let total = config.schedule.total_steps();
    let stop = args.stop_at.unwrap_or(total).min(total);
    create_dir(&config.output)?;
    let loss_path = config.output.join(LOSS_FILE);
    let mut lines = kept_loss_rows(&loss_path, state.step)?;
    let every = args.checkpoint_every;
    let ckpt_dir = config.output.join("checkpoints");
    if every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let rows = fit_until(&mut state, &views, &config.schedule, &config.fit, stop, |s, _| {
        if every > 0 && s.step % every == 0 {
            checkpoint::save(&ckpt_dir.join(format!("step_{:08}.sphf", s.step)), s, &config.field, run_meta(config))?;
        }
        Ok(())
    })?;
    lines.extend(rows.iter().map(trace_line));
    let mut csv = String::from(TRACE_HEADER);
    csv.push('\n');
    for l in &lines {
        csv.push_str(l);
        csv.push('\n');
    }
    write_file(&loss_path, csv.as_bytes())?;
    checkpoint::save(&config.output.join(CHECKPOINT_FILE), &state, &config.field, run_meta(config))?;
    Ok(state)
}

/// Yaw of turntable view `i` of `n`, starting at the front.
pub fn turntable_yaw(i: usize, n: usize) -> f64 {
    2.0 * PI * i as f64 / n as f64
}

/// `turntable_<branch>_<index>.png` with a three-digit index.
pub fn turntable_name(branch: Branch, i: usize) -> String {
    format!("turntable_{}_{i:03}.png", branch.name())
}

pub fn cmd_render(config: &RunConfig, args: &RenderArgs) -> Result<Vec<PathBuf>> {
    let (state, _) = checkpoint::load(&args.checkpoint)?;
    let branch = Branch::from(args.branch);
    if branch != Branch::Fused && state.field.kind() != RepresentationKind::DualSphere {
        return Err(Error::invalid("branch A or B needs a dual-sphere checkpoint"));
    }
    let mut settings = config.render.clone();
    settings.scene_radius = checkpoint_radius(&args.checkpoint)?;
    create_dir(&config.output)?;
    let mut paths = Vec::with_capacity(args.views);
    for i in 0..args.views {
        let camera = Camera::from_yaw_pitch(turntable_yaw(i, args.views), args.pitch);
        let img = render_image(&state.field, branch, &camera, args.size, args.size, &settings, i as u64);
        let path = config.output.join(turntable_name(branch, i));
        png::save_rgb(&img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

fn checkpoint_radius(path: &Path) -> Result<f64> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint::decode(&bytes)?.1.field.scene_radius)
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum ProbeResult {
    Leakage(LeakageReport),
    Seam(SeamReport),
    Coverage { grid: usize, min_weight_sum: f64 },
    Gradcheck { reports: Vec<GradcheckReport>, passed: bool },
}

#[derive(Debug, Serialize)]
pub struct ProbeReport {
    pub metric: Metric,
    pub config_digest: String,
    pub result: ProbeResult,
}

fn precisions(p: PrecisionArg) -> Vec<Precision> {
    match p {
        PrecisionArg::F32 => vec![Precision::F32],
        PrecisionArg::F64 => vec![Precision::F64],
        PrecisionArg::Both => vec![Precision::F32, Precision::F64],
    }
}

/// Computes the metric and writes `probe_<metric>.json`. A failed gradient
/// check still writes its report, then returns a numerical error.
pub fn cmd_probe(config: &RunConfig, args: &ProbeArgs) -> Result<ProbeReport> {
    let result = match args.metric {
        Metric::Leakage => {
            let path = args.checkpoint.as_ref().expect("checked in resolve_config");
            let (state, meta) = checkpoint::load(path)?;
            let settings = crate::render::RenderSettings {
                scene_radius: meta.field.scene_radius,
                ..config.render.clone()
            };
            let scene = SyntheticHeadScene::new(config.dataset.scene_seed);
            let front = Camera::from_yaw_pitch(0.0, 0.0);
            let back = Camera::from_yaw_pitch(PI, 0.0);
            let leakage = mirror_leakage(&state.field, &scene, &front, &back, args.size, &settings, args.seed)?;
            let target = oracle_render(&scene, &front, args.size, args.size)?;
            let img = render_image(&state.field, Branch::Fused, &front, args.size, args.size, &settings, args.seed);
            let rgb: Vec<f64> = img.rgb.iter().map(|&v| v as f64).collect();
            let want: Vec<f64> = target.rgb.iter().map(|&v| v as f64).collect();
            ProbeResult::Leakage(LeakageReport {
                representation: state.field.kind().name().to_owned(),
                leakage,
                front_psnr: psnr(&rgb, &want)?,
                config_digest: config_digest(config),
            })
        }
        Metric::Seam => {
            let field: RadianceField<f64> = match &args.checkpoint {
                Some(p) => checkpoint::load(p)?.0.field.cast(),
                None => RadianceField::new(&config.field, config.field_seed)?,
            };
            if field.kind() != RepresentationKind::DualSphere {
                return Err(Error::invalid("the seam metric needs a dual-sphere field"));
            }
            ProbeResult::Seam(seam_report(&field, args.probes, args.delta, args.seed)?)
        }
        Metric::Coverage => ProbeResult::Coverage {
            grid: args.grid,
            min_weight_sum: weight_cover_min(args.grid)?,
        },
        Metric::Gradcheck => {
            let mut reports = Vec::new();
            for op in parse_ops(&args.op)? {
                for p in precisions(args.precision) {
                    reports.push(finite_difference_check(op, p, args.trials, args.tolerance, args.seed)?);
                }
            }
            let passed = reports.iter().all(|r| r.passed);
            ProbeResult::Gradcheck { reports, passed }
        }
    };
    let report = ProbeReport {
        metric: args.metric,
        config_digest: config_digest(config),
        result,
    };
    create_dir(&config.output)?;
    let name = format!("probe_{}.json", serde_json::to_value(args.metric).unwrap_or_default().as_str().unwrap_or("metric"));
    write_json(&config.output.join(name), &report)?;
    if let ProbeResult::Gradcheck { reports, passed: false } = &report.result {
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.op, r.precision)).collect();
        return Err(Error::Numerical(format!("gradient check failed: {}", failed.join(", "))));
    }
    Ok(report)
}

/// Writes `vico.csv` (one row per seed and mode) and `vico_summary.json`.
pub fn cmd_vico(config: &RunConfig, args: &VicoArgs) -> Result<Vec<VicoRow>> {
    let mut rows = Vec::with_capacity(2 * args.seeds);
    for k in 0..args.seeds as u64 {
        rows.extend(vico::run_vico_seed(&config.vico, args.first_seed + k)?);
    }
    create_dir(&config.output)?;
    let mut csv = String::from(vico::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&vico::csv_line(r));
        csv.push('\n');
    }
    write_file(&config.output.join("vico.csv"), csv.as_bytes())?;
    write_json(&config.output.join("vico_summary.json"), &vico::summarize(&rows))?;
    Ok(rows)
}

fn init_threads(n: usize) {
    // A second initialization in the same process is harmless; keep the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let config = resolve_config(&cli.common, &cli.command)?;
    init_threads(config.threads);
    match &cli.command {
        Command::MakeDataset(a) => cmd_make_dataset(&config, a).map(drop),
        Command::Fit(a) => cmd_fit(&config, a).map(drop),
        Command::Render(a) => cmd_render(&config, a).map(drop),
        Command::Probe(a) => {
            let out = cmd_probe(&config, a).map(drop);
            if matches!(out, Err(Error::Numerical(_))) {
                write_provenance(&config, cli.command.name(), argv)?;
            }
            out
        }
        Command::Vico(a) => cmd_vico(&config, a).map(drop),
    }?;
    write_provenance(&config, cli.command.name(), argv)?;
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
