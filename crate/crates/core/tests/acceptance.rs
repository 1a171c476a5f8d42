//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphfield::cli::{cmd_fit, cmd_render, BranchArg, FitArgs, RenderArgs, CHECKPOINT_FILE, LOSS_FILE};
use sphfield::config::RunConfig;
use sphfield::dataset::{balance_views, duplication_count, render_views, DatasetManifest, DatasetSpec, ManifestRecord, SyntheticHeadScene};
use sphfield::eval::{mean_view_psnr, mirror_leakage, seam_report, weight_cover_min};
use sphfield::field::{Branch, FieldConfig, FieldSample, RadianceField};
use sphfield::geometry::{cart_to_sph, frame_coords, fusion_weight, sph_to_cart, Camera, SphereFrame, SphericalCoord, Vec3};
use sphfield::optim::{finite_difference_check, fit, AdamConfig, FitConfig, FitSchedule, FitView, GradOp, Precision};
use sphfield::planes::{shared_lookup_fraction, RepresentationKind};
use sphfield::render::{make_ray, render_ray_with, RenderSettings};
use sphfield::vico::{run_vico_seed, VicoExperiment, AUC_GAIN};

type Outcome = (bool, String);

/// Minimum of `w_A + w_B` over the 512² coverage lattice, from the closed
/// forms `w_A = (a² + z·a)/2`, `w_B = (b² − z·b)/2` with `a = √(x²+z²)` and
/// `b = √(y²+z²)`. Calibrated value: 0.437505664574 (the infimum is 7/16).
const COVERAGE_512: f64 = 0.437_505_664_574_252_6;
/// Held-out PSNR floor for the uniform 64-view fit; the calibration run
/// reached 25.87 dB.
const PSNR_FIXTURE: f64 = 25.0;
/// Seam thresholds from a 20-trial calibration (largest fused ratio 1.77).
const SEAM_BRANCH_MIN: f64 = 5.0;
const SEAM_FUSED_MAX: f64 = 2.0;

fn coverage_oracle(n: usize) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..n {
        let t = i as f64 * PI / (n - 1) as f64;
        for j in 0..n {
            let p = -PI + 2.0 * PI * j as f64 / (n - 1) as f64;
            let (x, y, z) = (t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
            let a = (x * x + z * z).sqrt();
            let b = (y * y + z * z).sqrt();
            min = min.min(0.5 * (a * a + z * a) + 0.5 * (b * b - z * b));
        }
    }
    min
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (fa, fb) = (SphereFrame::a(), SphereFrame::b());
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = p.norm();
        if r < 1e-3 {
            continue;
        }
        let back = sph_to_cart(cart_to_sph(p));
        worst = worst.max((back - p).norm() / r);
        let s = SphericalCoord::new(r, rng.gen_range(0.0..PI), rng.gen_range(-PI..PI));
        let s2 = cart_to_sph(sph_to_cart(s));
        worst = worst.max(rel(s2.r, s.r)).max(rel(s2.theta, s.theta));
        if s.theta > 1e-6 && s.theta < PI - 1e-6 {
            worst = worst.max(rel(s2.phi, s.phi));
        }
        // Frame A: theta from +y, azimuth atan2(x, z). Frame B: theta from -x, azimuth atan2(-y, -z).
        let a = frame_coords(&fa, p);
        let b = frame_coords(&fb, p);
        worst = worst
            .max(rel(a.theta, (p.y / r).acos()))
            .max(rel(a.phi, p.x.atan2(p.z)))
            .max(rel(b.theta, (-p.x / r).acos()))
            .max(rel(b.phi, (-p.y).atan2(-p.z)));
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-5 && secs < 5.0, format!("max rel err {worst:.2e}, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let center = fusion_weight(PI / 2.0, 0.0f64);
    let mut edge: f32 = 0.0;
    for k in 0..=200 {
        let s = k as f32 / 200.0;
        let th = s * std::f32::consts::PI;
        let ph = -std::f32::consts::PI + 2.0 * s * std::f32::consts::PI;
        for (t, p) in [(0.0, ph), (std::f32::consts::PI, ph), (th, -std::f32::consts::PI), (th, std::f32::consts::PI)] {
            edge = edge.max(fusion_weight(t, p).abs());
        }
    }
    let cover = weight_cover_min(512).unwrap();
    let oracle = coverage_oracle(512);
    let ok = center == 1.0
        && edge <= f32::EPSILON
        && cover > 0.0
        && (cover - COVERAGE_512).abs() < 1e-6
        && (oracle - COVERAGE_512).abs() < 1e-12;
    (ok, format!("w(pi/2,0)={center}, max edge |w|={edge:.1e}, cover min {cover:.12} vs fixture {COVERAGE_512:.12}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 2];
    let mut failed = Vec::new();
    for op in GradOp::ALL {
        for (k, p) in [Precision::F32, Precision::F64].into_iter().enumerate() {
            let r = finite_difference_check(op, p, 3, None, 7).unwrap();
            worst[k] = worst[k].max(r.max_rel_error);
            if !r.passed {
                failed.push(format!("{}/{}", r.op, r.precision));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        failed.is_empty() && secs < 120.0,
        format!("{} ops, worst f32 {:.1e}, worst f64 {:.1e}, {secs:.1}s {:?}", GradOp::ALL.len(), worst[0], worst[1], failed),
    )
}

/// Left Riemann sum of the emission-absorption integral.
fn reference_integral(sigma: &dyn Fn(f64) -> f64, color: &dyn Fn(f64) -> [f64; 3], t0: f64, t1: f64, n: usize, bg: [f64; 3]) -> ([f64; 3], f64) {
    let dt = (t1 - t0) / n as f64;
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    for i in 0..n {
        let t = t0 + (i as f64 + 0.5) * dt;
        let a = 1.0 - (-sigma(t) * dt).exp();
        let c = color(t);
        for k in 0..3 {
            rgb[k] += trans * a * c[k];
        }
        trans *= 1.0 - a;
    }
    for k in 0..3 {
        rgb[k] += trans * bg[k];
    }
    (rgb, 1.0 - trans)
}

fn criterion_4() -> Outcome {
    let settings = RenderSettings {
        n_samples: 256,
        stratified: false,
        scene_radius: 0.5,
        ..RenderSettings::default()
    };
    let ray = make_ray(&Camera::from_view(0.0, 0.0), 0.5, 0.5, 0.5);
    // Homogeneous ball of radius 0.3: chord through the center is 0.6.
    let sigma = 3.0;
    let ball = move |p: Vec3<f64>| FieldSample {
        density: if p.norm() < 0.3 { sigma } else { 0.0 },
        color: [0.2, 0.5, 0.8],
        parsing_logits: vec![0.0],
    };
    let out = render_ray_with(&ball, 1, &ray, &settings, 0, 0);
    let analytic = 1.0 - (-sigma * 0.6f64).exp();
    let e1 = (out.alpha - analytic).abs() / analytic;
    // Two slabs along the ray, by world z.
    let slab_sigma = |z: f64| {
        if (0.1..0.3).contains(&z) {
            4.0
        } else if (-0.25..-0.05).contains(&z) {
            9.0
        } else {
            0.0
        }
    };
    let slab_color = |z: f64| if z > 0.0 { [0.9, 0.1, 0.2] } else { [0.1, 0.3, 0.9] };
    let slabs = move |p: Vec3<f64>| FieldSample {
        density: slab_sigma(p.z),
        color: slab_color(p.z),
        parsing_logits: vec![0.0],
    };
    let out2 = render_ray_with(&slabs, 1, &ray, &settings, 0, 0);
    let z_at = |t: f64| ray.origin.z + t * ray.direction.z;
    let (rgb, alpha) = reference_integral(&|t| slab_sigma(z_at(t)), &|t| slab_color(z_at(t)), ray.t_near, ray.t_far, 10_000, settings.background);
    let mut e2 = (out2.alpha - alpha).abs() / alpha;
    for k in 0..3 {
        e2 = e2.max((out2.rgb[k] - rgb[k]).abs() / rgb[k]);
    }
    (e1 < 0.01 && e2 < 0.01, format!("homogeneous rel err {e1:.2e}, two-slab rel err {e2:.2e}"))
}

fn small_render(r: f64) -> RenderSettings {
    RenderSettings {
        n_samples: 24,
        scene_radius: r,
        min_transmittance: 1e-3,
        ..RenderSettings::default()
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let r = 0.3;
    let spec = DatasetSpec {
        count: 64,
        resolution: 64,
        ..DatasetSpec::default()
    };
    let train = render_views(&spec).unwrap();
    let held: Vec<_> = render_views(&DatasetSpec { count: 8, seed: 99, ..spec.clone() })
        .unwrap()
        .into_iter()
        .map(|v| (v.camera, v.image))
        .collect();
    let views: Vec<FitView> = train.into_iter().map(|v| FitView::new(v.camera, v.image, r)).collect();
    let fc = FieldConfig {
        resolution: 32,
        channels: 8,
        hidden: 32,
        scene_radius: r,
        ..FieldConfig::default()
    };
    let cfg = FitConfig {
        rays_per_step: 512,
        render: small_render(r),
        adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        seed: 5,
        ..FitConfig::default()
    };
    let steps = 2000;
    let (field, _) = fit(RadianceField::new(&fc, 1).unwrap(), &views, &FitSchedule::fused_only(steps), &cfg).unwrap();
    let eval = RenderSettings { stratified: false, ..small_render(r) };
    let p = mean_view_psnr(&field, Branch::Fused, &held, &eval, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (p >= PSNR_FIXTURE && secs < 1800.0, format!("held-out PSNR {p:.2} dB >= {PSNR_FIXTURE} after {steps} steps, {secs:.0}s"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let r = 0.3;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let spec = DatasetSpec {
            count: 32,
            resolution: 48,
            sampler: "front".parse().unwrap(),
            seed,
            scene_seed: seed,
        };
        let views: Vec<FitView> = render_views(&spec).unwrap().into_iter().map(|v| FitView::new(v.camera, v.image, r)).collect();
        let scene = SyntheticHeadScene::new(seed);
        let mut leak = Vec::new();
        for kind in [RepresentationKind::TriPlane, RepresentationKind::DualSphere] {
            let fc = FieldConfig {
                kind,
                resolution: 32,
                channels: 8,
                hidden: 32,
                scene_radius: r,
                init_std: 0.1,
                ..FieldConfig::default()
            };
            let cfg = FitConfig {
                rays_per_step: 192,
                render: small_render(r),
                adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
                seed,
                ..FitConfig::default()
            };
            let (f, _) = fit(RadianceField::new(&fc, seed).unwrap(), &views, &FitSchedule::fused_only(250), &cfg).unwrap();
            let eval = RenderSettings { stratified: false, ..small_render(r) };
            let front = Camera::from_yaw_pitch(0.0, 0.0);
            let back = Camera::from_yaw_pitch(PI, 0.0);
            leak.push(mirror_leakage(&f, &scene, &front, &back, 48, &eval, 0).unwrap());
        }
        wins += (leak[0] > leak[1]) as usize;
        pairs.push(format!("{:.2}/{:.2}", leak[0], leak[1]));
    }
    let mirrored: Vec<_> = (1..20)
        .map(|i| {
            let t = i as f64 * 0.3;
            let p = Vec3::new(0.2 * t.sin(), 0.15 * t.cos(), 0.05 + 0.01 * i as f64);
            (p, Vec3::new(p.x, p.y, -p.z))
        })
        .collect();
    let tri = shared_lookup_fraction(RepresentationKind::TriPlane, 32, 0.5, &mirrored).unwrap();
    let single = shared_lookup_fraction(RepresentationKind::SingleSphere, 32, 0.5, &mirrored).unwrap();
    let dual = shared_lookup_fraction(RepresentationKind::DualSphere, 32, 0.5, &mirrored).unwrap();
    // Off the equator the z mirror moves the world polar angle. The rotated
    // frames keep theta and r, so only their phi planes separate the pair.
    let analytic = tri.overall == 1.0 / 3.0
        && tri.plane("xy") == Some(1.0)
        && single.plane("theta_phi") == Some(0.0)
        && single.plane("theta_r") == Some(0.0)
        && ["a.theta_phi", "b.theta_phi"].iter().all(|n| dual.plane(n) == Some(0.0));
    let secs = start.elapsed().as_secs_f64();
    (
        wins >= 9 && analytic,
        format!("tri-plane > dual-sphere leakage in {wins}/10 seeds [{}], shared lookup xy 1/3, theta planes 0: {analytic}, {secs:.0}s", pairs.join(" ")),
    )
}

fn criterion_7() -> Outcome {
    let (mut min_branch, mut max_fused) = (f64::INFINITY, 0.0f64);
    let mut ordered = true;
    for t in 0..20u64 {
        let fc = FieldConfig {
            resolution: 32,
            channels: 32,
            hidden: 8,
            init_std: 1.0,
            ..FieldConfig::default()
        };
        let f = RadianceField::<f64>::new(&fc, 1000 + t).unwrap();
        let s = seam_report(&f, 64, 1e-3, t).unwrap();
        min_branch = min_branch.min(s.branch_a).min(s.branch_b);
        max_fused = max_fused.max(s.fused);
        ordered &= s.fused <= s.branch_a.min(s.branch_b);
    }
    (
        min_branch > SEAM_BRANCH_MIN && max_fused <= SEAM_FUSED_MAX && ordered,
        format!("20 random fields: min branch ratio {min_branch:.2e} > {SEAM_BRANCH_MIN}, max fused ratio {max_fused:.3} <= {SEAM_FUSED_MAX}"),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let exp = VicoExperiment::default();
    let (mut gains, mut min_acc) = (0, f64::INFINITY);
    let mut deltas = Vec::new();
    for seed in 0..5 {
        let [base, with] = run_vico_seed(&exp, seed).unwrap();
        let d = with.mismatch_auc - base.mismatch_auc;
        gains += (d >= AUC_GAIN) as usize;
        deltas.push(format!("{d:+.3}"));
        min_acc = min_acc.min(base.real_fake_accuracy).min(with.real_fake_accuracy);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        gains >= 4 && min_acc > 0.9 && secs < 600.0,
        format!("AUC gain >= {AUC_GAIN} in {gains}/5 seeds [{}], min accuracy {min_acc:.3}, {secs:.0}s", deltas.join(" ")),
    )
}

fn record(bin: usize) -> ManifestRecord {
    ManifestRecord {
        path: String::new(),
        label: vec![0.0; 25],
        theta: 0.0,
        phi: 0.0,
        bin,
        blur: 0.0,
        dup: 1,
    }
}

fn criterion_9() -> Outcome {
    let mut records = Vec::new();
    for (bin, n) in [(0, 500), (3, 2500), (7, 1), (11, 2000), (20, 1999), (35, 3)] {
        records.extend((0..n).map(|_| record(bin)));
    }
    let balanced = balance_views(&DatasetManifest { records }, 2000).unwrap();
    let expect = |bin: usize| match bin {
        0 => 4,
        3 | 11 => 1,
        7 => 2000,
        20 => 2,
        35 => 667,
        _ => unreachable!(),
    };
    let exact = balanced.records.iter().all(|r| r.dup == expect(r.bin)) && duplication_count(500, 2000) == 4;
    (exact, format!("N_theta=500 -> N_dup={}, all {} records exact: {exact}", duplication_count(500, 2000), balanced.records.len()))
}

fn fit_config(out: &Path) -> RunConfig {
    let mut c = RunConfig {
        output: out.to_path_buf(),
        schedule: "33/33/34:6,10/10/80:6".parse().unwrap(),
        ..RunConfig::default()
    };
    c.dataset.count = 6;
    c.dataset.resolution = 24;
    c.field.resolution = 12;
    c.fit.rays_per_step = 64;
    c.sync_radius();
    c.validate().unwrap();
    c
}

fn fit_args(resume: Option<&Path>, stop_at: Option<u64>) -> FitArgs {
    FitArgs {
        data: None,
        repr: None,
        phases: None,
        resolution: None,
        channels: None,
        hidden: None,
        rays: None,
        samples: None,
        lr: None,
        seed: None,
        field_seed: None,
        resume: resume.map(Path::to_path_buf),
        checkpoint_every: 0,
        stop_at,
    }
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (straight, split) = (dir.path().join("straight"), dir.path().join("split"));
    cmd_fit(&fit_config(&straight), &fit_args(None, None)).unwrap();
    cmd_fit(&fit_config(&split), &fit_args(None, Some(5))).unwrap();
    let partial = split.join("partial.sphf");
    std::fs::rename(split.join(CHECKPOINT_FILE), &partial).unwrap();
    cmd_fit(&fit_config(&split), &fit_args(Some(&partial), None)).unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    let ckpt_same = read(&straight.join(CHECKPOINT_FILE)) == read(&split.join(CHECKPOINT_FILE));
    let loss_same = read(&straight.join(LOSS_FILE)) == read(&split.join(LOSS_FILE));
    let mut renders = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("render{k}"));
        let args = RenderArgs {
            checkpoint: straight.join(CHECKPOINT_FILE),
            branch: BranchArg::Fused,
            views: 3,
            size: 16,
            pitch: 0.1,
            samples: None,
        };
        let paths = cmd_render(&fit_config(&out), &args).unwrap();
        renders.push(paths.iter().map(|p| read(p)).collect::<Vec<_>>());
    }
    let render_same = renders[0] == renders[1];
    (
        ckpt_same && loss_same && render_same,
        format!("resume checkpoint identical: {ckpt_same}, loss csv identical: {loss_same}, repeated render identical: {render_same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("coordinate round trips", criterion_1),
        ("weight-map identities and coverage", criterion_2),
        ("gradient suite", criterion_3),
        ("renderer oracles", criterion_4),
        ("fitting PSNR", criterion_5),
        ("mirror leakage ordering", criterion_6),
        ("seam discontinuity", criterion_7),
        ("view-consistency discriminator", criterion_8),
        ("view balancing", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let (ok, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failures += !ok as usize;
        println!("{id} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
