use std::f64::consts::PI;
use std::path::Path;

use sphfield::checkpoint;
use sphfield::cli::{main_with_args, CHECKPOINT_FILE};
use sphfield::dataset::DatasetManifest;
use sphfield::field::{FieldConfig, RadianceField};
use sphfield::optim::{FitConfig, FitState};
use sphfield::planes::RepresentationKind;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("sphfield").chain(args.iter().copied()).map(String::from).collect())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn make_dataset_front_only_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("front");
    let code = run(&["make-dataset", "--out", p(&out), "--count", "20", "--resolution", "16", "--sampler", "front", "--balance", "--n-thresh", "10"]);
    assert_eq!(code, 0);
    let m = DatasetManifest::load(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(m.records.len(), 20);
    let counts = m.bin_counts();
    for r in &m.records {
        assert!(r.yaw().unwrap().abs() <= PI / 4.0 + 1e-12);
        assert_eq!(r.dup, if counts[r.bin] >= 10 { 1 } else { 10usize.div_ceil(counts[r.bin]) });
        assert!(out.join(&r.path).is_file() && out.join(r.mask_path()).is_file());
    }
    let prov = json(&out.join("provenance_make-dataset.json"));
    assert_eq!(prov["command"], "make-dataset");
    assert_eq!(prov["config"]["dataset"]["count"], 20);
}

#[test]
fn invalid_out_dir_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    assert_eq!(run(&["make-dataset", "--out", p(&file), "--count", "2", "--resolution", "8"]), 4);
    let never = dir.path().join("never");
    assert_eq!(run(&["make-dataset", "--out", p(&never), "--count", "0"]), 2);
    assert_eq!(run(&["fit", "--out", p(&never), "--channels", "0"]), 2);
    assert_eq!(run(&["fit", "--out", p(&never), "--phases", "10/10/10:5"]), 2);
    assert_eq!(run(&["render", "--out", p(&never), "--checkpoint", p(&dir.path().join("missing.sphf"))]), 2);
    assert!(!never.exists(), "validation failures must not write");
}

/// Every texel zero and a density bias far below zero: nothing is visible.
fn empty_checkpoint(path: &Path) {
    let cfg = FieldConfig {
        resolution: 4,
        channels: 2,
        hidden: 4,
        ..FieldConfig::default()
    };
    let mut field = RadianceField::<f32>::new(&cfg, 0).unwrap();
    for t in field.params_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let last = field.decoder.tensors.len() - 1;
    field.decoder.tensors[last][0] = -60.0;
    let state = FitState::new(field, &FitConfig::default());
    checkpoint::save(path, &state, &cfg, serde_json::Value::Null).unwrap();
}

#[test]
fn render_turntable_of_empty_checkpoint_is_background() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("empty.sphf");
    empty_checkpoint(&ckpt);
    let out = dir.path().join("r");
    assert_eq!(run(&["render", "--checkpoint", p(&ckpt), "--out", p(&out), "--views", "8", "--size", "12", "--branch", "b"]), 0);
    let pngs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".png"))
        .collect();
    assert_eq!(pngs.len(), 8);
    for i in 0..8 {
        let img = image::open(out.join(format!("turntable_B_{i:03}.png"))).unwrap().to_rgb8();
        assert!(img.pixels().all(|px| px.0 == [255, 255, 255]));
    }
    assert!(out.join("provenance_render.json").is_file());
}

#[test]
fn fit_then_probe() {
    let dir = tempfile::tempdir().unwrap();
    let fit_dir = dir.path().join("fit");
    let code = run(&[
        "fit", "--out", p(&fit_dir), "--repr", "tri-plane", "--phases", "100/0/0:4", "--resolution", "8", "--rays", "32",
        "--checkpoint-every", "2",
    ]);
    assert_eq!(code, 0);
    let (state, meta) = checkpoint::load(&fit_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(state.step, 4);
    assert_eq!(meta.field.kind, RepresentationKind::TriPlane);
    assert!(fit_dir.join("checkpoints/step_00000002.sphf").is_file());
    let csv = std::fs::read_to_string(fit_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    // Non-dual fields always take the fused path.
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("fused")));

    let probe = dir.path().join("probe");
    assert_eq!(run(&["probe", "--metric", "leakage", "--checkpoint", p(&fit_dir.join(CHECKPOINT_FILE)), "--size", "16", "--out", p(&probe)]), 0);
    let leak = json(&probe.join("probe_leakage.json"));
    assert_eq!(leak["result"]["representation"], "tri-plane");
    assert_eq!(leak["config_digest"].as_str().unwrap().len(), 64);
    let l = leak["result"]["leakage"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&l));
    // The seam metric is defined only for the dual-sphere field.
    assert_eq!(run(&["probe", "--metric", "seam", "--checkpoint", p(&fit_dir.join(CHECKPOINT_FILE)), "--out", p(&probe)]), 2);
}

#[test]
fn probe_seam_orders_branches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[field]\nchannels = 32\ninit_std = 1.0\nhidden = 8\n").unwrap();
    assert_eq!(run(&["probe", "--config", p(&cfg), "--metric", "seam", "--probes", "32", "--out", p(dir.path())]), 0);
    let r = json(&dir.path().join("probe_seam.json"))["result"].clone();
    let (a, b, f) = (r["branch_a"].as_f64().unwrap(), r["branch_b"].as_f64().unwrap(), r["fused"].as_f64().unwrap());
    assert!(a > 5.0 && b > 5.0 && f <= 2.0, "{r}");
    let prov = json(&dir.path().join("provenance_probe.json"));
    assert_eq!(prov["config"]["field"]["channels"], 32);
}

#[test]
fn probe_gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["probe", "--metric", "gradcheck", "--op", "linear,composite", "--trials", "1", "--out", p(dir.path())]), 0);
    let ok = json(&dir.path().join("probe_gradcheck.json"));
    assert_eq!(ok["result"]["passed"], true);
    assert_eq!(ok["result"]["reports"].as_array().unwrap().len(), 4);
    assert_eq!(run(&["probe", "--metric", "gradcheck", "--op", "decoder", "--tolerance", "1e-30", "--out", p(dir.path())]), 3);
    assert_eq!(json(&dir.path().join("probe_gradcheck.json"))["result"]["passed"], false);
}

#[test]
fn probe_coverage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["probe", "--metric", "coverage", "--grid", "64", "--out", p(dir.path())]), 0);
    let v = json(&dir.path().join("probe_coverage.json"))["result"]["min_weight_sum"].as_f64().unwrap();
    assert!(v > 0.4 && v < 1.0);
}

#[test]
fn vico_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["vico", "--seeds", "2", "--steps", "20", "--count", "24", "--out", p(dir.path())];
    assert_eq!(run(&args), 0);
    let csv = std::fs::read_to_string(dir.path().join("vico.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let summary = json(&dir.path().join("vico_summary.json"));
    assert!(summary["mean_auc_delta"].is_number());
    assert_eq!(summary["seeds"], 2);
    assert_eq!(run(&args), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("vico.csv")).unwrap(), csv);
}
