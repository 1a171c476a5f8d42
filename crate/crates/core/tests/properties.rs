use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sphfield::checkpoint::{decode, encode, CheckpointMeta, TensorRecord};
use sphfield::dataset::{azimuth_bin, duplication_count, AZIMUTH_BINS};
use sphfield::eval::{masked_pearson, psnr};
use sphfield::field::FieldConfig;
use sphfield::geometry::{cart_to_sph, frame_coords, fusion_weight, sph_to_cart, SphereFrame, SphericalCoord, Vec3};
use sphfield::optim::{AdamConfig, FitSchedule};
use sphfield::planes::{sample_bilinear, FeaturePlane, WrapMode};
use sphfield::render::{composite, SampleSeries};
use sphfield::vico::{rank_auc, shuffle_labels};

fn unit_vec() -> impl Strategy<Value = Vec3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("away from the origin", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized())
}

proptest! {
    #[test]
    fn spherical_round_trip(r in 1e-3..10.0f64, theta in 1e-6..PI - 1e-6, phi in -PI + 1e-9..PI) {
        let s = cart_to_sph(sph_to_cart(SphericalCoord::new(r, theta, phi)));
        prop_assert!((s.r - r).abs() <= 1e-12 * r.max(1.0));
        prop_assert!((s.theta - theta).abs() < 1e-9);
        prop_assert!((s.phi - phi).abs() < 1e-9);
    }

    #[test]
    fn frames_are_rotations(p in unit_vec(), scale in 0.01..3.0f64) {
        for frame in [SphereFrame::a(), SphereFrame::b()] {
            let q = p * scale;
            let back = frame.to_world(frame.to_frame(q));
            prop_assert!((back - q).norm() < 1e-12);
            prop_assert!((frame_coords(&frame, q).r - scale).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_weights_cover_every_direction(p in unit_vec()) {
        let a = frame_coords(&SphereFrame::a(), p);
        let b = frame_coords(&SphereFrame::b(), p);
        let (wa, wb) = (fusion_weight(a.theta, a.phi), fusion_weight(b.theta, b.phi));
        prop_assert!((0.0..=1.0).contains(&wa) && (0.0..=1.0).contains(&wb));
        // The lattice minimum is 0.4375; the continuous infimum is 7/16.
        prop_assert!(wa + wb >= 7.0 / 16.0 - 1e-12);
    }

    #[test]
    fn bilinear_stays_within_texel_range(seed in any::<u64>(), u in 0.0..1.0f64, v in 0.0..1.0f64, wrap in any::<bool>()) {
        let mode = if wrap { WrapMode::Wrap } else { WrapMode::Clamp };
        let mut plane = FeaturePlane::<f64>::zeros(5, 7, 2, mode, WrapMode::Clamp).unwrap();
        plane.fill_normal(&mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        let out = sample_bilinear(&plane, u, v);
        for c in 0..2 {
            let vals = plane.data.iter().skip(c).step_by(2);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            prop_assert!(out[c] >= lo - 1e-12 && out[c] <= hi + 1e-12);
        }
        let flat = plane.constant(0.75);
        prop_assert!(sample_bilinear(&flat, u, v).iter().all(|&x| (x - 0.75).abs() < 1e-12));
    }

    #[test]
    fn composite_is_a_convex_blend(
        sigma in prop::collection::vec(0.0..50.0f64, 1..12),
        shade in 0.0..1.0f64,
        bg in 0.0..1.0f64,
    ) {
        let n = sigma.len();
        let s = SampleSeries {
            t: (0..n).map(|i| 1.0 + 0.1 * i as f64).collect(),
            delta: vec![0.1; n],
            sigma: sigma.clone(),
            color: (0..n).map(|i| [shade, (i as f64 / n as f64), 0.5]).collect(),
            logits: vec![0.0; n],
            classes: 1,
        };
        let o = composite(&s, [bg; 3]);
        prop_assert!((0.0..=1.0).contains(&o.alpha));
        let (lo, hi) = (shade.min(bg), shade.max(bg));
        prop_assert!(o.rgb[0] >= lo - 1e-12 && o.rgb[0] <= hi + 1e-12);
        let total: f64 = sigma.iter().map(|x| x * 0.1).sum();
        prop_assert!((o.alpha - (1.0 - (-total).exp())).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_records_round_trip(
        tensors in prop::collection::vec(("[a-z.]{1,12}", prop::collection::vec(1u32..4, 0..3)), 0..5),
        step in any::<u64>(),
    ) {
        let records: Vec<TensorRecord> = tensors
            .into_iter()
            .enumerate()
            .map(|(i, (name, dims))| {
                let n: u32 = dims.iter().product();
                TensorRecord { name, dims, data: (0..n).map(|k| (k as f32 - i as f32) * 0.37).collect() }
            })
            .collect();
        let meta = CheckpointMeta {
            field: FieldConfig::default(),
            step,
            adam: AdamConfig::default(),
            adam_step: step,
            adam_steps: vec![step],
            lr_scale: vec![0.5],
            run: serde_json::Value::Null,
        };
        let (back, m) = decode(&encode(&records, &meta).unwrap()).unwrap();
        prop_assert_eq!(back, records);
        prop_assert_eq!(m, meta);
    }

    #[test]
    fn schedule_display_round_trips(a in 0u32..=100, b in 0u32..=100, steps in 1u64..100_000, steps2 in 1u64..1000) {
        prop_assume!(a + b <= 100);
        let text = format!("{a}/{b}/{}:{steps},0/0/100:{steps2}", 100 - a - b);
        let s: FitSchedule = text.parse().unwrap();
        let again: FitSchedule = s.to_string().parse().unwrap();
        prop_assert_eq!(&again, &s);
        prop_assert_eq!(s.total_steps(), steps + steps2);
    }

    #[test]
    fn duplication_lifts_sparse_bins(n_bin in 1usize..5000, n_thresh in 1usize..5000) {
        let d = duplication_count(n_bin, n_thresh);
        if n_bin >= n_thresh {
            prop_assert_eq!(d, 1);
        } else {
            prop_assert!(d * n_bin >= n_thresh);
            prop_assert!((d - 1) * n_bin < n_thresh);
        }
    }

    #[test]
    fn azimuth_bins_are_ten_degrees(yaw in -10.0..10.0f64) {
        let b = azimuth_bin(yaw);
        prop_assert!(b < AZIMUTH_BINS);
        let wrapped = (yaw + PI).rem_euclid(2.0 * PI);
        let lo = b as f64 * 2.0 * PI / AZIMUTH_BINS as f64;
        prop_assert!(wrapped >= lo - 1e-9 && wrapped < lo + 2.0 * PI / AZIMUTH_BINS as f64 + 1e-9);
    }

    #[test]
    fn shuffle_is_a_permutation(items in prop::collection::vec(any::<u16>(), 2..64), seed in any::<u64>()) {
        let mut s = shuffle_labels(&items, seed).unwrap();
        let mut orig = items.clone();
        s.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(s, orig);
    }

    #[test]
    fn auc_is_complementary(p in prop::collection::vec(-5.0..5.0f64, 1..20), n in prop::collection::vec(-5.0..5.0f64, 1..20)) {
        let ab = rank_auc(&p, &n).unwrap();
        let ba = rank_auc(&n, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_symmetric_and_nonnegative(pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = psnr(&a, &b).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn pearson_bounded_and_affine_invariant(
        pairs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3..40),
        scale in 0.1..10.0f64,
        shift in -3.0..3.0f64,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mask = vec![true; a.len()];
        let r = masked_pearson(&a, &b, &mask).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        let b2: Vec<f64> = b.iter().map(|x| x * scale + shift).collect();
        prop_assert!((masked_pearson(&a, &b2, &mask).unwrap() - r).abs() < 1e-9);
    }
}
