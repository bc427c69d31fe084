use std::sync::Arc;

use mgfr::face::{gen_synthetic_basis, icosphere, Coefficients, FaceBasis, N_EXP, N_ID, N_POSE};
use mgfr::losses::{CoefficientRegressor, ConvRegressor, OracleRegressor};
use mgfr::nn::Module;
use mgfr::synth::{
    make_dataset, pretrain_regressor, render, synthetic_identity, Dataset, DatasetMeta, Image,
    PretrainConfig, BACKGROUND, COEFF_STD, MAX_TRANSLATION,
};
use mgfr::tensor::no_grad;
use mgfr::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn basis(level: u32) -> Arc<FaceBasis> {
    Arc::new(gen_synthetic_basis(2, Arc::new(icosphere(level))).unwrap())
}

fn small_dataset(seed: u64) -> Dataset {
    make_dataset(seed, basis(2), 3, 4, 32, 2, 2).unwrap()
}

#[test]
fn render_is_deterministic_and_nonempty() {
    let b = basis(3);
    let ident = synthetic_identity(1, 0, &b.topology);
    let c = Coefficients::neutral();
    let a = render(&b, &c, &ident.colors, 64).unwrap();
    assert_eq!(a, render(&b, &c, &ident.colors, 64).unwrap());
    assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    let plane = 64 * 64;
    let foreground = (0..plane)
        .filter(|&p| (0..3).any(|ch| a.data[ch * plane + p] != BACKGROUND))
        .count();
    assert!(foreground > 0);
    assert!(render(&b, &c, &ident.colors[1..], 64).is_err());
}

#[test]
fn translation_shifts_rendered_content() {
    let b = basis(3);
    let ident = synthetic_identity(1, 2, &b.topology);
    let (size, k) = (64usize, 4usize);
    let base = Coefficients::neutral();
    let mut moved = base.clone();
    moved.pose[3] = 2.0 * k as f64 / size as f64;
    let a = render(&b, &base, &ident.colors, size).unwrap();
    let m = render(&b, &moved, &ident.colors, size).unwrap();
    // Every interior pixel of the moved render must match the original within
    // one pixel of the expected source column.
    let plane = size * size;
    let mut exact = 0;
    let mut total = 0;
    for y in 1..size - 1 {
        for x in k + 1..size - 1 {
            total += 1;
            let at = |img: &Image, xx: usize, yy: usize| {
                [0, 1, 2].map(|ch| img.data[ch * plane + yy * size + xx])
            };
            let got = at(&m, x, y);
            let close =
                |p: [f64; 3], q: [f64; 3]| p.iter().zip(q).all(|(u, v)| (u - v).abs() <= 1e-9);
            if close(got, at(&a, x - k, y)) {
                exact += 1;
            }
            let near = (y - 1..=y + 1)
                .any(|yy| (x - k - 1..=x - k + 1).any(|xx| close(got, at(&a, xx, yy))));
            let blended = (0..3).all(|ch| {
                let vals: Vec<f64> = (y - 1..=y + 1)
                    .flat_map(|yy| (x - k - 1..=x - k + 1).map(move |xx| (xx, yy)))
                    .map(|(xx, yy)| at(&a, xx, yy)[ch])
                    .collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                got[ch] >= lo - 1e-9 && got[ch] <= hi + 1e-9
            });
            assert!(near || blended, "pixel ({x}, {y})");
        }
    }
    assert!(exact as f64 >= 0.95 * total as f64, "{exact}/{total}");
}

#[test]
fn dataset_is_deterministic_and_reproduces_frames() {
    let a = small_dataset(4);
    let b = small_dataset(4);
    assert_eq!(a.frames, b.frames);
    assert_ne!(small_dataset(5).frames, a.frames);
    assert_eq!(a.frames.len(), 12);
    for (i, f) in a.frames.iter().enumerate() {
        assert_eq!(f.identity_index, i / 4);
        let colors = a.identity(f.identity_index).colors;
        assert_eq!(
            render(&a.basis, &f.coefficients, &colors, 32)
                .unwrap()
                .quantized(),
            f.image
        );
        assert_eq!(
            f.coefficients.identity,
            a.identity(f.identity_index).identity
        );
    }
    assert!(make_dataset(1, basis(1), 0, 4, 32, 1, 2).is_err());
}

#[test]
fn desk_dataset_has_3200_frames() {
    let d = make_dataset(0, basis(3), 200, 16, 64, 3, 2).unwrap();
    assert_eq!(d.frames.len(), 3200);
    assert_eq!(d.meta.frame_count(), 3200);
    assert_eq!(d.frames_of(199), 3184..3200);
}

#[test]
fn sampled_coefficients_follow_their_ranges() {
    let d = make_dataset(9, basis(1), 40, 8, 8, 1, 2).unwrap();
    let exp: Vec<f64> = d
        .frames
        .iter()
        .flat_map(|f| f.coefficients.expression.clone())
        .collect();
    let mean = exp.iter().sum::<f64>() / exp.len() as f64;
    let std = (exp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / exp.len() as f64).sqrt();
    assert!(
        mean.abs() < 0.02 && (std - COEFF_STD).abs() < 0.02,
        "{mean} {std}"
    );
    for f in &d.frames {
        let p = &f.coefficients.pose;
        for t in [p[3], p[7], p[11]] {
            assert!(t.abs() <= MAX_TRANSLATION);
        }
        // Rotation block is orthonormal.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| p[4 * i + k] * p[4 * j + k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-12);
            }
        }
        // Pitch (rotation about x) stays within 30 degrees.
        assert!(p[9].abs() <= 1.0);
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_dataset(6);
    d.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.meta, d.meta);
    assert_eq!(back.frames, d.frames);
    assert_eq!(back.basis.mean().data(), d.basis.mean().data());

    let meta = std::fs::read_to_string(dir.path().join("meta")).unwrap();
    assert!(meta.contains("identities=3\n") && meta.contains("frames_per_identity=4\n"));
    std::fs::write(
        dir.path().join("meta"),
        meta.replace("version=1", "version=7"),
    )
    .unwrap();
    assert!(matches!(
        Dataset::load(dir.path()),
        Err(Error::UnsupportedVersion { found: 7, .. })
    ));
    std::fs::write(dir.path().join("meta"), meta.replace("seed=", "seed x")).unwrap();
    assert!(matches!(
        Dataset::load(dir.path()),
        Err(Error::Format { .. })
    ));
    std::fs::write(dir.path().join("meta"), &meta).unwrap();
    std::fs::write(dir.path().join("coeffs.bin"), [0u8; 16]).unwrap();
    assert!(matches!(
        Dataset::load(dir.path()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn meta_text_round_trips() {
    let m = small_dataset(1).meta;
    let back = DatasetMeta::parse(&m.to_text(), std::path::Path::new("meta")).unwrap();
    assert_eq!(back, m);
}

#[test]
fn regressor_output_layout_and_freezing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut reg = ConvRegressor::new(&mut rng, 32).unwrap();
    let d = small_dataset(2);
    let x = d.batch(&[0, 5, 7]).unwrap();
    let y = reg.regress(&x).unwrap();
    assert_eq!(y.shape(), &[3, N_ID + N_EXP + N_POSE]);
    assert_eq!((N_ID, N_EXP, N_POSE), (50, 51, 12));
    let c = Coefficients::from_slice(&y.data()[..113]).unwrap();
    assert_eq!(
        (c.identity.len(), c.expression.len(), c.pose.len()),
        (50, 51, 12)
    );
    reg.freeze();
    let mut trainable = 0;
    reg.visit("", &mut |_, t| trainable += t.grad_enabled() as usize);
    assert_eq!(trainable, 0);
    let a = no_grad(|| reg.regress(&x)).unwrap();
    assert_eq!(reg.regress(&x).unwrap().data(), a.data());
    assert!(ConvRegressor::new(&mut rng, 8).is_err());
}

#[test]
fn pretraining_reduces_error_and_returns_frozen() {
    let d = small_dataset(3);
    let frames: Vec<usize> = (0..12).collect();
    let config = PretrainConfig {
        steps: 60,
        batch_size: 4,
        lr: 1e-3,
        seed: 1,
        window: 10,
    };
    let (mut reg, report) = pretrain_regressor(&d, &frames, &config).unwrap();
    assert!(report.final_mse < report.step0_mse, "{report:?}");
    assert_eq!(report.curve.first().map(|c| c.0), Some(0));
    let mut trainable = 0;
    reg.visit("", &mut |_, t| trainable += t.grad_enabled() as usize);
    assert_eq!(trainable, 0);
    let again = pretrain_regressor(&d, &frames, &config).unwrap().1;
    assert_eq!(again.final_mse, report.final_mse);
    assert!(pretrain_regressor(&d, &[], &config).is_err());
}

#[test]
fn oracle_regressor_returns_stored_coefficients() {
    let d = small_dataset(8);
    let mut oracle = OracleRegressor::new();
    for f in &d.frames {
        oracle.insert(&f.image.data, &f.coefficients);
    }
    assert_eq!(oracle.len(), 12);
    let y = oracle.regress(&d.batch(&[4, 1]).unwrap()).unwrap();
    assert_eq!(
        &y.data()[..113],
        d.frames[4].coefficients.to_vec().as_slice()
    );
    assert_eq!(
        &y.data()[113..],
        d.frames[1].coefficients.to_vec().as_slice()
    );
    assert!(oracle.regress(&Tensor::zeros(&[1, 3, 32, 32])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn frames_depend_only_on_seed_identity_and_index(seed in any::<u64>()) {
        let b = basis(1);
        let big = make_dataset(seed, b.clone(), 3, 3, 16, 1, 2).unwrap();
        let small = make_dataset(seed, b, 2, 2, 16, 1, 2).unwrap();
        for id in 0..2 {
            for f in 0..2 {
                prop_assert_eq!(&small.frames[id * 2 + f], &big.frames[id * 3 + f]);
            }
        }
    }
}

#[test]
fn desk_pretraining_reaches_a_tenth_of_the_initial_error() {
    let config = mgfr::harness::TrainConfig::default();
    let d = mgfr::harness::pipeline::generate_dataset(&config).unwrap();
    let frames = mgfr::harness::pipeline::training_frames(&config, &d);
    let pretrain = PretrainConfig {
        steps: config.regressor_steps,
        batch_size: config.regressor_batch,
        lr: config.regressor_lr,
        seed: config.seed,
        ..PretrainConfig::default()
    };
    assert_eq!(pretrain.steps, 5000);
    let (_, report) = pretrain_regressor(&d, &frames, &pretrain).unwrap();
    let ratio = report.final_mse / report.step0_mse;
    assert!(
        ratio <= 0.1,
        "final mse {:.5} is {:.3} of step-0 mse {:.5}",
        report.final_mse,
        ratio,
        report.step0_mse
    );
}
