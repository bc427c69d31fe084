mod common;

use std::path::Path;
use std::process::Command;

use common::tiny_config;
use mgfr::face::{build_pair, disentangled_driving, interpolate_params, DriveMode};
use mgfr::harness::bench::{bench, format_table, COMPONENTS};
use mgfr::harness::checkpoint::{model_from_bytes, CHECKPOINT_VERSION};
use mgfr::harness::eval::{evaluate, reenact_frames, self_reenactment_pairs};
use mgfr::harness::metrics::{gaussian_taps, psnr, ssim, MetricsReport, PSNR_CAP};
use mgfr::harness::pipeline::{generate_dataset, run_training};
use mgfr::harness::{load_checkpoint, save_checkpoint, Generator, Model, TrainConfig};
use mgfr::synth::Image;
use mgfr::tensor::no_grad;
use mgfr::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image {
        height: h,
        width: w,
        data: (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

/// Direct per-window SSIM with the 2-D Gaussian written out.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let g = gaussian_taps(11, 1.5);
    let (h, w) = (a.height, a.width);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for ch in 0..3 {
        let at = |img: &Image, y: usize, x: usize| img.data[ch * h * w + y * w + x];
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        mx += g[i] * g[j] * at(a, y0 + i, x0 + j);
                        my += g[i] * g[j] * at(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let (p, q) = (at(a, y0 + i, x0 + j) - mx, at(b, y0 + i, x0 + j) - my);
                        vx += g[i] * g[j] * p * p;
                        vy += g[i] * g[j] * q * q;
                        cov += g[i] * g[j] * p * q;
                    }
                }
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

#[test]
fn identical_images_hit_the_caps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_image(&mut rng, 16, 16);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
}

#[test]
fn black_versus_white() {
    let black = Image::filled(16, 16, 0.0);
    let white = Image::filled(16, 16, 1.0);
    assert_eq!(psnr(&black, &white).unwrap(), 0.0);
    let s = ssim(&black, &white).unwrap();
    assert!(s.abs() < 1e-3, "{s}");
    assert!((s - ssim_oracle(&black, &white)).abs() <= 1e-9);
}

#[test]
fn metrics_match_scalar_oracles_and_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let a = random_image(&mut rng, 14, 17);
        let b = random_image(&mut rng, 14, 17);
        let s = ssim(&a, &b).unwrap();
        assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        assert!((s - ssim_oracle(&a, &b)).abs() <= 1e-9);
        assert!((-1.0..=1.0).contains(&s));
        let mse = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / a.data.len() as f64;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() <= 1e-9);
    }
    let small = random_image(&mut rng, 8, 8);
    assert!(ssim(&small, &small).is_err());
    assert!(psnr(&small, &random_image(&mut rng, 8, 9)).is_err());
}

#[test]
fn metrics_report_summaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(Image, Image)> = (0..4)
        .map(|_| {
            (
                random_image(&mut rng, 12, 12),
                random_image(&mut rng, 12, 12),
            )
        })
        .collect();
    let r = MetricsReport::from_pairs(&pairs).unwrap();
    assert_eq!(r.psnr.len(), 4);
    let mean = r.psnr.iter().sum::<f64>() / 4.0;
    assert!((r.psnr_summary.mean - mean).abs() <= 1e-12);
    assert!(r.ssim_summary.std >= 0.0);
}

#[test]
fn config_validation_and_toml_round_trip() {
    let c = tiny_config();
    let back = TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
    assert!(matches!(
        TrainConfig::from_toml("steps = \"many\""),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        TrainConfig::from_toml("unknown_key = 1"),
        Err(Error::Config(_))
    ));
    assert!(TrainConfig::from_toml("image_size = 32").is_err());
    assert!(TrainConfig::from_toml("held_out_identities = 200").is_err());
    assert!(TrainConfig::from_toml("lr = -1.0").is_err());
    assert!(TrainConfig::from_toml("frames_per_identity = 1").is_err());
    let d = TrainConfig::default();
    assert_eq!(d.train_identities(), 0..180);
    assert_eq!(d.held_out(), 180..200);
    assert_eq!((d.lr, d.beta1, d.beta2), (2e-4, 0.5, 0.999));
}

#[test]
fn checkpoint_round_trip_is_bitwise_stable() {
    let c = tiny_config();
    let dataset = generate_dataset(&c).unwrap();
    let mut model = Model::for_basis(c, &dataset.basis).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&mut model, &p1).unwrap();
    let mut back = load_checkpoint(&p1).unwrap();
    save_checkpoint(&mut back, &p2).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    assert_eq!(bytes, std::fs::read(&p2).unwrap());
    assert_eq!(&bytes[..4], b"MGFR");
    assert_eq!(back.config, model.config);

    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        model_from_bytes(&bumped, Path::new("x")),
        Err(Error::UnsupportedVersion { .. })
    ));
    assert!(matches!(
        model_from_bytes(&bytes[..bytes.len() - 3], Path::new("x")),
        Err(Error::Format { .. })
    ));
    assert!(matches!(
        model_from_bytes(b"NOPE", Path::new("x")),
        Err(Error::Format { .. })
    ));
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn training_is_reproducible() {
    let c = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let a = run_training(&c, Some(&p1)).unwrap();
    let b = run_training(&c, Some(&p2)).unwrap();
    assert_eq!(a.outcome.log, b.outcome.log);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(a.outcome.history.len(), 4);
    assert_eq!(a.outcome.log.lines().count(), 5);
    assert!(a.outcome.history.iter().all(|r| r.total.is_finite()));
    let other = run_training(&TrainConfig { seed: 1, ..c }, None).unwrap();
    assert_ne!(other.outcome.log, a.outcome.log);
}

#[test]
fn training_rejects_mismatched_dataset() {
    let c = tiny_config();
    let dataset = generate_dataset(&c).unwrap();
    let mut model = Model::for_basis(
        TrainConfig {
            identities: 9,
            ..c.clone()
        },
        &dataset.basis,
    )
    .unwrap();
    assert!(mgfr::harness::train::train(&mut model, &dataset, None).is_err());
}

#[test]
fn evaluation_and_interpolation_endpoints() {
    let c = TrainConfig {
        use_oracle_regressor: true,
        ..tiny_config()
    };
    let dataset = generate_dataset(&c).unwrap();
    let model = Model::for_basis(c.clone(), &dataset.basis).unwrap();
    assert_eq!(
        self_reenactment_pairs(&dataset, c.held_out()),
        vec![(9, 10), (9, 11)]
    );
    let report = evaluate(&model, &dataset).unwrap();
    assert_eq!(report.pairs, 2);
    // The untrained generator warps by zero flow, so only decoding separates
    // it from the copy-source baseline.
    assert!(report.copy_source.psnr_summary.mean.is_finite());

    let empty = Model::for_basis(
        TrainConfig {
            held_out_identities: 0,
            ..c
        },
        &dataset.basis,
    )
    .unwrap();
    assert!(evaluate(&empty, &dataset).is_err());

    let (s, d) = (
        &dataset.frames[0].coefficients,
        &dataset.frames[1].coefficients,
    );
    let (ms, md0) = build_pair(s, &interpolate_params(s, d, 0.0).unwrap(), &dataset.basis).unwrap();
    assert_eq!(md0.vertices.data(), ms.vertices.data());
    let (_, md1) = build_pair(s, &interpolate_params(s, d, 1.0).unwrap(), &dataset.basis).unwrap();
    let (_, full) = build_pair(s, d, &dataset.basis).unwrap();
    assert_eq!(md1.vertices.data(), full.vertices.data());

    let both = disentangled_driving(s, d, DriveMode::Both);
    let via_mode = no_grad(|| {
        let st = Generator::stacked_input(&dataset.basis, s, &both)?;
        Image::from_tensor(
            &model
                .generator
                .forward(&dataset.frames[0].image.to_tensor(), &[st])?,
        )
    })
    .unwrap();
    assert_eq!(
        via_mode,
        reenact_frames(&model.generator, &dataset, 0, 1).unwrap()
    );
    let pose = disentangled_driving(s, d, DriveMode::Pose);
    assert_eq!((&pose.expression, &pose.pose), (&s.expression, &d.pose));
    let exp = disentangled_driving(s, d, DriveMode::Expression);
    assert_eq!((&exp.expression, &exp.pose), (&d.expression, &s.pose));
}

#[test]
fn bench_reports_five_positive_rows() {
    let c = TrainConfig {
        use_oracle_regressor: true,
        ..tiny_config()
    };
    let dataset = generate_dataset(&c).unwrap();
    let model = Model::for_basis(c, &dataset.basis).unwrap();
    let f = &dataset.frames;
    let rows = bench(
        &model,
        &dataset.basis,
        &f[0].coefficients,
        &f[1].coefficients,
        &f[0].image.to_tensor(),
        5,
    )
    .unwrap();
    assert_eq!(
        rows.iter().map(|r| r.component).collect::<Vec<_>>(),
        COMPONENTS.to_vec()
    );
    assert!(rows
        .iter()
        .all(|r| r.median_ms > 0.0 && r.median_ms.is_finite() && r.runs == 5));
    assert_eq!(format_table(&rows).lines().count(), 6);
}

fn mgfr() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mgfr"));
    c.env("RUST_LOG", "warn");
    c
}

fn code(cmd: &mut Command) -> i32 {
    let out = cmd.output().unwrap();
    out.status.code().unwrap_or(-1)
}

#[test]
fn cli_end_to_end_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("tiny.toml"), tiny_config().to_toml().unwrap()).unwrap();
    let base = |cmd: &str| {
        let mut c = mgfr();
        c.arg(cmd).arg("--config").arg(p("tiny.toml"));
        c
    };
    assert_eq!(code(base("gen-data").arg("--out").arg(p("data"))), 0);
    assert!(p("data/meta").exists() && p("data/frame_000011.png").exists());
    let train = base("train")
        .args(["--steps", "2"])
        .arg("--dataset")
        .arg(p("data"))
        .arg("--checkpoint")
        .arg(p("m.ckpt"))
        .arg("--out")
        .arg(p("loss.csv"))
        .output()
        .unwrap();
    assert_eq!(
        train.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(p("loss.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let with_model = |cmd: &str, out: &str| {
        let mut c = mgfr();
        c.arg(cmd)
            .arg("--checkpoint")
            .arg(p("m.ckpt"))
            .arg("--dataset")
            .arg(p("data"))
            .arg("--out")
            .arg(p(out));
        c
    };
    let frames = |cmd: &str, out: &str| {
        let mut c = with_model(cmd, out);
        c.args(["--source", "0", "--driving", "2"]);
        c
    };
    assert_eq!(code(&mut frames("reenact", "r.png")), 0);
    assert_eq!(Image::load_png(&p("r.png")).unwrap().width, 16);
    assert_eq!(Image::load_png(&p("r_panel.png")).unwrap().width, 48);
    assert_eq!(
        code(frames("interpolate", "i.png").args(["--alpha-steps", "4"])),
        0
    );
    assert_eq!(Image::load_png(&p("i.png")).unwrap().width, 64);
    assert_eq!(
        code(frames("disentangle", "both.png").args(["--mode", "both"])),
        0
    );
    assert_eq!(
        std::fs::read(p("both.png")).unwrap(),
        std::fs::read(p("r.png")).unwrap()
    );
    assert_eq!(
        code(frames("disentangle", "pose.png").args(["--mode", "pose"])),
        0
    );
    assert_eq!(code(&mut with_model("eval", "eval.json")), 0);
    assert!(std::fs::read_to_string(p("eval.json"))
        .unwrap()
        .contains("copy_source"));
    let bench = with_model("bench", "unused")
        .args(["--runs", "3"])
        .output()
        .unwrap();
    assert_eq!(bench.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&bench.stdout).lines().count(), 6);

    // Bad input exits with 2.
    assert_eq!(
        code(frames("disentangle", "x.png").args(["--mode", "sideways"])),
        2
    );
    assert_eq!(
        code(frames("interpolate", "x.png").args(["--alpha-steps", "1"])),
        2
    );
    assert_eq!(
        code(frames("reenact", "x.png").args(["--driving", "999"])),
        2
    );
    assert_eq!(code(mgfr().args(["reenact", "--source", "0"])), 2);
    assert_eq!(
        code(
            mgfr()
                .arg("eval")
                .arg("--checkpoint")
                .arg(p("missing.ckpt"))
        ),
        2
    );
    assert_eq!(
        code(mgfr().arg("train").arg("--config").arg(p("missing.toml"))),
        2
    );
    std::fs::write(p("bad.toml"), "steps = -3").unwrap();
    assert_eq!(
        code(mgfr().arg("train").arg("--config").arg(p("bad.toml"))),
        2
    );
    assert_eq!(code(mgfr().arg("no-such-command")), 2);
}

#[test]
fn cli_check_fails_under_mutation() {
    let out = mgfr().args(["check", "--mutate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    let spectral = text
        .lines()
        .find(|l| l.contains("spectral oracle"))
        .unwrap();
    assert!(spectral.starts_with("[FAIL]"), "{text}");
}
