use std::sync::Arc;

use mgfr::face::{gen_synthetic_basis, icosphere, Coefficients};
use mgfr::harness::checks::{gp_analytic, ConstantCritic, LinearCritic};
use mgfr::losses::{
    coefficient_loss, feature_matching_loss, generator_adv_loss, gradient_penalty, image_pyramid,
    reconstruction_loss, total_loss, wgan_gp_d_loss, CoefficientRegressor, Critic, Discriminator,
    FeaturePyramid, IdentityFeatures, LossParts, LossWeights, OracleRegressor, LAMBDA_GP,
    PYRAMID_LEVELS,
};
use mgfr::synth::{render, synthetic_frame_coefficients, synthetic_identity};
use mgfr::tensor::{backward, grad};
use mgfr::{Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_image(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect(), shape).unwrap()
}

fn parts(rec: f64, coeff: f64, fm: f64, adv: f64) -> LossParts {
    LossParts {
        rec: Tensor::scalar(rec),
        coeff: Tensor::scalar(coeff),
        fm: Tensor::scalar(fm),
        adv: Tensor::scalar(adv),
    }
}

#[test]
fn total_loss_weights_by_name() {
    let w = LossWeights::default();
    assert_eq!((w.rec, w.fm, w.coeff, w.adv), (10.0, 10.0, 1.0, 1.0));
    assert_eq!(
        total_loss(&parts(0.0, 0.0, 0.0, 0.0), &w)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    assert_eq!(
        total_loss(&parts(1.0, 1.0, 1.0, 1.0), &w)
            .unwrap()
            .item()
            .unwrap(),
        22.0
    );
    assert_eq!(
        total_loss(&parts(0.0, 1.0, 0.0, 0.0), &w)
            .unwrap()
            .item()
            .unwrap(),
        1.0
    );
    assert_eq!(
        total_loss(&parts(0.0, 0.0, 1.0, 0.0), &w)
            .unwrap()
            .item()
            .unwrap(),
        10.0
    );
}

#[test]
fn total_loss_gradient_is_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_image(&mut rng, &[1, 3, 8, 8]).requires_grad();
    let terms = [
        x.square().mean(),
        x.abs().sum(),
        x.scale(2.0).mean(),
        x.sqrt().unwrap().mean(),
    ];
    let p = LossParts {
        rec: terms[0].clone(),
        coeff: terms[1].clone(),
        fm: terms[2].clone(),
        adv: terms[3].clone(),
    };
    let w = LossWeights::default();
    let g = grad(&total_loss(&p, &w).unwrap(), &[x.clone()], false)
        .unwrap()
        .remove(0);
    let weights = [w.rec, w.coeff, w.fm, w.adv];
    let mut expected = vec![0.0; 192];
    for (t, k) in terms.iter().zip(weights) {
        let gt = grad(t, &[x.clone()], false).unwrap().remove(0);
        expected
            .iter_mut()
            .zip(gt.data())
            .for_each(|(e, v)| *e += k * v);
    }
    let worst = g
        .data()
        .iter()
        .zip(&expected)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn reconstruction_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pyr = FeaturePyramid::new(3);
    let (a, b) = (
        rand_image(&mut rng, &[2, 3, 16, 16]),
        rand_image(&mut rng, &[2, 3, 16, 16]),
    );
    assert_eq!(
        reconstruction_loss(&pyr, &a, &a, PYRAMID_LEVELS)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    let ab = reconstruction_loss(&pyr, &a, &b, PYRAMID_LEVELS)
        .unwrap()
        .item()
        .unwrap();
    let ba = reconstruction_loss(&pyr, &b, &a, PYRAMID_LEVELS)
        .unwrap()
        .item()
        .unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, ba);

    let l1 = reconstruction_loss(&IdentityFeatures, &a, &b, 1)
        .unwrap()
        .item()
        .unwrap();
    let oracle = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.numel() as f64;
    assert!((l1 - oracle).abs() <= 1e-12);
    assert!(reconstruction_loss(&pyr, &a, &Tensor::zeros(&[2, 3, 8, 8]), 1).is_err());
    let levels = image_pyramid(&a, 4).unwrap();
    let sides: Vec<usize> = levels.iter().map(|t| t.shape()[3]).collect();
    assert_eq!(sides, vec![16, 8, 4, 2]);
}

#[test]
fn distinct_pairs_give_positive_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pyr = FeaturePyramid::new(4);
    let d = Discriminator::new(&mut rng, 16, &[4, 8, 8, 8]).unwrap();
    for _ in 0..100 {
        let (a, b) = (
            rand_image(&mut rng, &[1, 3, 16, 16]),
            rand_image(&mut rng, &[1, 3, 16, 16]),
        );
        assert!(
            reconstruction_loss(&pyr, &a, &b, PYRAMID_LEVELS)
                .unwrap()
                .item()
                .unwrap()
                > 0.0
        );
        assert!(feature_matching_loss(&d, &a, &b).unwrap().item().unwrap() > 0.0);
    }
}

#[test]
fn feature_matching_matches_per_layer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Discriminator::new(&mut rng, 16, &[4, 8, 8, 8]).unwrap();
    let (a, b) = (
        rand_image(&mut rng, &[2, 3, 16, 16]),
        rand_image(&mut rng, &[2, 3, 16, 16]),
    );
    assert_eq!(
        feature_matching_loss(&d, &a, &a).unwrap().item().unwrap(),
        0.0
    );
    let (fa, fb) = (
        d.forward(&a).unwrap().features,
        d.forward(&b).unwrap().features,
    );
    assert_eq!(fa.len(), 4);
    let mut oracle = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        let n = x.numel() as f64;
        oracle += x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / n;
    }
    let got = feature_matching_loss(&d, &a, &b).unwrap().item().unwrap();
    assert!((got - oracle).abs() <= 1e-12, "{got} {oracle}");
    assert!(got >= 0.0);
}

#[test]
fn discriminator_outputs_one_score_per_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Discriminator::new(&mut rng, 32, &[4, 8, 8, 8]).unwrap();
    assert_eq!(
        d.score(&rand_image(&mut rng, &[3, 3, 32, 32]))
            .unwrap()
            .shape(),
        &[3, 1]
    );
    assert!(Discriminator::new(&mut rng, 8, &[4, 8, 8, 8]).is_err());
}

#[test]
fn generator_adversarial_loss_is_negative_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = rand_image(&mut rng, &[4, 3, 8, 8]);
    assert_eq!(
        generator_adv_loss(&ConstantCritic(0.0), &img)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    let d = Discriminator::new(&mut rng, 8, &[4, 4]).unwrap();
    let scores = d.score(&img).unwrap();
    let oracle = -scores.data().iter().sum::<f64>() / 4.0;
    assert!((generator_adv_loss(&d, &img).unwrap().item().unwrap() - oracle).abs() <= 1e-12);

    // The gradient with respect to the scores is -1/B, so descent raises D(Î).
    let s = Tensor::new(vec![0.3, -0.1, 0.7, 0.2], &[4, 1])
        .unwrap()
        .requires_grad();
    struct Fixed(Tensor);
    impl Critic for Fixed {
        fn score(&self, _: &Tensor) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }
    backward(&generator_adv_loss(&Fixed(s.clone()), &img).unwrap()).unwrap();
    assert!(s.grad().unwrap().data().iter().all(|&g| g == -0.25));
}

#[test]
fn gradient_penalty_analytic_cases() {
    let (linear, constant) = gp_analytic(9).unwrap();
    assert!(linear <= 1e-10, "{linear}");
    assert_eq!(constant, LAMBDA_GP);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (real, fake) = (
        rand_image(&mut rng, &[3, 3, 8, 8]),
        rand_image(&mut rng, &[3, 3, 8, 8]),
    );
    let loss = wgan_gp_d_loss(&ConstantCritic(1.3), &real, &fake, &mut rng).unwrap();
    assert_eq!(loss.total.item().unwrap(), LAMBDA_GP);
    assert_eq!(loss.wasserstein, 0.0);

    let d = Discriminator::new(&mut rng, 8, &[4, 4]).unwrap();
    let same = wgan_gp_d_loss(&d, &real, &real, &mut rng).unwrap();
    assert_eq!(same.wasserstein, 0.0);
    assert!(same.penalty.item().unwrap() >= 0.0);
}

#[test]
fn gradient_penalty_is_differentiable_in_critic_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = rand_image(&mut rng, &[1, 3, 4, 4]).requires_grad();
    let points = rand_image(&mut rng, &[2, 3, 4, 4]);
    let gp = gradient_penalty(&LinearCritic { w: w.clone() }, &points).unwrap();
    let g = grad(&gp, &[w.clone()], false).unwrap().remove(0);
    // With the shifted norm n = sqrt(‖w‖² + 1e-12) − 1e-6, the penalty
    // (n − 1)² has gradient 2(n − 1)·w/sqrt(‖w‖² + 1e-12).
    let root = (w.data().iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
    let n = root - 1e-6;
    let worst = g.data().iter().zip(w.data()).fold(0.0f64, |m, (a, wi)| {
        m.max((a - 2.0 * (n - 1.0) * wi / root).abs())
    });
    assert!(worst <= 1e-10, "{worst}");
}

struct Lookup {
    oracle: OracleRegressor,
}

impl CoefficientRegressor for Lookup {
    fn regress(&self, images: &Tensor) -> Result<Tensor> {
        self.oracle.regress(images)
    }
}

#[test]
fn coefficient_loss_with_oracle_regressor() {
    let basis = gen_synthetic_basis(1, Arc::new(icosphere(2))).unwrap();
    let topo = basis.topology.clone();
    let (src_id, drv_id) = (
        synthetic_identity(7, 0, &topo),
        synthetic_identity(7, 1, &topo),
    );
    let s = synthetic_frame_coefficients(7, 0, 0, &src_id.identity);
    let d = synthetic_frame_coefficients(7, 1, 3, &drv_id.identity);
    let target = Coefficients {
        identity: s.identity.clone(),
        expression: d.expression.clone(),
        pose: d.pose.clone(),
    };
    let img =
        |c: &Coefficients, colors: &[[f64; 3]]| render(&basis, c, colors, 32).unwrap().to_tensor();
    let (is, id, out) = (
        img(&s, &src_id.colors),
        img(&d, &drv_id.colors),
        img(&target, &src_id.colors),
    );
    let mut oracle = OracleRegressor::new();
    oracle.insert(is.data(), &s);
    oracle.insert(id.data(), &d);
    oracle.insert(out.data(), &target);
    let reg = Lookup { oracle };
    assert_eq!(
        coefficient_loss(&reg, &out, &id, &out)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    assert_eq!(
        coefficient_loss(&reg, &is, &id, &out)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    assert_eq!(
        coefficient_loss(&reg, &is, &is, &is)
            .unwrap()
            .item()
            .unwrap(),
        0.0
    );
    let wrong = coefficient_loss(&reg, &is, &id, &id)
        .unwrap()
        .item()
        .unwrap();
    let expected: f64 = s
        .identity
        .iter()
        .zip(&d.identity)
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!((wrong - expected).abs() <= 1e-12);
    assert!(reg
        .regress(&rand_image(
            &mut ChaCha8Rng::seed_from_u64(0),
            &[1, 3, 32, 32]
        ))
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn total_loss_is_linear_in_each_part(p in prop::array::uniform4(-5.0f64..5.0), k in 0usize..4, t in -3.0f64..3.0) {
        let w = LossWeights::default();
        let base = total_loss(&parts(p[0], p[1], p[2], p[3]), &w).unwrap().item().unwrap();
        let mut q = p;
        q[k] += t;
        let moved = total_loss(&parts(q[0], q[1], q[2], q[3]), &w).unwrap().item().unwrap();
        let weight = [w.rec, w.coeff, w.fm, w.adv][k];
        prop_assert!((moved - base - weight * t).abs() <= 1e-12);
    }

    #[test]
    fn coefficient_and_matching_losses_are_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Discriminator::new(&mut rng, 8, &[4, 4]).unwrap();
        let (a, b) = (rand_image(&mut rng, &[1, 3, 8, 8]), rand_image(&mut rng, &[1, 3, 8, 8]));
        prop_assert!(feature_matching_loss(&d, &a, &b).unwrap().item().unwrap() >= 0.0);
        let gp = gradient_penalty(&d, &a).unwrap().item().unwrap();
        prop_assert!(gp >= 0.0);
    }
}
