use std::sync::Arc;

use mgfr::graph::oracle::{cheb_filter, eigenvalues, laplacian_dense, to_dense};
use mgfr::graph::{
    chebyshev_basis, chebyshev_operator, estimate_lambda_max, instance_norm_graph,
    normalized_laplacian, scale_laplacian, ChebConv, GraphLinear, InstanceNorm, Recurrence,
    SpectralResidualBlock,
};
use mgfr::harness::checks::random_connected_graph;
use mgfr::nn::Module;
use mgfr::tensor::{grad_check, SparseMatrix};
use mgfr::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
    let entries = edges
        .iter()
        .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
        .collect();
    SparseMatrix::from_triplets(n, n, entries, true).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn laplacian_of_k2_and_p3() {
    let l = normalized_laplacian(&graph(2, &[(0, 1)])).unwrap();
    assert_eq!(l.to_dense(), vec![1.0, -1.0, -1.0, 1.0]);
    let p = normalized_laplacian(&graph(3, &[(0, 1), (1, 2)])).unwrap();
    assert!((p.get(0, 1) + 1.0 / 2f64.sqrt()).abs() <= 1e-15);
    assert_eq!(p.get(1, 1), 1.0);
    assert_eq!(p.get(0, 2), 0.0);
    let oracle = laplacian_dense(&graph(3, &[(0, 1), (1, 2)]));
    assert!((to_dense(&p) - oracle).abs().max() <= 1e-15);
}

#[test]
fn laplacian_rejects_bad_adjacency() {
    let isolated = graph(3, &[(0, 1)]);
    assert!(matches!(
        normalized_laplacian(&isolated),
        Err(Error::IsolatedVertex(2))
    ));
    let asym = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)], false).unwrap();
    assert!(normalized_laplacian(&asym).is_err());
    let weighted = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 2.0), (1, 0, 2.0)], true).unwrap();
    assert!(normalized_laplacian(&weighted).is_err());
    let looped =
        SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)], true)
            .unwrap();
    assert!(normalized_laplacian(&looped).is_err());
}

#[test]
fn scaled_laplacian_examples() {
    let l = normalized_laplacian(&graph(2, &[(0, 1)])).unwrap();
    let s = scale_laplacian(&l, 2.0).unwrap();
    assert_eq!(s.to_dense(), vec![0.0, -1.0, -1.0, 0.0]);
    let ev = eigenvalues(&s);
    assert!((ev[0] + 1.0).abs() <= 1e-12 && (ev[1] - 1.0).abs() <= 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = normalized_laplacian(&random_connected_graph(&mut rng, 12, 0.3)).unwrap();
    let s = scale_laplacian(&l, 2.0).unwrap();
    let shifted: Vec<f64> = l
        .to_dense()
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 13 == 0 { v - 1.0 } else { *v })
        .collect();
    assert!(max_diff(&s.to_dense(), &shifted) <= 1e-15);
    for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(scale_laplacian(&l, bad).is_err());
    }
}

#[test]
fn lambda_max_examples() {
    let k2 = normalized_laplacian(&graph(2, &[(0, 1)])).unwrap();
    assert!((estimate_lambda_max(&k2) - 2.0).abs() <= 1e-8);
    let p3 = normalized_laplacian(&graph(3, &[(0, 1), (1, 2)])).unwrap();
    let top = *eigenvalues(&p3).last().unwrap();
    assert!((estimate_lambda_max(&p3) - top).abs() <= 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.random_range(3..30);
        let p = rng.random_range(0.05..0.5);
        let l = normalized_laplacian(&random_connected_graph(&mut rng, n, p)).unwrap();
        assert!(estimate_lambda_max(&l) <= 2.0 + 1e-6);
    }
}

#[test]
fn cheb_order_one_ignores_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 10, 0.3)).unwrap();
    let mut conv = ChebConv::new(&mut rng, 1, 3, 2);
    conv.bias = rand_tensor(&mut rng, &[2]);
    let x = rand_tensor(&mut rng, &[10, 3]);
    let y = conv.forward(&op, &x).unwrap();
    let oracle = x
        .matmul(&conv.theta.reshape(&[3, 2]).unwrap())
        .unwrap()
        .add(&conv.bias)
        .unwrap();
    assert!(max_diff(y.data(), oracle.data()) <= 1e-15);
}

#[test]
fn cheb_of_zero_input_is_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 8, 0.3)).unwrap();
    let mut conv = ChebConv::new(&mut rng, 3, 2, 4);
    conv.bias = rand_tensor(&mut rng, &[4]);
    let y = conv.forward(&op, &Tensor::zeros(&[8, 2])).unwrap();
    for row in y.data().chunks_exact(4) {
        assert_eq!(row, conv.bias.data());
    }
}

#[test]
fn cheb_matches_eigendecomposition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 20, 0.2)).unwrap();
    let mut conv = ChebConv::new(&mut rng, 3, 3, 2);
    conv.bias = rand_tensor(&mut rng, &[2]);
    let x = rand_tensor(&mut rng, &[20, 3]);
    let y = conv.forward(&op, &x).unwrap();
    let oracle = cheb_filter(&op, conv.theta.data(), conv.bias.data(), 3, 3, 2, x.data());
    let rel = max_diff(y.data(), &oracle) / oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(rel <= 1e-9, "{rel}");
}

#[test]
fn cheb_rejects_mismatched_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 8, 0.3)).unwrap();
    let conv = ChebConv::new(&mut rng, 3, 2, 4);
    assert!(conv.forward(&op, &Tensor::zeros(&[7, 2])).is_err());
    assert!(conv.forward(&op, &Tensor::zeros(&[8, 3])).is_err());
}

#[test]
fn recurrence_second_term_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 15, 0.3)).unwrap();
    let v = rand_tensor(&mut rng, &[15, 1]);
    let basis = chebyshev_basis(&op, &v, 3, Recurrence::Standard).unwrap();
    let lv = op.matvec(v.data());
    let llv = op.matvec(&lv);
    let t2: Vec<f64> = llv.iter().zip(v.data()).map(|(a, b)| 2.0 * a - b).collect();
    let col2: Vec<f64> = basis.data().chunks_exact(3).map(|r| r[2]).collect();
    assert_eq!(col2, t2);
    let flipped = chebyshev_basis(&op, &v, 3, Recurrence::Flipped).unwrap();
    assert_ne!(flipped.data(), basis.data());
}

#[test]
fn graph_linear_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[6, 3]);
    let mut lin = GraphLinear::new(&mut rng, 3, 3);
    lin.weight = Tensor::new(
        (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect(),
        &[3, 3],
    )
    .unwrap();
    lin.bias = Tensor::zeros(&[3]);
    assert_eq!(lin.forward(&x).unwrap().data(), x.data());

    let mut lin = GraphLinear::new(&mut rng, 3, 2);
    lin.bias = rand_tensor(&mut rng, &[2]);
    let y = lin.forward(&x).unwrap();
    let (w, b) = (lin.weight.data(), lin.bias.data());
    let mut worst: f64 = 0.0;
    for v in 0..6 {
        for j in 0..2 {
            let e: f64 = (0..3)
                .map(|i| x.data()[v * 3 + i] * w[i * 2 + j])
                .sum::<f64>()
                + b[j];
            worst = worst.max((y.data()[v * 2 + j] - e).abs());
        }
    }
    assert!(worst <= 1e-12);
    let perm = Arc::new(vec![5, 3, 1, 0, 2, 4]);
    let yp = lin.forward(&x.select_rows(&perm).unwrap()).unwrap();
    assert_eq!(yp.data(), y.select_rows(&perm).unwrap().data());
    assert!(lin.forward(&Tensor::zeros(&[6, 4])).is_err());
}

#[test]
fn instance_norm_examples() {
    let scale = Tensor::new(vec![2.0, 0.5], &[2]).unwrap();
    let shift = Tensor::new(vec![0.25, -1.0], &[2]).unwrap();
    let constant = Tensor::full(&[5, 2], 3.0);
    let y = instance_norm_graph(&constant, &scale, &shift).unwrap();
    for row in y.data().chunks_exact(2) {
        assert_eq!(row, &[0.25, -1.0]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[9, 2]);
    let plain = InstanceNorm::new(2).forward(&x).unwrap();
    for c in 0..2 {
        let mean: f64 = plain.data().iter().skip(c).step_by(2).sum::<f64>() / 9.0;
        assert!(mean.abs() <= 1e-10);
    }
    let y = instance_norm_graph(&x, &scale, &shift).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let col: Vec<f64> = x.data().iter().skip(c).step_by(2).copied().collect();
        let m = col.iter().sum::<f64>() / 9.0;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 9.0;
        for (v, xv) in col.iter().enumerate() {
            let e = (xv - m) / (var + 1e-5).sqrt() * scale.data()[c] + shift.data()[c];
            worst = worst.max((y.data()[v * 2 + c] - e).abs());
        }
    }
    assert!(worst <= 1e-12);
    assert!(instance_norm_graph(&Tensor::zeros(&[1, 2]), &scale, &shift).is_err());
}

fn zero_block(block: &mut SpectralResidualBlock) {
    block.visit("", &mut |name, t| {
        if !name.ends_with("scale") {
            *t = Tensor::zeros(t.shape());
        }
    });
}

#[test]
fn residual_block_with_zero_weights_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 12, 0.3)).unwrap();
    let mut block = SpectralResidualBlock::new(&mut rng, 3, 4, 4);
    assert!(block.skip.is_none());
    zero_block(&mut block);
    let x = rand_tensor(&mut rng, &[12, 4]);
    assert_eq!(block.forward(&op, &x).unwrap().data(), x.data());

    let wide = SpectralResidualBlock::new(&mut rng, 3, 4, 6);
    assert!(wide.skip.is_some());
    assert_eq!(wide.forward(&op, &x).unwrap().shape(), &[12, 6]);
}

#[test]
fn residual_block_input_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let op = chebyshev_operator(&random_connected_graph(&mut rng, 8, 0.4)).unwrap();
    let block = SpectralResidualBlock::new(&mut rng, 3, 3, 3);
    let x = rand_tensor(&mut rng, &[8, 3]);
    let w = rand_tensor(&mut rng, &[8, 3]);
    let report = grad_check(
        |inp| Ok(block.forward(&op, &inp[0])?.mul(&w)?.sum()),
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn layers_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 10;
    let a = random_connected_graph(&mut rng, n, 0.3);
    let perm: Arc<Vec<usize>> = {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        Arc::new(p)
    };
    // Row i of the permuted graph is vertex perm[i] of the original.
    let mut inv = vec![0; n];
    perm.iter().enumerate().for_each(|(i, &p)| inv[p] = i);
    // One scaled operator relabeled, so the comparison isolates the layers
    // from the order-dependent roundoff of the lambda_max estimate.
    let op = chebyshev_operator(&a).unwrap();
    let pop = Arc::new(
        SparseMatrix::from_triplets(
            n,
            n,
            op.entries().map(|(r, c, v)| (inv[r], inv[c], v)).collect(),
            true,
        )
        .unwrap(),
    );
    let block = SpectralResidualBlock::new(&mut rng, 3, 3, 5);
    let x = rand_tensor(&mut rng, &[n, 3]);
    let y = block.forward(&op, &x).unwrap();
    let yp = block.forward(&pop, &x.select_rows(&perm).unwrap()).unwrap();
    assert!(max_diff(yp.data(), y.select_rows(&perm).unwrap().data()) <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn laplacian_properties(seed in any::<u64>(), n in 2usize..30, p in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_connected_graph(&mut rng, n, p);
        let l = normalized_laplacian(&a).unwrap();
        prop_assert!(l.is_symmetric());
        for i in 0..n {
            prop_assert_eq!(l.get(i, i), 1.0);
        }
        let ev = eigenvalues(&l);
        prop_assert!(ev[0] >= -1e-10 && ev[n - 1] <= 2.0 + 1e-10);
        let sqrt_d: Vec<f64> = (0..n).map(|i| (a.row(i).count() as f64).sqrt()).collect();
        let r = l.matvec(&sqrt_d);
        prop_assert!(r.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn cheb_is_affine_in_input(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = chebyshev_operator(&random_connected_graph(&mut rng, 12, 0.3)).unwrap();
        let mut conv = ChebConv::new(&mut rng, 3, 2, 3);
        conv.bias = rand_tensor(&mut rng, &[3]);
        let (x, x2) = (rand_tensor(&mut rng, &[12, 2]), rand_tensor(&mut rng, &[12, 2]));
        let lhs = conv.forward(&op, &x.scale(a).add(&x2.scale(b)).unwrap()).unwrap();
        let rhs = conv.forward(&op, &x).unwrap().scale(a)
            .add(&conv.forward(&op, &x2).unwrap().scale(b)).unwrap()
            .sub(&conv.bias.scale(a + b - 1.0)).unwrap();
        prop_assert!(max_diff(lhs.data(), rhs.data()) <= 1e-10);
    }
}

#[test]
fn estimated_lambda_max_bounds_the_operator_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let a = random_connected_graph(&mut rng, 12, 0.3);
        let l = normalized_laplacian(&a).unwrap();
        let top = *eigenvalues(&l).last().unwrap();
        assert!((estimate_lambda_max(&l) - top).abs() <= 1e-6);
        let ev = eigenvalues(&chebyshev_operator(&a).unwrap());
        assert!(ev[0] >= -1.0 - 1e-6 && ev[11] <= 1.0 + 1e-6, "{ev:?}");
    }
}
