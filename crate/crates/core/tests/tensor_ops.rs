use heatnet::gradcheck;
use heatnet::tensor::{Tape, Tensor, Var};
use heatnet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[test]
fn matmul_identity_and_orthogonal() {
    let tape = Tape::new();
    let eye = tape.constant(Tensor::identity(2));
    let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(eye.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let b = tape.constant(Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap());
    assert_eq!(a.matmul(b).unwrap().value().data(), &[0.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let tape = Tape::new();
    let out = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().value();
    let oracle = naive_matmul(&a, &b);
    for (x, y) in out.data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn concat_examples() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.constant(Tensor::vector(vec![3.0]));
    assert_eq!(tape.concat(&[a, b], 0).unwrap().value().data(), &[1.0, 2.0, 3.0]);

    let empty = tape.constant(Tensor::vector(vec![]));
    let four = tape.constant(Tensor::vector(vec![4.0]));
    assert_eq!(tape.concat(&[empty, four], 0).unwrap().value().data(), &[4.0]);
}

#[test]
fn concat_blocks_along_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blocks: Vec<Tensor> = (0..3).map(|_| random(&[2, 2], &mut rng)).collect();
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = blocks.iter().map(|b| tape.constant(b.clone())).collect();
    let out = tape.concat(&vars, 1).unwrap().value();
    assert_eq!(out.shape(), &[2, 6]);
    for r in 0..2 {
        for c in 0..6 {
            assert_eq!(out.at(r, c), blocks[c / 2].at(r, c % 2));
        }
    }
}

#[test]
fn concat_side_mismatch() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 2]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.concat(&[a, b], 1), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_masked_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    assert_eq!(x.softmax_masked(&[true, true]).unwrap().value().data(), &[0.5, 0.5]);

    for v in [-40.0, 0.0, 3.5, 700.0] {
        let x = tape.constant(Tensor::vector(vec![v]));
        assert_eq!(x.softmax_masked(&[true]).unwrap().value().data(), &[1.0]);
    }

    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = x.softmax_masked(&[true, false, true]).unwrap().value();
    let denom = 1f64.exp() + 3f64.exp();
    assert!((y.data()[0] - 1f64.exp() / denom).abs() < 1e-12);
    assert_eq!(y.data()[1], 0.0);
    assert!((y.data()[2] - 3f64.exp() / denom).abs() < 1e-12);

    let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        x.softmax_masked(&[false, false]),
        Err(Error::EmptyNeighborhood(_))
    ));
}

#[test]
fn pointwise_examples() {
    let tape = Tape::new();
    let zero = tape.constant(Tensor::scalar(0.0));
    assert_eq!(zero.sigmoid().item(), Some(0.5));
    let neg = tape.constant(Tensor::scalar(-1.0));
    assert_eq!(neg.leaky_relu(0.2).item(), Some(-0.2));
}

#[test]
fn tanh_gradient_matches_difference_quotient() {
    let x0 = 0.3;
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(x0));
    let grads = tape.backward(x.tanh()).unwrap();
    let analytic = grads.wrt(x).unwrap().data()[0];
    let h = 1e-5;
    let numeric = ((x0 + h).tanh() - (x0 - h).tanh()) / (2.0 * h);
    assert!((analytic - numeric).abs() < 1e-8);
}

#[test]
fn backward_of_linear_form_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[3, 4], &mut rng);
    let x = random(&[4, 1], &mut rng);
    let errs = gradcheck::check(&[a, x], |_, v| Ok(v[0].matmul(v[1])?.sum())).unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

/// Weighted-sum readout so every output entry gets a distinct cotangent.
fn readout<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> heatnet::Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&y.shape(), &mut rng);
    Ok(y.mul(tape.constant(w))?.sum())
}

fn assert_fd(inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> heatnet::Result<Var<'t>>) {
    let errs = gradcheck::check(inputs, f).unwrap();
    for e in errs {
        assert!(e < 1e-6, "relative error {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primitive_gradients_match_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let s = random(&[], &mut rng);
        let bias = random(&[4], &mut rng);
        let v = random(&[5], &mut rng);

        assert_fd(&[a.clone(), b.clone()], |t, x| readout(t, x[0].matmul(x[1])?, 1));
        assert_fd(&[a.clone(), c.clone()], |t, x| readout(t, x[0].add(x[1])?, 2));
        assert_fd(&[a.clone(), c.clone()], |t, x| readout(t, x[0].sub(x[1])?, 3));
        assert_fd(&[a.clone(), c.clone()], |t, x| readout(t, x[0].mul(x[1])?, 4));
        assert_fd(&[a.clone(), s.clone()], |t, x| readout(t, x[0].mul(x[1])?, 5));
        assert_fd(&[a.clone(), bias.clone()], |t, x| readout(t, x[0].add_row(x[1])?, 6));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].sigmoid(), 7));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].tanh(), 8));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].leaky_relu(0.2), 9));
        assert_fd(&[a.clone(), c.clone()], |t, x| readout(t, t.concat(&[x[0], x[1]], 1)?, 10));
        assert_fd(&[a.clone(), c.clone()], |t, x| readout(t, t.concat(&[x[0], x[1]], 0)?, 11));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].gather_rows(&[2, 0, 2])?, 12));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].segment_sum(&[1, 0, 1], 2)?, 13));
        let w3 = random(&[3], &mut rng);
        assert_fd(&[c.clone(), w3], |t, x| readout(t, x[0].scale_rows(x[1])?, 14));
        assert_fd(std::slice::from_ref(&v), |t, x| readout(t, x[0].softmax_masked(&[true, false, true, true, false])?, 15));
        assert_fd(std::slice::from_ref(&v), |t, x| readout(t, t.segment_softmax(x[0], &[0, 1, 0, 1, 1], 2)?, 16));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].reshape(&[2, 6])?, 17));
        assert_fd(std::slice::from_ref(&a), |t, x| readout(t, x[0].scale(-1.5), 18));
    }

    #[test]
    fn conv2d_gradients_match_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random(&[2, 6, 5], &mut rng);
        let kernel = random(&[3, 2, 3, 3], &mut rng);
        let bias = random(&[3], &mut rng);
        assert_fd(&[input, kernel, bias], |t, x| readout(t, x[0].conv2d(x[1], x[2], 2, 1)?, 19));
    }

    #[test]
    fn softmax_normalizes(seed in 0u64..10_000, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..n)] = true;
        let tape = Tape::new();
        let y = tape.constant(Tensor::vector(logits)).softmax_masked(&mask).unwrap().value();
        let total: f64 = y.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (v, m) in y.data().iter().zip(&mask) {
            if !m { prop_assert_eq!(*v, 0.0); }
        }
    }
}
