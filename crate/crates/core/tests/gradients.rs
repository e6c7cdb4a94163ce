//! Tape gradients against central finite differences in f64.

mod common;

use std::time::Instant;

use common::*;
use moemo::model::Variant;
use proptest::prelude::*;

const TOL: f64 = 1e-5;

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..5, 1usize..6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul((m, k, seed) in dims(), n in 1usize..5) {
        let mut r = rng(seed);
        let a = random_tensor(&[m, k], &mut r);
        let b = random_tensor(&[k, n], &mut r);
        let e = op_grad_error(&[a, b], seed, |t, v| t.matmul(v[0], v[1]).unwrap());
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn add_mul_scale((m, n, seed) in dims()) {
        let mut r = rng(seed);
        let a = random_tensor(&[m, n], &mut r);
        let b = random_tensor(&[m, n], &mut r);
        let e = op_grad_error(&[a, b], seed, |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let p = t.mul(s, v[1]).unwrap();
            t.scale(p, -1.7)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn add_bias((m, n, seed) in dims()) {
        let mut r = rng(seed);
        let x = random_tensor(&[m, n], &mut r);
        let b = random_tensor(&[n], &mut r);
        let e = op_grad_error(&[x, b], seed, |t, v| t.add_bias(v[0], v[1]).unwrap());
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn relu_and_gelu((m, n, seed) in dims()) {
        let mut r = rng(seed);
        // Keep ReLU inputs away from the kink.
        let x = random_tensor(&[m, n], &mut r).map(|v| if v.abs() < 1e-3 { 0.5 } else { v * 3.0 });
        let e = op_grad_error(&[x.clone()], seed, |t, v| t.relu(v[0]));
        prop_assert!(e < TOL, "relu {e}");
        let e = op_grad_error(&[x], seed, |t, v| t.gelu(v[0]));
        prop_assert!(e < TOL, "gelu {e}");
    }

    #[test]
    fn layer_norm((m, n, seed) in dims()) {
        // Over two features the output is +-1 whatever the input, so the
        // input gradient is below finite-difference resolution.
        prop_assume!(n >= 3);
        let mut r = rng(seed);
        let x = random_tensor(&[m, n], &mut r);
        let g = random_tensor(&[n], &mut r);
        let b = random_tensor(&[n], &mut r);
        let e = op_grad_error(&[x, g, b], seed, |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap());
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_both_axes((m, n, seed) in dims(), axis in 0usize..2) {
        let mut r = rng(seed);
        let x = random_tensor(&[m, n], &mut r).map(|v| v * 4.0);
        let e = op_grad_error(&[x.clone()], seed, |t, v| t.softmax(v[0], axis).unwrap());
        prop_assert!(e < TOL, "softmax {e}");
        let e = op_grad_error(&[x], seed, |t, v| t.log_softmax(v[0]));
        prop_assert!(e < TOL, "log_softmax {e}");
    }

    #[test]
    fn conv1d((len, c_in, seed) in dims(), c_out in 1usize..4, kernel in 1usize..4) {
        prop_assume!(kernel <= len);
        let mut r = rng(seed);
        let x = random_tensor(&[len, c_in], &mut r);
        let w = random_tensor(&[kernel, c_in, c_out], &mut r);
        let e = op_grad_error(&[x, w], seed, |t, v| t.conv1d(v[0], v[1]).unwrap());
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn concat_narrow((m, n, seed) in dims(), axis in 0usize..2) {
        let mut r = rng(seed);
        let a = random_tensor(&[m, n], &mut r);
        let b = random_tensor(&[m, n], &mut r);
        let e = op_grad_error(&[a, b], seed, |t, v| {
            let c = t.concat(&[v[0], v[1], v[0]], axis).unwrap();
            let size = t.shape(c)[axis];
            t.narrow(c, axis, 1, size - 2).unwrap()
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn mean_sum_transpose_reshape((m, n, seed) in dims(), axis in 0usize..2) {
        let mut r = rng(seed);
        let x = random_tensor(&[m, n], &mut r);
        let e = op_grad_error(&[x.clone()], seed, |t, v| t.mean(v[0], axis).unwrap());
        prop_assert!(e < TOL, "mean {e}");
        let e = op_grad_error(&[x.clone()], seed, |t, v| t.sum(v[0]));
        prop_assert!(e < TOL, "sum {e}");
        let e = op_grad_error(&[x.clone()], seed, |t, v| t.transpose(v[0]).unwrap());
        prop_assert!(e < TOL, "transpose {e}");
        let e = op_grad_error(&[x], seed, |t, v| t.reshape(v[0], &[n * m]).unwrap());
        prop_assert!(e < TOL, "reshape {e}");
    }

    #[test]
    fn cross_entropy((batch, classes, seed) in dims()) {
        prop_assume!(classes >= 2);
        let mut r = rng(seed);
        let x = random_tensor(&[batch, classes], &mut r).map(|v| v * 3.0);
        let targets: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % classes).collect();
        let e = op_grad_error(&[x], seed, |t, v| t.cross_entropy(v[0], &targets).unwrap());
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn transpose_reshape_round_trip((m, n, seed) in dims()) {
        let x = random_tensor(&[m, n], &mut rng(seed));
        prop_assert_eq!(&x.transpose2().unwrap().transpose2().unwrap(), &x);
        prop_assert_eq!(&x.reshape(&[m * n]).unwrap().reshape(&[m, n]).unwrap(), &x);
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let start = Instant::now();
        let (err, name) = model_grad_error(variant);
        assert!(err < TOL, "{variant}: {name} relative error {err:e}");
        assert!(start.elapsed().as_secs() < 60, "{variant} took {:?}", start.elapsed());
    }
}

