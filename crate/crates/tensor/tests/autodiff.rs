use ganprint_tensor::gradcheck::check_gradients;
use ganprint_tensor::ops::conv2d;
use ganprint_tensor::{Graph, ParamSet, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so kinked ops are smooth within +-H.
fn away_from_zero(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Reduces any node to a scalar through fixed random weights.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(g.value(v).dims(), &mut rng);
    let p = g.mul_const(v, w)?;
    g.sum(p)
}

fn assert_check(name: &str, inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let r = check_gradients(inputs, H, build).unwrap();
    assert!(r.max_rel_error <= TOL, "{name}: {r:?}");
    assert!(r.checked > 0);
}

#[test]
fn quadratic_loss_gradient_is_twice_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamSet::<f64>::new();
    params.insert("a", random(&[3, 2], &mut rng));
    params.insert("b", random(&[4], &mut rng));
    let mut g = Graph::new();
    let mut terms = Vec::new();
    for name in ["a", "b"] {
        let p = g.param(&params, name).unwrap();
        let sq = g.mul(p, p).unwrap();
        terms.push(g.sum(sq).unwrap());
    }
    let loss = g.add(terms[0], terms[1]).unwrap();
    let grads = g.backward(loss).unwrap();
    grads.accumulate_into(&g, &mut params).unwrap();
    for name in ["a", "b"] {
        let p = params.get(name).unwrap();
        for (gv, v) in p.grad.data().iter().zip(p.value.data()) {
            assert!((gv - 2.0 * v).abs() < 1e-12);
        }
    }
}

#[test]
fn detached_parameter_gets_zero_gradient() {
    let mut params = ParamSet::<f64>::new();
    params.insert("used", Tensor::full(&[2], 1.5));
    params.insert("unused", Tensor::full(&[2], -1.0));
    let mut g = Graph::new();
    let used = g.param(&params, "used").unwrap();
    let _unused = g.param(&params, "unused").unwrap();
    let loss = g.sum(used).unwrap();
    let grads = g.backward(loss).unwrap();
    grads.accumulate_into(&g, &mut params).unwrap();
    assert_eq!(params.grad("used").unwrap().data(), &[1.0, 1.0]);
    assert_eq!(params.grad("unused").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.input_with_grad(Tensor::zeros(&[2])).unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[2], 1e300)).unwrap();
    assert!(g.mul(x, x).is_err());
}

#[test]
fn gradcheck_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 4), (2, 2, 5)] {
        let x = random(&[2, 6, 6, 2], &mut rng);
        let w = random(&[k, k, 2, 3], &mut rng);
        assert_check("conv2d", &[x, w], |g, v| {
            let y = g.conv2d(v[0], v[1], stride, pad)?;
            project(g, y, 3)
        });
    }
}

#[test]
fn gradcheck_bias_and_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = away_from_zero(&[2, 3, 3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    assert_check("add_bias", &[x.clone(), b], |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        project(g, y, 4)
    });
    assert_check("leaky_relu", &[x], |g, v| {
        let y = g.leaky_relu(v[0], 0.2)?;
        project(g, y, 5)
    });
}

#[test]
fn gradcheck_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    let m = random(&[3, 4], &mut rng);
    assert_check("add", &[a.clone(), b.clone()], |g, v| {
        let y = g.add(v[0], v[1])?;
        project(g, y, 6)
    });
    assert_check("sub", &[a.clone(), b.clone()], |g, v| {
        let y = g.sub(v[0], v[1])?;
        project(g, y, 7)
    });
    assert_check("mul", &[a.clone(), b], |g, v| {
        let y = g.mul(v[0], v[1])?;
        project(g, y, 8)
    });
    assert_check("mul_const", &[a.clone()], |g, v| {
        let y = g.mul_const(v[0], m.clone())?;
        project(g, y, 9)
    });
    assert_check("scale", &[a.clone()], |g, v| {
        let y = g.scale(v[0], -2.5)?;
        project(g, y, 10)
    });
    assert_check("reshape", &[a.clone()], |g, v| {
        let y = g.reshape(v[0], &[2, 6])?;
        project(g, y, 11)
    });
    assert_check("mean", &[a.clone()], |g, v| {
        let y = g.mul(v[0], v[0])?;
        g.mean(y)
    });
    let c = away_from_zero(&[3, 4], &mut rng);
    assert_check("mean_abs", &[c], |g, v| g.mean_abs(v[0]));
}

#[test]
fn gradcheck_resampling_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 8, 6, 2], &mut rng);
    assert_check("avg_pool2d", &[x.clone()], |g, v| {
        let y = g.avg_pool2d(v[0], 2, 2)?;
        project(g, y, 12)
    });
    assert_check("gaussian_downsample", &[x.clone()], |g, v| {
        let y = g.gaussian_downsample(v[0])?;
        project(g, y, 13)
    });
    assert_check("upsample_bilinear", &[x], |g, v| {
        let y = g.upsample_bilinear(v[0])?;
        project(g, y, 14)
    });
}

#[test]
fn gradcheck_matrix_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[5, 4], &mut rng);
    let f = random(&[4, 5], &mut rng);
    assert_check("linear", &[x.clone(), w], |g, v| {
        let y = g.linear(v[0], v[1])?;
        project(g, y, 15)
    });
    assert_check("matmul_nt", &[x.clone(), f.clone()], |g, v| {
        let y = g.matmul_nt(v[0], v[1])?;
        project(g, y, 16)
    });
    assert_check("normalize_rows", &[x.clone()], |g, v| {
        let y = g.normalize_rows(v[0])?;
        project(g, y, 17)
    });
    assert_check("softmax_cross_entropy", &[x], |g, v| g.softmax_cross_entropy(v[0], &[0, 4, 2]));
}

#[test]
fn identical_graphs_give_bit_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = ParamSet::<f32>::new();
        params.insert("k", random(&[3, 3, 3, 4], &mut rng).cast());
        params.insert("b", random(&[4], &mut rng).cast());
        let x: Tensor<f32> = random(&[2, 8, 8, 3], &mut rng).cast();
        let mut g = Graph::new();
        let xv = g.input(x).unwrap();
        let k = g.param(&params, "k").unwrap();
        let b = g.param(&params, "b").unwrap();
        let y = g.conv2d(xv, k, 2, 1).unwrap();
        let y = g.add_bias(y, b).unwrap();
        let y = g.leaky_relu(y, 0.2).unwrap();
        let y = g.reshape(y, &[2, 64]).unwrap();
        let loss = g.softmax_cross_entropy(y, &[3, 9]).unwrap();
        g.backward(loss).unwrap().accumulate_into(&g, &mut params).unwrap();
        params
    };
    let (a, b) = (run(), run());
    for name in ["k", "b"] {
        let bits = |p: &ParamSet<f32>| p.grad(name).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[5, 5, 2], &mut rng);
        let y = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 2], &mut rng);
        let mix = Tensor::new(
            vec![5, 5, 2],
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let lhs = conv2d(&mix, &k, 1, 1).unwrap();
        let cx = conv2d(&x, &k, 1, 1).unwrap();
        let cy = conv2d(&y, &k, 1, 1).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-6);
        }
    }
}
