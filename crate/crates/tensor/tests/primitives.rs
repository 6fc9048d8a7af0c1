use proptest::prelude::*;
use qecbench_tensor::gradcheck::{gradcheck, STEP};
use qecbench_tensor::{Activation, Graph, Propagator, Tensor, TensorError, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::rc::Rc;

const TOL: f64 = 1e-5;

fn random(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Fixed random projection so every output entry contributes to the loss.
fn project<'g>(v: Var<'g>, seed: u64) -> qecbench_tensor::Result<Var<'g>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let weights = random(&mut rng, &v.shape());
    Ok(v.mul(v.graph().constant(weights))?.sum())
}

#[test]
fn matmul_examples() {
    let g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap());
    assert_eq!(a.matmul(b).unwrap().value().data(), &[3.0, 7.0]);

    let mut rng = StdRng::seed_from_u64(1);
    let m = random(&mut rng, &[3, 3]);
    let id = g.constant(Tensor::identity(3));
    let mv = g.constant(m.clone());
    assert_eq!(*id.matmul(mv).unwrap().value(), m);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match a.matmul(b) {
        Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        _ => panic!("expected shape error"),
    }
}

#[test]
fn matmul_gradcheck() {
    let mut rng = StdRng::seed_from_u64(2);
    for (m, k, n) in [(4, 5, 3), (1, 7, 2), (6, 1, 4)] {
        let params = vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])];
        let r = gradcheck(&params, STEP, |_, v| project(v[0].matmul(v[1])?, 9)).unwrap();
        assert!(r.passes(TOL), "{m}x{k}x{n}: {r:?}");
    }
}

#[test]
fn elementwise_gradchecks() {
    let mut rng = StdRng::seed_from_u64(3);
    for shape in [vec![3, 4], vec![2, 2, 5], vec![7]] {
        let params = vec![random(&mut rng, &shape), random(&mut rng, &shape)];
        let checks: Vec<(&str, f64)> = vec![
            (
                "add",
                gradcheck(&params, STEP, |_, v| project(v[0].add(v[1])?, 1))
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "mul",
                gradcheck(&params, STEP, |_, v| project(v[0].mul(v[1])?, 2))
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "tanh",
                gradcheck(&params, STEP, |_, v| project(v[0].tanh(), 3))
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "relu",
                gradcheck(&params, STEP, |_, v| project(v[0].relu(), 4))
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "scale",
                gradcheck(&params, STEP, |_, v| project(v[1].scale(-2.5), 5))
                    .unwrap()
                    .max_rel_error,
            ),
        ];
        for (name, err) in checks {
            assert!(err < TOL, "{name} {shape:?}: {err}");
        }
    }
}

#[test]
fn broadcast_concat_slice_reshape_gradchecks() {
    let mut rng = StdRng::seed_from_u64(4);
    for (rows, a, b) in [(3, 2, 4), (5, 1, 1), (2, 6, 3)] {
        let params = vec![
            random(&mut rng, &[rows, a]),
            random(&mut rng, &[rows, b]),
            random(&mut rng, &[a]),
        ];
        let r = gradcheck(&params, STEP, |_, v| project(v[0].add_broadcast(v[2])?, 6)).unwrap();
        assert!(r.passes(TOL), "broadcast {r:?}");
        let r = gradcheck(&params, STEP, |_, v| {
            let c = Var::concat_last(&[v[0], v[1]])?;
            assert_eq!(c.shape(), vec![rows, a + b]);
            project(c.slice_last(a / 2, b + 1)?, 7)
        })
        .unwrap();
        assert!(r.passes(TOL), "concat/slice {r:?}");
        let r = gradcheck(&params, STEP, |_, v| project(v[1].reshape(&[b, rows])?, 8)).unwrap();
        assert!(r.passes(TOL), "reshape {r:?}");
    }
}

#[test]
fn softmax_examples_and_gradcheck() {
    let g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 4]));
    assert_eq!(x.softmax_rows().unwrap().value().data(), &[0.25; 4]);

    let mut rng = StdRng::seed_from_u64(5);
    let big = g.constant(Tensor::from_fn(&[20, 7], |_| rng.gen_range(-30.0..30.0)));
    let s = big.softmax_rows().unwrap().value();
    for row in s.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(g.constant(Tensor::zeros(&[4])).softmax_rows().is_err());

    for shape in [[3, 4], [1, 6], [5, 2]] {
        let params = vec![random(&mut rng, &shape)];
        let r = gradcheck(&params, STEP, |_, v| project(v[0].softmax_rows()?, 10)).unwrap();
        assert!(r.passes(TOL), "{r:?}");
    }
}

#[test]
fn activation_kinds() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![-2.0, 3.0]).unwrap());
    let relu: Activation = "relu".parse().unwrap();
    assert_eq!(x.activation(relu).unwrap().value().data(), &[0.0, 3.0]);
    let tanh: Activation = "tanh".parse().unwrap();
    assert_eq!(x.activation(tanh).unwrap().value().data()[1], 3f64.tanh());
    assert!(matches!(
        "gelu".parse::<Activation>(),
        Err(TensorError::InvalidParameter(_))
    ));
}

#[test]
fn conv_examples() {
    let g = Graph::new();
    let mut rng = StdRng::seed_from_u64(6);
    let x = random(&mut rng, &[1, 4, 5, 1]);
    let xv = g.constant(x.clone());
    let zero = xv
        .conv2d_same(
            g.constant(Tensor::zeros(&[2, 1, 3, 3])),
            g.constant(Tensor::zeros(&[2])),
        )
        .unwrap();
    assert_eq!(zero.shape(), vec![1, 4, 5, 2]);
    assert!(zero.value().data().iter().all(|&v| v == 0.0));

    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let same = xv
        .conv2d_same(g.constant(k), g.constant(Tensor::zeros(&[1])))
        .unwrap();
    assert_eq!(*same.value(), x);

    let bad = xv.conv2d_same(
        g.constant(Tensor::zeros(&[1, 1, 5, 5])),
        g.constant(Tensor::zeros(&[1])),
    );
    assert!(matches!(bad, Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn conv_gradcheck() {
    let mut rng = StdRng::seed_from_u64(7);
    // [batch, h, w, c_in] -> c_out
    for (b, h, w, ci, co) in [(1, 5, 5, 2, 3), (2, 3, 4, 1, 2), (1, 1, 2, 3, 1)] {
        let params = vec![
            random(&mut rng, &[b, h, w, ci]),
            random(&mut rng, &[co, ci, 3, 3]),
            random(&mut rng, &[co]),
        ];
        let r = gradcheck(&params, STEP, |_, v| {
            project(v[0].conv2d_same(v[1], v[2])?, 11)
        })
        .unwrap();
        assert!(r.passes(TOL), "{r:?}");
    }
}

#[test]
fn pool_and_upsample_examples() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = x.maxpool2().unwrap();
    assert_eq!(p.value().data(), &[4.0]);
    let u = p.upsample2().unwrap();
    assert_eq!(u.shape(), vec![1, 2, 2, 1]);
    assert_eq!(u.value().data(), &[4.0; 4]);
}

#[test]
fn maxpool_tie_routes_gradient_to_first_index() {
    let g = Graph::new();
    let x = g.param(Tensor::new(vec![1, 2, 2, 1], vec![2.0, 2.0, 1.0, 2.0]).unwrap());
    let loss = x.maxpool2().unwrap().sum();
    g.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn pool_upsample_resize_gradchecks() {
    let mut rng = StdRng::seed_from_u64(8);
    for shape in [[1, 6, 6, 1], [2, 4, 6, 2], [1, 5, 3, 3]] {
        let params = vec![random(&mut rng, &shape)];
        let r = gradcheck(&params, STEP, |_, v| project(v[0].maxpool2()?, 12)).unwrap();
        assert!(r.passes(TOL), "pool {shape:?} {r:?}");
        let r = gradcheck(&params, STEP, |_, v| project(v[0].upsample2()?, 13)).unwrap();
        assert!(r.passes(TOL), "upsample {shape:?} {r:?}");
        let r = gradcheck(&params, STEP, |_, v| {
            let padded = v[0].resize_spatial(shape[1] + 3, shape[2] + 1)?;
            project(padded.resize_spatial(shape[1] - 1, shape[2])?, 14)
        })
        .unwrap();
        assert!(r.passes(TOL), "resize {shape:?} {r:?}");
    }
}

#[test]
fn batch_matmul_and_gather_gradchecks() {
    let mut rng = StdRng::seed_from_u64(9);
    for (b, m, k, n) in [(2, 3, 4, 5), (1, 1, 2, 3), (3, 4, 1, 2)] {
        let params = vec![
            random(&mut rng, &[b, m, k]),
            random(&mut rng, &[b, k, n]),
            random(&mut rng, &[b, n, k]),
        ];
        let r = gradcheck(&params, STEP, |_, v| {
            project(v[0].batch_matmul(v[1], false)?, 15)
        })
        .unwrap();
        assert!(r.passes(TOL), "bmm {r:?}");
        let r = gradcheck(&params, STEP, |_, v| {
            project(v[0].batch_matmul(v[2], true)?, 16)
        })
        .unwrap();
        assert!(r.passes(TOL), "bmm_t {r:?}");
    }
    for (rows, width) in [(4, 3), (1, 5), (6, 1)] {
        let params = vec![random(&mut rng, &[rows, width])];
        let idx: Vec<usize> = (0..9).map(|i| (i * 7 + 1) % rows).collect();
        let r = gradcheck(&params, STEP, |_, v| project(v[0].gather_rows(&idx)?, 17)).unwrap();
        assert!(r.passes(TOL), "gather {r:?}");
    }
}

#[test]
fn propagate_gradcheck() {
    let mut rng = StdRng::seed_from_u64(10);
    for (n, blocks, width) in [(4, 2, 3), (3, 1, 1), (5, 3, 2)] {
        let dense: Vec<f64> = (0..n * n)
            .map(|i| {
                if i % 3 == 0 {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let op = Rc::new(Propagator::from_dense(n, &dense));
        let params = vec![random(&mut rng, &[blocks * n, width])];
        let r = gradcheck(&params, STEP, |_, v| project(v[0].propagate(&op)?, 18)).unwrap();
        assert!(r.passes(TOL), "{r:?}");
    }
}

#[test]
fn cross_entropy_examples() {
    let g = Graph::new();
    let uniform = g.constant(Tensor::zeros(&[3, 4]));
    let loss = uniform
        .masked_cross_entropy(&[0, 1, 2], &[true, false, true])
        .unwrap();
    assert!((loss.value().item() - 4f64.ln()).abs() < 1e-12);

    let confident = g.constant(Tensor::new(vec![1, 4], vec![60.0, 0.0, 0.0, 0.0]).unwrap());
    let loss = confident.masked_cross_entropy(&[0], &[true]).unwrap();
    assert!(loss.value().item() < 1e-20);

    assert!(matches!(
        uniform.masked_cross_entropy(&[0, 0, 0], &[false; 3]),
        Err(TensorError::InvalidParameter(_))
    ));
}

#[test]
fn cross_entropy_ignores_masked_rows_bitwise() {
    let mut rng = StdRng::seed_from_u64(11);
    let logits = random(&mut rng, &[5, 4]);
    let mask = [true, false, true, false, true];
    let targets = [0, 1, 3, 2, 1];
    let g = Graph::new();
    let base = g
        .constant(logits.clone())
        .masked_cross_entropy(&targets, &mask)
        .unwrap()
        .value()
        .item();
    let mut perturbed = logits;
    for r in [1, 3] {
        for c in 0..4 {
            perturbed.data_mut()[r * 4 + c] = rng.gen_range(-100.0..100.0);
        }
    }
    let again = g
        .constant(perturbed)
        .masked_cross_entropy(&targets, &mask)
        .unwrap()
        .value()
        .item();
    assert_eq!(base.to_bits(), again.to_bits());
}

#[test]
fn cross_entropy_gradcheck() {
    let mut rng = StdRng::seed_from_u64(12);
    for rows in [3, 6, 9] {
        let params = vec![random(&mut rng, &[rows, 4])];
        let targets: Vec<usize> = (0..rows).map(|r| r % 4).collect();
        let mask: Vec<bool> = (0..rows).map(|r| r % 3 != 1).collect();
        let r = gradcheck(&params, STEP, |_, v| {
            v[0].masked_cross_entropy(&targets, &mask)
        })
        .unwrap();
        assert!(r.passes(TOL), "{r:?}");
    }
}

#[test]
fn backward_examples() {
    let g = Graph::new();
    let w = g.param(Tensor::from_fn(&[2, 3], |i| i as f64 - 1.0));
    g.backward(w.sum()).unwrap();
    assert_eq!(w.grad().unwrap().data(), &[1.0; 6]);

    let g = Graph::new();
    let init = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5 - 1.0);
    let w = g.param(init.clone());
    g.backward(w.mul(w).unwrap().sum()).unwrap();
    assert_eq!(w.grad().unwrap(), init.map(|v| 2.0 * v));
}

#[test]
fn backward_twice_requires_reset() {
    let g = Graph::new();
    let w = g.param(Tensor::full(&[2], 1.5));
    let loss = w.sum();
    g.backward(loss).unwrap();
    assert_eq!(g.backward(loss), Err(TensorError::AlreadyBackpropagated));
    g.reset_grads();
    g.backward(loss).unwrap();
    assert_eq!(w.grad().unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_from_constant_has_no_trace() {
    let g = Graph::new();
    let c = g.constant(Tensor::full(&[3], 2.0));
    assert_eq!(g.backward(c.sum()), Err(TensorError::NoTrace));
}

#[test]
fn forward_is_deterministic() {
    let mut rng = StdRng::seed_from_u64(13);
    let x = random(&mut rng, &[2, 5, 5, 3]);
    let k = random(&mut rng, &[4, 3, 3, 3]);
    let b = random(&mut rng, &[4]);
    let run = || {
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .conv2d_same(g.constant(k.clone()), g.constant(b.clone()))
            .unwrap()
            .maxpool2()
            .unwrap();
        (*y.value()).clone()
    };
    let (a, c) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(c.data())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

proptest! {
    #[test]
    fn spatial_shape_laws(h in 1usize..=16, w in 1usize..=16, c in 1usize..=3) {
        let g = Graph::new();
        let x = g.constant(Tensor::full(&[1, h, w, c], 0.5));
        let k = g.constant(Tensor::zeros(&[2, c, 3, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        prop_assert_eq!(x.conv2d_same(k, b).unwrap().shape(), vec![1, h, w, 2]);
        let pooled = x.maxpool2().unwrap();
        prop_assert_eq!(pooled.shape(), vec![1, h.div_ceil(2), w.div_ceil(2), c]);
        let up = pooled.upsample2().unwrap();
        prop_assert_eq!(up.shape(), vec![1, 2 * h.div_ceil(2), 2 * w.div_ceil(2), c]);
        prop_assert_eq!(up.resize_spatial(h, w).unwrap().shape(), vec![1, h, w, c]);
    }

    #[test]
    fn concat_shape_law(n in 1usize..8, a in 1usize..6, b in 1usize..6) {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[n, a]));
        let y = g.constant(Tensor::zeros(&[n, b]));
        prop_assert_eq!(Var::concat_last(&[x, y]).unwrap().shape(), vec![n, a + b]);
    }
}
