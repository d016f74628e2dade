use mnet_tensor::{Activation, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

fn assert_close(a: &[f64], b: &[f64], rel: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let denom = x.abs().max(y.abs()).max(1e-12);
        assert!((x - y).abs() / denom <= rel || (x - y).abs() < 1e-12, "element {i}: {x} vs {y}");
    }
}

#[test]
fn add_direct_values() {
    let s = t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap();
    assert_eq!(s.data(), &[4.0, 6.0]);
}

#[test]
fn mul_by_one_is_exact_identity() {
    let x = rand_t(&[3, 5], 1);
    let y = x.mul(&Tensor::ones(&[3, 5])).unwrap();
    assert_eq!(x.data(), y.data());
}

#[test]
fn broadcast_trailing_matches_tiling() {
    let a = rand_t(&[2, 3], 2);
    let b = rand_t(&[3], 3);
    let tiled: Vec<f64> = (0..6).map(|i| b.data()[i % 3]).collect();
    let expect: Vec<f64> = a.data().iter().zip(&tiled).map(|(x, y)| x + y).collect();
    assert_eq!(a.add(&b).unwrap().data(), &expect[..]);
    // Same through the general path: [2,1] against [2,3].
    let col = rand_t(&[2, 1], 4);
    let out = a.sub(&col).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert_eq!(out.at(&[i, j]), a.at(&[i, j]) - col.at(&[i, 0]));
        }
    }
}

#[test]
fn broadcast_rejects_incompatible_shapes_naming_both() {
    let err = rand_t(&[2, 3], 0).add(&rand_t(&[2], 0)).unwrap_err();
    match err {
        TensorError::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2]);
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn matmul_examples() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    let x = rand_t(&[3, 4], 5);
    assert_eq!(x.matmul(&Tensor::eye(4)).unwrap().data(), x.data());
}

#[test]
fn matmul_matches_triple_loop() {
    let a = rand_t(&[4, 5], 6);
    let b = rand_t(&[5, 3], 7);
    let mut expect = vec![0.0; 12];
    for i in 0..4 {
        for j in 0..3 {
            for k in 0..5 {
                expect[i * 3 + j] += a.at(&[i, k]) * b.at(&[k, j]);
            }
        }
    }
    assert_close(a.matmul(&b).unwrap().data(), &expect, 1e-6);
}

#[test]
fn matmul_inner_mismatch() {
    let err = rand_t(&[2, 3], 0).matmul(&rand_t(&[2, 3], 1)).unwrap_err();
    assert!(matches!(err, TensorError::InnerDimension { .. }));
}

#[test]
fn bmm_matches_per_batch_matmul() {
    let a = rand_t(&[3, 2, 4], 8);
    let b = rand_t(&[3, 4, 5], 9);
    let c = a.bmm(&b).unwrap();
    for i in 0..3 {
        let ai = a.narrow(0, i, 1).unwrap().reshape(&[2, 4]).unwrap();
        let bi = b.narrow(0, i, 1).unwrap().reshape(&[4, 5]).unwrap();
        let ci = c.narrow(0, i, 1).unwrap().reshape(&[2, 5]).unwrap();
        assert_close(ci.data(), ai.matmul(&bi).unwrap().data(), 1e-12);
    }
}

#[test]
fn transpose_examples() {
    let x = rand_t(&[2, 3], 10);
    let back = x.transpose(0, 1).unwrap().transpose(0, 1).unwrap();
    assert_eq!(back.data(), x.data());
    let y = rand_t(&[2, 3, 4], 11);
    let ty = y.transpose(0, 1).unwrap();
    assert_eq!(ty.shape(), &[3, 2, 4]);
    for a in 0..2 {
        for c in 0..3 {
            for d in 0..4 {
                assert_eq!(y.at(&[a, c, d]), ty.at(&[c, a, d]));
            }
        }
    }
    assert!(matches!(
        y.transpose(0, 3),
        Err(TensorError::AxisOutOfRange { axis: 3, .. })
    ));
}

#[test]
fn activation_examples() {
    let z = Tensor::<f64>::zeros(&[1]);
    assert_eq!(z.activation(Activation::Sigmoid).unwrap().item(), 0.5);
    let row = Tensor::<f64>::full(&[1, 4], 3.7);
    let s = row.activation(Activation::SoftmaxLastAxis).unwrap();
    for v in s.data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let r = t(&[3], &[-1.0, 0.0, 2.0]).activation(Activation::Relu).unwrap();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn exp_is_clamped() {
    let e = Tensor::<f32>::from_vec(&[2], vec![1000.0, -1000.0]).unwrap().exp();
    assert!(e.all_finite());
    assert_eq!(e.data()[0], 60f32.exp());
}

#[test]
fn tanh_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::<f64>::uniform(&[16], -2.0, 2.0, &mut rng);
    let tape = Tape::new();
    let xt = tape.leaf(&x);
    let g = xt.tanh().sum_all().backward().unwrap().get(&xt).unwrap();
    let h = 1e-5;
    for (i, &v) in x.data().iter().enumerate() {
        let numeric = ((v + h).tanh() - (v - h).tanh()) / (2.0 * h);
        assert!((g.data()[i] - numeric).abs() / numeric.abs().max(1e-8) < 1e-4);
    }
}

/// Direct six-loop cross-correlation.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * cout * ho * wo];
    for n in 0..b {
        for o in 0..cout {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (y * stride + ki) as isize - pad as isize;
                                let ix = (xx * stride + kj) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[n, c, iy as usize, ix as usize]) * w.at(&[o, c, ki, kj]);
                                }
                            }
                        }
                    }
                    out[((n * cout + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_examples() {
    let x = rand_t(&[1, 1, 5, 5], 13);
    let id = Tensor::ones(&[1, 1, 1, 1]);
    assert_eq!(x.conv2d(&id, None, 1, 0).unwrap().data(), x.data());

    let ones = Tensor::<f64>::ones(&[1, 1, 4, 4]);
    let k = Tensor::ones(&[1, 1, 3, 3]);
    let y = ones.conv2d(&k, None, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[9.0; 4]);
}

#[test]
fn conv2d_matches_loop_oracle() {
    for (stride, pad, seed) in [(1, 0, 20), (1, 1, 21), (2, 1, 22), (2, 0, 23)] {
        let x = rand_t(&[2, 3, 6, 5], seed);
        let w = rand_t(&[4, 3, 3, 3], seed + 100);
        let y = x.conv2d(&w, None, stride, pad).unwrap();
        assert_close(y.data(), &conv_oracle(&x, &w, stride, pad), 1e-5);
    }
}

#[test]
fn conv2d_bias_and_errors() {
    let x = rand_t(&[1, 2, 3, 3], 30);
    let w = rand_t(&[2, 2, 1, 1], 31);
    let b = t(&[2], &[1.0, -2.0]);
    let y = x.conv2d(&w, Some(&b), 1, 0).unwrap();
    let y0 = x.conv2d(&w, None, 1, 0).unwrap();
    for (i, (a, c)) in y.data().iter().zip(y0.data()).enumerate() {
        let bias = if i < 9 { 1.0 } else { -2.0 };
        assert!((a - c - bias).abs() < 1e-12);
    }
    let big = rand_t(&[1, 2, 5, 5], 0);
    assert!(matches!(
        x.conv2d(&big, None, 1, 0),
        Err(TensorError::ShapeMismatch { .. }) | Err(TensorError::KernelTooLarge { .. })
    ));
    let k5 = rand_t(&[1, 2, 5, 5], 0);
    assert!(matches!(
        x.conv2d(&k5, None, 1, 0),
        Err(TensorError::KernelTooLarge { kernel: 5, padded: 3 })
    ));
    assert!(x.conv2d(&k5, None, 1, 1).is_ok());
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(&t(&[3], &[0.5, -1.0, 2.0]));
    let g = x.sum_all().backward().unwrap().get(&x).unwrap();
    assert_eq!(g.data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
    let g = x.mul(&x).unwrap().sum_all().backward().unwrap().get(&x).unwrap();
    assert_eq!(g.data(), &[2.0, 4.0]);
}

#[test]
fn backward_error_contract() {
    let tape = Tape::new();
    let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
    assert!(matches!(x.backward(), Err(TensorError::NonScalarLoss(_))));
    assert!(matches!(
        Tensor::<f64>::scalar(1.0).backward(),
        Err(TensorError::DetachedLoss)
    ));
    let loss = x.sum_all();
    loss.backward().unwrap();
    assert!(matches!(loss.backward(), Err(TensorError::AlreadyBackpropagated)));
    tape.reset();
    assert!(matches!(loss.backward(), Err(TensorError::StaleTape)));
    let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
    assert!(x.sum_all().backward().is_ok());
}

#[test]
fn untracked_inputs_get_no_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
    let c = t(&[2], &[3.0, 4.0]);
    let grads = x.mul(&c).unwrap().sum_all().backward().unwrap();
    assert!(grads.get(&c).is_none());
    assert_eq!(grads.get(&x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn shared_subexpressions_accumulate() {
    let tape = Tape::new();
    let x = tape.leaf(&t(&[1], &[3.0]));
    let y = x.mul(&x).unwrap();
    let z = y.add(&y).unwrap().add(&x).unwrap();
    let g = z.sum_all().backward().unwrap().get(&x).unwrap();
    assert_eq!(g.data(), &[13.0]);
}

#[test]
fn forward_is_deterministic() {
    let x = rand_t(&[4, 6], 40);
    let w = rand_t(&[6, 3], 41);
    let a = x.matmul(&w).unwrap().tanh().softmax_last_axis().unwrap();
    let b = x.matmul(&w).unwrap().tanh().softmax_last_axis().unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn concat_stack_narrow_index_select() {
    let a = rand_t(&[2, 3], 50);
    let b = rand_t(&[2, 1], 51);
    let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
    assert_eq!(c.shape(), &[2, 4]);
    assert_eq!(c.narrow(1, 0, 3).unwrap().data(), a.data());
    assert_eq!(c.narrow(1, 3, 1).unwrap().data(), b.data());
    let s = Tensor::stack(&[a.clone(), a.clone()], 0).unwrap();
    assert_eq!(s.shape(), &[2, 2, 3]);
    let f = a.flip(1).unwrap();
    assert_eq!(f.at(&[1, 0]), a.at(&[1, 2]));
    let sel = a.index_select(1, &[2, 2, 0]).unwrap();
    assert_eq!(sel.at(&[0, 1]), a.at(&[0, 2]));
    assert!(a.index_select(1, &[3]).is_err());
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..5)
}

proptest! {
    #[test]
    fn permute_then_inverse_is_identity(shape in shape_strategy(), seed in 0u64..1000) {
        let x = rand_t(&shape, seed);
        let r = shape.len();
        let mut axes: Vec<usize> = (0..r).collect();
        axes.rotate_left(seed as usize % r);
        let mut inverse = vec![0; r];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let back = x.permute(&axes).unwrap().permute(&inverse).unwrap();
        prop_assert_eq!(back.data(), x.data());
        prop_assert_eq!(back.shape(), x.shape());
    }

    #[test]
    fn transpose_is_an_involution(shape in shape_strategy(), a in 0usize..5, b in 0usize..5, seed in 0u64..1000) {
        let x = rand_t(&shape, seed);
        let (a, b) = (a % shape.len(), b % shape.len());
        let back = x.transpose(a, b).unwrap().transpose(a, b).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn reshape_round_trip(shape in shape_strategy(), seed in 0u64..1000) {
        let x = rand_t(&shape, seed);
        let flat = x.reshape(&[x.numel()]).unwrap();
        prop_assert_eq!(flat.reshape(&shape).unwrap(), x);
    }
}
