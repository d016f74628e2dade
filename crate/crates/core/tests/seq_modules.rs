mod common;

use common::*;
use mnet_core::nn::{Linear, Params};
use mnet_core::seq::{ConvLstm, Lstm, SLstmBlock, SeqConfig, SeqKind, SeqModule, Site, TransformerBlock, XBlockKind, XLstm, S6};
use mnet_core::Tensor;
use proptest::prelude::*;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `x·w + b` for one row.
fn affine(x: &[f64], lin: &Linear<f64>) -> Vec<f64> {
    let (n_in, n_out) = (lin.in_features(), lin.out_features());
    let w = lin.w.data();
    (0..n_out)
        .map(|j| {
            let b = lin.b.as_ref().map_or(0.0, |b| b.data()[j]);
            b + (0..n_in).map(|i| x[i] * w[i * n_out + j]).sum::<f64>()
        })
        .collect()
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i])
        .collect()
}

/// Plain-loop LSTM over `[L,B,D]`.
fn lstm_oracle(m: &Lstm<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (l, b, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hd = m.hidden();
    let r = m.recurrent.data();
    let mut out = vec![0.0; l * b * d];
    for lane in 0..b {
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        for t in 0..l {
            let xt = &x.data()[(t * b + lane) * d..(t * b + lane + 1) * d];
            let mut g = affine(xt, &m.input);
            for j in 0..4 * hd {
                g[j] += (0..hd).map(|k| h[k] * r[k * 4 * hd + j]).sum::<f64>();
            }
            for u in 0..hd {
                let (i, f, gg, o) = (sig(g[u]), sig(g[hd + u]), g[2 * hd + u].tanh(), sig(g[3 * hd + u]));
                c[u] = f * c[u] + i * gg;
                h[u] = o * c[u].tanh();
            }
            let y = affine(&h, &m.output);
            out[(t * b + lane) * d..(t * b + lane + 1) * d].copy_from_slice(&y);
        }
    }
    out
}

#[test]
fn lstm_zero_parameters_give_zero_output() {
    let mut m = Lstm::<f64>::new(5, 4, &mut rng(0));
    zero_params(&mut m);
    let y = m.forward(&rand_t(&[3, 2, 5], -2.0, 2.0, 1)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_step_matches_hand_rolled_cell() {
    let m = Lstm::<f64>::new(3, 4, &mut rng(2));
    let x = rand_t(&[1, 2, 3], -1.0, 1.0, 3);
    let y = m.forward(&x).unwrap();
    assert!(max_abs_diff(y.data(), &lstm_oracle(&m, &x)) < 1e-12);
}

#[test]
fn lstm_sequence_matches_loop_oracle() {
    let m = Lstm::<f64>::new(3, 5, &mut rng(4));
    let x = rand_t(&[6, 3, 3], -1.5, 1.5, 5);
    assert!(max_abs_diff(m.forward(&x).unwrap().data(), &lstm_oracle(&m, &x)) < 1e-12);
}

#[test]
fn lstm_forget_bias_starts_at_one_above_the_others() {
    let m = Lstm::<f64>::new(4, 3, &mut rng(6));
    let b = m.input.b.as_ref().unwrap().data();
    let bound = 1.0 / 2.0;
    assert!(b[3..6].iter().all(|&v| v > 1.0 - bound && v < 1.0 + bound));
    assert!(b[..3].iter().all(|&v| v.abs() <= bound));
}

#[test]
fn convlstm_with_unit_kernels_is_a_per_pixel_lstm() {
    let (c, h, w, hd, l, b) = (2, 2, 3, 3, 4, 2);
    let conv = ConvLstm::<f64>::new(c, h, w, hd, 1, &mut rng(7)).unwrap();
    let tr = |t: &Tensor<f64>, rows: usize, cols: usize| t.reshape(&[rows, cols]).unwrap().transpose(0, 1).unwrap();
    let lstm = Lstm {
        input: Linear {
            w: tr(&conv.input.w, 4 * hd, c),
            b: conv.input.b.clone(),
        },
        recurrent: tr(&conv.recurrent.w, 4 * hd, hd),
        output: Linear {
            w: tr(&conv.output.w, c, hd),
            b: conv.output.b.clone(),
        },
    };
    let x = rand_t(&[l, b, c * h * w], -1.0, 1.0, 8);
    let y_conv = conv.forward(&x).unwrap();
    let pixels = x
        .reshape(&[l, b, c, h * w])
        .unwrap()
        .permute(&[0, 1, 3, 2])
        .unwrap()
        .reshape(&[l, b * h * w, c])
        .unwrap();
    let y_lstm = lstm
        .forward(&pixels)
        .unwrap()
        .reshape(&[l, b, h * w, c])
        .unwrap()
        .permute(&[0, 1, 3, 2])
        .unwrap()
        .reshape(&[l, b, c * h * w])
        .unwrap();
    assert!(max_abs_diff(y_conv.data(), y_lstm.data()) < 1e-12);
}

#[test]
fn convlstm_zero_parameters_and_shape_errors() {
    let mut m = ConvLstm::<f64>::new(1, 3, 3, 2, 3, &mut rng(9)).unwrap();
    zero_params(&mut m);
    let y = m.forward(&rand_t(&[2, 2, 9], -1.0, 1.0, 10)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(m.forward(&rand_t(&[2, 2, 8], -1.0, 1.0, 10)).is_err());
    assert!(ConvLstm::<f64>::new(1, 3, 3, 2, 2, &mut rng(9)).is_err());
}

#[test]
fn slstm_zero_parameters_give_zero_output() {
    let mut b = SLstmBlock::<f64>::new(4, &mut rng(11));
    zero_params(&mut b);
    let y = b.forward(&rand_t(&[3, 2, 4], -1.0, 1.0, 12)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn xlstm_with_zeroed_blocks_is_the_identity() {
    let mut m = XLstm::<f64>::new(4, &[XBlockKind::Slstm, XBlockKind::Mlstm], &mut rng(13)).unwrap();
    zero_params(&mut m);
    let x = rand_t(&[3, 2, 4], -1.0, 1.0, 14);
    assert_eq!(m.forward(&x).unwrap().data(), x.data());
    assert!(XLstm::<f64>::new(4, &[], &mut rng(13)).is_err());
}

fn identity_output(d: usize) -> Linear<f64> {
    Linear {
        w: Tensor::eye(d),
        b: Some(Tensor::zeros(&[d])),
    }
}

#[test]
fn slstm_first_step_matches_scalar_cell() {
    let d = 3;
    let mut b = SLstmBlock::<f64>::new(d, &mut rng(15));
    b.output = identity_output(d);
    let x = rand_t(&[1, 2, d], -1.0, 1.0, 16);
    let y = b.forward(&x).unwrap();
    for lane in 0..2 {
        let g = affine(&x.data()[lane * d..(lane + 1) * d], &b.input);
        for u in 0..d {
            // c = tanh z, n = 1 at the first step.
            let h = sig(g[3 * d + u]) * g[u].tanh();
            assert!((y.data()[lane * d + u] - h).abs() < 1e-12);
        }
    }
}

#[test]
fn slstm_normalized_state_is_bounded_by_the_cell_input() {
    // c/n is a convex combination of tanh(z) values, so |h| <= 1.
    for seed in 0..5 {
        let d = 4;
        let mut b = SLstmBlock::<f64>::new(d, &mut rng(100 + seed));
        b.output = identity_output(d);
        b.input = Linear {
            w: b.input.w.scale(3.0),
            b: b.input.b.clone(),
        };
        let y = b.forward(&rand_t(&[12, 3, d], -3.0, 3.0, 200 + seed)).unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|v| v.abs() <= 1.0 + 1e-12), "seed {seed}");
    }
}

/// Scalar-loop pre-norm Transformer block with bidirectional attention.
fn transformer_oracle(m: &TransformerBlock<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (l, b, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (h, dh) = (m.heads, d / m.heads);
    let g1 = m.norm1.gamma.data();
    let b1 = m.norm1.beta.data();
    let g2 = m.norm2.gamma.data();
    let b2 = m.norm2.beta.data();
    let mut out = vec![0.0; l * b * d];
    for lane in 0..b {
        let xs: Vec<Vec<f64>> = (0..l)
            .map(|t| {
                (0..d)
                    .map(|j| x.data()[(t * b + lane) * d + j] + m.pos.data()[t * d + j])
                    .collect()
            })
            .collect();
        let qkv: Vec<Vec<f64>> = xs.iter().map(|v| affine(&layer_norm(v, g1, b1), &m.qkv)).collect();
        for t in 0..l {
            let mut mixed = vec![0.0; d];
            for head in 0..h {
                let q = &qkv[t][head * dh..(head + 1) * dh];
                let scores: Vec<f64> = (0..l)
                    .map(|s| {
                        let k = &qkv[s][d + head * dh..d + (head + 1) * dh];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for s in 0..l {
                    for j in 0..dh {
                        mixed[head * dh + j] += e[s] / z * qkv[s][2 * d + head * dh + j];
                    }
                }
            }
            let att = affine(&mixed, &m.proj);
            let y: Vec<f64> = (0..d).map(|j| xs[t][j] + att[j]).collect();
            let hidden: Vec<f64> = affine(&layer_norm(&y, g2, b2), &m.fc1).into_iter().map(|v| v.max(0.0)).collect();
            let mlp = affine(&hidden, &m.fc2);
            for j in 0..d {
                out[(t * b + lane) * d + j] = y[j] + mlp[j];
            }
        }
    }
    out
}

#[test]
fn transformer_matches_scalar_loop_oracle() {
    let mut m = TransformerBlock::<f64>::new(4, 2, 2, 8, &mut rng(17)).unwrap();
    m.norm1.gamma = rand_t(&[4], 0.5, 1.5, 18);
    m.norm1.beta = rand_t(&[4], -0.5, 0.5, 19);
    m.norm2.gamma = rand_t(&[4], 0.5, 1.5, 20);
    m.norm2.beta = rand_t(&[4], -0.5, 0.5, 21);
    let x = rand_t(&[3, 1, 4], -1.0, 1.0, 22);
    let y = m.forward(&x).unwrap();
    assert!(max_rel_diff(y.data(), &transformer_oracle(&m, &x)) < 1e-5);
    let x2 = rand_t(&[5, 3, 4], -1.0, 1.0, 23);
    assert!(max_rel_diff(m.forward(&x2).unwrap().data(), &transformer_oracle(&m, &x2)) < 1e-5);
}

#[test]
fn transformer_single_step_attends_fully_to_itself() {
    let m = TransformerBlock::<f64>::new(6, 3, 2, 4, &mut rng(24)).unwrap();
    let x = m.embed(&rand_t(&[1, 2, 6], -1.0, 1.0, 25)).unwrap();
    let xn = m.norm1.forward(&x).unwrap();
    let (att, weights) = m.attention(&xn).unwrap();
    assert!(weights.data().iter().all(|&w| w == 1.0));
    // With one step the mixed values are just V.
    let v = m.qkv.forward(&xn).unwrap().narrow(2, 12, 6).unwrap();
    let expect = m.proj.forward(&v).unwrap();
    assert!(max_abs_diff(att.data(), expect.data()) < 1e-12);
}

#[test]
fn transformer_attention_rows_sum_to_one() {
    let m = TransformerBlock::<f64>::new(8, 2, 2, 16, &mut rng(26)).unwrap();
    let x = m.embed(&rand_t(&[7, 3, 8], -2.0, 2.0, 27)).unwrap();
    let (_, w) = m.attention(&m.norm1.forward(&x).unwrap()).unwrap();
    for row in w.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn transformer_rejects_bad_heads_and_long_sequences() {
    assert!(TransformerBlock::<f64>::new(6, 4, 2, 4, &mut rng(0)).is_err());
    let m = TransformerBlock::<f64>::new(4, 2, 2, 3, &mut rng(0)).unwrap();
    assert!(m.forward(&rand_t(&[4, 1, 4], -1.0, 1.0, 1)).is_err());
}

/// Per-step S6 recurrence from the raw parameters.
fn s6_oracle(m: &S6<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (l, b, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = m.state_dim();
    let mut out = vec![0.0; l * b * d];
    for lane in 0..b {
        let mut h = vec![vec![0.0; n]; d];
        for t in 0..l {
            let xt = &x.data()[(t * b + lane) * d..(t * b + lane + 1) * d];
            let delta: Vec<f64> = affine(&affine(xt, &m.dt_down), &m.dt_up)
                .into_iter()
                .map(|p| softplus(p.max(-60.0)))
                .collect();
            let bt = affine(xt, &m.b_proj);
            let ct = affine(xt, &m.c_proj);
            for ch in 0..d {
                let mut y = m.d_skip.data()[ch] * xt[ch];
                for s in 0..n {
                    let a = -m.a_log.data()[ch * n + s].exp();
                    h[ch][s] = (delta[ch] * a).exp() * h[ch][s] + delta[ch] * bt[s] * xt[ch];
                    y += ct[s] * h[ch][s];
                }
                out[(t * b + lane) * d + ch] = y;
            }
        }
    }
    out
}

#[test]
fn s6_with_zero_readout_passes_input_through() {
    let mut m = S6::<f64>::new(6, 4, None, &mut rng(30));
    m.c_proj = Linear::zeros(6, 4, true);
    let x = rand_t(&[5, 2, 6], -1.0, 1.0, 31);
    assert_eq!(m.forward(&x).unwrap().data(), x.data());
}

#[test]
fn scan_with_zero_transition_accumulates_inputs() {
    let (l, b, d) = (6, 2, 3);
    let x = rand_t(&[l, b, d], -1.0, 1.0, 32);
    let delta = rand_t(&[l, b, d], 0.1, 1.0, 33);
    let bb = rand_t(&[l, b, 1], -1.0, 1.0, 34);
    let c = rand_t(&[l, b, 1], -1.0, 1.0, 35);
    let y = x.selective_scan(&delta, &Tensor::zeros(&[d, 1]), &bb, &c).unwrap();
    for lane in 0..b {
        for ch in 0..d {
            let mut sum = 0.0;
            for t in 0..l {
                let i = (t * b + lane) * d + ch;
                sum += delta.data()[i] * bb.data()[t * b + lane] * x.data()[i];
                assert!((y.data()[i] - c.data()[t * b + lane] * sum).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn s6_matches_step_loop_oracle() {
    let m = S6::<f64>::new(5, 3, Some(2), &mut rng(36));
    let x = rand_t(&[7, 3, 5], -1.0, 1.0, 37);
    assert!(max_rel_diff(m.forward(&x).unwrap().data(), &s6_oracle(&m, &x)) < 1e-5);
}

#[test]
fn s6_discretized_transition_is_contracting() {
    let m = S6::<f64>::new(4, 5, None, &mut rng(38));
    let p = m.inputs(&rand_t(&[3, 2, 4], -2.0, 2.0, 39)).unwrap();
    assert!(p.delta.data().iter().all(|&v| v > 0.0));
    assert!(p.a.data().iter().all(|&v| v < 0.0));
    for &dt in p.delta.data() {
        for &a in p.a.data() {
            assert!((dt * a).exp() < 1.0);
        }
    }
}

fn cfg(kind: SeqKind) -> SeqConfig {
    SeqConfig {
        hidden: 6,
        conv_channels: 2,
        state_dim: 4,
        ..SeqConfig::with_kind(kind)
    }
}

/// `D = 8` as a `2 × 2 × 2` grid for ConvLSTM.
fn site() -> Site {
    Site::spatial(2, 2, 2, 16)
}

#[test]
fn dispatch_matches_the_direct_module() {
    let mut r1 = rng(40);
    let module = SeqModule::<f64>::build(&cfg(SeqKind::Lstm), site(), &mut r1).unwrap();
    let SeqModule::Lstm(inner) = &module else { panic!("wrong variant") };
    let x = rand_t(&[4, 2, 8], -1.0, 1.0, 41);
    assert_eq!(module.forward(&x).unwrap().data(), inner.forward(&x).unwrap().data());
    assert_eq!(module.kind(), Some(SeqKind::Lstm));
}

#[test]
fn every_kind_preserves_shape() {
    let x = rand_t(&[4, 2, 8], -1.0, 1.0, 42);
    for kind in SeqKind::ALL {
        let m = SeqModule::<f64>::build(&cfg(kind), site(), &mut rng(43)).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 2, 8], "{kind}");
        assert!(y.all_finite(), "{kind}");
    }
}

#[test]
fn rank_errors_are_reported() {
    let m = SeqModule::<f64>::build(&cfg(SeqKind::Mamba), site(), &mut rng(0)).unwrap();
    assert!(m.forward(&rand_t(&[4, 8], -1.0, 1.0, 0)).is_err());
}

#[test]
fn every_kind_passes_gradcheck() {
    let x = rand_t(&[3, 2, 8], -1.0, 1.0, 44);
    for kind in SeqKind::ALL {
        let mut m = SeqModule::<f64>::build(&cfg(kind), site(), &mut rng(45)).unwrap();
        if let SeqModule::Mamba(s6) = &mut m {
            // Initial step sizes are ~1e-2, which leaves the `a_log` gradients
            // below the finite-difference noise floor; use unit-scale steps.
            s6.dt_up.b = Some(Tensor::zeros(&[8]));
        }
        let report = gradcheck_module(&m, &x, |m, x| m.forward(x), 1e-5, Some(120));
        assert!(report.passes(1e-4), "{kind}: {report:?}");
    }
}

fn perturb_after(x: &Tensor<f64>, t: usize, seed: u64) -> Tensor<f64> {
    let s = x.shape();
    let noise = rand_t(s, -3.0, 3.0, seed);
    let step = s[1] * s[2];
    let mut v = x.to_vec();
    for (i, e) in v.iter_mut().enumerate().skip((t + 1) * step) {
        *e = noise.data()[i];
    }
    Tensor::from_vec(s, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_are_preserved_for_random_configs(
        kind_ix in 0usize..5,
        l in 1usize..6,
        b in 1usize..4,
        seed in 0u64..1000,
    ) {
        let kind = SeqKind::ALL[kind_ix];
        let m = SeqModule::<f64>::build(&cfg(kind), site(), &mut rng(seed)).unwrap();
        let y = m.forward(&rand_t(&[l, b, 8], -1.0, 1.0, seed + 1)).unwrap();
        prop_assert_eq!(y.shape(), &[l, b, 8]);
    }

    #[test]
    fn recurrent_kinds_are_causal(kind_ix in 0usize..4, t in 0usize..4, seed in 0u64..1000) {
        let kind = [SeqKind::Lstm, SeqKind::ConvLstm, SeqKind::XLstm, SeqKind::Mamba][kind_ix];
        prop_assert!(kind.is_causal());
        let m = SeqModule::<f64>::build(&cfg(kind), site(), &mut rng(seed)).unwrap();
        let x = rand_t(&[5, 2, 8], -1.0, 1.0, seed + 7);
        let y1 = m.forward(&x).unwrap();
        let y2 = m.forward(&perturb_after(&x, t, seed + 9)).unwrap();
        let keep = (t + 1) * 16;
        prop_assert_eq!(&y1.data()[..keep], &y2.data()[..keep]);
    }

    #[test]
    fn transformer_is_not_causal(t in 0usize..4, seed in 0u64..1000) {
        prop_assert!(!SeqKind::Transformer.is_causal());
        let m = SeqModule::<f64>::build(&cfg(SeqKind::Transformer), site(), &mut rng(seed)).unwrap();
        let x = rand_t(&[5, 2, 8], -1.0, 1.0, seed + 7);
        let y1 = m.forward(&x).unwrap();
        let y2 = m.forward(&perturb_after(&x, t, seed + 9)).unwrap();
        let keep = (t + 1) * 16;
        prop_assert_ne!(&y1.data()[..keep], &y2.data()[..keep]);
    }

    #[test]
    fn lanes_are_independent(kind_ix in 0usize..5, seed in 0u64..1000) {
        let kind = SeqKind::ALL[kind_ix];
        let m = SeqModule::<f64>::build(&cfg(kind), site(), &mut rng(seed)).unwrap();
        let x = rand_t(&[4, 3, 8], -1.0, 1.0, seed + 3);
        let perm = [2usize, 0, 1];
        let px = x.index_select(1, &perm).unwrap();
        let y = m.forward(&x).unwrap().index_select(1, &perm).unwrap();
        let py = m.forward(&px).unwrap();
        prop_assert!(max_abs_diff(y.data(), py.data()) < 1e-12);
    }
}

#[test]
fn param_paths_are_stable_and_unique() {
    let m = SeqModule::<f64>::build(&cfg(SeqKind::XLstm), site(), &mut rng(50)).unwrap();
    let names: Vec<String> = m.named_params().into_iter().map(|(k, _)| k).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(names.iter().any(|n| n.starts_with("0.slstm.")));
}
