use super::*;
use crate::error::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t1(data: &[f64]) -> Tensor {
    Tensor::new(Shape::d1(data.len()), data.to_vec()).unwrap()
}

fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(Shape::d2(rows, cols), data.to_vec()).unwrap()
}

fn t3(a: usize, b: usize, c: usize, data: &[f64]) -> Tensor {
    Tensor::new(Shape::d3(a, b, c), data.to_vec()).unwrap()
}

fn randu(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "coord {i}: got {g}, want {w}");
    }
}

// ── conv1d: spec examples ───────────────────────────────────────────────

#[test]
fn conv1d_causal_d1_matches_direct_sum() {
    let mut tape = Tape::new();
    let x = t2(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let w = t3(2, 1, 1, &[1.0, 1.0]);
    let b = t1(&[0.0]);
    let y = tape.conv1d(&x, &w, &b, &ConvSpec::causal(2, 1, 1)).unwrap();
    assert_close(y.data(), &[1.0, 3.0, 5.0, 7.0], 0.0);
}

#[test]
fn conv1d_causal_d2_matches_direct_sum() {
    let mut tape = Tape::new();
    let x = t2(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let w = t3(2, 1, 1, &[1.0, 1.0]);
    let b = t1(&[0.0]);
    let y = tape.conv1d(&x, &w, &b, &ConvSpec::causal(2, 2, 1)).unwrap();
    assert_close(y.data(), &[1.0, 2.0, 4.0, 6.0], 0.0);
}

#[test]
fn conv1d_identity_kernel_is_identity() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = t2(9, 3, &randu(&mut rng, 27));
    let mut w = vec![0.0; 9];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let w = t3(1, 3, 3, &w);
    let b = t1(&[0.0, 0.0, 0.0]);
    let y = tape.conv1d(&x, &w, &b, &ConvSpec::causal(1, 1, 3)).unwrap();
    assert_close(y.data(), x.data(), 0.0);
}

#[test]
fn conv1d_shape_errors_name_the_axis() {
    let mut tape = Tape::new();
    let x = t2(4, 2, &[0.0; 8]);
    let w = t3(3, 1, 1, &[0.0; 3]);
    let b = t1(&[0.0]);
    let err = tape.conv1d(&x, &w, &b, &ConvSpec::causal(3, 1, 1)).unwrap_err();
    match err {
        Error::Shape { axis, .. } => assert_eq!(axis, "in_channels"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn conv1d_causality_perturbation_never_leaks_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xv = randu(&mut rng, 32 * 2);
    let wv = randu(&mut rng, 3 * 2 * 2);
    let bv = randu(&mut rng, 2);
    let spec = ConvSpec::causal(3, 4, 2);

    let run = |xs: &[f64]| {
        let mut tape = Tape::new();
        let y = tape
            .conv1d(&t2(32, 2, xs), &t3(3, 2, 2, &wv), &t1(&bv), &spec)
            .unwrap();
        y.data().to_vec()
    };
    let base = run(&xv);
    let t0 = 17;
    let mut perturbed = xv.clone();
    for v in perturbed[t0 * 2..].iter_mut() {
        *v += 0.5;
    }
    let shifted = run(&perturbed);
    // outputs strictly before the perturbed suffix are bit-identical
    assert_eq!(&base[..t0 * 2], &shifted[..t0 * 2]);
    assert_ne!(&base[t0 * 2..], &shifted[t0 * 2..]);
}

// ── conv1d_transpose ────────────────────────────────────────────────────

#[test]
fn conv1d_transpose_expand_and_scale() {
    let mut tape = Tape::new();
    let x = t2(2, 1, &[5.0, 7.0]);
    let w = t3(2, 1, 1, &[1.0, 1.0]);
    let b = t1(&[0.0]);
    let y = tape.conv1d_transpose(&x, &w, &b, 2).unwrap();
    assert_close(y.data(), &[5.0, 5.0, 7.0, 7.0], 0.0);

    let w = t3(2, 1, 1, &[2.0, 3.0]);
    let y = tape.conv1d_transpose(&x, &w, &b, 2).unwrap();
    assert_close(y.data(), &[10.0, 15.0, 14.0, 21.0], 0.0);
}

#[test]
fn conv1d_transpose_doubles_table_scale_length() {
    let mut tape = Tape::new();
    let x = Tensor::zeros(Shape::d2(40, 1024));
    let w = Tensor::zeros(Shape::d3(2, 1024, 1024));
    let b = Tensor::zeros(Shape::d1(1024));
    let y = tape.conv1d_transpose(&x, &w, &b, 2).unwrap();
    assert_eq!(y.shape(), Shape::d2(80, 1024));
}

#[test]
fn conv1d_transpose_rejects_stride_kernel_mismatch() {
    let mut tape = Tape::new();
    let x = t2(2, 1, &[1.0, 2.0]);
    let w = t3(2, 1, 1, &[1.0, 1.0]);
    let b = t1(&[0.0]);
    assert!(matches!(
        tape.conv1d_transpose(&x, &w, &b, 3),
        Err(Error::Unsupported(_))
    ));
}

// ── max_pool2 ───────────────────────────────────────────────────────────

#[test]
fn max_pool2_pairwise_max() {
    let mut tape = Tape::new();
    let (y, padded) = tape.max_pool2(&t2(4, 1, &[1.0, 3.0, 2.0, 5.0])).unwrap();
    assert!(!padded);
    assert_close(y.data(), &[3.0, 5.0], 0.0);
}

#[test]
fn max_pool2_halves_table_scale_length() {
    let mut tape = Tape::new();
    let (y, _) = tape.max_pool2(&Tensor::zeros(Shape::d2(2560, 64))).unwrap();
    assert_eq!(y.shape(), Shape::d2(1280, 64));
}

#[test]
fn max_pool2_constant_signal_stays_constant() {
    let mut tape = Tape::new();
    let (y, _) = tape.max_pool2(&t2(6, 2, &[4.0; 12])).unwrap();
    assert_close(y.data(), &[4.0; 6], 0.0);
}

#[test]
fn max_pool2_odd_length_replicates_last_sample() {
    let mut tape = Tape::new();
    let (y, padded) = tape.max_pool2(&t2(3, 1, &[1.0, 2.0, 9.0])).unwrap();
    assert!(padded);
    assert_close(y.data(), &[2.0, 9.0], 0.0);
}

// ── layer_norm ──────────────────────────────────────────────────────────

#[test]
fn layer_norm_zero_variance_guard() {
    let mut tape = Tape::new();
    let x = t2(2, 3, &[5.0; 6]);
    let y = tape
        .layer_norm(&x, &t1(&[1.0, 1.0, 1.0]), &t1(&[0.0, 0.0, 0.0]), 1e-5)
        .unwrap();
    assert_close(y.data(), &[0.0; 6], 0.0);
}

#[test]
fn layer_norm_two_channel_row() {
    let mut tape = Tape::new();
    let x = t2(1, 2, &[1.0, 3.0]);
    let y = tape.layer_norm(&x, &t1(&[1.0, 1.0]), &t1(&[0.0, 0.0]), 1e-12).unwrap();
    // mean 2, population std 1
    assert_close(y.data(), &[-1.0, 1.0], 1e-5);
}

#[test]
fn layer_norm_zero_gain_broadcasts_bias() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = t2(4, 2, &randu(&mut rng, 8));
    let y = tape.layer_norm(&x, &t1(&[0.0, 0.0]), &t1(&[2.5, -1.0]), 1e-5).unwrap();
    assert_close(y.data(), &[2.5, -1.0, 2.5, -1.0, 2.5, -1.0, 2.5, -1.0], 0.0);
}

// ── activations ─────────────────────────────────────────────────────────

#[test]
fn relu_definition() {
    let mut tape = Tape::new();
    let y = tape.relu(&t2(1, 2, &[-1.0, 2.0]));
    assert_close(y.data(), &[0.0, 2.0], 0.0);
}

#[test]
fn softmax_symmetry_and_normalization() {
    let mut tape = Tape::new();
    let y = tape.softmax_channels(&t2(1, 2, &[0.0, 0.0])).unwrap();
    assert_close(y.data(), &[0.5, 0.5], 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = t2(16, 7, &(0..112).map(|_| rng.random_range(-30.0..30.0)).collect::<Vec<_>>());
    let y = tape.softmax_channels(&x).unwrap();
    for t in 0..16 {
        let s: f64 = y.data()[t * 7..(t + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() < 1e-9, "row {t} sums to {s}");
    }
}

#[test]
fn dropout_rate_zero_is_exact_identity() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = t2(3, 3, &randu(&mut rng, 9));
    let y = tape.dropout(&x, 0.0, &mut rng).unwrap();
    assert_eq!(x.data(), y.data());
}

#[test]
fn dropout_preserves_expectation() {
    // mean over 10,000 seeded draws deviates < 2% per coordinate
    let x = [2.0, -3.0, 0.5, 1.0];
    let rate = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sums = [0.0; 4];
    let n = 10_000;
    for _ in 0..n {
        let mut tape = Tape::new();
        let y = tape.dropout(&t1(&x), rate, &mut rng).unwrap();
        for (s, v) in sums.iter_mut().zip(y.data()) {
            *s += v;
        }
    }
    for (s, v) in sums.iter().zip(&x) {
        let mean = s / n as f64;
        assert!(
            ((mean - v) / v).abs() < 0.02,
            "expectation drift: mean {mean} vs {v}"
        );
    }
}

// ── matmul ──────────────────────────────────────────────────────────────

#[test]
fn matmul_identity_and_scalar() {
    let mut tape = Tape::new();
    let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let x = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = tape.matmul(&eye, &x).unwrap();
    assert_close(y.data(), x.data(), 0.0);

    let y = tape.matmul(&t2(1, 1, &[2.0]), &t2(1, 1, &[3.0])).unwrap();
    assert_close(y.data(), &[6.0], 0.0);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = randu(&mut rng, 12);
    let b = randu(&mut rng, 8);
    let mut want = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            for l in 0..4 {
                want[i * 2 + j] += a[i * 4 + l] * b[l * 2 + j];
            }
        }
    }
    let mut tape = Tape::new();
    let y = tape.matmul(&t2(3, 4, &a), &t2(4, 2, &b)).unwrap();
    assert_close(y.data(), &want, 1e-12);
}

#[test]
fn matmul_nt_matches_explicit_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = randu(&mut rng, 3 * 4);
    let b = randu(&mut rng, 5 * 4);
    let mut bt = vec![0.0; 4 * 5];
    for i in 0..5 {
        for j in 0..4 {
            bt[j * 5 + i] = b[i * 4 + j];
        }
    }
    let mut tape = Tape::new();
    let y1 = tape.matmul_nt(&t2(3, 4, &a), &t2(5, 4, &b)).unwrap();
    let y2 = tape.matmul(&t2(3, 4, &a), &t2(4, 5, &bt)).unwrap();
    assert_close(y1.data(), y2.data(), 1e-12);
}

// ── simple backward contracts ───────────────────────────────────────────

#[test]
fn backward_linear_case_grad_is_input() {
    let mut tape = Tape::new();
    let x = t1(&[1.5, -2.0, 4.0]);
    let w = tape.param("w", &t1(&[0.3, 0.7, -0.1])).unwrap();
    let prod = tape.mul(&w, &x).unwrap();
    let loss = tape.sum_all(&prod);
    let grads = tape.backward(&loss).unwrap();
    assert_close(grads.get("w").unwrap().data(), x.data(), 0.0);
}

#[test]
fn backward_dead_relu_grad_is_zero() {
    let mut tape = Tape::new();
    let w = tape.param("w", &t1(&[-0.5, -2.0])).unwrap();
    let y = tape.relu(&w);
    let loss = tape.sum_all(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_close(grads.get("w").unwrap().data(), &[0.0, 0.0], 0.0);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let w = tape.param("w", &t1(&[1.0, 2.0])).unwrap();
    let y = tape.relu(&w);
    assert!(matches!(tape.backward(&y), Err(Error::Contract { .. })));
}

#[test]
fn backward_unreached_param_gets_zeros() {
    let mut tape = Tape::new();
    let w = tape.param("used", &t1(&[1.0])).unwrap();
    let _unused = tape.param("unused", &t1(&[5.0, 6.0])).unwrap();
    let loss = tape.sum_all(&w);
    let grads = tape.backward(&loss).unwrap();
    assert_close(grads.get("unused").unwrap().data(), &[0.0, 0.0], 0.0);
}

#[test]
fn detached_tensor_never_accumulates_gradient() {
    let mut tape = Tape::new();
    let constant = t1(&[3.0, 4.0]);
    let w = tape.param("w", &t1(&[1.0, 1.0])).unwrap();
    let y = tape.mul(&w, &constant).unwrap();
    let loss = tape.sum_all(&y);
    tape.backward(&loss).unwrap();
    assert!(tape.grad_of(&constant).is_none());
}

#[test]
fn seeded_runs_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let x = t2(8, 2, &randu(&mut rng, 16));
        let w = tape.param("w", &t3(3, 2, 2, &randu(&mut rng, 12))).unwrap();
        let b = tape.param("b", &t1(&[0.1, -0.2])).unwrap();
        let h = tape.conv1d(&x, &w, &b, &ConvSpec::causal(3, 2, 2)).unwrap();
        let h = tape.dropout(&h, 0.25, &mut rng).unwrap();
        let h = tape.relu(&h);
        let loss = tape.sum_all(&h);
        let grads = tape.backward(&loss).unwrap();
        (loss.item(), grads.get("w").unwrap().data().to_vec())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert!(l1.to_bits() == l2.to_bits());
    assert_eq!(g1, g2);
}

// ── finite-difference oracle over every primitive ───────────────────────

/// Max relative error between tape gradients and central differences
/// (h = 1e-5) over every coordinate of every differentiable input.
fn fd_check(shapes: &[Shape], values: &[Vec<f64>], f: &dyn Fn(&mut Tape, &[Tensor]) -> Tensor) -> f64 {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| tape.leaf(&Tensor::new(*s, v.clone()).unwrap()))
            .collect();
        f(&mut tape, &leaves).item()
    };

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| tape.leaf(&Tensor::new(*s, v.clone()).unwrap()))
        .collect();
    let loss = f(&mut tape, &leaves);
    tape.backward(&loss).unwrap();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| {
            tape.grad_of(l)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; l.numel()])
        })
        .collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, vals) in values.iter().enumerate() {
        for j in 0..vals.len() {
            let mut plus = values.to_vec();
            plus[i][j] += h;
            let mut minus = values.to_vec();
            minus[i][j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Weighted scalar readout so that gradients differ per coordinate.
fn weighted_sum(tape: &mut Tape, y: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(y.shape(), randu(&mut rng, y.numel())).unwrap();
    let prod = tape.mul(y, &w).unwrap();
    tape.sum_all(&prod)
}

#[test]
fn fd_conv1d_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let err = fd_check(
        &[Shape::d2(7, 2), Shape::d3(3, 2, 3), Shape::d1(3)],
        &[randu(&mut rng, 14), randu(&mut rng, 18), randu(&mut rng, 3)],
        &|tape, ts| {
            let y = tape.conv1d(&ts[0], &ts[1], &ts[2], &ConvSpec::causal(3, 2, 3)).unwrap();
            weighted_sum(tape, &y, 1)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_conv1d_same_centered() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let err = fd_check(
        &[Shape::d2(9, 2), Shape::d3(4, 2, 2), Shape::d1(2)],
        &[randu(&mut rng, 18), randu(&mut rng, 16), randu(&mut rng, 2)],
        &|tape, ts| {
            let y = tape.conv1d(&ts[0], &ts[1], &ts[2], &ConvSpec::same(4, 2)).unwrap();
            weighted_sum(tape, &y, 2)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_conv1d_valid_strided() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = ConvSpec {
        kernel_size: 2,
        dilation: 1,
        stride: 2,
        padding: PaddingMode::None,
        out_channels: 2,
    };
    let err = fd_check(
        &[Shape::d2(8, 1), Shape::d3(2, 1, 2), Shape::d1(2)],
        &[randu(&mut rng, 8), randu(&mut rng, 4), randu(&mut rng, 2)],
        &|tape, ts| {
            let y = tape.conv1d(&ts[0], &ts[1], &ts[2], &spec).unwrap();
            weighted_sum(tape, &y, 3)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_conv1d_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let err = fd_check(
        &[Shape::d2(5, 2), Shape::d3(2, 2, 3), Shape::d1(3)],
        &[randu(&mut rng, 10), randu(&mut rng, 12), randu(&mut rng, 3)],
        &|tape, ts| {
            let y = tape.conv1d_transpose(&ts[0], &ts[1], &ts[2], 2).unwrap();
            weighted_sum(tape, &y, 4)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_max_pool2() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let err = fd_check(&[Shape::d2(8, 3)], &[randu(&mut rng, 24)], &|tape, ts| {
        let (y, _) = tape.max_pool2(&ts[0]).unwrap();
        weighted_sum(tape, &y, 5)
    });
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let err = fd_check(
        &[Shape::d2(5, 4), Shape::d1(4), Shape::d1(4)],
        &[randu(&mut rng, 20), randu(&mut rng, 4), randu(&mut rng, 4)],
        &|tape, ts| {
            let y = tape.layer_norm(&ts[0], &ts[1], &ts[2], 1e-5).unwrap();
            weighted_sum(tape, &y, 6)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let vals: Vec<f64> = (0..12)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.1..1.0)
        })
        .collect();
    let err = fd_check(&[Shape::d2(4, 3)], &[vals], &|tape, ts| {
        let y = tape.relu(&ts[0]);
        weighted_sum(tape, &y, 7)
    });
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_softmax_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let err = fd_check(&[Shape::d2(4, 5)], &[randu(&mut rng, 20)], &|tape, ts| {
        let y = tape.softmax_channels(&ts[0]).unwrap();
        weighted_sum(tape, &y, 8)
    });
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_dropout_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    // reseeding per evaluation keeps the mask identical across FD probes
    let err = fd_check(&[Shape::d2(4, 4)], &[randu(&mut rng, 16)], &|tape, ts| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(1234);
        let y = tape.dropout(&ts[0], 0.4, &mut mask_rng).unwrap();
        weighted_sum(tape, &y, 9)
    });
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_add_mul_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let err = fd_check(
        &[Shape::d2(3, 2), Shape::d2(3, 2), Shape::d2(3, 3)],
        &[randu(&mut rng, 6), randu(&mut rng, 6), randu(&mut rng, 9)],
        &|tape, ts| {
            let s = tape.add(&ts[0], &ts[1]).unwrap();
            let p = tape.mul(&s, &ts[0]).unwrap();
            let c = tape.concat_channels(&[&p, &ts[2]]).unwrap();
            weighted_sum(tape, &c, 10)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_matmul_both_orientations() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let err = fd_check(
        &[Shape::d2(3, 4), Shape::d2(4, 2), Shape::d2(5, 2)],
        &[randu(&mut rng, 12), randu(&mut rng, 8), randu(&mut rng, 10)],
        &|tape, ts| {
            let y = tape.matmul(&ts[0], &ts[1]).unwrap();
            let z = tape.matmul_nt(&y, &ts[2]).unwrap();
            weighted_sum(tape, &z, 11)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_scalar_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    // probabilities in (0.05, 0.95) keep log_clamped off its clamp boundaries
    let probs: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.95)).collect();
    let err = fd_check(
        &[Shape::d2(4, 2), Shape::d1(1), Shape::d1(1)],
        &[probs, vec![1.7], vec![-2.3]],
        &|tape, ts| {
            let lp = tape.log_clamped(&ts[0]);
            let scaled = tape.affine(&lp, -0.5, 0.25);
            let s = tape.sum_all(&scaled);
            let ratio = tape.div_scalar(&ts[1], &ts[2]).unwrap();
            let both = tape.add(&s, &ratio).unwrap();
            tape.sum_all(&both)
        },
    );
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fd_span_channel_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let err = fd_check(&[Shape::d2(6, 3)], &[randu(&mut rng, 18)], &|tape, ts| {
        tape.span_channel_mean(&ts[0], 1, 5, 2).unwrap()
    });
    assert!(err < 1e-4, "max rel err {err}");
}
