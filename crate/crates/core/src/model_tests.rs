use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::*;
use crate::params::ParamSet;
use crate::tensor::{Shape, Tape, Tensor};

fn rand_signal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(Shape::d2(rows, cols), data).unwrap()
}

fn no_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[test]
fn block_projects_channels_and_preserves_time() {
    // decoder-style parameterization fed a wider input: 160×1024 → 160×512
    let mut set = ParamSet::new();
    let spec = BlockSpec { in_channels: 1024, filters: 512, dilation: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    init_block(&mut set, &mut rng, "blk", spec).unwrap();
    let x = rand_signal(&mut rng, 160, 1024);
    let mut tape = Tape::new();
    let y = tcn_tif_block(&mut tape, &x, &set, "blk", spec, 0.0, 1e-5, false, &mut no_rng()).unwrap();
    assert_eq!(y.shape(), Shape::d2(160, 512));
}

#[test]
fn block_zero_weights_give_zero_output() {
    let mut set = ParamSet::new();
    let spec = BlockSpec { in_channels: 3, filters: 5, dilation: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    init_block(&mut set, &mut rng, "blk", spec).unwrap();
    set.zero_where(|_| true);
    let x = rand_signal(&mut rng, 16, 3);
    let mut tape = Tape::new();
    let y = tcn_tif_block(&mut tape, &x, &set, "blk", spec, 0.0, 1e-5, false, &mut no_rng()).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mha_single_step_identity_projections() {
    let d = 3;
    let mut set = ParamSet::new();
    let eye = Tensor::new(Shape::d2(d, d), {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    })
    .unwrap();
    for name in ["m.h0.wq", "m.h0.wk", "m.h0.wv", "m.wo"] {
        set.push(name, eye.clone()).unwrap();
    }
    let x = Tensor::new(Shape::d2(1, d), vec![0.4, -1.2, 2.0]).unwrap();
    let mut tape = Tape::new();
    let y = mha(&mut tape, &x, &set, "m", 1).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mha_attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let set = mha_params(&mut rng, "m", 8, 2);
    let x = rand_signal(&mut rng, 12, 8);
    let mut tape = Tape::new();
    let (_, attns) = mha_with_attention(&mut tape, &x, &set, "m", 2).unwrap();
    assert_eq!(attns.len(), 2);
    for a in &attns {
        for t in 0..12 {
            let s: f64 = a.data()[t * 12..(t + 1) * 12].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn mha_is_permutation_equivariant() {
    // no positional encoding: permuting input rows permutes output rows
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = mha_params(&mut rng, "m", 8, 4);
    let rows = 10;
    let x = rand_signal(&mut rng, rows, 8);

    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        p
    };
    let permute = |t: &Tensor| {
        let mut data = vec![0.0; t.numel()];
        for (dst, &src) in perm.iter().enumerate() {
            data[dst * 8..(dst + 1) * 8].copy_from_slice(&t.data()[src * 8..(src + 1) * 8]);
        }
        Tensor::new(t.shape(), data).unwrap()
    };

    let mut tape = Tape::new();
    let y = mha(&mut tape, &x, &set, "m", 4).unwrap();
    let mut tape2 = Tape::new();
    let y_perm = mha(&mut tape2, &permute(&x), &set, "m", 4).unwrap();
    let want = permute(&y);
    for (a, b) in y_perm.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn mha_rejects_indivisible_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = mha_params(&mut rng, "m", 6, 2);
    let x = rand_signal(&mut rng, 4, 6);
    let mut tape = Tape::new();
    assert!(mha(&mut tape, &x, &set, "m", 4).is_err());
}

#[test]
fn bridge_preserves_shape_and_zero_weights_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let channels = 8;
    let mut set = bridge_params(&mut rng, channels);
    let x = rand_signal(&mut rng, 10, channels);

    let mut tape = Tape::new();
    let y = bridge(&mut tape, &x, &set, channels).unwrap();
    assert_eq!(y.shape(), x.shape());

    set.zero_where(|p| p.starts_with("bridge."));
    let mut tape = Tape::new();
    let y = bridge(&mut tape, &x, &set, channels).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert_eq!(a, b);
    }
}

#[test]
fn bridge_gradient_reaches_every_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let channels = 8;
    let set = bridge_params(&mut rng, channels);
    let x = rand_signal(&mut rng, 10, channels);
    let mut tape = Tape::new();
    let y = bridge(&mut tape, &x, &set, channels).unwrap();
    let loss = tape.sum_all(&y);
    let grads = tape.backward(&loss).unwrap();
    for (path, _) in set.iter() {
        if path.ends_with(".w") {
            let g = grads.get(path).unwrap();
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "no gradient reached {path}"
            );
        }
    }
}

#[test]
fn forward_reduced_config_shapes_and_row_sums() {
    let cfg = ModelConfig::reduced();
    let params = init_params(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_signal(&mut rng, cfg.input_len, 1);
    let mut tape = Tape::new();
    let acts = forward(&mut tape, &x, &params, &cfg, ForwardOptions::default(), &mut no_rng()).unwrap();
    assert_eq!(acts.probs.shape(), Shape::d2(cfg.input_len, cfg.num_classes));
    for t in 0..cfg.input_len {
        let s: f64 = acts.probs.data()[t * cfg.num_classes..(t + 1) * cfg.num_classes].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn forward_zeroed_head_is_uniform() {
    let cfg = ModelConfig::reduced();
    let mut params = init_params(&cfg, 13).unwrap();
    params.set_mut().zero_where(|p| p.starts_with("head."));
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_signal(&mut rng, cfg.input_len, 1);
    let mut tape = Tape::new();
    let acts = forward(&mut tape, &x, &params, &cfg, ForwardOptions::default(), &mut no_rng()).unwrap();
    let uniform = 1.0 / cfg.num_classes as f64;
    for v in acts.probs.data() {
        assert!((v - uniform).abs() < 1e-12);
    }
}

#[test]
fn forward_rejects_non_finite_input() {
    let cfg = ModelConfig::reduced();
    let params = init_params(&cfg, 15).unwrap();
    let mut data = vec![0.0; cfg.input_len];
    data[7] = f64::NAN;
    let x = Tensor::new(Shape::d2(cfg.input_len, 1), data).unwrap();
    let mut tape = Tape::new();
    let err = forward(&mut tape, &x, &params, &cfg, ForwardOptions::default(), &mut no_rng());
    assert!(matches!(err, Err(crate::error::Error::Numeric(_))));
}

#[test]
fn init_same_seed_identical_bytes() {
    let cfg = ModelConfig::reduced();
    let a = init_params(&cfg, 99).unwrap();
    let b = init_params(&cfg, 99).unwrap();
    let mut ba = Vec::new();
    let mut bb = Vec::new();
    a.set().write_to(&mut ba).unwrap();
    b.set().write_to(&mut bb).unwrap();
    assert_eq!(ba, bb);
    let c = init_params(&cfg, 100).unwrap();
    let mut bc = Vec::new();
    c.set().write_to(&mut bc).unwrap();
    assert_ne!(ba, bc);
}

#[test]
fn init_forward_smoke_over_seeds() {
    // forward of a fresh model stays finite on random input
    let cfg = ModelConfig { input_len: 64, num_classes: 4, base_filters: 4, ..ModelConfig::default() };
    for seed in 0..100 {
        let params = init_params(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = rand_signal(&mut rng, cfg.input_len, 1);
        let mut tape = Tape::new();
        let acts =
            forward(&mut tape, &x, &params, &cfg, ForwardOptions::default(), &mut no_rng()).unwrap();
        assert!(acts.probs.is_finite(), "seed {seed} produced non-finite output");
    }
}

#[test]
fn zeroed_wo_equals_skipped_fusion() {
    let cfg = ModelConfig::reduced();
    let mut params = init_params(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_signal(&mut rng, cfg.input_len, 1);

    params.set_mut().zero_where(|p| p.ends_with(".wo"));
    let mut tape = Tape::new();
    let with_zeroed =
        forward(&mut tape, &x, &params, &cfg, ForwardOptions::default(), &mut no_rng()).unwrap();

    let mut tape = Tape::new();
    let opts = ForwardOptions { attach_mha: false, ..Default::default() };
    let skipped = forward(&mut tape, &x, &params, &cfg, opts, &mut no_rng()).unwrap();

    for (a, b) in with_zeroed.probs.data().iter().zip(skipped.probs.data()) {
        assert_eq!(a, b);
    }
}

#[test]
fn parameter_count_is_frozen_for_default_config() {
    let params = init_params(&ModelConfig::default(), 0).unwrap();
    assert_eq!(params.total_scalars(), PARAM_COUNT_DEFAULT);
}

#[test]
fn training_forward_is_seed_deterministic() {
    let cfg = ModelConfig { input_len: 64, num_classes: 4, base_filters: 4, ..ModelConfig::default() };
    let params = init_params(&cfg, 30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = rand_signal(&mut rng, cfg.input_len, 1);
    let run = || {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let opts = ForwardOptions { training: true, attach_mha: true };
        let acts = forward(&mut tape, &x, &params, &cfg, opts, &mut drop_rng).unwrap();
        acts.probs.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

// ── helpers ─────────────────────────────────────────────────────────────

use crate::model::init_block;

fn mha_params(rng: &mut ChaCha8Rng, prefix: &str, d: usize, heads: usize) -> ParamSet {
    let mut set = ParamSet::new();
    let dk = d / heads;
    let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::new(Shape::d2(r, c), (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    };
    for h in 0..heads {
        set.push(format!("{prefix}.h{h}.wq"), mat(rng, d, dk)).unwrap();
        set.push(format!("{prefix}.h{h}.wk"), mat(rng, d, dk)).unwrap();
        set.push(format!("{prefix}.h{h}.wv"), mat(rng, d, dk)).unwrap();
    }
    set.push(format!("{prefix}.wo"), mat(rng, d, d)).unwrap();
    set
}

fn bridge_params(rng: &mut ChaCha8Rng, channels: usize) -> ParamSet {
    let mut set = ParamSet::new();
    let rates: [&[usize]; 4] = [&[1, 2, 4, 8], &[1, 2, 4], &[1, 2], &[1]];
    for (p, chain) in rates.iter().enumerate() {
        for j in 0..chain.len() {
            let w = Tensor::new(
                Shape::d3(2, channels, channels),
                (0..2 * channels * channels).map(|_| rng.random_range(-0.3..0.3)).collect(),
            )
            .unwrap();
            set.push(format!("bridge.p{p}.c{j}.w"), w).unwrap();
            set.push(format!("bridge.p{p}.c{j}.b"), Tensor::zeros(Shape::d1(channels))).unwrap();
        }
    }
    set
}
