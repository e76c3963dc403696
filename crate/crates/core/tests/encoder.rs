mod common;

use approx::assert_abs_diff_eq;
use common::{compose_kernel, naive_conv, random_tensor, run_conv, separable_parts, set, single_block};
use lidnet::autodiff::{Graph, ParamStore};
use lidnet::encoder::{default_kernel_schedule, Block, Encoder, EncoderConfig};
use lidnet::layers::{BatchNormLayer, ConvKind, ConvLayer, ForwardCtx, Mode};
use lidnet::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn identity_depthwise_kernel_passes_input_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = ConvLayer::separable(&mut store, "c", 3, 3, 3, &mut rng).unwrap();
    let (dw, pw) = separable_parts(&layer);
    set(&mut store, dw, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    set(&mut store, pw, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let x = random_tensor(&[2, 5, 3], 2.0, &mut rng);
    assert_eq!(run_conv(&store, &layer, &x), x);
}

#[test]
fn box_kernel_on_single_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = ConvLayer::separable(&mut store, "c", 1, 1, 3, &mut rng).unwrap();
    let (dw, pw) = separable_parts(&layer);
    set(&mut store, dw, &[1.0, 1.0, 1.0]);
    set(&mut store, pw, &[1.0]);
    let x = Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    // [0+1+2, 1+2+3, 2+3+0]
    assert_eq!(run_conv(&store, &layer, &x).data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_channel_mismatch_is_dimension_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = ConvLayer::separable(&mut store, "c", 3, 2, 3, &mut rng).unwrap();
    let mut g = Graph::with_params(&store);
    let x = g.constant(Tensor::zeros(&[1, 4, 2]));
    assert!(matches!(layer.forward(&mut g, x), Err(lidnet::LidError::Dimension { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn separable_equals_composed_full_kernel(
        seed in any::<u64>(),
        t in 1usize..=16,
        cin in 1usize..=8,
        cout in 1usize..=8,
        kidx in 0usize..3,
    ) {
        let k = [1, 3, 5][kidx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sep = ConvLayer::separable(&mut store, "sep", cin, cout, k, &mut rng).unwrap();
        let full = ConvLayer::full(&mut store, "full", cin, cout, k, &mut rng).unwrap();
        let (dw, pw) = separable_parts(&sep);
        let composed = compose_kernel(store.value(dw), store.value(pw), k);
        let ConvKind::Full { kernel } = full.kind else { unreachable!() };
        let as_f32: Vec<f32> = composed.iter().map(|&v| v as f32).collect();
        set(&mut store, kernel, &as_f32);

        let x = random_tensor(&[2, t, cin], 1.0, &mut rng);
        let a = run_conv(&store, &sep, &x);
        let b = run_conv(&store, &full, &x);
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
        let oracle = naive_conv(&x, &composed, cout, k);
        for (&v, &o) in a.data().iter().zip(&oracle) {
            prop_assert!((v as f64 - o).abs() < 1e-5);
        }
    }

    #[test]
    fn time_length_is_preserved(seed in any::<u64>(), t in 1usize..40, kidx in 0usize..4) {
        let k = [1, 3, 33, 75][kidx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = ConvLayer::separable(&mut store, "c", 4, 6, k, &mut rng).unwrap();
        let x = random_tensor(&[1, t, 4], 1.0, &mut rng);
        let y = run_conv(&store, &layer, &x);
        prop_assert_eq!(y.shape().to_vec(), vec![1, t, 6]);
    }
}

fn run_bn(store: &mut ParamStore, layer: &BatchNormLayer, x: &Tensor, mode: Mode) -> Tensor {
    let (y, mut ctx) = {
        let mut g = Graph::with_params(&*store);
        let mut ctx = match mode {
            Mode::Train => ForwardCtx::train_deterministic(),
            Mode::Eval => ForwardCtx::eval(),
        };
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, xv, &mut ctx).unwrap();
        (g.value(y).clone(), ctx)
    };
    ctx.apply_stat_updates(store);
    y
}

#[test]
fn batchnorm_constant_channel_is_zero() {
    let mut store = ParamStore::new();
    let bn = BatchNormLayer::new(&mut store, "bn", 2).unwrap();
    let x = Tensor::new(vec![2, 3, 2], vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0, 4.0, 4.0, 4.0, 5.0, 4.0, 6.0]).unwrap();
    let y = run_bn(&mut store, &bn, &x, Mode::Train);
    for r in 0..6 {
        assert_eq!(y.data()[r * 2], 0.0);
    }
}

#[test]
fn batchnorm_train_normalizes_and_updates_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let bn = BatchNormLayer::new(&mut store, "bn", 3).unwrap();
    let x = random_tensor(&[4, 10, 3], 5.0, &mut rng).map(|v| v + 2.0);
    let y = run_bn(&mut store, &bn, &x, Mode::Train);
    for c in 0..3 {
        let col: Vec<f64> = (0..40).map(|r| y.data()[r * 3 + c] as f64).collect();
        let mean = col.iter().sum::<f64>() / 40.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
    // running = 0.9·init + 0.1·batch (unbiased variance)
    for c in 0..3 {
        let col: Vec<f64> = (0..40).map(|r| x.data()[r * 3 + c] as f64).collect();
        let mean = col.iter().sum::<f64>() / 40.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 39.0;
        assert_abs_diff_eq!(store.value(bn.running_mean).data()[c] as f64, 0.1 * mean, epsilon = 1e-5);
        assert_abs_diff_eq!(
            store.value(bn.running_var).data()[c] as f64,
            0.9 + 0.1 * var,
            epsilon = 1e-4
        );
    }
}

#[test]
fn batchnorm_train_needs_two_values() {
    let mut store = ParamStore::new();
    let bn = BatchNormLayer::new(&mut store, "bn", 2).unwrap();
    let mut g = Graph::with_params(&store);
    let mut ctx = ForwardCtx::<f32>::train_deterministic();
    let x = g.constant(Tensor::zeros(&[1, 1, 2]));
    assert!(matches!(bn.forward(&mut g, x, &mut ctx), Err(lidnet::LidError::Contract(_))));
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut store = ParamStore::new();
    let bn = BatchNormLayer::new(&mut store, "bn", 1).unwrap();
    set(&mut store, bn.gamma, &[2.0]);
    set(&mut store, bn.beta, &[1.0]);
    let y = run_bn(&mut store, &bn, &Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap(), Mode::Eval);
    // 2·(3 − 0)/√(1 + 1e-5) + 1
    let expect = 2.0 * 3.0 / (1.0f64 + 1e-5).sqrt() + 1.0;
    assert_abs_diff_eq!(y.item() as f64, expect, epsilon = 1e-6);
    assert_abs_diff_eq!(y.item(), 7.0, epsilon = 1e-4);
}

fn run_block(store: &ParamStore, block: &Block, x: &Tensor, mode: Mode) -> Tensor {
    let mut g = Graph::with_params(store);
    let mut ctx = match mode {
        Mode::Train => ForwardCtx::train_deterministic(),
        Mode::Eval => ForwardCtx::eval(),
    };
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, xv, None, &mut ctx).unwrap();
    g.value(y).clone()
}

#[test]
fn zero_weights_give_zero_block_output() {
    let (mut store, enc) = single_block(3, 2, 3, 1);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.name().contains("pointwise") || p.name().contains("depthwise"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        store.get_mut(id).value_mut().data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&[2, 6, 3], 3.0, &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        let y = run_block(&store, &enc.blocks[0], &x, mode);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identity_block_is_relu_of_twice_input() {
    let (mut store, enc) = single_block(2, 1, 3, 3);
    let block = &enc.blocks[0];
    let (dw, pw) = separable_parts(&block.subblocks[0].conv);
    set(&mut store, dw, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    set(&mut store, pw, &[1.0, 0.0, 0.0, 1.0]);
    let ConvKind::Pointwise { weight } = block.residual_conv.kind else { unreachable!() };
    set(&mut store, weight, &[1.0, 0.0, 0.0, 1.0]);
    // eps makes eval batch norm x/√(1+1e-5) rather than exactly x
    let x = Tensor::new(vec![1, 4, 2], vec![1.0, -2.0, 0.5, 3.0, -0.25, 0.0, 4.0, -1.0]).unwrap();
    let y = run_block(&store, block, &x, Mode::Eval);
    let scale = 1.0 / (1.0f32 + 1e-5).sqrt();
    for (&a, &b) in x.data().iter().zip(y.data()) {
        assert_abs_diff_eq!(b, (2.0 * a * scale).max(0.0), epsilon = 1e-6);
    }
}

#[test]
fn tiny_encoder_matches_hand_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        input_dim: 3,
        blocks: 1,
        subblocks: 1,
        channels: 2,
        kernel_schedule: vec![3],
        dropout: 0.0,
        separable: true,
    };
    let enc = Encoder::new(cfg, &mut store, &mut rng).unwrap();
    let x = random_tensor(&[1, 5, 3], 1.0, &mut rng);

    let mut g = Graph::with_params(&store);
    let mut ctx = ForwardCtx::eval();
    let xv = g.constant(x.clone());
    let y = enc.forward(&mut g, xv, None, &mut ctx).unwrap();
    let y = g.value(y).clone();

    // Layer by layer, f64, with eval batch norm at running stats (0, 1).
    let inv = 1.0 / (1.0f64 + 1e-5).sqrt();
    let bn = |v: &mut Vec<f64>| v.iter_mut().for_each(|a| *a *= inv);
    let relu = |v: &mut Vec<f64>| v.iter_mut().for_each(|a| *a = a.max(0.0));
    let (dw, pw) = separable_parts(&enc.prologue_conv);
    let mut h = naive_conv(&x, &compose_kernel(store.value(dw), store.value(pw), 3), 2, 3);
    bn(&mut h);
    relu(&mut h);
    let h_t = Tensor::new(vec![1, 5, 2], h.iter().map(|&v| v as f32).collect()).unwrap();
    let block = &enc.blocks[0];
    let ConvKind::Pointwise { weight } = block.residual_conv.kind else { unreachable!() };
    let res_kernel: Vec<f64> = {
        let w = store.value(weight);
        (0..2).flat_map(|o| (0..2).map(move |i| (o, i))).map(|(o, i)| w.at(&[i, o]) as f64).collect()
    };
    let mut res = naive_conv(&h_t, &res_kernel, 2, 1);
    bn(&mut res);
    let (dw, pw) = separable_parts(&block.subblocks[0].conv);
    let mut out = naive_conv(&h_t, &compose_kernel(store.value(dw), store.value(pw), 3), 2, 3);
    bn(&mut out);
    out.iter_mut().zip(&res).for_each(|(a, r)| *a += r);
    relu(&mut out);
    assert_eq!(y.shape(), &[1, 5, 2]);
    for (&a, &b) in y.data().iter().zip(&out) {
        assert_abs_diff_eq!(a as f64, b, epsilon = 1e-5);
    }
}

#[test]
fn wrong_feature_dim_is_dimension_error() {
    let (store, enc) = single_block(4, 1, 3, 0);
    let mut g = Graph::with_params(&store);
    let mut ctx = ForwardCtx::eval();
    let x = g.constant(Tensor::zeros(&[1, 3, 5]));
    assert!(matches!(
        enc.forward(&mut g, x, None, &mut ctx),
        Err(lidnet::LidError::Dimension { .. })
    ));
}

#[test]
fn kernel_schedule_defaults() {
    assert_eq!(
        default_kernel_schedule(15),
        vec![33, 33, 33, 39, 39, 39, 51, 51, 51, 63, 63, 63, 75, 75, 75]
    );
    assert_eq!(default_kernel_schedule(3), vec![33, 33, 33]);
    let cfg = EncoderConfig::default();
    assert_eq!((cfg.blocks, cfg.subblocks, cfg.channels), (15, 5, 512));
    assert!(EncoderConfig { kernel_schedule: vec![4; 15], ..cfg.clone() }.validate().is_err());
    assert!(EncoderConfig { dropout: 1.0, ..cfg }.validate().is_err());
}

#[test]
fn train_mode_forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            input_dim: 4,
            blocks: 2,
            subblocks: 2,
            channels: 8,
            kernel_schedule: vec![3, 5],
            dropout: 0.2,
            separable: true,
        };
        let enc = Encoder::new(cfg, &mut store, &mut rng).unwrap();
        let x = random_tensor(&[2, 7, 4], 1.0, &mut rng);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::with_params(&store);
        let mut ctx = ForwardCtx::train(&mut drop_rng);
        let xv = g.constant(x);
        let y = enc.forward(&mut g, xv, None, &mut ctx).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn assert_within(name: &str, e: common::GradErrors) {
    assert!(e.double < 1e-5, "{name} 64-bit: {e:?}");
    assert!(e.single < 1e-3, "{name} 32-bit: {e:?}");
}

#[test]
fn conv_gradients() {
    assert_within("conv", common::sweep(8, common::conv_case));
}

#[test]
fn batchnorm_gradients() {
    assert_within("bn train", common::sweep(8, |s| common::batchnorm_case(s, true)));
    assert_within("bn eval", common::sweep(8, |s| common::batchnorm_case(s, false)));
}

#[test]
fn block_gradients_without_dropout() {
    assert_within("block", common::sweep(8, common::block_case));
}
