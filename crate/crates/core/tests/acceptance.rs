//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its headline numbers. Oracles here are independent of
//! the library's compute paths (nested-loop convolution, direct
//! recurrences, closed forms).

use std::cell::RefCell;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use avnet_core::check::finite_diff_check;
use avnet_core::data::labels::ClassBatch;
use avnet_core::data::{
    encode_labels, generate_synthetic, labels_to_image, split_folds, AugmentationConfig,
    AugmentedDataset, ClassMap, Dataset, IGNORE,
};
use avnet_core::model::{analyze, AvNet, CdcConfig, ModelConfig, RfState};
use avnet_core::ops::{self, Conv2dSpec, Mode};
use avnet_core::tensor::{GradTape, Tensor};
use avnet_core::train::{
    self, evaluate_classmaps, metrics, train, ConfusionCounts, CsvObserver, LrSchedule,
    NullObserver, OptimizerKind, TrainConfig,
};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-span..span)).collect()
}

/// Independent oracle: direct nested-loop convolution, accumulating in
/// (channel, ky, kx) order with the bias as the starting value.
#[allow(clippy::too_many_arguments)]
fn reference_conv2d(
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    spec: &Conv2dSpec,
) -> (Vec<f64>, usize, usize) {
    let (kh, kw, s, d) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation);
    let oh = (h + 2 * spec.pad_h - d * (kh - 1) - 1) / s + 1;
    let ow = (w + 2 * spec.pad_w - d * (kw - 1) - 1) / s + 1;
    let o = spec.out_channels;
    let mut out = vec![0.0; n * o * oh * ow];
    for img in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky * d) as isize - spec.pad_h as isize;
                                let ix = (ox * s + kx * d) as isize - spec.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input[((img * c + ch) * h + iy as usize) * w + ix as usize]
                                    * weight[((oc * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((img * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

// ---------------------------------------------------------------------
// Gradient suite: every differentiable op at 64-bit, max relative error
// < 1e-4 (< 1e-3 for the full model), >= 10 random trials each.
// ---------------------------------------------------------------------
#[test]
fn acceptance_gradient_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
    let tol = 1e-4;
    let eps = 1e-5;

    // conv2d, dilations 1/2/4/8/12, gradients w.r.t. input, weight, bias.
    let mut conv_worst = 0.0f64;
    for trial in 0..10 {
        let d = [1usize, 2, 4, 8, 12][trial % 5];
        let (cin, cout) = (2usize, 3usize);
        let hw = 2 * d + 5;
        let spec = Conv2dSpec::same(cin, cout, 3, 3, d).unwrap();
        let x = Tensor::new(vec![1, cin, hw, hw], rand_vec(&mut rng, cin * hw * hw, 1.0)).unwrap();
        let wv = rand_vec(&mut rng, cout * cin * 9, 1.0);
        let bv = rand_vec(&mut rng, cout, 0.5);
        let weight = Tensor::new(vec![cout, cin, 3, 3], wv.clone()).unwrap();
        let bias = Tensor::new(vec![cout], bv.clone()).unwrap();

        let fx = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::conv2d(tape, t, &weight, &bias, &spec);
        conv_worst = conv_worst.max(finite_diff_check(&fx, &x, eps).unwrap());
        let fw = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::conv2d(tape, &x, t, &bias, &spec);
        conv_worst = conv_worst.max(finite_diff_check(&fw, &weight, eps).unwrap());
        let fb = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::conv2d(tape, &x, &weight, t, &spec);
        conv_worst = conv_worst.max(finite_diff_check(&fb, &bias, eps).unwrap());
    }
    assert!(conv_worst < tol, "conv2d gradient error {conv_worst}");

    // maxpool (2s2 and 3s1p1; continuous random values avoid ties).
    let mut pool_worst = 0.0f64;
    for trial in 0..10 {
        let x = Tensor::new(vec![1, 2, 6, 6], rand_vec(&mut rng, 72, 1.0)).unwrap();
        let (k, s, p) = if trial % 2 == 0 { (2, 2, 0) } else { (3, 1, 1) };
        let f = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::maxpool2d(tape, t, k, s, p);
        pool_worst = pool_worst.max(finite_diff_check(&f, &x, eps).unwrap());
    }
    assert!(pool_worst < tol, "maxpool gradient error {pool_worst}");

    // upsample 2x.
    let mut up_worst = 0.0f64;
    for _ in 0..10 {
        let x = Tensor::new(vec![1, 3, 4, 4], rand_vec(&mut rng, 48, 1.0)).unwrap();
        let f = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::upsample_nearest2x(tape, t);
        up_worst = up_worst.max(finite_diff_check(&f, &x, eps).unwrap());
    }
    assert!(up_worst < tol, "upsample gradient error {up_worst}");

    // Batch norm, train mode, w.r.t. input, gamma, beta. A random
    // weighting breaks the mean-invariance of the plain sum.
    let mut bn_worst = 0.0f64;
    for _ in 0..10 {
        let bn = ops::BatchNorm2d::<f64>::new(3);
        let x = Tensor::new(vec![2, 3, 4, 4], rand_vec(&mut rng, 96, 2.0)).unwrap();
        let wmask = Tensor::new(vec![2, 3, 4, 4], rand_vec(&mut rng, 96, 1.0)).unwrap();
        let f = |tape: &GradTape<f64>, t: &Tensor<f64>| {
            let y = ops::batchnorm2d(tape, t, &bn, Mode::Train { dropout_seed: 0 })?;
            ops::mul(tape, &y, &wmask)
        };
        bn_worst = bn_worst.max(finite_diff_check(&f, &x, eps).unwrap());
        // Gradient w.r.t. gamma: swap the probe tensor into the state.
        let bn_cell = RefCell::new(ops::BatchNorm2d::<f64>::new(3));
        let fg = |tape: &GradTape<f64>, t: &Tensor<f64>| {
            let mut state = bn_cell.borrow_mut();
            state.gamma = t.clone();
            let y = ops::batchnorm2d(tape, &x, &state, Mode::Train { dropout_seed: 0 })?;
            ops::mul(tape, &y, &wmask)
        };
        let gamma_probe = Tensor::new(vec![3], rand_vec(&mut rng, 3, 1.0)).unwrap();
        bn_worst = bn_worst.max(finite_diff_check(&fg, &gamma_probe, eps).unwrap());
        let fb = |tape: &GradTape<f64>, t: &Tensor<f64>| {
            let mut state = bn_cell.borrow_mut();
            state.beta = t.clone();
            let y = ops::batchnorm2d(tape, &x, &state, Mode::Train { dropout_seed: 0 })?;
            ops::mul(tape, &y, &wmask)
        };
        let beta_probe = Tensor::new(vec![3], rand_vec(&mut rng, 3, 1.0)).unwrap();
        bn_worst = bn_worst.max(finite_diff_check(&fb, &beta_probe, eps).unwrap());
    }
    assert!(bn_worst < tol, "batchnorm gradient error {bn_worst}");

    // softmax + weighted cross-entropy composite w.r.t. logits.
    let mut ce_worst = 0.0f64;
    for trial in 0..10 {
        let (h, w) = (3usize, 3usize);
        let logits = Tensor::new(vec![1, 4, h, w], rand_vec(&mut rng, 4 * h * w, 2.0)).unwrap();
        let mut classes = Vec::with_capacity(h * w);
        for i in 0..h * w {
            classes.push(if trial % 3 == 0 && i == 4 { IGNORE } else { (i % 4) as u8 });
        }
        let target = ClassBatch {
            batch: 1,
            height: h,
            width: w,
            data: classes.clone(),
        };
        // Weight 5 on vessels, 1 elsewhere. The 1e-12 intersection weight
        // is exercised by its own criterion below: its gradient (~1e-13)
        // sits under the f64 resolution of central differences on an
        // O(1) loss, so a finite-difference probe cannot measure it.
        let weights = Tensor::new(
            vec![1, 1, h, w],
            classes
                .iter()
                .map(|&c| match c {
                    IGNORE => 0.0,
                    1 | 2 => 5.0,
                    _ => 1.0,
                })
                .collect::<Vec<f64>>(),
        )
        .unwrap();
        let f = |tape: &GradTape<f64>, t: &Tensor<f64>| {
            let probs = ops::softmax_channels(tape, t)?;
            ops::weighted_cross_entropy(tape, &probs, &target, &weights)
        };
        ce_worst = ce_worst.max(finite_diff_check(&f, &logits, eps).unwrap());
    }
    assert!(ce_worst < tol, "softmax+wce gradient error {ce_worst}");

    // Full default-architecture model at 16x16 input, f64, sampled
    // parameters. Smaller epsilon: the landscape through ~40 layers is
    // curved enough that 1e-5 central differences are truncation-bound.
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let model = RefCell::new(AvNet::<f64>::build(&cfg, 11).unwrap());
    let sample = generate_synthetic(32, 9);
    let mut img_data = vec![0.0; 3 * 16 * 16];
    let img64 = sample.image.cast::<f64>();
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                img_data[c * 256 + y * 16 + x] = img64.at(&[c, y, x]);
            }
        }
    }
    let image = Tensor::new(vec![1, 3, 16, 16], img_data).unwrap();
    let target = ClassBatch {
        batch: 1,
        height: 16,
        width: 16,
        data: sample.class_map.data[..256].to_vec(),
    };
    let weights = Tensor::new(
        vec![1, 1, 16, 16],
        sample.weight_map.data()[..256]
            .iter()
            .map(|&v| f64::from(v))
            .collect::<Vec<f64>>(),
    )
    .unwrap();
    let loss_of = |m: &AvNet<f64>, tape: &GradTape<f64>| {
        let probs = m
            .forward(tape, &image, Mode::Train { dropout_seed: 0 })
            .unwrap();
        ops::weighted_cross_entropy(tape, &probs, &target, &weights).unwrap()
    };
    // Analytic gradients for every parameter in one backward pass.
    {
        let m = model.borrow();
        m.zero_grads();
        let tape = GradTape::new();
        let loss = loss_of(&m, &tape);
        tape.backward(&loss).unwrap();
    }
    let mut model_worst = 0.0f64;
    let mut probed = 0usize;
    let names: Vec<String> = model
        .borrow()
        .named_param_shapes()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for name in names.iter().step_by((names.len() / 12).max(1)) {
        let p0 = model.borrow().get_param(name).unwrap();
        let analytic = p0.take_grad().unwrap_or_else(|| vec![0.0; p0.numel()]);
        let index = rng.random_range(0..p0.numel());
        let eps_model = 1e-7;
        let eval = |delta: f64| -> f64 {
            let mut values = p0.data().to_vec();
            values[index] += delta;
            let mut m = model.borrow_mut();
            m.set_param(name, &values).unwrap();
            let tape = GradTape::disabled();
            let loss = loss_of(&m, &tape);
            loss.data()[0]
        };
        let numeric = (eval(eps_model) - eval(-eps_model)) / (2.0 * eps_model);
        model.borrow_mut().set_param(name, p0.data()).unwrap();
        let a = analytic[index];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        model_worst = model_worst.max(rel);
        probed += 1;
    }
    assert!(probed >= 10, "sampled only {probed} parameters");
    assert!(model_worst < 1e-3, "full-model gradient error {model_worst}");

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "gradient suite took {elapsed:?}"
    );
    println!(
        "PASS gradient suite: conv {conv_worst:.2e}, pool {pool_worst:.2e}, up {up_worst:.2e}, \
         bn {bn_worst:.2e}, ce {ce_worst:.2e}, model {model_worst:.2e} ({probed} params) in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------
// Convolution oracles: nested-loop equality (bit-exact at dilation 1)
// and the zero-inserted-kernel equivalence for all tested dilations.
// ---------------------------------------------------------------------
#[test]
fn acceptance_convolution_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let tape = GradTape::disabled();
    let mut cases = 0usize;

    for &k in &[1usize, 3, 7] {
        for &s in &[1usize, 2] {
            for &d in &[1usize, 2, 4, 8, 12] {
                for &pad in &[0usize, d * (k - 1) / 2] {
                    let h = d * (k - 1) + s * 3 + 1; // guarantees a valid output
                    let w = h + 2;
                    let (cin, cout) = (2usize, 2usize);
                    let spec = Conv2dSpec::new(cin, cout, k, k, s, d, pad, pad).unwrap();
                    let (oh, ow) = spec.output_hw(h, w).unwrap();
                    // Closed-form shape law.
                    assert_eq!(oh, (h + 2 * pad - d * (k - 1) - 1) / s + 1);
                    assert_eq!(ow, (w + 2 * pad - d * (k - 1) - 1) / s + 1);

                    let xv = rand_vec(&mut rng, cin * h * w, 1.0);
                    let wv = rand_vec(&mut rng, cout * cin * k * k, 1.0);
                    let bv = rand_vec(&mut rng, cout, 0.5);
                    let x = Tensor::new(vec![1, cin, h, w], xv.clone()).unwrap();
                    let weight = Tensor::new(vec![cout, cin, k, k], wv.clone()).unwrap();
                    let bias = Tensor::new(vec![cout], bv.clone()).unwrap();
                    let out = ops::conv2d(&tape, &x, &weight, &bias, &spec).unwrap();
                    assert_eq!(out.shape(), &[1, cout, oh, ow]);

                    let (reference, roh, row) =
                        reference_conv2d(&xv, 1, cin, h, w, &wv, &bv, &spec);
                    assert_eq!((roh, row), (oh, ow));
                    if d == 1 {
                        // Same summation order: bit-for-bit equality.
                        for (a, b) in out.data().iter().zip(&reference) {
                            assert_eq!(a.to_bits(), b.to_bits(), "dilation-1 not bit-exact");
                        }
                    } else {
                        // Zero-inserted kernel: materialize the dilated
                        // kernel and run the classic (d=1) reference.
                        let ke = d * (k - 1) + 1;
                        let mut zk = vec![0.0; cout * cin * ke * ke];
                        for oc in 0..cout {
                            for ic in 0..cin {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        zk[((oc * cin + ic) * ke + ky * d) * ke + kx * d] =
                                            wv[((oc * cin + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let zspec =
                            Conv2dSpec::new(cin, cout, ke, ke, s, 1, pad, pad).unwrap();
                        let (zref, zoh, zow) =
                            reference_conv2d(&xv, 1, cin, h, w, &zk, &bv, &zspec);
                        assert_eq!((zoh, zow), (oh, ow));
                        for (a, b) in out.data().iter().zip(&zref) {
                            assert!(
                                (a - b).abs() < 1e-6,
                                "zero-inserted oracle deviation {} at k={k} s={s} d={d}",
                                (a - b).abs()
                            );
                        }
                    }
                    cases += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "oracles took {elapsed:?}");
    println!("PASS convolution oracles: {cases} (k,s,d,pad) cases in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Receptive field: the cascade's analytic RF is 53 and the empirical
// gradient footprint from one bottleneck pixel is exactly 53x53.
// ---------------------------------------------------------------------
#[test]
fn acceptance_receptive_field() {
    let started = Instant::now();
    let rates = [2usize, 4, 8, 12];

    // Analytic, two routes.
    assert_eq!(CdcConfig::default().receptive_field(), 53);
    let mut rf = RfState::new();
    for &r in &rates {
        rf = rf.after_conv(3, 1, r);
    }
    assert_eq!(rf.rf, 53);

    // Empirical: all-ones 3x3 kernels, no BN/ReLU, single channel.
    let size = 64usize;
    let tape = GradTape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f64>::param(
        vec![1, 1, size, size],
        rand_vec(&mut rng, size * size, 1.0),
    )
    .unwrap();
    let mut y = x.clone();
    for &r in &rates {
        let spec = Conv2dSpec::same(1, 1, 3, 3, r).unwrap();
        let weight = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let bias = Tensor::zeros(vec![1]);
        y = ops::conv2d(&tape, &y, &weight, &bias, &spec).unwrap();
    }
    // Select the center output pixel.
    let center = size / 2;
    let mut mask = vec![0.0; size * size];
    mask[center * size + center] = 1.0;
    let picked = ops::mul(&tape, &y, &Tensor::new(vec![1, 1, size, size], mask).unwrap()).unwrap();
    let loss = ops::sum(&tape, &picked).unwrap();
    tape.backward(&loss).unwrap();
    let grad = x.take_grad().unwrap();

    let (mut min_y, mut max_y, mut min_x, mut max_x) = (usize::MAX, 0, usize::MAX, 0);
    let mut nonzero = 0usize;
    for yy in 0..size {
        for xx in 0..size {
            if grad[yy * size + xx] != 0.0 {
                nonzero += 1;
                min_y = min_y.min(yy);
                max_y = max_y.max(yy);
                min_x = min_x.min(xx);
                max_x = max_x.max(xx);
            }
        }
    }
    let bbox = (max_y - min_y + 1, max_x - min_x + 1);
    assert_eq!(bbox, (53, 53), "empirical footprint bbox");
    assert_eq!(min_y, center - 26);
    assert_eq!(max_x, center + 26);
    assert!(nonzero > 0);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "rf check took {elapsed:?}");
    println!(
        "PASS receptive field: analytic 53, empirical bbox {bbox:?} ({nonzero} taps) in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------
// Architecture audit: channel budgets, probability sums at 64/128/512,
// and parameter-count agreement with the checkpoint.
// ---------------------------------------------------------------------
#[test]
fn acceptance_architecture_audit() {
    let started = Instant::now();
    let cfg = ModelConfig::default();
    assert_eq!(cfg.encoder_channels, vec![32, 32, 64, 128]);
    assert_eq!(cfg.decoder_channels, vec![128, 64, 32]);
    let model = AvNet::<f32>::build(&cfg, 21).unwrap();

    let report = analyze(&model, (512, 512));
    for (row, expected_c) in [
        ("enc0.incept", 32usize),
        ("enc1.incept", 32),
        ("enc2.incept", 64),
        ("bottleneck", 128),
        ("dec0", 128),
        ("dec1", 64),
        ("dec2", 32),
    ] {
        let r = report.rows.iter().find(|r| r.name == row).unwrap();
        assert_eq!(r.output_shape[0], expected_c, "{row} channels");
    }
    let bottleneck = report.rows.iter().find(|r| r.name == "cdc").unwrap();
    assert_eq!(bottleneck.output_shape, vec![128, 64, 64]);

    // Checkpoint element count equals analyze()'s parameter count.
    let ckpt = train::capture(&model, None, 0, None, 0);
    assert_eq!(ckpt.parameter_elements(), report.total_params);
    assert_eq!(ckpt.parameter_elements(), model.param_count());

    // Real forwards at 64 and 128, full probability audit.
    let tape = GradTape::disabled();
    for &hw in &[64usize, 128] {
        let x = Tensor::full(vec![1, 3, hw, hw], 0.42f32);
        let probs = model.forward(&tape, &x, Mode::Eval).unwrap();
        assert_eq!(probs.shape(), &[1, 4, hw, hw]);
        let plane = hw * hw;
        for pix in 0..plane {
            let s: f32 = (0..4).map(|k| probs.data()[k * plane + pix]).sum();
            assert!((s - 1.0).abs() < 1e-6, "prob sum {s} at {hw}x{hw}");
        }
    }
    // 512 spot check: shape plus sampled pixels.
    let x = Tensor::full(vec![1, 3, 512, 512], 0.3f32);
    let probs = model.forward(&tape, &x, Mode::Eval).unwrap();
    assert_eq!(probs.shape(), &[1, 4, 512, 512]);
    let plane = 512usize * 512;
    for pix in (0..plane).step_by(997) {
        let s: f32 = (0..4).map(|k| probs.data()[k * plane + pix]).sum();
        assert!((s - 1.0).abs() < 1e-6, "prob sum {s} at 512 spot");
    }

    let elapsed = started.elapsed();
    println!(
        "PASS architecture audit: {} params, channels 32/32/64/128 -> 128/64/32 in {elapsed:?}",
        report.total_params
    );
}

// ---------------------------------------------------------------------
// Overfit: one synthetic 64x64 sample, 500 iterations, lr 1e-4 poly,
// batch 1 -> loss < 0.05 and vessel accuracy > 0.95.
// ---------------------------------------------------------------------
#[test]
fn acceptance_overfit_single_sample() {
    let started = Instant::now();
    let cfg = ModelConfig {
        dropout_rate: 0.0, // overfit run: regularization off
        ..ModelConfig::default()
    };
    let mut model = AvNet::<f32>::build(&cfg, 17).unwrap();
    let sample = generate_synthetic(64, 1);
    let data = vec![sample.clone()];
    let tc = TrainConfig {
        batch_size: 1,
        iterations: 500,
        schedule: LrSchedule::new(1e-4, 0.9, 500).unwrap(),
        optimizer: OptimizerKind::adam_default(),
        seed: 7,
        ..TrainConfig::default()
    };
    let result = train(&mut model, &data, &tc, &mut NullObserver).unwrap();
    let final_loss = result.records.last().unwrap().loss;
    let loss_at_10 = result.records[10].loss;
    assert!(
        final_loss < loss_at_10,
        "loss failed to decrease: {loss_at_10} -> {final_loss}"
    );

    let probs =
        avnet_core::model::predict_image(&model, &sample.image, ops::PaddingMode::Reflect).unwrap();
    let pred = train::argmax_classes(probs.data(), 4, 64 * 64);
    let (_, report) = evaluate_classmaps(&pred, &sample, false).unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(600),
        "overfit run took {elapsed:?}"
    );
    assert!(
        report.accuracy > 0.95,
        "vessel accuracy {} <= 0.95",
        report.accuracy
    );
    assert!(
        final_loss < 0.05,
        "final weighted CE loss {final_loss:.4} >= 0.05 at the pinned lr 1e-4 \
         (vessel accuracy {:.4} passes). Measured frontier on this rig: momentum 0.58, \
         adam 0.20, adam with a flat 1e-4 horizon 0.14; a reference-framework replica \
         of the identical architecture and loss lands at 0.34. The bound is reachable \
         only near lr 1e-3 (measured 0.015 there), so it appears unattainable as stated.",
        report.accuracy
    );
    println!(
        "PASS overfit: loss {final_loss:.4}, vessel accuracy {:.4} in {elapsed:?}",
        report.accuracy
    );
}

// ---------------------------------------------------------------------
// Metric equations by direct substitution, plus the perfect-prediction
// identity.
// ---------------------------------------------------------------------
#[test]
fn acceptance_metric_equations() {
    let m = metrics(&ConfusionCounts {
        tp_at: 8,
        fp_at: 2,
        tp_ve: 9,
        fp_ve: 1,
    });
    assert_eq!(m.tpr_at, 0.8);
    assert_eq!(m.tpr_ve, 0.9);
    assert_eq!(m.accuracy, 0.85);

    let sample = generate_synthetic(64, 12);
    let perfect = sample.class_map.data.clone();
    let (_, report) = evaluate_classmaps(&perfect, &sample, false).unwrap();
    assert_eq!(report.tpr_at, 1.0);
    assert_eq!(report.tpr_ve, 1.0);
    assert_eq!(report.accuracy, 1.0);
    println!("PASS metric equations: (8,2,9,1) -> (0.8, 0.9, 0.85); perfect -> all 1.0");
}

// ---------------------------------------------------------------------
// Intersection weighting: at weight 1e-12 the intersection pixels'
// contribution to the loss is below 1e-9 relative.
// ---------------------------------------------------------------------
#[test]
fn acceptance_intersection_weighting() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let sample = generate_synthetic(64, 3);
    assert!(sample.class_map.data.contains(&3), "needs intersections");
    assert!(sample.class_map.data.iter().any(|&c| c == 1 || c == 2));

    let tape = GradTape::disabled();
    let logits = Tensor::new(vec![1, 4, 64, 64], rand_vec(&mut rng, 4 * 64 * 64, 2.0)).unwrap();
    let probs = ops::softmax_channels(&tape, &logits).unwrap();
    let target = ClassBatch::from_maps(&[&sample.class_map]).unwrap();
    let weights = Tensor::new(
        vec![1, 1, 64, 64],
        sample
            .weight_map
            .data()
            .iter()
            .map(|&v| f64::from(v))
            .collect::<Vec<f64>>(),
    )
    .unwrap();
    let with_intersections =
        ops::weighted_cross_entropy(&tape, &probs, &target, &weights).unwrap();

    // Zero the intersection terms entirely (both sums) by ignoring them.
    let mut masked = sample.class_map.data.clone();
    for c in masked.iter_mut() {
        if *c == 3 {
            *c = IGNORE;
        }
    }
    let masked_map = ClassMap::new(64, 64, masked).unwrap();
    let target2 = ClassBatch::from_maps(&[&masked_map]).unwrap();
    let without =
        ops::weighted_cross_entropy(&tape, &probs, &target2, &weights).unwrap();

    let a = with_intersections.data()[0];
    let b = without.data()[0];
    let rel = (a - b).abs() / a.abs();
    assert!(rel < 1e-9, "intersection contribution {rel}");
    println!("PASS intersection weighting: relative contribution {rel:.2e}");
}

// ---------------------------------------------------------------------
// Data pipeline: exact codec round-trip, 30 x 83 = 2,490 augmented
// samples, and a disjoint, covering 5-fold split.
// ---------------------------------------------------------------------
#[test]
fn acceptance_data_pipeline() {
    // Codec round trip over all five palette colors.
    let map = ClassMap::new(2, 5, vec![0, 1, 2, 3, IGNORE, IGNORE, 3, 2, 1, 0]).unwrap();
    let img = labels_to_image(&map);
    let (back, mask) = encode_labels(&img, avnet_core::data::ColorMatch::Strict).unwrap();
    assert_eq!(back, map);
    assert_eq!(mask.iter().filter(|&&b| b).count(), 2);

    // Default multiplier expands 30 sources to 2,490 draws.
    let sources: Vec<_> = (0..30).map(|i| generate_synthetic(48, 1000 + i)).collect();
    let cfg = AugmentationConfig {
        crop_size: 48,
        seed: 5,
        ..AugmentationConfig::default()
    };
    assert_eq!(cfg.multiplier, 83);
    let ds = AugmentedDataset::new(sources, cfg);
    assert_eq!(ds.len(), 2490);
    let first = ds.get(0).unwrap();
    let last = ds.get(2489).unwrap();
    assert_eq!(first.class_map.height, 48);
    assert_eq!(last.class_map.width, 48);
    first.validate().unwrap();
    last.validate().unwrap();

    // Five folds over 30 ids: disjoint validation sets of 6, covering.
    let ids: Vec<String> = (0..30).map(|i| format!("case{i:02}")).collect();
    let folds = split_folds(&ids, 5, 77).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for (train_ids, val_ids) in &folds {
        assert_eq!(val_ids.len(), 6);
        assert_eq!(train_ids.len(), 24);
        for id in val_ids {
            assert!(seen.insert(id.clone()), "{id} appears in two folds");
        }
    }
    assert_eq!(seen.len(), 30);
    println!("PASS data pipeline: codec round-trip, 30x83=2490 draws, 5 disjoint folds of 6");
}

// ---------------------------------------------------------------------
// Reproducibility: identical seeds give bit-identical loss CSVs and
// final checkpoints.
// ---------------------------------------------------------------------
#[test]
fn acceptance_reproducibility() {
    let run = || -> (Vec<u8>, Vec<u8>) {
        let cfg = ModelConfig::default();
        let mut model = AvNet::<f32>::build(&cfg, 31).unwrap();
        let data = vec![generate_synthetic(32, 5), generate_synthetic(32, 6)];
        let tc = TrainConfig {
            batch_size: 2,
            iterations: 12,
            schedule: LrSchedule::new(1e-4, 0.9, 12).unwrap(),
            seed: 99,
            ..TrainConfig::default()
        };
        let mut csv = CsvObserver::new(Vec::new()).unwrap();
        let result = train(&mut model, &data, &tc, &mut csv).unwrap();
        (
            csv.into_inner(),
            avnet_core::train::checkpoint::write_to_vec(&result.checkpoint),
        )
    };
    let (csv_a, ckpt_a) = run();
    let (csv_b, ckpt_b) = run();
    assert_eq!(csv_a, csv_b, "loss CSVs differ between seeded runs");
    assert_eq!(ckpt_a, ckpt_b, "final checkpoints differ between seeded runs");
    println!(
        "PASS reproducibility: {} CSV bytes and {} checkpoint bytes bit-identical",
        csv_a.len(),
        ckpt_a.len()
    );
}

// ---------------------------------------------------------------------
// Optional long job: 20 synthetic 128x128 training samples, 5,000
// iterations, held-out vessel accuracy > 0.90. Several CPU-hours;
// run explicitly with:
//   cargo test --release -p avnet-core --test acceptance -- --ignored
// ---------------------------------------------------------------------
#[test]
#[ignore = "long-running learning-signal job (hours on a desktop CPU)"]
fn acceptance_learning_signal_small_scale() {
    let cfg = ModelConfig::default();
    let mut model = AvNet::<f32>::build(&cfg, 41).unwrap();
    let train_set: Vec<_> = (0..20).map(|i| generate_synthetic(128, 2000 + i)).collect();
    let held_out: Vec<_> = (0..4).map(|i| generate_synthetic(128, 9000 + i)).collect();
    let tc = TrainConfig {
        batch_size: 4,
        iterations: 5000,
        schedule: LrSchedule::new(1e-4, 0.9, 5000).unwrap(),
        optimizer: OptimizerKind::adam_default(),
        seed: 13,
        ..TrainConfig::default()
    };
    let result = train(&mut model, &train_set, &tc, &mut NullObserver).unwrap();
    println!("final training loss {}", result.records.last().unwrap().loss);
    let opts = train::EvalOptions::default();
    let (_, report) = train::evaluate(&model, &held_out, &opts).unwrap();
    println!(
        "held-out: accuracy {:.4} tpr_at {:.4} tpr_ve {:.4}",
        report.accuracy, report.tpr_at, report.tpr_ve
    );
    assert!(report.accuracy > 0.90, "held-out accuracy {}", report.accuracy);
    println!("PASS learning signal: held-out accuracy {:.4}", report.accuracy);
}
