use std::collections::BTreeMap;

use candle_core::{Device, Tensor, Var};
use mi_sseg::checkpoint::{Checkpoint, CheckpointReader};
use mi_sseg::cli::SslArchiveConfig;
use mi_sseg::data::{make_multires_pair, GrayImage, PhantomParams, SegMask};
use mi_sseg::nn::{scalar, OptimConfig};
use mi_sseg::params::ParamStore;
use mi_sseg::pipeline::SSL_MODULE;
use mi_sseg::sseg::{
    cross_entropy_loss, dice_loss, loss_segmentation, Backbone, EncoderConfig, FeaturePyramid, SSegConfig, SSegNet,
    SSegTrainer,
};
use mi_sseg::ssl::{AugmentConfig, SslConfig, SslPretrainer};
use mi_sseg::Error;

fn tiny(scale: usize) -> SSegConfig {
    SSegConfig {
        encoder: EncoderConfig {
            embed_dim: 8,
            depths: vec![1, 1],
            num_heads: vec![1, 2],
            window_size: 4,
            input_resolution: 16,
            ..Default::default()
        },
        scale,
        decoder_channels: 8,
        min_decoder_channels: 4,
        ..Default::default()
    }
}

fn samples(n: usize, res: usize, scale: usize) -> Vec<(GrayImage, SegMask)> {
    let params = PhantomParams {
        resolution: res,
        ..Default::default()
    };
    (0..n as u64)
        .map(|s| {
            let p = make_multires_pair(s, &params, scale).unwrap();
            (p.image_b, p.mask_hr)
        })
        .collect()
}

fn input(n: usize, res: usize) -> Tensor {
    Tensor::rand(0f32, 1., (n, 1, res, res), &Device::Cpu).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar().unwrap()
}

#[test]
fn segmentation_loss_gradient_on_2x2x2_logits() {
    let dev = Device::Cpu;
    let x0 = Tensor::new(&[[[[0.3f64, -1.2], [0.8, 0.1]], [[-0.4, 0.9], [0.2, -0.7]]]], &dev).unwrap();
    let labels = Tensor::new(&[[[1u32, 0], [1, 1]]], &dev).unwrap();
    let var = Var::from_tensor(&x0).unwrap();
    let g = loss_segmentation(var.as_tensor(), &labels).unwrap().backward().unwrap();
    let analytic = g.get(&var).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let base = x0.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let f = |v: &[f64]| {
        let t = Tensor::from_slice(v, (1, 2, 2, 2), &dev).unwrap();
        loss_segmentation(&t, &labels).unwrap().to_scalar::<f64>().unwrap()
    };
    let h = 1e-6;
    for i in 0..base.len() {
        let (mut p, mut m) = (base.clone(), base.clone());
        p[i] += h;
        m[i] -= h;
        let numeric = (f(&p) - f(&m)) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs());
        assert!(rel < 1e-4, "coord {i}: {} vs {numeric}", analytic[i]);
    }
}

#[test]
fn hand_computed_2x2_segmentation_loss() {
    let dev = Device::Cpu;
    // Foreground probabilities σ(z1 − z0) of 0.8, 0.3, 0.6, 0.1.
    let probs = [0.8f64, 0.3, 0.6, 0.1];
    let z1: Vec<f64> = probs.iter().map(|p| (p / (1.0 - p)).ln()).collect();
    let mut data = vec![0.0; 4];
    data.extend(&z1);
    let logits = Tensor::from_vec(data, (1, 2, 2, 2), &dev).unwrap();
    let labels = Tensor::new(&[[[1u32, 0], [1, 0]]], &dev).unwrap();
    let fg = [1.0, 0.0, 1.0, 0.0];
    let inter: f64 = probs.iter().zip(fg).map(|(p, g)| p * g).sum();
    let dice = (2.0 * inter + 1e-5) / (probs.iter().sum::<f64>() + 2.0 + 1e-5);
    let ce: f64 = probs
        .iter()
        .zip(fg)
        .map(|(p, g)| -if g == 1.0 { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / 4.0;
    let got = scalar(&loss_segmentation(&logits, &labels).unwrap()).unwrap();
    assert!((got - (1.0 - dice + ce)).abs() < 1e-12, "{got} vs {}", 1.0 - dice + ce);
}

#[test]
fn uniform_logits_give_ln2_cross_entropy() {
    let logits = Tensor::zeros((2, 2, 3, 3), candle_core::DType::F64, &Device::Cpu).unwrap();
    let labels = Tensor::ones((2, 3, 3), candle_core::DType::U32, &Device::Cpu).unwrap();
    let ce = scalar(&cross_entropy_loss(&logits, &labels).unwrap()).unwrap();
    assert!((ce - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn soft_dice_is_shift_invariant() {
    let dev = Device::Cpu;
    let logits = Tensor::randn(0f64, 1.5, (2, 3, 5, 5), &dev).unwrap();
    let shift = Tensor::randn(0f64, 10.0, (2, 1, 5, 5), &dev).unwrap();
    let labels = Tensor::rand(0f64, 3.0, (2, 5, 5), &dev).unwrap().floor().unwrap().to_dtype(candle_core::DType::U32).unwrap();
    let a = scalar(&dice_loss(&logits, &labels).unwrap()).unwrap();
    let b = scalar(&dice_loss(&logits.broadcast_add(&shift).unwrap(), &labels).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn loss_rejects_resolution_mismatch() {
    let logits = Tensor::zeros((1, 2, 4, 4), candle_core::DType::F32, &Device::Cpu).unwrap();
    let labels = Tensor::zeros((1, 8, 8), candle_core::DType::U32, &Device::Cpu).unwrap();
    assert!(matches!(loss_segmentation(&logits, &labels), Err(Error::Dimension(_))));
}

#[test]
fn decoder_part1_returns_to_input_resolution() {
    for backbone in [Backbone::WindowedAttention, Backbone::PlainConv] {
        let mut cfg = tiny(1);
        cfg.encoder.backbone = backbone;
        let net = SSegNet::with_seed(cfg, 1).unwrap();
        let x = input(2, 16);
        let pyr = net.encode(&x, false).unwrap();
        let f = net.decode_part1(&pyr, &x, false).unwrap();
        assert_eq!(f.dims(), &[2, 8, 16, 16]);
        assert_eq!(net.decode_part2(&f, false).unwrap().dims(), &[2, 2, 16, 16]);
    }
}

#[test]
fn skips_change_values_not_shapes() {
    let with = SSegNet::with_seed(tiny(2), 2).unwrap();
    let without = SSegNet::with_seed(SSegConfig { use_skips: false, ..tiny(2) }, 2).unwrap();
    let x = input(1, 16);
    let a = with.forward_t(&x, false).unwrap();
    let b = without.forward_t(&x, false).unwrap();
    assert_eq!(a.dims(), b.dims());
    assert!(max_abs_diff(&a, &b) > 0.0);
}

fn stage0_gradient_norm(net: &SSegNet) -> f32 {
    let x = input(1, 16);
    let pyr = net.encode(&x, false).unwrap();
    let stage0 = Var::from_tensor(&pyr.levels[0]).unwrap();
    let mut levels = pyr.levels.clone();
    levels[0] = stage0.as_tensor().clone();
    let out = net.decode_part1(&FeaturePyramid { levels }, &x, true).unwrap();
    let grads = out.sqr().unwrap().sum_all().unwrap().backward().unwrap();
    grads.get(&stage0).map_or(0.0, |g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap())
}

#[test]
fn gradient_reaches_stage0_through_the_skip() {
    let with = SSegNet::with_seed(tiny(1), 3).unwrap();
    assert!(stage0_gradient_norm(&with) > 0.0);
    let without = SSegNet::with_seed(SSegConfig { use_skips: false, ..tiny(1) }, 3).unwrap();
    assert_eq!(stage0_gradient_norm(&without), 0.0);
}

#[test]
fn batch_forward_matches_single_in_eval_mode() {
    let net = SSegNet::with_seed(tiny(2), 4).unwrap();
    let x = input(3, 16);
    let batched = net.forward_t(&x, false).unwrap();
    for i in 0..3 {
        let single = net.forward_t(&x.narrow(0, i, 1).unwrap(), false).unwrap();
        assert!(max_abs_diff(&single, &batched.narrow(0, i, 1).unwrap()) < 1e-5);
    }
}

#[test]
fn doubling_input_doubles_output() {
    let net = SSegNet::with_seed(tiny(2), 5).unwrap();
    assert_eq!(net.forward_t(&input(1, 16), false).unwrap().dims(), &[1, 2, 32, 32]);
    assert_eq!(net.forward_t(&input(1, 32), false).unwrap().dims(), &[1, 2, 64, 64]);
    assert!(matches!(net.forward_t(&input(1, 12), false), Err(Error::Dimension(_))));
}

#[test]
fn two_stage_and_end_to_end_masks_share_shape() {
    let data = samples(1, 16, 4);
    let e2e = SSegNet::with_seed(tiny(4), 6).unwrap().predict(&data[0].0).unwrap();
    let two_stage = SSegNet::with_seed(tiny(1), 6).unwrap();
    let m = two_stage.predict_two_stage(&data[0].0, 4).unwrap();
    assert_eq!(m.resolution(), e2e.resolution());
    assert_eq!(m.resolution(), data[0].1.resolution());
    assert!(matches!(
        SSegNet::with_seed(tiny(2), 6).unwrap().predict_two_stage(&data[0].0, 2),
        Err(Error::Config(_))
    ));
}

#[test]
fn scale_must_be_power_of_two() {
    assert!(matches!(SSegNet::with_seed(tiny(3), 0), Err(Error::Config(_))));
    assert!(matches!(SSegNet::with_seed(tiny(6), 0), Err(Error::Config(_))));
}

#[test]
fn finetune_is_deterministic_and_checks_mask_size() {
    let data = samples(4, 16, 2);
    let images: Vec<&GrayImage> = data.iter().map(|d| &d.0).collect();
    let masks: Vec<&SegMask> = data.iter().map(|d| &d.1).collect();
    let run = || {
        let net = SSegNet::with_seed(tiny(2), 7).unwrap();
        let mut t = SSegTrainer::new(net, &OptimConfig::default().with_lr(1e-3)).unwrap();
        for _ in 0..3 {
            t.finetune_step(&images, &masks).unwrap();
        }
        t.history().to_vec()
    };
    assert_eq!(run(), run());

    let net = SSegNet::with_seed(tiny(4), 7).unwrap();
    let mut t = SSegTrainer::new(net, &OptimConfig::default()).unwrap();
    assert!(matches!(t.finetune_step(&images, &masks), Err(Error::Dimension(_))));
}

#[test]
fn training_reduces_loss() {
    let data = samples(4, 16, 2);
    let images: Vec<&GrayImage> = data.iter().map(|d| &d.0).collect();
    let masks: Vec<&SegMask> = data.iter().map(|d| &d.1).collect();
    let net = SSegNet::with_seed(tiny(2), 8).unwrap();
    let mut t = SSegTrainer::new(net, &OptimConfig::default().with_lr(3e-3)).unwrap();
    let before = t.eval_loss(&images, &masks).unwrap();
    for _ in 0..40 {
        t.finetune_step(&images, &masks).unwrap();
    }
    let after = t.eval_loss(&images, &masks).unwrap();
    assert!(after < before, "{before} → {after}");
}

fn ssl_archive(dir: &std::path::Path, name: &str, seed: u64, data_seed: u64) -> std::path::PathBuf {
    let enc = tiny(2).encoder;
    let ssl = SslConfig {
        augment: AugmentConfig {
            patch_size: 4,
            ..Default::default()
        },
        projection_dim: 8,
        ..Default::default()
    };
    let imgs: Vec<GrayImage> = samples(4, 16, 1).into_iter().skip(data_seed as usize % 2).map(|d| d.0).collect();
    let batch: Vec<&GrayImage> = imgs.iter().collect();
    let params = ParamStore::new(seed);
    let mut t = SslPretrainer::new(&enc, ssl.clone(), &OptimConfig::default().with_lr(1e-3), &params, seed).unwrap();
    for _ in 0..3 {
        t.pretrain_step(&batch).unwrap();
    }
    let cfg = SslArchiveConfig {
        encoder: enc,
        ssl,
        optim: OptimConfig::default(),
        batch_size: batch.len(),
        seed,
    };
    let path = dir.join(name);
    Checkpoint::from_params(SSL_MODULE, &cfg, 3, BTreeMap::new(), &params, &[]).unwrap().save(&path).unwrap();
    path
}

#[test]
fn three_init_modes_give_distinct_initial_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = samples(4, 16, 2);
    let images: Vec<&GrayImage> = data.iter().map(|d| &d.0).collect();
    let masks: Vec<&SegMask> = data.iter().map(|d| &d.1).collect();
    let initial = |archive: Option<&std::path::Path>| {
        let net = SSegNet::with_seed(tiny(2), 9).unwrap();
        if let Some(p) = archive {
            net.load_pretrained_encoder(&CheckpointReader::open(p).unwrap()).unwrap();
        }
        SSegTrainer::new(net, &OptimConfig::default()).unwrap().eval_loss(&images, &masks).unwrap()
    };
    let scratch = initial(None);
    let ssl = initial(Some(&ssl_archive(dir.path(), "ssl.ckpt", 1, 0)));
    let ussl = initial(Some(&ssl_archive(dir.path(), "ussl.ckpt", 2, 1)));
    assert!(scratch != ssl && ssl != ussl && scratch != ussl, "{scratch} {ssl} {ussl}");
}

#[test]
fn argmax_of_logits_matches_predict() {
    let net = SSegNet::with_seed(tiny(2), 10).unwrap();
    let data = samples(1, 16, 2);
    let x = data[0].0.to_tensor(&Device::Cpu).unwrap();
    let logits = net.forward_t(&x, false).unwrap();
    let labels: Vec<u8> = logits
        .argmax(1)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<u32>()
        .unwrap()
        .into_iter()
        .map(|l| l as u8)
        .collect();
    assert_eq!(net.predict(&data[0].0).unwrap().labels(), labels.as_slice());
}
