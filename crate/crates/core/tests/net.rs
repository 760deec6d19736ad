mod common;

use deepgf::autodiff::{Graph, Shape, Tensor};
use deepgf::guided::{guided_filter, GuidedFilterParams};
use deepgf::image::{ImagePair, Mask, PairMeta, Task};
use deepgf::net::{build_generator, Architecture, Fusion, GeneratorConfig, Upsample};
use deepgf::phantom::{make_dataset, PhantomSpec};
use deepgf::pipeline::{forward_pipeline, guidance_map, predict, upsampled_input, Variant};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

/// Layer-by-layer parameter count written out independently of the builder.
fn expected_params(c: &GeneratorConfig) -> usize {
    let b = c.base_channels;
    match c.architecture {
        Architecture::UnetMini => {
            let d = c.encoder_depth;
            let ch = |l: usize| b << l;
            let mut n = 0;
            for l in 0..d {
                let prev = if l == 0 { 1 } else { ch(l - 1) };
                n += 2 * (conv(prev, ch(l), 3) + conv(ch(l), ch(l), 3));
            }
            let skip = |l: usize| if c.fusion == Fusion::AllLevels || l == d - 1 { 2 * ch(l) } else { ch(l) };
            let mut cur = skip(d - 1);
            for l in (0..d - 1).rev() {
                let up_out = if c.upsample == Upsample::PixelShuffle { 4 * ch(l) } else { ch(l) };
                n += conv(cur, up_out, 3) + conv(ch(l) + skip(l), ch(l), 3);
                cur = ch(l);
            }
            n + conv(cur, 1, 1)
        }
        Architecture::WdsrMini => {
            let s = c.task.scale();
            let w = b * c.expansion;
            conv(1, b, 3)
                + conv(1, b, 3)
                + conv(b, b, 3)
                + conv(2 * b, b, 1)
                + c.res_blocks * (conv(b, w, 3) + conv(w, b, 3))
                + 2 * conv(b, s * s, 3)
        }
    }
}

#[test]
fn parameter_counts_match_closed_form() {
    let sr = Task::SuperResolution;
    // hand-summed reference values
    assert_eq!(build_generator(&GeneratorConfig::unet_mini(sr)).unwrap().parameter_count(), 12361);
    assert_eq!(build_generator(&GeneratorConfig::wdsr_mini(sr)).unwrap().parameter_count(), 44864);

    let mut configs = Vec::new();
    for task in [sr, Task::Denoising] {
        for depth in 1..=3 {
            for fusion in [Fusion::AllLevels, Fusion::Bottleneck] {
                for upsample in [Upsample::BilinearConv, Upsample::PixelShuffle] {
                    configs.push(GeneratorConfig {
                        encoder_depth: depth,
                        fusion,
                        upsample,
                        base_channels: 4,
                        ..GeneratorConfig::unet_mini(task)
                    });
                }
            }
        }
        for (blocks, exp) in [(1, 1), (2, 3)] {
            configs.push(GeneratorConfig {
                res_blocks: blocks,
                expansion: exp,
                base_channels: 6,
                ..GeneratorConfig::wdsr_mini(task)
            });
        }
    }
    for c in configs {
        let net = build_generator(&c).unwrap();
        assert_eq!(net.parameter_count(), expected_params(&c), "{c:?}");
        let total: usize = net.params().iter().map(|t| t.numel()).sum();
        assert_eq!(total, net.parameter_count());
    }
}

fn phantom_pair(task: Task, seed: u64) -> ImagePair {
    make_dataset(&PhantomSpec::default().with_seed(seed), task, None, 1).unwrap().remove(0)
}

#[test]
fn unet_output_shape() {
    let cfg = GeneratorConfig::unet_mini(Task::Denoising);
    let net = build_generator(&cfg).unwrap();
    let pair = phantom_pair(Task::Denoising, 1);
    let m = guidance_map(&net, &pair.input, &pair.guide).unwrap();
    assert_eq!(m.dims(), (64, 64));
    for task in [Task::SuperResolution, Task::Denoising] {
        for arch in [GeneratorConfig::unet_mini(task), GeneratorConfig::wdsr_mini(task)] {
            let pair = phantom_pair(task, 2);
            let net = build_generator(&arch).unwrap();
            let out = forward_pipeline(Some(&net), &pair, Variant::WithoutGf, &GuidedFilterParams::default()).unwrap();
            assert_eq!(out.shape(), Shape::new(1, 64, 64));
        }
    }
}

#[test]
fn same_seed_same_weights() {
    let c = GeneratorConfig::wdsr_mini(Task::SuperResolution).with_seed(9);
    assert_eq!(build_generator(&c).unwrap().params(), build_generator(&c).unwrap().params());
    let other = build_generator(&c.clone().with_seed(10)).unwrap();
    assert_ne!(build_generator(&c).unwrap().params(), other.params());
}

/// Network with every parameter randomized, so nothing starts at zero.
fn random_net(cfg: &GeneratorConfig, seed: u64) -> deepgf::net::Network {
    let mut net = build_generator(cfg).unwrap();
    for (k, p) in net.params_mut().iter_mut().enumerate() {
        let r = common::random_image(p.numel(), 1, seed + k as u64);
        *p = Tensor::new(p.shape(), r.pixels().iter().map(|v| 0.2 * (v - 0.5)).collect()).unwrap();
    }
    net
}

#[test]
fn with_gf_equals_filter_of_guidance() {
    for task in [Task::SuperResolution, Task::Denoising] {
        let net = random_net(&GeneratorConfig::wdsr_mini(task), 30);
        let pair = phantom_pair(task, 3);
        let gf = GuidedFilterParams::new(3, 1e-3);
        let p = predict(Some(&net), &pair, Variant::WithGf, &gf).unwrap();
        let m = guidance_map(&net, &pair.input, &pair.guide).unwrap();
        let direct = guided_filter(&upsampled_input(&pair).unwrap(), &m, &gf).unwrap();
        assert!(p.max_abs_diff(&direct) <= 1e-12);
    }
}

#[test]
fn untrained_with_gf_is_only_gf() {
    let net = build_generator(&GeneratorConfig::wdsr_mini(Task::SuperResolution)).unwrap();
    let pair = phantom_pair(Task::SuperResolution, 4);
    let gf = GuidedFilterParams::default();
    let a = predict(Some(&net), &pair, Variant::WithGf, &gf).unwrap();
    let b = predict(None, &pair, Variant::OnlyGf, &gf).unwrap();
    assert_eq!(a, b);
    let c = predict(Some(&net), &pair, Variant::WithoutGf, &gf).unwrap();
    assert_eq!(c, upsampled_input(&pair).unwrap());
}

#[test]
fn only_gf_self_guidance() {
    let img = common::random_image(24, 24, 5);
    let pair = ImagePair {
        input: img.clone(),
        guide: img.clone(),
        ground_truth: img.clone(),
        mask: Mask::full(24, 24),
        meta: PairMeta {
            task: Task::Denoising,
            degradation: "identity".into(),
            seed: 0,
        },
    };
    let p = predict(None, &pair, Variant::OnlyGf, &GuidedFilterParams::new(2, 1e-10)).unwrap();
    assert!(p.max_abs_diff(&img) < 1e-6);
}

#[test]
fn variant_task_mismatch() {
    let net = build_generator(&GeneratorConfig::wdsr_mini(Task::SuperResolution)).unwrap();
    let pair = phantom_pair(Task::Denoising, 6);
    let gf = GuidedFilterParams::default();
    assert!(matches!(
        predict(Some(&net), &pair, Variant::WithGf, &gf),
        Err(deepgf::Error::Config(_))
    ));
    assert!(matches!(
        predict(None, &pair, Variant::WithoutGf, &gf),
        Err(deepgf::Error::Config(_))
    ));
}

#[test]
fn conv_layer_matches_direct_loop() {
    // first generator layer against the oracle convolution
    let net = random_net(&GeneratorConfig::wdsr_mini(Task::Denoising), 40);
    let names = net.param_names();
    let wi = names.iter().position(|n| n == "head.weight").unwrap();
    let (w, b) = (&net.params()[wi], &net.params()[wi + 1]);
    let x = common::random_image(10, 8, 41);
    let mut g = Graph::new();
    let vx = g.constant(Tensor::from_image(&x));
    let vw = g.constant(w.clone());
    let vb = g.constant(b.clone());
    let y = g.conv2d(vx, vw, vb, deepgf::autodiff::ConvSpec::SAME).unwrap();
    let (want, _, _) = common::conv2d_direct(x.pixels(), 1, 8, 10, w.data(), b.data(), 3, 1, 1);
    assert!(common::max_abs_diff(g.value(y).data(), &want) < 1e-13);
}
