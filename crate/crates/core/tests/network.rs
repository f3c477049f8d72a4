//! Architecture contracts: shapes, parameter counts, gradient reach,
//! ablation toggles, determinism.

use freqseg_core::loss::{total_loss, BatchTargets};
use freqseg_core::network::{
    gradcheck_model, predict, BatchInput, FreqBand, Model, ModelConfig, Toggles,
};
use freqseg_core::rng;
use freqseg_core::synth::synth_dataset;
use freqseg_core::tensor::{sigmoid_scalar, Tape, Tensor};
use freqseg_core::Error;

fn tiny_cfg() -> ModelConfig {
    ModelConfig::with_plan([2, 4, 8, 16], (32, 32))
}

fn toggled(mut cfg: ModelConfig, t: Toggles) -> ModelConfig {
    cfg.toggles = t;
    cfg
}

fn batch_of(n: usize, size: (usize, usize), seed: u64) -> (Tensor, BatchTargets) {
    let data = synth_dataset(n, size, seed).unwrap();
    let full = Tensor::stack_batch(&data.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let targets = BatchTargets {
        region: Tensor::stack_batch(&data.iter().map(|s| &s.targets.region).collect::<Vec<_>>())
            .unwrap(),
        edge: Tensor::stack_batch(&data.iter().map(|s| &s.targets.edge).collect::<Vec<_>>())
            .unwrap(),
        distance: Tensor::stack_batch(
            &data.iter().map(|s| &s.targets.distance).collect::<Vec<_>>(),
        )
        .unwrap(),
    };
    (full, targets)
}

/// Independent parameter-count oracle: sum of layer shapes.
fn expected_param_count(cfg: &ModelConfig) -> usize {
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let bn = |c: usize| 2 * c;
    let [c1, c2, c3, c4] = cfg.channel_plan;
    let [p1, p2, p3, p4] = cfg.decoder_plan;

    let encoder = {
        let mut total = 0;
        let mut prev = 3;
        for &c in &cfg.channel_plan {
            total += conv(c, prev, 3) + bn(c) + conv(c, c, 3) + bn(c);
            prev = c;
        }
        total
    };
    let mut total = encoder;
    if cfg.toggles.fd {
        total += 2 * encoder;
        if cfg.toggles.gcb {
            let gcb: usize = cfg.channel_plan.iter().map(|&c| conv(c, c, 1)).sum();
            total += 2 * gcb;
        }
    }
    let fin = if cfg.toggles.fd { 3 * c4 } else { c4 };
    if cfg.toggles.faspp {
        total += 4 * conv(fin, fin, 3) + conv(1, fin, 1) + 2 + conv(p1, 2 * fin, 3);
    } else {
        total += conv(p1, fin, 1);
    }
    total += conv(1, p1, 1); // r0 head

    let ins = [p1 + c3, p1 + c2, p2 + c1, p3];
    let outs = [p1, p2, p3, p4];
    for i in 0..4 {
        total += conv(outs[i], ins[i], 3) + bn(outs[i]) + conv(outs[i], outs[i], 3) + bn(outs[i]);
        let heads = if cfg.toggles.mtl { 3 } else { 1 };
        total += heads * conv(1, outs[i], 1);
    }
    total
}

#[test]
fn parameter_count_matches_layer_shape_oracle() {
    for toggles in [
        Toggles::all_on(),
        Toggles::all_off(),
        Toggles { fd: true, gcb: false, mtl: true, faspp: false },
        Toggles { fd: true, gcb: true, mtl: false, faspp: true },
    ] {
        let cfg = toggled(tiny_cfg(), toggles);
        let model = Model::new(cfg.clone(), 0).unwrap();
        assert_eq!(
            model.parameter_count(),
            expected_param_count(&cfg),
            "toggles {toggles:?}"
        );
    }
}

#[test]
fn enabling_each_toggle_strictly_increases_parameters() {
    let count = |t: Toggles| Model::new(toggled(tiny_cfg(), t), 0).unwrap().parameter_count();
    let full = Toggles::all_on();

    let no_fd = Toggles { fd: false, gcb: false, mtl: true, faspp: true };
    let fd_only = Toggles { fd: true, gcb: false, mtl: true, faspp: true };
    assert!(count(fd_only) > count(no_fd), "fd must add parameters");
    assert!(count(full) > count(fd_only), "gcb must add parameters");
    let no_mtl = Toggles { fd: true, gcb: true, mtl: false, faspp: true };
    assert!(count(full) > count(no_mtl), "mtl must add parameters");
    let no_faspp = Toggles { fd: true, gcb: true, mtl: true, faspp: false };
    assert!(count(full) > count(no_faspp), "faspp must add parameters");

    // Three encoders always outweigh one under the same plan.
    let single = Toggles { fd: false, gcb: false, mtl: true, faspp: true };
    assert!(count(Toggles { fd: true, ..single }) > count(single));
}

#[test]
fn paper_plan_reaches_level4_at_sixteenth_resolution() {
    let cfg = ModelConfig::with_plan([32, 64, 128, 256], (256, 256));
    let mut model = Model::new(cfg, 1).unwrap();
    let mut tape = Tape::new();
    let mut r = rng::rng_from(2);
    let img = tape.constant(Tensor::from_fn([1, 3, 256, 256], |_, _, _, _| rng::uniform(&mut r)));
    let feats = model
        .encoder_forward(&mut tape, img, FreqBand::Full, None, true)
        .unwrap();
    assert_eq!(tape.value(feats[3]).shape(), &[1, 256, 16, 16]);
    assert_eq!(tape.value(feats[0]).shape(), &[1, 32, 128, 128]);
}

#[test]
fn fusion_concat_carries_three_c4_channels() {
    // Plan ending at 256 concatenates 768 channels at (H/16, W/16).
    let cfg = ModelConfig::with_plan([32, 64, 128, 256], (32, 32));
    let mut model = Model::new(cfg, 1).unwrap();
    let (full, _) = batch_of(1, (32, 32), 11);
    let mut tape = Tape::new();
    let (out, _) = model.forward_image(&mut tape, &full, true).unwrap();
    let x = out.sam_input.expect("fd enabled");
    assert_eq!(tape.value(x).shape(), &[1, 768, 2, 2]);
}

#[test]
fn zeroed_gcb_matches_disabled_gcb() {
    let with = toggled(tiny_cfg(), Toggles::all_on());
    let without = toggled(
        tiny_cfg(),
        Toggles { fd: true, gcb: false, mtl: true, faspp: true },
    );
    let mut m_with = Model::new(with, 7).unwrap();
    let mut m_without = Model::new(without, 7).unwrap();

    // Copy the shared layers (same names, same seed ordering gives different
    // draws, so transplant instead), then zero every guided residual.
    let donor: Vec<(String, [usize; 4], Vec<f64>)> = m_with
        .state_entries()
        .into_iter()
        .filter(|(name, _, _)| !name.starts_with("gcb_"))
        .collect();
    m_without.load_state_entries(&donor).unwrap();
    for p in m_with.params.iter_mut() {
        if p.name.starts_with("gcb_") {
            p.value.data_mut().fill(0.0);
        }
    }

    let (full, _) = batch_of(1, (32, 32), 3);
    let mut t1 = Tape::new();
    let (o1, _) = m_with.forward_image(&mut t1, &full, false).unwrap();
    let mut t2 = Tape::new();
    let (o2, _) = m_without.forward_image(&mut t2, &full, false).unwrap();
    let d = t1
        .value(o1.blocks[3].region)
        .max_abs_diff(t2.value(o2.blocks[3].region));
    assert!(d < 1e-9, "zeroed residuals changed the output by {d}");
}

#[test]
fn saturated_gate_kills_beta_gradient() {
    let mut model = Model::new(tiny_cfg(), 5).unwrap();
    for p in model.params.iter_mut() {
        if p.name == "sam.gate.bias" {
            p.value.data_mut().fill(1e6);
        }
    }
    let (full, targets) = batch_of(2, (32, 32), 21);
    let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
    let mut tape = Tape::new();
    let (out, bound) = model.forward(&mut tape, &input, true).unwrap();
    let (loss, _) = total_loss(&mut tape, &out, &targets).unwrap();
    tape.backward(loss).unwrap();

    let alpha_idx = model.params.iter().position(|p| p.name == "sam.alpha").unwrap();
    let beta_idx = model.params.iter().position(|p| p.name == "sam.beta").unwrap();
    let g_alpha = tape.grad(bound[alpha_idx]).unwrap().data()[0];
    let g_beta = tape.grad(bound[beta_idx]).unwrap().data()[0];
    assert_eq!(g_beta, 0.0, "background branch input must vanish at A = 1");
    assert_ne!(g_alpha, 0.0);
}

#[test]
fn zero_attention_scales_and_zero_fuse_bias_give_zero_output() {
    let mut model = Model::new(tiny_cfg(), 5).unwrap();
    for p in model.params.iter_mut() {
        if p.name == "sam.alpha" || p.name == "sam.beta" {
            p.value.data_mut().fill(0.0);
        }
    }
    let (full, _) = batch_of(1, (32, 32), 13);
    let mut tape = Tape::new();
    let (out, _) = model.forward_image(&mut tape, &full, true).unwrap();
    assert!(tape.value(out.fused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_produces_thirteen_maps_on_the_ladder() {
    let cfg = ModelConfig::with_plan([4, 8, 16, 32], (64, 64));
    let mut model = Model::new(cfg, 3).unwrap();
    let (full, _) = batch_of(2, (64, 64), 17);
    let mut tape = Tape::new();
    let (out, _) = model.forward_image(&mut tape, &full, true).unwrap();

    assert_eq!(out.map_count(), 13);
    assert_eq!(tape.value(out.r0).shape(), &[2, 1, 4, 4]);
    for (i, b) in out.blocks.iter().enumerate() {
        let res = 8 << i;
        assert_eq!(tape.value(b.region).shape(), &[2, 1, res, res]);
        assert_eq!(tape.value(b.edge.unwrap()).shape(), &[2, 1, res, res]);
        let d = tape.value(b.distance.unwrap());
        assert_eq!(d.shape(), &[2, 1, res, res]);
        assert!(d.data().iter().all(|&v| v > 0.0 && v < 1.0), "distance head is sigmoid-bounded");
    }
}

#[test]
fn mtl_off_produces_five_region_maps() {
    let cfg = toggled(
        ModelConfig::with_plan([4, 8, 16, 32], (64, 64)),
        Toggles { fd: true, gcb: true, mtl: false, faspp: true },
    );
    let mut model = Model::new(cfg, 3).unwrap();
    let (full, _) = batch_of(1, (64, 64), 19);
    let mut tape = Tape::new();
    let (out, _) = model.forward_image(&mut tape, &full, true).unwrap();
    assert_eq!(out.map_count(), 5);
    assert!(out.blocks.iter().all(|b| b.edge.is_none() && b.distance.is_none()));
}

#[test]
fn outputs_stay_finite_on_random_input() {
    let cfg = ModelConfig::with_plan([4, 8, 16, 32], (64, 64));
    let mut model = Model::new(cfg, 23).unwrap();
    let mut r = rng::rng_from(31);
    let img = Tensor::from_fn([1, 3, 64, 64], |_, _, _, _| rng::normal(&mut r).clamp(-3.0, 3.0));
    let mut img = img;
    for v in img.data_mut() {
        *v = (*v + 3.0) / 6.0;
    }
    let mut tape = Tape::new();
    let (out, _) = model.forward_image(&mut tape, &img, true).unwrap();
    assert!(tape.value(out.r0).all_finite());
    for b in &out.blocks {
        assert!(tape.value(b.region).all_finite());
    }
}

#[test]
fn gradients_reach_every_parameter() {
    let mut model = Model::new(tiny_cfg(), 41).unwrap();
    let (full, targets) = batch_of(2, (32, 32), 43);
    let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
    let mut tape = Tape::new();
    let (out, bound) = model.forward(&mut tape, &input, true).unwrap();
    let (loss, _) = total_loss(&mut tape, &out, &targets).unwrap();
    tape.backward(loss).unwrap();

    for (pi, p) in model.params.iter().enumerate() {
        let g = tape.grad(bound[pi]);
        assert!(g.is_some(), "parameter `{}` received no gradient", p.name);
        if p.name == "sam.alpha" {
            assert!(g.unwrap().data()[0].abs() > 0.0, "alpha gradient vanished");
        }
    }
}

#[test]
fn identical_seeds_are_bitwise_identical() {
    let a = Model::new(tiny_cfg(), 99).unwrap();
    let b = Model::new(tiny_cfg(), 99).unwrap();
    for (pa, pb) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(pa.name, pb.name);
        let ba: Vec<u64> = pa.value.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = pb.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ba, bb, "parameter `{}` differs across runs", pa.name);
    }

    let (full, _) = batch_of(1, (32, 32), 7);
    let (mut a, mut b) = (a, b);
    let mut ta = Tape::new();
    let (oa, _) = a.forward_image(&mut ta, &full, true).unwrap();
    let mut tb = Tape::new();
    let (ob, _) = b.forward_image(&mut tb, &full, true).unwrap();
    assert!(
        ta.value(oa.blocks[3].region)
            .max_abs_diff(tb.value(ob.blocks[3].region))
            < 1e-6
    );
}

#[test]
fn predict_thresholds_strictly() {
    let empty = predict(&Tensor::full([1, 1, 4, 4], -100.0), 0.5);
    assert!(empty.data().iter().all(|&v| v == 0.0));

    // sigmoid(0) = 0.5 is not > 0.5.
    let boundary = predict(&Tensor::zeros([1, 1, 4, 4]), 0.5);
    assert!(boundary.data().iter().all(|&v| v == 0.0));

    let mut r = rng::rng_from(3);
    let logits = Tensor::from_fn([1, 1, 8, 8], |_, _, _, _| rng::uniform_in(&mut r, -4.0, 4.0));
    let mask = predict(&logits, 0.5);
    for (m, z) in mask.data().iter().zip(logits.data()) {
        let expect = if sigmoid_scalar(*z) > 0.5 { 1.0 } else { 0.0 };
        assert_eq!(*m, expect);
    }
}

#[test]
fn config_dependencies_enforced() {
    let mut cfg = tiny_cfg();
    cfg.toggles = Toggles { fd: false, gcb: true, mtl: true, faspp: true };
    assert!(matches!(Model::new(cfg, 0), Err(Error::Config(_))));

    let mut cfg = tiny_cfg();
    cfg.input_size = (40, 64);
    assert!(matches!(Model::new(cfg, 0), Err(Error::Config(_))));
}

#[test]
fn encoder_forward_surface_errors() {
    let cfg = toggled(tiny_cfg(), Toggles::all_off());
    let mut model = Model::new(cfg, 0).unwrap();
    let mut tape = Tape::new();
    let img = tape.constant(Tensor::zeros([1, 3, 32, 32]));
    assert!(matches!(
        model.encoder_forward(&mut tape, img, FreqBand::Low, None, true),
        Err(Error::Config(_))
    ));

    let mut model = Model::new(tiny_cfg(), 0).unwrap();
    let mut tape = Tape::new();
    let img = tape.constant(Tensor::zeros([1, 3, 32, 32]));
    assert!(matches!(
        model.encoder_forward(&mut tape, img, FreqBand::Low, None, true),
        Err(Error::Config(_))
    ));
}

#[test]
fn sam_forward_rejects_mismatched_inputs() {
    let mut model = Model::new(tiny_cfg(), 0).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros([1, 16, 2, 2]));
    let b = tape.constant(Tensor::zeros([1, 16, 2, 2]));
    let c = tape.constant(Tensor::zeros([1, 8, 2, 2]));
    assert!(matches!(
        model.faspp_sam_forward(&mut tape, a, b, c),
        Err(Error::Shape(_))
    ));
    let ok = model.faspp_sam_forward(&mut tape, a, b, b).unwrap();
    assert_eq!(tape.value(ok).dims().1, model.cfg.decoder_plan[0]);
}

#[test]
fn tiny_model_passes_sampled_gradient_check() {
    // Quick version of the full gradient suite: 16x16, plan [2,4,8,16],
    // a dozen probes plus the attention scalars. Batch 2 so the deepest
    // 1x1 feature maps still carry batch statistics.
    let cfg = ModelConfig::with_plan([2, 4, 8, 16], (16, 16));
    let mut model = Model::new(cfg, 77).unwrap();
    let (full, targets) = batch_of(2, (16, 16), 79);
    let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
    let report = gradcheck_model(
        &mut model,
        &input,
        &targets,
        1e-4,
        14,
        &["sam.alpha", "sam.beta"],
        81,
    )
    .unwrap();
    assert!(
        report.passes(1e-3),
        "failing rows: {:?}",
        report.failing(1e-3)
    );
    assert!(report.rows.iter().any(|r| r.name == "sam.alpha"));
    assert!(report.rows.iter().any(|r| r.name == "sam.beta"));
}
