use freqseg_core::augment::AugmentConfig;
use freqseg_core::loss::total_loss;
use freqseg_core::metrics::{metrics, MetricsReport};
use freqseg_core::network::{predict, BatchInput, Model, ModelConfig};
use freqseg_core::optim::AdamConfig;
use freqseg_core::synth::synth_dataset;
use freqseg_core::tensor::{Tape, Tensor};
use freqseg_core::train::{train_loop, Sample, TrainConfig};
use std::time::Instant;

fn iou_mode(model: &mut Model, data: &[Sample], training: bool) -> f64 {
    let full = Tensor::stack_batch(&data.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
    let mut tape = Tape::new();
    let (out, _) = model.forward(&mut tape, &input, training).unwrap();
    let r4 = tape.value(out.blocks[3].region);
    let mut reports = vec![];
    for (ni, s) in data.iter().enumerate() {
        let mask = predict(&r4.slice_batch(ni), 0.5);
        reports.push(metrics(&mask, &s.targets.region).unwrap());
    }
    MetricsReport::mean(&reports).iou
}

fn main() {
    let lr: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let steps: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let seed: u64 = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(7);
    let chunks: usize = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(10);
    let mut data = synth_dataset(8, (64, 64), seed).unwrap();
    let model_cfg = ModelConfig::with_plan([4, 8, 16, 32], (64, 64));
    let mut model = Model::new(model_cfg, seed).unwrap();
    let t0 = Instant::now();
    let mut first = None;
    let mut last = 0.0;
    // run in chunks so we can compare train/eval IoU between them
    let per = steps / chunks;
    for chunk in 0..chunks {
        let cfg = TrainConfig {
            lr_max: freqseg_core::schedule::cosine_lr(chunk * per, steps, lr, 1e-6).unwrap(),
            lr_min: freqseg_core::schedule::cosine_lr((chunk + 1) * per, steps, lr, 1e-6).unwrap(),
            epochs: per,
            batch_size: 8,
            seed,
            image_size: (64, 64),
            augment: AugmentConfig { hflip_prob: 0.0, rot_deg: 0.0 },
            adam: AdamConfig::default(),
        };
        let h = train_loop(&mut model, &mut data, &cfg).unwrap();
        if first.is_none() { first = h.first_total(); }
        last = h.last_total().unwrap();
        let train_iou = iou_mode(&mut model, &data, true);
        let eval_iou = iou_mode(&mut model, &data, false);
        println!("step {:>4}: loss {:.4}  iou(train-mode) {:.4}  iou(eval-mode) {:.4}",
            (chunk + 1) * per, last, train_iou, eval_iou);
    }
    // check logits stats
    let full = Tensor::stack_batch(&data.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
    let mut tape = Tape::new();
    let (out, _) = model.forward(&mut tape, &input, true).unwrap();
    let r4 = tape.value(out.blocks[3].region);
    let mx = r4.data().iter().cloned().fold(f64::MIN, f64::max);
    let mn = r4.data().iter().cloned().fold(f64::MAX, f64::min);
    let (_, rep) = total_loss(&mut tape, &out, &freqseg_core::loss::BatchTargets {
        region: Tensor::stack_batch(&data.iter().map(|s| &s.targets.region).collect::<Vec<_>>()).unwrap(),
        edge: Tensor::stack_batch(&data.iter().map(|s| &s.targets.edge).collect::<Vec<_>>()).unwrap(),
        distance: Tensor::stack_batch(&data.iter().map(|s| &s.targets.distance).collect::<Vec<_>>()).unwrap(),
    }).unwrap();
    println!("r4 logits range [{mn:.2}, {mx:.2}]");
    for (name, v) in rep.components() { println!("  {name} = {v:.5}"); }
    println!("ratio {:.4}  wall {:?}", last / first.unwrap(), t0.elapsed());
}
