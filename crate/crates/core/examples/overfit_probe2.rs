use freqseg_core::augment::AugmentConfig;
use freqseg_core::network::{Model, ModelConfig};
use freqseg_core::optim::AdamConfig;
use freqseg_core::synth::synth_dataset;
use freqseg_core::train::{train_loop, TrainConfig};

fn main() {
    let lr: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let lr_min: f64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let batch: usize = std::env::args().nth(3).unwrap().parse().unwrap();
    let epochs: usize = std::env::args().nth(4).unwrap().parse().unwrap();
    let seed: u64 = std::env::args().nth(5).unwrap().parse().unwrap();
    let mut data = synth_dataset(8, (64, 64), seed).unwrap();
    let cfg = TrainConfig {
        lr_max: lr, lr_min, epochs, batch_size: batch, seed,
        image_size: (64, 64),
        augment: AugmentConfig { hflip_prob: 0.0, rot_deg: 0.0 },
        adam: AdamConfig::default(),
    };
    let mut model = Model::new(ModelConfig::with_plan([4, 8, 16, 32], (64, 64)), seed).unwrap();
    let h = train_loop(&mut model, &mut data, &cfg).unwrap();
    let ious: Vec<f64> = h.steps.iter().filter_map(|s| s.train_iou).collect();
    let snaps: Vec<String> = ious.iter().enumerate()
        .filter(|(i, _)| (i + 1) % (epochs / 5).max(1) == 0)
        .map(|(i, v)| format!("e{}:{:.3}", i + 1, v)).collect();
    println!("lr {lr}->{lr_min} batch {batch} epochs {epochs} seed {seed}: iou {} ratio {:.4} [{}]",
        h.final_train_iou().unwrap(), h.last_total().unwrap() / h.first_total().unwrap(), snaps.join(" "));
}
