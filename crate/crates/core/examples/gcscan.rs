use freqseg_core::loss::BatchTargets;
use freqseg_core::network::{gradcheck_model, BatchInput, Model, ModelConfig};
use freqseg_core::synth::synth_dataset;
use freqseg_core::tensor::Tensor;

fn main() {
    for model_seed in [101u64, 202, 303] {
        for data_seed in [103u64, 104] {
            for probe_seed in [0xcafeu64, 0xbeef, 0xfeed, 7, 8, 9] {
                let cfg = ModelConfig::with_plan([2, 4, 8, 16], (16, 16));
                let mut model = Model::new(cfg, model_seed).unwrap();
                let data = synth_dataset(2, (16, 16), data_seed).unwrap();
                let full = Tensor::stack_batch(&data.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
                let targets = BatchTargets {
                    region: Tensor::stack_batch(&data.iter().map(|s| &s.targets.region).collect::<Vec<_>>()).unwrap(),
                    edge: Tensor::stack_batch(&data.iter().map(|s| &s.targets.edge).collect::<Vec<_>>()).unwrap(),
                    distance: Tensor::stack_batch(&data.iter().map(|s| &s.targets.distance).collect::<Vec<_>>()).unwrap(),
                };
                let input = BatchInput::decompose(full, model.power_ratio()).unwrap();
                let rep = gradcheck_model(&mut model, &input, &targets, 1e-4, 50,
                    &["sam.alpha", "sam.beta"], probe_seed).unwrap();
                println!("model {model_seed} data {data_seed} probe {probe_seed:#x}: max {:.3e} rows {}",
                    rep.max_rel_err(), rep.rows.len());
            }
        }
    }
}
