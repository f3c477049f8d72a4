//! Optimization loop, evaluation, and the ablation runner.

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::loss::{total_loss, BatchTargets, LossReport};
use crate::metrics::{metrics, MetricsReport};
use crate::network::{predict, BatchInput, Model, ModelConfig, Toggles};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::schedule::cosine_lr;
use crate::spectral::{self, PowerSpectrumRatio};
use crate::targets::MultiTaskTargets;
use crate::tensor::{Tape, Tensor};

/// One training sample: image, ground truth, and (lazily) its cached
/// frequency decomposition. `low + high` always reproduces the image.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub targets: MultiTaskTargets,
    pub decomposition: Option<(Tensor, Tensor)>,
}

impl Sample {
    pub fn new(image: Tensor, region: Tensor) -> Result<Self> {
        let (n, c, h, w) = image.dims();
        if n != 1 || c != 3 {
            return Err(Error::Shape(format!(
                "sample image must be (1, 3, H, W), got {:?}",
                image.shape()
            )));
        }
        if region.dims() != (1, 1, h, w) {
            return Err(Error::Shape(format!(
                "region mask {:?} does not match image ({h}, {w})",
                region.shape()
            )));
        }
        let targets = MultiTaskTargets::from_region(region)?;
        Ok(Sample { image, targets, decomposition: None })
    }

    /// Compute and cache the frequency decomposition.
    pub fn ensure_decomposition(&mut self, r: PowerSpectrumRatio) -> Result<()> {
        if self.decomposition.is_none() {
            let d = spectral::decompose(&self.image, r)?;
            self.decomposition = Some((d.low, d.high));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub image_size: (usize, usize),
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-4,
            lr_min: 1e-6,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            image_size: (256, 256),
            augment: AugmentConfig { hflip_prob: 0.5, rot_deg: 5.0 },
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr_min <= lr_max, got ({}, {})",
                self.lr_min, self.lr_max
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.augment.hflip_prob) {
            return Err(Error::Config("hflip_prob must lie in [0, 1]".into()));
        }
        if self.augment.rot_deg < 0.0 {
            return Err(Error::Config("rot_deg must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss components of one step, plus the training IoU on epoch boundaries.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
    pub train_iou: Option<f64>,
}

/// Line-oriented training history; serializes to CSV.
#[derive(Clone, Debug, Default)]
pub struct History {
    pub steps: Vec<StepRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.steps.first() {
            out.push_str("step,lr");
            for (name, _) in first.report.components() {
                out.push(',');
                out.push_str(&name);
            }
            out.push_str(",train_iou\n");
        }
        for s in &self.steps {
            out.push_str(&format!("{},{:e}", s.step, s.lr));
            for (_, v) in s.report.components() {
                out.push_str(&format!(",{v}"));
            }
            match s.train_iou {
                Some(iou) => out.push_str(&format!(",{iou}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn first_total(&self) -> Option<f64> {
        self.steps.first().map(|s| s.report.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.steps.last().map(|s| s.report.total)
    }

    pub fn final_train_iou(&self) -> Option<f64> {
        self.steps.iter().rev().find_map(|s| s.train_iou)
    }
}

fn check_data(model: &Model, cfg: &TrainConfig, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.image_size != model.cfg.input_size {
        return Err(Error::Config(format!(
            "train config size {:?} does not match model input {:?}",
            cfg.image_size, model.cfg.input_size
        )));
    }
    for (i, s) in data.iter().enumerate() {
        let (_, _, h, w) = s.image.dims();
        if (h, w) != cfg.image_size {
            return Err(Error::Config(format!(
                "sample {i} is ({h}, {w}), expected {:?}",
                cfg.image_size
            )));
        }
    }
    Ok(())
}

fn assemble_batch(model: &Model, samples: &[&Sample]) -> Result<(BatchInput, BatchTargets)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let full = Tensor::stack_batch(&images)?;
    let input = if model.cfg.toggles.fd {
        let mut lows = Vec::with_capacity(samples.len());
        let mut highs = Vec::with_capacity(samples.len());
        for s in samples {
            let (low, high) = s
                .decomposition
                .as_ref()
                .ok_or_else(|| Error::Config("sample missing cached decomposition".into()))?;
            lows.push(low);
            highs.push(high);
        }
        let low = Tensor::stack_batch(&lows)?;
        let high = Tensor::stack_batch(&highs)?;
        if cfg!(debug_assertions) {
            let mut sum = low.clone();
            for (s, h) in sum.data_mut().iter_mut().zip(high.data()) {
                *s += h;
            }
            debug_assert!(
                full.max_abs_diff(&sum) < 1e-6,
                "decomposition no longer sums to the image"
            );
        }
        BatchInput { full, low: Some(low), high: Some(high) }
    } else {
        BatchInput::full_only(full)
    };
    let targets = BatchTargets {
        region: Tensor::stack_batch(&samples.iter().map(|s| &s.targets.region).collect::<Vec<_>>())?,
        edge: Tensor::stack_batch(&samples.iter().map(|s| &s.targets.edge).collect::<Vec<_>>())?,
        distance: Tensor::stack_batch(
            &samples.iter().map(|s| &s.targets.distance).collect::<Vec<_>>(),
        )?,
    };
    Ok((input, targets))
}

/// Mean per-image metrics of the model on a sample set (eval mode,
/// sigmoid threshold on the final region map).
pub fn evaluate(
    model: &mut Model,
    data: &mut [Sample],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let r = model.power_ratio();
    if model.cfg.toggles.fd {
        for s in data.iter_mut() {
            s.ensure_decomposition(r)?;
        }
    }
    let mut per_image = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (input, _) = assemble_batch(model, &refs)?;
        let mut tape = Tape::new();
        let (out, _) = model.forward(&mut tape, &input, false)?;
        let r4 = tape.value(out.blocks[3].region);
        for (ni, s) in chunk.iter().enumerate() {
            let mask = predict(&r4.slice_batch(ni), threshold);
            per_image.push(metrics(&mask, &s.targets.region)?);
        }
    }
    Ok(MetricsReport::mean(&per_image))
}

/// Full optimization loop: shuffled mini-batches, optional augmentation,
/// Adam with cosine-annealed learning rate, per-epoch training metrics.
///
/// Aborts with a diagnostic naming the first non-finite loss component if
/// training diverges.
pub fn train_loop(model: &mut Model, data: &mut Vec<Sample>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_data(model, cfg, data)?;

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let augment_on = cfg.augment.hflip_prob > 0.0 || cfg.augment.rot_deg > 0.0;
    let ratio = model.power_ratio();

    let mut adam = Adam::new(cfg.adam);
    let mut history = History::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_rng = rng::rng_from(rng::derive(cfg.seed, 1, epoch as u64, 0));
        rng::shuffle(&mut epoch_rng, &mut order);

        for chunk in order.chunks(cfg.batch_size) {
            // Augmented samples are rebuilt (and re-decomposed) per draw;
            // otherwise the cached decomposition is reused.
            let mut owned: Vec<Sample> = Vec::new();
            if augment_on {
                for &idx in chunk {
                    let mut s_rng = rng::rng_from(rng::derive(
                        cfg.seed,
                        2,
                        epoch as u64,
                        idx as u64,
                    ));
                    let mut s = augment::augment(&data[idx], &cfg.augment, &mut s_rng)?;
                    if model.cfg.toggles.fd {
                        s.ensure_decomposition(ratio)?;
                    }
                    owned.push(s);
                }
            } else if model.cfg.toggles.fd {
                for &idx in chunk {
                    data[idx].ensure_decomposition(ratio)?;
                }
            }
            let batch_refs: Vec<&Sample> = if augment_on {
                owned.iter().collect()
            } else {
                chunk.iter().map(|&i| &data[i]).collect()
            };

            let (input, targets) = assemble_batch(model, &batch_refs)?;
            let mut tape = Tape::new();
            let (outputs, bound) = model.forward(&mut tape, &input, true)?;
            let (loss_id, report) = total_loss(&mut tape, &outputs, &targets)?;
            if let Some(bad) = report.first_non_finite() {
                return Err(Error::NonFinite { component: bad, step });
            }
            tape.backward(loss_id)?;
            let grads: Vec<Option<Tensor>> =
                bound.iter().map(|&id| tape.grad(id).cloned()).collect();
            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)?;
            adam.step(&mut model.params, &grads, lr);

            history.steps.push(StepRecord { step, lr, report, train_iou: None });
            step += 1;
        }

        let m = evaluate(model, data, cfg.batch_size, 0.5)?;
        if let Some(last) = history.steps.last_mut() {
            last.train_iou = Some(m.iou);
        }
    }
    Ok(history)
}

/// One ablation row: toggles, exact parameter count, final training IoU.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub param_count: usize,
    pub iou: f64,
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |b: bool| if b { "x" } else { "-" };
        writeln!(f, "{:<4} {:<4} {:<4} {:<7} {:>10} {:>10}", "FD", "GCB", "MTL", "F-ASPP", "params", "IoU")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<4} {:<4} {:<4} {:<7} {:>10} {:>10.6}",
                mark(r.toggles.fd),
                mark(r.toggles.gcb),
                mark(r.toggles.mtl),
                mark(r.toggles.faspp),
                r.param_count,
                r.iou
            )?;
        }
        Ok(())
    }
}

/// The five toggle rows of the ablation study, in published order.
pub fn default_ablation_rows() -> Vec<Toggles> {
    vec![
        Toggles { fd: false, gcb: false, mtl: false, faspp: false },
        Toggles { fd: true, gcb: true, mtl: false, faspp: false },
        Toggles { fd: true, gcb: false, mtl: true, faspp: false },
        Toggles { fd: true, gcb: true, mtl: true, faspp: false },
        Toggles { fd: true, gcb: true, mtl: true, faspp: true },
    ]
}

/// Train and evaluate each toggle row under identical seeds and budget.
pub fn ablation_run(
    base: &ModelConfig,
    cfg: &TrainConfig,
    data: &[Sample],
    rows: &[Toggles],
) -> Result<AblationTable> {
    let mut table = AblationTable { rows: Vec::with_capacity(rows.len()) };
    for (i, &toggles) in rows.iter().enumerate() {
        if toggles.gcb && !toggles.fd {
            return Err(Error::Config(format!(
                "ablation row {}: gcb requires fd (guided residuals read the full-frequency encoder)",
                i + 1
            )));
        }
        let mut row_cfg = base.clone();
        row_cfg.toggles = toggles;
        let mut model = Model::new(row_cfg, cfg.seed)?;
        let mut row_data = data.to_vec();
        let history = train_loop(&mut model, &mut row_data, cfg)?;
        table.rows.push(AblationRow {
            toggles,
            param_count: model.parameter_count(),
            iou: history.final_train_iou().unwrap_or(0.0),
        });
    }
    Ok(table)
}
