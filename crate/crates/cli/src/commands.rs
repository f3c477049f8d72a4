//! Implementations behind the `freqseg` subcommands.

use crate::config::{DataKind, RunConfig};
use crate::{checkpoint, imageio, CliError, Result};
use freqseg_core::metrics::MetricsReport;
use freqseg_core::network::{gradcheck_model, BatchInput, Model, ModelConfig};
use freqseg_core::spectral::{self, PowerSpectrumRatio};
use freqseg_core::targets;
use freqseg_core::tensor::gradcheck::{primitive_checks, GradCheckReport};
use freqseg_core::tensor::Tensor;
use freqseg_core::train::{ablation_run, default_ablation_rows, evaluate, train_loop, Sample};
use freqseg_core::{loss, synth};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

/// `decompose`: split an image into low/high-frequency components.
///
/// Writes `<stem>_low.png`, `<stem>_high.png` (high shifted by +0.5 for
/// viewing), exact `.f32` sidecars for both, and `<stem>_mask.pgm`.
pub fn cmd_decompose(input: &Path, r: f64, out_dir: &Path) -> Result<()> {
    let ratio = PowerSpectrumRatio::new(r).map_err(CliError::from)?;
    let image = imageio::load_image(input)?;
    let d = spectral::decompose(&image, ratio).map_err(CliError::from)?;
    std::fs::create_dir_all(out_dir)?;
    let stem = stem_of(input);

    imageio::save_png(&out_dir.join(format!("{stem}_low.png")), &d.low)?;
    let mut high_vis = d.high.clone();
    for v in high_vis.data_mut() {
        *v = (*v + 0.5).clamp(0.0, 1.0);
    }
    imageio::save_png(&out_dir.join(format!("{stem}_high.png")), &high_vis)?;
    imageio::save_f32(&out_dir.join(format!("{stem}_low.f32")), &d.low)?;
    imageio::save_f32(&out_dir.join(format!("{stem}_high.f32")), &d.high)?;

    let (h, w) = d.mask.dims();
    let mask_img = Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
        if d.mask.contains(y, x) {
            1.0
        } else {
            0.0
        }
    });
    imageio::save_pgm(&out_dir.join(format!("{stem}_mask.pgm")), &mask_img)?;

    println!(
        "decomposed {} (r = {r}): cutoff radius^2 = {}, {} of {} bins in the low mask",
        input.display(),
        d.mask.radius_squared(),
        d.mask.ones(),
        h * w
    );
    Ok(())
}

/// `gen-targets`: derive edge and distance ground truth from a mask image.
pub fn cmd_gen_targets(mask_path: &Path, out_dir: &Path) -> Result<()> {
    let raw = imageio::load_image(mask_path)?;
    let (_, _, h, w) = raw.dims();
    // Threshold > 127/255 on the first channel.
    let region = Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
        if raw.at(0, 0, y, x) > 127.0 / 255.0 {
            1.0
        } else {
            0.0
        }
    });
    let edge = targets::sobel_edge(&region).map_err(CliError::from)?;
    let dist = targets::distance_map(&region).map_err(CliError::from)?;

    std::fs::create_dir_all(out_dir)?;
    let stem = stem_of(mask_path);
    imageio::save_png(&out_dir.join(format!("{stem}_edge.png")), &edge)?;
    imageio::save_png(&out_dir.join(format!("{stem}_dist.png")), &dist)?;
    imageio::save_f32(&out_dir.join(format!("{stem}_dist.f32")), &dist)?;
    println!(
        "targets for {}: {} edge pixels, max distance {}",
        mask_path.display(),
        edge.data().iter().filter(|&&v| v == 1.0).count(),
        dist.data().iter().cloned().fold(0.0, f64::max)
    );
    Ok(())
}

/// Load a paired image/mask directory: `<path>/images/<stem>.png` with
/// `<path>/masks/<stem>.png`, matched by stem, sorted for determinism.
pub fn load_directory_dataset(path: &Path, expect: (usize, usize)) -> Result<Vec<Sample>> {
    let images_dir = path.join("images");
    let masks_dir = path.join("masks");
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&images_dir)
        .map_err(|e| CliError::Io(format!("cannot list {}: {e}", images_dir.display())))?
    {
        let p = entry?.path();
        if p.is_file() {
            stems.push((stem_of(&p), p));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::config(format!("no images found under {}", images_dir.display())));
    }
    let mut samples = Vec::with_capacity(stems.len());
    for (stem, img_path) in stems {
        let mask_path = masks_dir.join(format!("{stem}.png"));
        let image = imageio::load_image_rgb(&img_path)?;
        let (_, _, h, w) = image.dims();
        if (h, w) != expect {
            return Err(CliError::Core(freqseg_core::Error::Shape(format!(
                "{}: image is ({h}, {w}), run expects {:?}",
                img_path.display(),
                expect
            ))));
        }
        let mask_raw = imageio::load_image(&mask_path)?;
        if mask_raw.dims().2 != h || mask_raw.dims().3 != w {
            return Err(CliError::Core(freqseg_core::Error::Shape(format!(
                "{}: mask does not match its image",
                mask_path.display()
            ))));
        }
        let region = Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
            if mask_raw.at(0, 0, y, x) > 127.0 / 255.0 {
                1.0
            } else {
                0.0
            }
        });
        samples.push(Sample::new(image, region).map_err(CliError::from)?);
    }
    Ok(samples)
}

fn build_dataset(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match cfg.data.kind {
        DataKind::Synthetic => {
            synth::synth_dataset(cfg.data.n, cfg.train.image_size, cfg.train.seed)
                .map_err(CliError::from)
        }
        DataKind::Directory => {
            load_directory_dataset(Path::new(&cfg.data.path), cfg.train.image_size)
        }
    }
}

fn print_metrics_table(tag: &str, m: &MetricsReport) {
    println!("{:<12} {:>10}", "metric", tag);
    println!("{:<12} {:>10.6}", "accuracy", m.accuracy);
    println!("{:<12} {:>10.6}", "precision", m.precision);
    println!("{:<12} {:>10.6}", "recall", m.recall);
    println!("{:<12} {:>10.6}", "f1", m.f1);
    println!("{:<12} {:>10.6}", "iou", m.iou);
}

fn metric_lines(m: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "accuracy={}", m.accuracy);
    let _ = writeln!(s, "precision={}", m.precision);
    let _ = writeln!(s, "recall={}", m.recall);
    let _ = writeln!(s, "f1={}", m.f1);
    let _ = writeln!(s, "iou={}", m.iou);
    s
}

/// `train`: run the optimization loop, write history CSV and checkpoint,
/// print final training (and validation) metrics.
pub fn cmd_train(config_path: &Path, out: &Path, history_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    cfg.apply_env_seed()?;

    let all = build_dataset(&cfg)?;
    let n_train = ((all.len() as f64) * cfg.data.split).ceil() as usize;
    let n_train = n_train.clamp(1, all.len());
    let mut train_set: Vec<Sample> = all[..n_train].to_vec();
    let mut val_set: Vec<Sample> = all[n_train..].to_vec();

    let mut model = Model::new(cfg.model.clone(), cfg.train.seed).map_err(CliError::from)?;
    println!(
        "training: {} samples at {:?}, {} parameters, {} epochs x batch {}",
        train_set.len(),
        cfg.train.image_size,
        model.parameter_count(),
        cfg.train.epochs,
        cfg.train.batch_size
    );
    let history = train_loop(&mut model, &mut train_set, &cfg.train).map_err(CliError::from)?;

    std::fs::write(history_path, history.to_csv())?;
    checkpoint::save_to(out, &model)?;

    let train_metrics =
        evaluate(&mut model, &mut train_set, cfg.train.batch_size, 0.5).map_err(CliError::from)?;
    print_metrics_table("train", &train_metrics);
    if !val_set.is_empty() {
        let val_metrics =
            evaluate(&mut model, &mut val_set, cfg.train.batch_size, 0.5).map_err(CliError::from)?;
        print_metrics_table("val", &val_metrics);
    }
    println!(
        "wrote {} and {} (final loss {:.6}, final train IoU {:.6})",
        out.display(),
        history_path.display(),
        history.last_total().unwrap_or(f64::NAN),
        history.final_train_iou().unwrap_or(f64::NAN),
    );
    Ok(())
}

/// Parse an eval data spec: a directory path or `synthetic:<seed>:<n>`.
fn eval_dataset(spec: &str, size: (usize, usize)) -> Result<Vec<Sample>> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 2 {
            return Err(CliError::config(format!(
                "expected synthetic:<seed>:<n>, got `{spec}`"
            )));
        }
        let seed: u64 = parts[0]
            .parse()
            .map_err(|_| CliError::config(format!("bad seed in `{spec}`")))?;
        let n: usize = parts[1]
            .parse()
            .map_err(|_| CliError::config(format!("bad count in `{spec}`")))?;
        return synth::synth_dataset(n, size, seed).map_err(CliError::from);
    }
    load_directory_dataset(Path::new(spec), size)
}

/// `eval`: score a checkpoint on a dataset.
pub fn cmd_eval(ckpt: &Path, data_spec: &str, threshold: f64) -> Result<()> {
    let mut model = checkpoint::load_from(ckpt)?;
    let mut data = eval_dataset(data_spec, model.cfg.input_size)?;
    let batch = 8.min(data.len()).max(1);
    // Threshold > 1 is permitted: predictions are then always empty.
    let m = evaluate(&mut model, &mut data, batch, threshold).map_err(CliError::from)?;
    print_metrics_table("eval", &m);
    print!("{}", metric_lines(&m));
    Ok(())
}

/// `gradcheck`: finite-difference checks of every primitive plus the full
/// tiny model (attention scalars included). Exit 0 iff all errors < tol.
pub fn cmd_gradcheck(tol: f64) -> Result<()> {
    let eps = 1e-4;
    let mut report = primitive_checks(eps, 0x5eed).map_err(CliError::from)?;

    // Full model: 16x16 input, plan [2,4,8,16], batch 2, 50 sampled
    // parameters always including the attention scalars.
    let cfg = ModelConfig::with_plan([2, 4, 8, 16], (16, 16));
    let mut model = Model::new(cfg, 303).map_err(CliError::from)?;
    let data = synth::synth_dataset(2, (16, 16), 104).map_err(CliError::from)?;
    let full =
        Tensor::stack_batch(&data.iter().map(|s| &s.image).collect::<Vec<_>>()).map_err(CliError::from)?;
    let targets = loss::BatchTargets {
        region: Tensor::stack_batch(&data.iter().map(|s| &s.targets.region).collect::<Vec<_>>())
            .map_err(CliError::from)?,
        edge: Tensor::stack_batch(&data.iter().map(|s| &s.targets.edge).collect::<Vec<_>>())
            .map_err(CliError::from)?,
        distance: Tensor::stack_batch(
            &data.iter().map(|s| &s.targets.distance).collect::<Vec<_>>(),
        )
        .map_err(CliError::from)?,
    };
    let input =
        BatchInput::decompose(full, model.power_ratio()).map_err(CliError::from)?;
    let model_report = gradcheck_model(
        &mut model,
        &input,
        &targets,
        eps,
        50,
        &["sam.alpha", "sam.beta"],
        0xfeed,
    )
    .map_err(CliError::from)?;
    for row in model_report.rows {
        report.rows.push(freqseg_core::tensor::gradcheck::GradCheckRow {
            name: format!("model.{}", row.name),
            ..row
        });
    }

    print_gradcheck_report(&report, tol);
    if report.passes(tol) {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{} of {} gradient rows at or above tolerance {tol}",
            report.failing(tol).len(),
            report.rows.len()
        )))
    }
}

fn print_gradcheck_report(report: &GradCheckReport, tol: f64) {
    println!("{:<40} {:>7} {:>13} {:>7}", "parameter", "probes", "max_rel_err", "status");
    for row in &report.rows {
        println!(
            "{:<40} {:>7} {:>13.3e} {:>7}",
            row.name,
            row.probes,
            row.max_rel_err,
            if row.max_rel_err < tol { "ok" } else { "FAIL" }
        );
    }
    println!(
        "overall max relative error {:.3e} over {} rows (tolerance {tol})",
        report.max_rel_err(),
        report.rows.len()
    );
}

/// Parse an ablation rows file: one row per line, `fd,gcb,mtl,faspp`
/// with 0/1 or true/false entries. `#` comments allowed.
pub fn parse_rows_file(text: &str) -> Result<Vec<freqseg_core::network::Toggles>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(CliError::at_line(
                i + 1,
                format!("expected `fd,gcb,mtl,faspp`, got `{line}`"),
            ));
        }
        let mut flags = [false; 4];
        for (k, p) in parts.iter().enumerate() {
            flags[k] = match *p {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(CliError::at_line(
                        i + 1,
                        format!("expected 0/1 or true/false, got `{other}`"),
                    ))
                }
            };
        }
        rows.push(freqseg_core::network::Toggles {
            fd: flags[0],
            gcb: flags[1],
            mtl: flags[2],
            faspp: flags[3],
        });
    }
    if rows.is_empty() {
        return Err(CliError::config("rows file holds no rows"));
    }
    Ok(rows)
}

/// `ablate`: train and score each toggle row under a shared budget.
pub fn cmd_ablate(config_path: &Path, rows_spec: &str) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    cfg.apply_env_seed()?;

    let rows = if rows_spec == "default" {
        default_ablation_rows()
    } else {
        let text = std::fs::read_to_string(rows_spec)
            .map_err(|e| CliError::Io(format!("cannot read rows file {rows_spec}: {e}")))?;
        parse_rows_file(&text)?
    };

    let data = build_dataset(&cfg)?;
    let table = ablation_run(&cfg.model, &cfg.train, &data, &rows).map_err(CliError::from)?;
    print!("{table}");
    Ok(())
}

/// Overfit-style convenience used by the acceptance suite: run `train`
/// programmatically from a parsed config and return its artifacts.
pub fn train_from_config(
    cfg: &RunConfig,
) -> Result<(Model, freqseg_core::train::History, Vec<Sample>)> {
    let all = build_dataset(cfg)?;
    let n_train = (((all.len() as f64) * cfg.data.split).ceil() as usize).clamp(1, all.len());
    let mut train_set: Vec<Sample> = all[..n_train].to_vec();
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed).map_err(CliError::from)?;
    let history = train_loop(&mut model, &mut train_set, &cfg.train).map_err(CliError::from)?;
    Ok((model, history, train_set))
}
