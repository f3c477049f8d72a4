//! Plain-text `key = value` run configuration with `[model]`, `[train]`
//! and `[data]` sections. Unknown sections or keys are rejected with the
//! offending line number. Every key has a documented default, so an empty
//! file is a valid configuration.

use crate::{CliError, Result};
use freqseg_core::network::ModelConfig;
use freqseg_core::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Synthetic,
    Directory,
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub kind: DataKind,
    pub path: String,
    pub n: usize,
    pub split: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { kind: DataKind::Synthetic, path: String::new(), n: 16, split: 1.0 }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::with_plan([32, 64, 128, 256], (256, 256)),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut channels_set = false;
        let mut decoder_derived = true;
        let mut section = String::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                match name {
                    "model" | "train" | "data" => section = name.to_string(),
                    other => {
                        return Err(CliError::at_line(line_no, format!("unknown section `[{other}]`")))
                    }
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::at_line(line_no, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            let value = value.trim();
            match (section.as_str(), key) {
                ("model", "channels") => {
                    cfg.model.channel_plan = parse_quad(value, line_no, "channels")?;
                    channels_set = true;
                }
                ("model", "r") => cfg.model.power_ratio = parse_f64(value, line_no, "r")?,
                ("model", "fd") => cfg.model.toggles.fd = parse_bool(value, line_no, "fd")?,
                ("model", "gcb") => cfg.model.toggles.gcb = parse_bool(value, line_no, "gcb")?,
                ("model", "mtl") => cfg.model.toggles.mtl = parse_bool(value, line_no, "mtl")?,
                ("model", "faspp") => cfg.model.toggles.faspp = parse_bool(value, line_no, "faspp")?,
                ("model", "aspp_rates") => {
                    cfg.model.aspp_rates = parse_quad(value, line_no, "aspp_rates")?
                }
                ("train", "lr_max") => cfg.train.lr_max = parse_f64(value, line_no, "lr_max")?,
                ("train", "lr_min") => cfg.train.lr_min = parse_f64(value, line_no, "lr_min")?,
                ("train", "epochs") => cfg.train.epochs = parse_usize(value, line_no, "epochs")?,
                ("train", "batch_size") => {
                    cfg.train.batch_size = parse_usize(value, line_no, "batch_size")?
                }
                ("train", "seed") => {
                    cfg.train.seed = value.parse::<u64>().map_err(|_| {
                        CliError::at_line(line_no, format!("seed: expected an integer, got `{value}`"))
                    })?
                }
                ("train", "image_size") => {
                    let (h, w) = parse_pair(value, line_no, "image_size")?;
                    cfg.train.image_size = (h, w);
                }
                ("train", "hflip_prob") => {
                    cfg.train.augment.hflip_prob = parse_f64(value, line_no, "hflip_prob")?
                }
                ("train", "rot_deg") => {
                    cfg.train.augment.rot_deg = parse_f64(value, line_no, "rot_deg")?
                }
                ("data", "kind") => {
                    cfg.data.kind = match value {
                        "synthetic" => DataKind::Synthetic,
                        "directory" => DataKind::Directory,
                        other => {
                            return Err(CliError::at_line(
                                line_no,
                                format!("kind: expected `synthetic` or `directory`, got `{other}`"),
                            ))
                        }
                    }
                }
                ("data", "path") => cfg.data.path = value.to_string(),
                ("data", "n") => cfg.data.n = parse_usize(value, line_no, "n")?,
                ("data", "split") => cfg.data.split = parse_f64(value, line_no, "split")?,
                ("", key) => {
                    return Err(CliError::at_line(
                        line_no,
                        format!("key `{key}` appears before any [section] header"),
                    ))
                }
                (section, key) => {
                    return Err(CliError::at_line(
                        line_no,
                        format!("unknown key `{key}` in section [{section}]"),
                    ))
                }
            }
            if channels_set && decoder_derived {
                let [c1, c2, c3, c4] = cfg.model.channel_plan;
                cfg.model.decoder_plan = [c4, c3, c2, c1];
                decoder_derived = false;
            }
        }

        cfg.model.input_size = cfg.train.image_size;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(CliError::from)?;
        self.train.validate().map_err(CliError::from)?;
        if !(0.0..=1.0).contains(&self.data.split) {
            return Err(CliError::config("data split must lie in [0, 1]"));
        }
        if self.data.kind == DataKind::Synthetic && self.data.n == 0 {
            return Err(CliError::config("synthetic datasets need n >= 1"));
        }
        if self.data.kind == DataKind::Directory && self.data.path.is_empty() {
            return Err(CliError::config("directory datasets need a path"));
        }
        Ok(())
    }

    /// Apply the `FREQSEG_SEED` environment override, if set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("FREQSEG_SEED") {
            self.train.seed = v.parse::<u64>().map_err(|_| {
                CliError::config(format!("FREQSEG_SEED must be an integer, got `{v}`"))
            })?;
        }
        Ok(())
    }
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CliError::at_line(
            line,
            format!("{key}: expected `true` or `false`, got `{other}`"),
        )),
    }
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| CliError::at_line(line, format!("{key}: expected a number, got `{value}`")))
}

fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| {
        CliError::at_line(line, format!("{key}: expected a non-negative integer, got `{value}`"))
    })
}

fn parse_pair(value: &str, line: usize, key: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::at_line(
            line,
            format!("{key}: expected `H,W`, got `{value}`"),
        ));
    }
    Ok((parse_usize(parts[0], line, key)?, parse_usize(parts[1], line, key)?))
}

fn parse_quad(value: &str, line: usize, key: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::at_line(
            line,
            format!("{key}: expected four comma-separated integers, got `{value}`"),
        ));
    }
    let mut out = [0usize; 4];
    for (i, p) in parts.iter().enumerate() {
        out[i] = parse_usize(p, line, key)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.model.channel_plan, [32, 64, 128, 256]);
        assert_eq!(cfg.model.decoder_plan, [256, 128, 64, 32]);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.power_ratio, 0.5);
        assert_eq!(cfg.data.kind, DataKind::Synthetic);
    }

    #[test]
    fn parses_a_full_file_and_derives_decoder() {
        let text = "\
# overfit run
[model]
channels = 4,8,16,32
r = 0.5
fd = true
gcb = true
mtl = true
faspp = true

[train]
lr_max = 6e-3
epochs = 300
batch_size = 8
seed = 7
image_size = 64,64
hflip_prob = 0
rot_deg = 0

[data]
kind = synthetic
n = 8
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.channel_plan, [4, 8, 16, 32]);
        assert_eq!(cfg.model.decoder_plan, [32, 16, 8, 4]);
        assert_eq!(cfg.model.input_size, (64, 64));
        assert_eq!(cfg.train.lr_max, 6e-3);
        assert_eq!(cfg.data.n, 8);
    }

    #[test]
    fn unknown_keys_carry_line_numbers() {
        let err = RunConfig::parse("[model]\nchannles = 1,2,3,4\n").unwrap_err();
        match err {
            CliError::Config { line, message } => {
                assert_eq!(line, Some(2));
                assert!(message.contains("channles"));
            }
            other => panic!("unexpected error {other:?}"),
        }

        let err = RunConfig::parse("[model]\n[optimizer]\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(2), .. }));

        let err = RunConfig::parse("seed = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(1), .. }));
    }

    #[test]
    fn dependency_violations_rejected() {
        let err = RunConfig::parse("[model]\ngcb = true\nfd = false\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("gcb requires fd"));
    }

    #[test]
    fn env_seed_overrides() {
        let mut cfg = RunConfig::parse("[train]\nseed = 5\n").unwrap();
        std::env::set_var("FREQSEG_SEED", "99");
        cfg.apply_env_seed().unwrap();
        std::env::remove_var("FREQSEG_SEED");
        assert_eq!(cfg.train.seed, 99);
    }
}
