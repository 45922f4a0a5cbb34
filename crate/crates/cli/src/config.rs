//! `key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use segcvae::model::{Ablation, ModelConfig};
use segcvae::training::{LambdaSchedule, TrainingConfig};

use crate::error::{CliError, CliResult};

/// Every recognized key with its default; `-` means unset.
pub const KEYS: [(&str, &str); 24] = [
    ("train_data", "-"),
    ("valid_data", "-"),
    ("test_data", "-"),
    ("embeddings", "-"),
    ("vocab_size", "20000"),
    ("max_clen", "25"),
    ("emb_dim", "300"),
    ("hidden_dim", "300"),
    ("latent_dim", "300"),
    ("m", "3"),
    ("chan", "3"),
    ("num_semantics", "8"),
    ("tau", "0.1"),
    ("learning_rate", "0.001"),
    ("batch_size", "64"),
    ("epochs", "50"),
    ("snorm_step", "20000"),
    ("lambda_constant", "-"),
    ("kl_anneal_steps", "10000"),
    ("seed", "123456"),
    ("grad_clip", "5.0"),
    ("ablation", "none"),
    ("train_percent", "90"),
    ("valid_percent", "5"),
];

/// Parsed configuration: model and training settings plus data paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_data: Option<PathBuf>,
    pub valid_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab_size: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub train_percent: u64,
    pub valid_percent: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config_str("").expect("defaults parse")
    }
}

fn field<T: FromStr>(key: &str, value: &str, line: usize) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::Type {
        key: key.into(),
        line,
        message: format!("{value:?}: {e}"),
    })
}

fn positive<T: FromStr + PartialOrd + Default>(key: &str, value: &str, line: usize) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    let v: T = field(key, value, line)?;
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Type {
            key: key.into(),
            line,
            message: format!("{value} is not positive"),
        })
    }
}

/// Reads the configuration text. Blank lines and `#` comments are
/// ignored; later lines override earlier ones.
pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let mut values: Vec<(String, String, usize)> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string(), 0)).collect();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or(CliError::Syntax { line })?;
        let (k, v) = (k.trim(), v.trim());
        let slot = values
            .iter_mut()
            .find(|(key, _, _)| key == k)
            .ok_or_else(|| CliError::UnknownKey { key: k.into(), line })?;
        slot.1 = v.to_string();
        slot.2 = line;
    }
    let get = |k: &str| values.iter().find(|(key, _, _)| key == k).expect("known key");
    let path = |k: &str| {
        let (_, v, _) = get(k);
        (v != "-").then(|| PathBuf::from(v))
    };
    macro_rules! pos {
        ($k:expr, $t:ty) => {{
            let (key, v, line) = get($k);
            positive::<$t>(key, v, *line)?
        }};
    }
    let (key, v, line) = get("ablation");
    let ablation = Ablation::from_label(v).map_err(|e| CliError::Type {
        key: key.clone(),
        line: *line,
        message: e.to_string(),
    })?;
    let (key, v, line) = get("lambda_constant");
    let lambda = if v == "-" {
        LambdaSchedule::Linear {
            snorm_step: pos!("snorm_step", u64),
        }
    } else {
        let c: f64 = field(key, v, *line)?;
        if !(0.0..=1.0).contains(&c) {
            return Err(CliError::Type {
                key: key.clone(),
                line: *line,
                message: format!("{c} outside [0, 1]"),
            });
        }
        LambdaSchedule::Constant(c)
    };
    let (key, v, line) = get("train_percent");
    let train_percent: u64 = field(key, v, *line)?;
    let (key, v, line) = get("valid_percent");
    let valid_percent: u64 = field(key, v, *line)?;
    if train_percent + valid_percent > 100 {
        return Err(CliError::Type {
            key: key.clone(),
            line: *line,
            message: "train_percent + valid_percent exceeds 100".into(),
        });
    }
    let (key, v, line) = get("seed");
    let seed: u64 = field(key, v, *line)?;
    let (key, v, line) = get("epochs");
    let epochs: usize = field(key, v, *line)?;
    let model = ModelConfig {
        max_clen: pos!("max_clen", usize),
        emb_dim: pos!("emb_dim", usize),
        hidden_dim: pos!("hidden_dim", usize),
        latent_dim: pos!("latent_dim", usize),
        kernel_width: pos!("m", usize),
        channels: pos!("chan", usize),
        num_semantics: pos!("num_semantics", usize),
        tau: pos!("tau", f64),
        vocab_size: 0,
        ablation,
    };
    let (key, _, line) = get("max_clen");
    if model.max_clen < 3 || model.kernel_width > model.max_clen {
        return Err(CliError::Type {
            key: key.clone(),
            line: *line,
            message: format!("max_clen {} must be >= 3 and >= m {}", model.max_clen, model.kernel_width),
        });
    }
    let training = TrainingConfig {
        learning_rate: pos!("learning_rate", f64),
        batch_size: pos!("batch_size", usize),
        epochs,
        lambda,
        kl_anneal_steps: pos!("kl_anneal_steps", u64),
        seed,
        grad_clip: pos!("grad_clip", f64),
    };
    Ok(RunConfig {
        train_data: path("train_data"),
        valid_data: path("valid_data"),
        test_data: path("test_data"),
        embeddings: path("embeddings"),
        vocab_size: pos!("vocab_size", usize),
        model,
        training,
        train_percent,
        valid_percent,
    })
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config_str(&text)?;
    // relative data paths are relative to the config file
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.train_data, &mut cfg.valid_data, &mut cfg.test_data, &mut cfg.embeddings]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn required(&self, key: &str) -> CliResult<&Path> {
        let p = match key {
            "train_data" => &self.train_data,
            "valid_data" => &self.valid_data,
            "test_data" => &self.test_data,
            "embeddings" => &self.embeddings,
            _ => return Err(CliError::MissingKey(key.into())),
        };
        p.as_deref().ok_or_else(|| CliError::MissingKey(key.into()))
    }

    /// Effective settings in `key = value` form, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let (snorm, lambda) = match self.training.lambda {
            LambdaSchedule::Linear { snorm_step } => (snorm_step.to_string(), "-".to_string()),
            LambdaSchedule::Constant(c) => ("20000".to_string(), c.to_string()),
        };
        let m = &self.model;
        let t = &self.training;
        let vals = [
            p(&self.train_data),
            p(&self.valid_data),
            p(&self.test_data),
            p(&self.embeddings),
            self.vocab_size.to_string(),
            m.max_clen.to_string(),
            m.emb_dim.to_string(),
            m.hidden_dim.to_string(),
            m.latent_dim.to_string(),
            m.kernel_width.to_string(),
            m.channels.to_string(),
            m.num_semantics.to_string(),
            m.tau.to_string(),
            t.learning_rate.to_string(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            snorm,
            lambda,
            t.kl_anneal_steps.to_string(),
            t.seed.to_string(),
            t.grad_clip.to_string(),
            m.ablation.label(),
            self.train_percent.to_string(),
            self.valid_percent.to_string(),
        ];
        KEYS.iter()
            .zip(vals)
            .map(|((k, _), v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.training.learning_rate, 0.001);
        assert_eq!(c.training.seed, 123_456);
        assert_eq!(c.training.batch_size, 64);
        assert_eq!(c.training.kl_anneal_steps, 10_000);
        assert_eq!(c.training.lambda, LambdaSchedule::Linear { snorm_step: 20_000 });
        assert_eq!((c.model.kernel_width, c.model.channels, c.model.num_semantics), (3, 3, 8));
        assert_eq!((c.model.max_clen, c.model.emb_dim, c.model.hidden_dim), (25, 300, 300));
    }

    #[test]
    fn values_and_comments() {
        let c = parse_config_str("learning_rate = 0.001\n# note\nbatch_size = 32  # small\nablation = san,is\n").unwrap();
        assert_eq!(c.training.learning_rate, 0.001);
        assert_eq!(c.training.batch_size, 32);
        assert!(c.model.ablation.no_san && c.model.ablation.no_is);
        let c = parse_config_str("lambda_constant = 1.0").unwrap();
        assert_eq!(c.training.lambda, LambdaSchedule::Constant(1.0));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config_str("seed = 1\n\nm = -1\n") {
            Err(CliError::Type { key, line, .. }) => assert_eq!((key.as_str(), line), ("m", 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config_str("speed = 3"), Err(CliError::UnknownKey { line: 1, .. })));
        assert!(matches!(parse_config_str("\nseed"), Err(CliError::Syntax { line: 2 })));
        assert!(matches!(parse_config_str("tau = 0"), Err(CliError::Type { .. })));
        assert!(RunConfig::default().required("train_data").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = parse_config_str("epochs = 3\nemb_dim = 16\nablation = sdn\ntrain_data = /tmp/x.tsv").unwrap();
        assert_eq!(parse_config_str(&c.to_text()).unwrap(), c);
    }
}
