//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to its default; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::harness::task::{TaskKind, TaskSpec, DEFAULT_ECHO_LAG};
use crate::harness::train::TrainConfig;
use crate::tensor::{DType, ExecMode};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub task: TaskSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        RunConfig {
            encoder: EncoderConfig {
                feat_dim: task.vocab_size,
                ..EncoderConfig::default()
            },
            task,
            train: TrainConfig::default(),
        }
    }
}

/// Every key in canonical order with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("feat_dim", "input feature width"),
    ("embed_dim", "recurrence hidden size d"),
    ("attn_dim", "attention width d'"),
    ("num_layers", "number of SRU++ layers"),
    ("output_dim", "optional final linear width, or none"),
    ("bidirectional", "split d into two directions of d/2"),
    ("subsample_channels", "channels of both conv stages"),
    ("layer_norm", "normalize features before attention"),
    ("dtype", "parameter precision, f32 or f64"),
    ("task", "copy or delayed-echo"),
    ("echo_lag", "lag of the delayed-echo task"),
    ("vocab_size", "task alphabet size"),
    ("train_len", "training sequence length"),
    ("eval_len", "evaluation sequence length"),
    ("samples", "training sequences"),
    ("data_seed", "seed of the task generator"),
    ("steps", "optimizer steps"),
    ("batch_size", "sequences per step"),
    ("learning_rate", "Adam step size"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("epsilon", "Adam denominator offset"),
    ("clip_norm", "global gradient-norm clip"),
    ("weight_decay", "decoupled weight decay"),
    ("seed", "parameter-init and batching seed"),
];

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: {key} must be true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut kind = "copy".to_string();
        let mut lag = DEFAULT_ECHO_LAG;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "line {line}: expected `key = value`, got {content:?}"
                    ))
                })?;
            let known = KEYS
                .iter()
                .map(|(k, _)| *k)
                .find(|k| *k == key)
                .ok_or_else(|| Error::Config(format!("line {line}: unknown key {key:?}")))?;
            if seen.contains(&known) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            seen.push(known);
            let e = &mut c.encoder;
            let t = &mut c.task;
            let r = &mut c.train;
            match known {
                "feat_dim" => e.feat_dim = parse_value(key, value, line)?,
                "embed_dim" => e.embed_dim = parse_value(key, value, line)?,
                "attn_dim" => e.attn_dim = parse_value(key, value, line)?,
                "num_layers" => e.num_layers = parse_value(key, value, line)?,
                "output_dim" => {
                    e.output_dim = if value == "none" {
                        None
                    } else {
                        Some(parse_value(key, value, line)?)
                    }
                }
                "bidirectional" => e.bidirectional = parse_bool(key, value, line)?,
                "subsample_channels" => e.subsample_channels = parse_value(key, value, line)?,
                "layer_norm" => e.layer_norm = parse_bool(key, value, line)?,
                "dtype" => {
                    e.dtype = DType::parse(value).ok_or_else(|| {
                        Error::Config(format!("line {line}: dtype must be f32 or f64"))
                    })?
                }
                "task" => kind = value.to_string(),
                "echo_lag" => lag = parse_value(key, value, line)?,
                "vocab_size" => t.vocab_size = parse_value(key, value, line)?,
                "train_len" => t.train_len = parse_value(key, value, line)?,
                "eval_len" => t.eval_len = parse_value(key, value, line)?,
                "samples" => t.samples = parse_value(key, value, line)?,
                "data_seed" => t.seed = parse_value(key, value, line)?,
                "steps" => r.steps = parse_value(key, value, line)?,
                "batch_size" => r.batch_size = parse_value(key, value, line)?,
                "learning_rate" => r.learning_rate = parse_value(key, value, line)?,
                "beta1" => r.beta1 = parse_value(key, value, line)?,
                "beta2" => r.beta2 = parse_value(key, value, line)?,
                "epsilon" => r.epsilon = parse_value(key, value, line)?,
                "clip_norm" => r.clip_norm = parse_value(key, value, line)?,
                "weight_decay" => r.weight_decay = parse_value(key, value, line)?,
                "seed" => r.seed = parse_value(key, value, line)?,
                _ => unreachable!("every listed key is handled"),
            }
        }
        c.task.kind = match kind.as_str() {
            "copy" => TaskKind::Copy,
            "delayed-echo" => TaskKind::DelayedEcho { lag },
            other => return Err(Error::Config(format!("unknown task {other:?}"))),
        };
        c.train.dtype = c.encoder.dtype;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.task.validate()?;
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Training options with the given execution mode.
    pub fn train_config(&self, mode: ExecMode) -> TrainConfig {
        TrainConfig {
            dtype: self.encoder.dtype,
            mode,
            ..self.train.clone()
        }
    }

    /// Canonical rendering; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let e = &self.encoder;
        let t = &self.task;
        let r = &self.train;
        let (kind, lag) = match t.kind {
            TaskKind::Copy => ("copy", DEFAULT_ECHO_LAG),
            TaskKind::DelayedEcho { lag } => ("delayed-echo", lag),
        };
        let values = [
            e.feat_dim.to_string(),
            e.embed_dim.to_string(),
            e.attn_dim.to_string(),
            e.num_layers.to_string(),
            e.output_dim.map_or("none".to_string(), |o| o.to_string()),
            e.bidirectional.to_string(),
            e.subsample_channels.to_string(),
            e.layer_norm.to_string(),
            e.dtype.name().to_string(),
            kind.to_string(),
            lag.to_string(),
            t.vocab_size.to_string(),
            t.train_len.to_string(),
            t.eval_len.to_string(),
            t.samples.to_string(),
            t.seed.to_string(),
            r.steps.to_string(),
            r.batch_size.to_string(),
            format!("{:?}", r.learning_rate),
            format!("{:?}", r.beta1),
            format!("{:?}", r.beta2),
            format!("{:?}", r.epsilon),
            format!("{:?}", r.clip_norm),
            format!("{:?}", r.weight_decay),
            r.seed.to_string(),
        ];
        let mut s = String::new();
        for (i, ((key, _), value)) in KEYS.iter().zip(values).enumerate() {
            match i {
                0 => s.push_str("# encoder\n"),
                9 => s.push_str("\n# task\n"),
                16 => s.push_str("\n# training\n"),
                _ => {}
            }
            writeln!(s, "{key} = {value}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let text = c.render();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(RunConfig::parse(&text).unwrap().render(), text);
    }

    #[test]
    fn empty_text_is_default() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse("embed_dim = 32   # smaller\noutput_dim = 5\ntask = delayed-echo\necho_lag = 2\nlearning_rate = 7e-4\n")
            .unwrap();
        assert_eq!(c.encoder.embed_dim, 32);
        assert_eq!(c.encoder.output_dim, Some(5));
        assert_eq!(c.task.kind, TaskKind::DelayedEcho { lag: 2 });
        assert_eq!(c.train.learning_rate, 7e-4);
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = blue",
            "embed_dim = 8\nembed_dim = 8",
            "embed_dim",
            "embed_dim = eight",
            "bidirectional = yes",
            "task = translate",
            "bidirectional = true\nembed_dim = 7",
            "dtype = f16",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn every_key_is_rendered_once() {
        let text = RunConfig::default().render();
        for (key, _) in KEYS {
            assert_eq!(
                text.lines()
                    .filter(|l| l.starts_with(&format!("{key} =")))
                    .count(),
                1,
                "{key}"
            );
        }
    }
}
