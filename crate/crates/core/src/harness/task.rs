//! Synthetic sequence tasks for desk-scale training.

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Label of frames that carry no target; skipped by loss and accuracy.
pub const PAD_LABEL: usize = usize::MAX;
pub const DEFAULT_ECHO_LAG: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Target equals the input symbol at every frame.
    Copy,
    /// Target at `t` is the input symbol at `t − lag`.
    DelayedEcho { lag: usize },
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::DelayedEcho { .. } => "delayed-echo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub train_len: usize,
    pub eval_len: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 8,
            train_len: 40,
            eval_len: 120,
            samples: 512,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.train_len == 0 || self.samples == 0 {
            return Err(Error::Config(
                "train_len and samples must be positive".into(),
            ));
        }
        if self.eval_len < self.train_len {
            return Err(Error::Config(format!(
                "eval_len {} is shorter than train_len {}",
                self.eval_len, self.train_len
            )));
        }
        Ok(())
    }
}

/// One sequence: one-hot frames and a label per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub frames: Tensor,
    pub symbols: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Draws `samples` sequences of `len` frames.
pub fn generate(
    kind: TaskKind,
    vocab: usize,
    len: usize,
    samples: usize,
    seed: u64,
) -> Vec<Sample> {
    let mut rng = SeededRng::new(seed);
    (0..samples)
        .map(|_| {
            let symbols: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
            let mut frames = Tensor::zeros(&[len, vocab]);
            for (t, &s) in symbols.iter().enumerate() {
                frames.set(&[t, s], 1.0);
            }
            let targets = match kind {
                TaskKind::Copy => symbols.clone(),
                TaskKind::DelayedEcho { lag } => (0..len)
                    .map(|t| if t < lag { PAD_LABEL } else { symbols[t - lag] })
                    .collect(),
            };
            Sample {
                frames,
                symbols,
                targets,
            }
        })
        .collect()
}

/// Training set of `spec.samples` sequences at `spec.train_len`.
pub fn make_task(spec: &TaskSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok(generate(
        spec.kind,
        spec.vocab_size,
        spec.train_len,
        spec.samples,
        spec.seed,
    ))
}

/// Held-out sequences of `len` frames, disjoint in seed from the training set.
pub fn make_eval_set(spec: &TaskSpec, len: usize, samples: usize) -> Vec<Sample> {
    let seed = spec.seed ^ 0x5EED_0000_0000_0000 ^ (len as u64).wrapping_mul(0x9E37_79B9);
    generate(spec.kind, spec.vocab_size, len, samples, seed)
}
