//! Frame-wise classification on top of the encoder, trained with Adam.

use rayon::prelude::*;

use super::task::{make_eval_set, make_task, Sample, TaskSpec, PAD_LABEL};
use crate::encoder::{Encoder, EncoderConfig, EncoderTape, Linear};
use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{Ctx, DType, ExecMode, SeededRng, Tensor};

/// Labels are read at `SUBSAMPLE_FACTOR·t + LABEL_OFFSET`, the centre of the
/// 7-frame receptive field of output frame `t`.
pub const SUBSAMPLE_FACTOR: usize = 4;
pub const LABEL_OFFSET: usize = 3;
/// Lower bound on frames scored per evaluated length.
pub const EVAL_MIN_FRAMES: usize = 2048;

/// Encoder followed by a linear classifier over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Linear,
}

impl Parameters for Model {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

pub struct ModelTape {
    encoder: EncoderTape,
    features: Tensor,
}

impl Model {
    /// Random encoder and an all-zero head, so an untrained model predicts
    /// uniformly.
    pub fn new(config: EncoderConfig, vocab: usize, rng: &mut SeededRng) -> Result<Self> {
        let dtype = config.dtype;
        let width = config.output_width();
        let encoder = Encoder::new(config, rng)?;
        let head = Linear {
            weight: Tensor::zeros(&[vocab, width]).to_dtype(dtype),
            bias: Tensor::zeros(&[vocab]).to_dtype(dtype),
        };
        Ok(Model { encoder, head })
    }

    pub fn vocab(&self) -> usize {
        self.head.bias.numel()
    }

    pub fn logits(&self, ctx: &Ctx, frames: &Tensor) -> Result<(Tensor, ModelTape)> {
        let (features, encoder) = self.encoder.forward(ctx, frames)?;
        let logits = self.head.forward(ctx, &features)?;
        Ok((logits, ModelTape { encoder, features }))
    }

    pub fn backward(&self, ctx: &Ctx, tape: &ModelTape, grad_logits: &Tensor) -> Result<Model> {
        let (grad_features, head) = self.head.backward(ctx, &tape.features, grad_logits)?;
        let (_, encoder) = self.encoder.backward(ctx, &tape.encoder, &grad_features)?;
        Ok(Model { encoder, head })
    }
}

/// Labels for the subsampled frames of a sequence.
pub fn aligned_targets(targets: &[usize], out_len: usize) -> Vec<usize> {
    (0..out_len)
        .map(|t| targets[SUBSAMPLE_FACTOR * t + LABEL_OFFSET])
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Summed cross-entropy over non-padding rows, its gradient scaled by
/// `grad_scale`, and the number of correct argmax predictions.
fn cross_entropy(logits: &Tensor, labels: &[usize], grad_scale: f64) -> (f64, Tensor, usize) {
    let mut grad = logits.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    for (t, &label) in labels.iter().enumerate() {
        if label == PAD_LABEL {
            continue;
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[label];
        correct += usize::from(argmax(row) == label);
        for (g, v) in grad.row_mut(t).iter_mut().zip(row) {
            *g = (v - max).exp() / z * grad_scale;
        }
        grad.row_mut(t)[label] -= grad_scale;
    }
    grad.settle();
    (loss, grad, correct)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
    pub dtype: DType,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            weight_decay: 0.0,
            dtype: DType::F64,
            seed: 0,
            mode: ExecMode::Deterministic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "steps and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::Config(
                "Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
            ));
        }
        if self.clip_norm <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "clip_norm must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adam moments stored flat in parameter-visit order.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let n = params.num_params();
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P, cfg: &TrainConfig) {
        let mut flat = Vec::with_capacity(self.m.len());
        grads.visit("", &mut |_, t| flat.extend_from_slice(t.data()));
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let mut i = 0;
        params.visit_mut("", &mut |_, t| {
            for p in t.data_mut() {
                let g = flat[i];
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + cfg.epsilon);
                *p -= cfg.learning_rate * (update + cfg.weight_decay * *p);
                i += 1;
            }
            t.settle();
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> StepRecord {
        *self
            .history
            .last()
            .expect("training runs at least one step")
    }
}

/// `step,loss,accuracy` with 17 significant digits.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("step,loss,accuracy\n");
    for r in history {
        s.push_str(&format!("{},{:.16e},{:.16e}\n", r.step, r.loss, r.accuracy));
    }
    s
}

struct SampleGrad {
    loss: f64,
    correct: usize,
    grads: Model,
}

fn sample_step(model: &Model, sample: &Sample, mode: ExecMode, scale: f64) -> Result<SampleGrad> {
    let ctx = Ctx::new(mode);
    let (logits, tape) = model.logits(&ctx, &sample.frames)?;
    let labels = aligned_targets(&sample.targets, logits.rows());
    let (loss, grad, correct) = cross_entropy(&logits, &labels, scale);
    let grads = model.backward(&ctx, &tape, &grad)?;
    Ok(SampleGrad {
        loss,
        correct,
        grads,
    })
}

/// Builds a fresh model and trains it; see [`train_model`].
pub fn train(encoder: &EncoderConfig, task: &TaskSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let enc = EncoderConfig {
        dtype: cfg.dtype,
        ..encoder.clone()
    };
    let model = Model::new(enc, task.vocab_size, &mut SeededRng::new(cfg.seed))?;
    train_model(model, task, cfg, &mut |_| {})
}

/// Minimises mean frame cross-entropy over random minibatches of the task's
/// training set. Per-sample gradients are computed in parallel and summed in
/// batch order, so results do not depend on the thread count.
pub fn train_model(
    mut model: Model,
    task: &TaskSpec,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = make_task(task)?;
    if model.vocab() != task.vocab_size || model.encoder.config.feat_dim != task.vocab_size {
        return Err(Error::Config(format!(
            "model expects {} features and {} classes; task has vocabulary {}",
            model.encoder.config.feat_dim,
            model.vocab(),
            task.vocab_size
        )));
    }
    let out_len = crate::encoder::subsampled_len(task.train_len)
        .filter(|_| task.train_len >= crate::encoder::MIN_INPUT_LEN)
        .ok_or_else(|| {
            Error::Config(format!(
                "train_len {} is below the encoder minimum",
                task.train_len
            ))
        })?;

    let mut rng = SeededRng::new(cfg.seed ^ 0xDA7A);
    let mut adam = Adam::new(&model);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| &data[rng.below(data.len())])
            .collect();
        let frames: usize = batch
            .iter()
            .map(|s| {
                aligned_targets(&s.targets, out_len)
                    .iter()
                    .filter(|&&l| l != PAD_LABEL)
                    .count()
            })
            .sum();
        let scale = 1.0 / frames.max(1) as f64;
        let as_training = |e: Error| match e {
            Error::Training { .. } => e,
            other => Error::Training {
                step,
                detail: other.to_string(),
            },
        };
        let results: Vec<SampleGrad> = batch
            .par_iter()
            .map(|s| sample_step(&model, s, cfg.mode, scale))
            .collect::<Result<_>>()
            .map_err(as_training)?;

        let mut grads = model.zeros_like();
        let (mut loss, mut correct) = (0.0, 0);
        for r in &results {
            grads.accumulate(&r.grads);
            loss += r.loss;
            correct += r.correct;
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("loss is {loss}"),
            });
        }
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("gradient norm is {norm}"),
            });
        }
        if norm > cfg.clip_norm {
            grads.scale_all(cfg.clip_norm / norm);
        }
        adam.update(&mut model, &grads, cfg);
        let record = StepRecord {
            step,
            loss,
            accuracy: correct as f64 * scale,
        };
        on_step(&record);
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub length: usize,
    pub frames: usize,
    pub correct: usize,
    pub loss: f64,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.frames.max(1) as f64
    }
}

/// Frame accuracy and mean cross-entropy over `samples`.
pub fn evaluate(model: &Model, samples: &[Sample], mode: ExecMode) -> Result<EvalResult> {
    let per: Vec<(usize, usize, f64)> = samples
        .par_iter()
        .map(|s| {
            let ctx = Ctx::new(mode);
            let (logits, _) = model.logits(&ctx, &s.frames)?;
            let labels = aligned_targets(&s.targets, logits.rows());
            let frames = labels.iter().filter(|&&l| l != PAD_LABEL).count();
            let (loss, _, correct) = cross_entropy(&logits, &labels, 0.0);
            Ok((frames, correct, loss))
        })
        .collect::<Result<_>>()?;
    let length = samples.first().map_or(0, |s| s.targets.len());
    let (frames, correct, loss) = per
        .iter()
        .fold((0, 0, 0.0), |(f, c, l), x| (f + x.0, c + x.1, l + x.2));
    Ok(EvalResult {
        length,
        frames,
        correct,
        loss: loss / frames.max(1) as f64,
    })
}

/// Held-out frame accuracy at each requested sequence length. Enough
/// sequences are drawn to score at least [`EVAL_MIN_FRAMES`] frames.
pub fn eval_length_generalization(
    model: &Model,
    task: &TaskSpec,
    lengths: &[usize],
    mode: ExecMode,
) -> Result<Vec<EvalResult>> {
    lengths
        .iter()
        .map(|&len| {
            let out = crate::encoder::subsampled_len(len)
                .filter(|&o| o > 0 && len >= crate::encoder::MIN_INPUT_LEN)
                .ok_or_else(|| {
                    Error::Config(format!("length {len} is below the encoder minimum"))
                })?;
            let samples = EVAL_MIN_FRAMES.div_ceil(out);
            evaluate(model, &make_eval_set(task, len, samples), mode)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (EncoderConfig, TaskSpec, TrainConfig) {
        let enc = EncoderConfig {
            feat_dim: 8,
            embed_dim: 8,
            attn_dim: 4,
            num_layers: 1,
            subsample_channels: 3,
            ..EncoderConfig::default()
        };
        let task = TaskSpec {
            vocab_size: 8,
            train_len: 16,
            eval_len: 32,
            samples: 32,
            ..TaskSpec::default()
        };
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        (enc, task, cfg)
    }

    #[test]
    fn alignment_takes_receptive_field_centre() {
        let labels: Vec<usize> = (0..16).collect();
        assert_eq!(aligned_targets(&labels, 3), vec![3, 7, 11]);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let (enc, task, cfg) = small();
        let out = train(
            &enc,
            &task,
            &TrainConfig {
                learning_rate: 0.0,
                ..cfg
            },
        )
        .unwrap();
        let first = out.history[0].loss;
        // Zero head: every logit is 0, so the loss is ln(vocab) regardless of batch.
        assert!((first - 8f64.ln()).abs() < 1e-12);
        assert!(out.history.iter().all(|r| (r.loss - first).abs() <= 1e-12));
    }

    #[test]
    fn same_seed_same_history() {
        let (enc, task, cfg) = small();
        let a = train(&enc, &task, &cfg).unwrap();
        let b = train(&enc, &task, &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert!(a.model == b.model);
    }

    #[test]
    fn non_finite_loss_names_step() {
        let (enc, task, cfg) = small();
        let err = train(
            &enc,
            &task,
            &TrainConfig {
                learning_rate: 1e308,
                ..cfg
            },
        )
        .unwrap_err();
        match err {
            Error::Training { step, .. } => assert!(step >= 2, "{step}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = SeededRng::new(3);
        let logits = Tensor::uniform(&[3, 4], -2.0, 2.0, &mut rng);
        let labels = [1, PAD_LABEL, 3];
        let (_, grad, _) = cross_entropy(&logits, &labels, 1.0);
        for i in 0..logits.numel() {
            let mut p = logits.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = logits.clone();
            m.data_mut()[i] -= 1e-6;
            let fd = (cross_entropy(&p, &labels, 1.0).0 - cross_entropy(&m, &labels, 1.0).0) / 2e-6;
            assert!((fd - grad.data()[i]).abs() < 1e-8);
        }
    }
}
