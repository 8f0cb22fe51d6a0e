//! Trains the small SRU++ encoder on the copy task and reports held-out
//! accuracy at the training length and at three times that length.
//!
//! `cargo run --release --example train_copy [steps]`

use std::time::Instant;

use srupp_encoder::encoder::EncoderConfig;
use srupp_encoder::harness::train::{eval_length_generalization, train_model, Model};
use srupp_encoder::harness::{TaskSpec, TrainConfig};
use srupp_encoder::{ExecMode, SeededRng};

fn main() -> srupp_encoder::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500);
    let task = TaskSpec::default();
    let enc = EncoderConfig {
        feat_dim: task.vocab_size,
        ..EncoderConfig::default()
    };
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let model = Model::new(enc, task.vocab_size, &mut SeededRng::new(cfg.seed))?;

    let start = Instant::now();
    let out = train_model(model, &task, &cfg, &mut |r| {
        if r.step % 100 == 0 {
            println!(
                "step {:>5}  loss {:.4}  acc {:.3}",
                r.step, r.loss, r.accuracy
            );
        }
    })?;
    println!("trained {steps} steps in {:.1?}", start.elapsed());

    let lengths = [task.train_len, task.eval_len];
    for r in eval_length_generalization(&out.model, &task, &lengths, ExecMode::Deterministic)? {
        println!(
            "length {:>4}: {} frames, accuracy {:.4}",
            r.length,
            r.frames,
            r.accuracy()
        );
    }
    Ok(())
}
