//! Trains on the delayed-echo task (emit the symbol seen a few frames
//! earlier) and reports accuracy at the training length and at three times
//! that length.

use std::path::PathBuf;
use std::time::Instant;

use srupp_encoder::cli::config::RunConfig;
use srupp_encoder::harness::train::{eval_length_generalization, train_model, Model};
use srupp_encoder::{ExecMode, SeededRng};

fn main() -> srupp_encoder::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/echo.cfg");
    let mut cfg = RunConfig::load(&path)?;
    if let Some(steps) = std::env::args().nth(1) {
        cfg.train.steps = steps.parse().expect("steps must be a number");
    }
    let train = cfg.train_config(ExecMode::Deterministic);
    let model = Model::new(
        cfg.encoder.clone(),
        cfg.task.vocab_size,
        &mut SeededRng::new(train.seed),
    )?;
    let start = Instant::now();
    let outcome = train_model(model, &cfg.task, &train, &mut |r| {
        if r.step % 100 == 0 {
            println!(
                "step {:>5}  loss {:.4}  acc {:.3}",
                r.step, r.loss, r.accuracy
            );
        }
    })?;
    println!(
        "trained {} steps in {:.1}s",
        train.steps,
        start.elapsed().as_secs_f64()
    );
    let lengths = [cfg.task.train_len, 3 * cfg.task.train_len];
    for r in
        eval_length_generalization(&outcome.model, &cfg.task, &lengths, ExecMode::Deterministic)?
    {
        println!(
            "length {:>4}: {} frames, accuracy {:.4}",
            r.length,
            r.frames,
            r.accuracy()
        );
    }
    Ok(())
}
