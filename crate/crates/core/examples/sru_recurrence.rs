//! Runs one SRU layer over a short sequence and checks the batched
//! recurrence against the step-by-step reference implementation.

use srupp_encoder::sru::{self, Direction, SruLayer, SruState};
use srupp_encoder::{Ctx, SeededRng, Tensor};

fn main() -> srupp_encoder::Result<()> {
    let mut rng = SeededRng::new(7);
    let ctx = Ctx::deterministic();
    let x = Tensor::uniform(&[6, 3], -1.0, 1.0, &mut rng);

    // d_in != hidden, so the highway term goes through a projection
    let layer = SruLayer::new(3, 4, Direction::Unidirectional, &mut rng)?;
    let (h, _) = layer.forward(&ctx, &x)?;
    println!("h ({}x{}):", h.rows(), h.cols());
    for t in 0..h.rows() {
        println!(
            "  t={t}  {:?}",
            h.row(t)
                .iter()
                .map(|v| format!("{v:+.4}"))
                .collect::<Vec<_>>()
        );
    }

    let u = sru::project_u(&ctx, &layer.forward, &x)?;
    let (batched, _) = sru::recurrence(&ctx, &layer.forward.rec, &u, &x, &SruState::zeros(4))?;
    let reference = sru::recurrence_oracle(&layer.forward.rec, &u, &x, &SruState::zeros(4))?;
    println!(
        "max |batched - reference| = {:.2e}",
        batched.max_abs_diff(&reference)
    );
    println!("forward pass used {} FLOPs", ctx.flops());

    let bi = SruLayer::new(3, 4, Direction::Bidirectional, &mut rng)?;
    let (hb, _) = bi.forward(&ctx, &x)?;
    println!(
        "bidirectional output: {}x{} (two directions of width 2)",
        hb.rows(),
        hb.cols()
    );
    Ok(())
}
