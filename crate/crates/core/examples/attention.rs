//! One SRU++ layer: the attention weights it computes and how the learned
//! residual scale alpha mixes attention into the recurrence input.

use srupp_encoder::sru::Direction;
use srupp_encoder::srupp::{self, SruppParams};
use srupp_encoder::{Ctx, SeededRng, Tensor};

fn main() -> srupp_encoder::Result<()> {
    let mut rng = SeededRng::new(3);
    let ctx = Ctx::deterministic();
    let x = Tensor::uniform(&[5, 8], -1.0, 1.0, &mut rng);
    let mut layer = SruppParams::new(8, 4, 8, Direction::Unidirectional, true, &mut rng)?;

    let (h0, tape) = layer.forward(&ctx, &x)?;
    let weights = srupp::attention_weights(&tape);
    println!("attention weights (rows sum to 1):");
    for i in 0..weights.rows() {
        let row = weights.row(i);
        println!(
            "  {:?}  sum {:.15}",
            row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            row.iter().sum::<f64>()
        );
    }

    // alpha starts at 0, where the layer ignores the attention output
    println!("alpha = {}", layer.alpha());
    layer.alpha = Tensor::scalar(0.5);
    let (h1, _) = layer.forward(&ctx, &x)?;
    println!(
        "alpha = 0.5 moves the output by up to {:.3e}",
        h1.max_abs_diff(&h0)
    );

    // unidirectional SRU++ still attends to every frame, so a late edit
    // reaches the first output. The edit is not a constant shift, which
    // layer norm would remove.
    let mut late = x.clone();
    late.row_mut(4)
        .iter_mut()
        .enumerate()
        .for_each(|(j, v)| *v += j as f64 * 0.25);
    let (h2, _) = layer.forward(&ctx, &late)?;
    println!(
        "editing the last frame changes h[0] by {:.3e}",
        h2.slice_rows(0, 1).max_abs_diff(&h1.slice_rows(0, 1))
    );
    Ok(())
}
