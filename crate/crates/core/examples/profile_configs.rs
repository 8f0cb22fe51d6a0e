//! Parameter and FLOP budgets of the shipped full-size configurations for
//! a 1000-frame (10 s) utterance.

use std::path::PathBuf;

use srupp_encoder::cli::config::RunConfig;
use srupp_encoder::encoder::profile::flops_estimate;

fn main() -> srupp_encoder::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["librispeech", "aishell1", "tedlium3"] {
        let cfg = RunConfig::load(&dir.join(format!("{name}.cfg")))?;
        let e = &cfg.encoder;
        let r = flops_estimate(e, 1000)?;
        println!(
            "{name:<12} d={:<5} d'={:<4} layers={:<3} {:>8.2} M params  {:>7.2} GFlops",
            e.embed_dim,
            e.attn_dim,
            e.num_layers,
            r.total_params() as f64 / 1e6,
            r.gflops()
        );
    }
    println!();
    let cfg = RunConfig::load(&dir.join("librispeech.cfg"))?;
    print!("{}", flops_estimate(&cfg.encoder, 1000)?.render_text());
    Ok(())
}
