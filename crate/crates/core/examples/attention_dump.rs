//! Trains the tiny model for a few steps, then dumps the last layer's
//! attention weights through the `attn-dump` subcommand.

use std::path::PathBuf;

use srupp_encoder::cli::{self, config::RunConfig};
use srupp_encoder::srupp::{matrix_csv, parse_matrix_csv};
use srupp_encoder::{SeededRng, Tensor};

fn main() -> srupp_encoder::Result<()> {
    let dir = std::env::temp_dir().join(format!("srupp-attn-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.cfg");
    let run = dir.join("run");
    let code = cli::run(
        [
            "srupp",
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ],
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    assert_eq!(code, 0);

    let cfg = RunConfig::load(&run.join(cli::CONFIG_FILE))?;
    let feats = Tensor::uniform(
        &[32, cfg.encoder.feat_dim],
        0.0,
        1.0,
        &mut SeededRng::new(4),
    );
    let input = dir.join("feats.csv");
    std::fs::write(&input, matrix_csv(&feats))?;
    let out = dir.join("attn.csv");
    let code = cli::run(
        [
            "srupp",
            "attn-dump",
            "--checkpoint",
            run.join(cli::CHECKPOINT_FILE).to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    assert_eq!(code, 0);

    let w = parse_matrix_csv(&std::fs::read_to_string(&out)?)?;
    for i in 0..w.rows() {
        let row = w.row(i);
        let peak = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        println!(
            "query {i}: strongest key {peak} ({:.3}), row sum {:.12}",
            row[peak],
            row.iter().sum::<f64>()
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
