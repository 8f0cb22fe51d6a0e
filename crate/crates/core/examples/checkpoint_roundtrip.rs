//! Saves a model in both precisions and reloads it bit for bit.

use srupp_encoder::cli::checkpoint;
use srupp_encoder::encoder::EncoderConfig;
use srupp_encoder::harness::train::Model;
use srupp_encoder::{Ctx, DType, Parameters, SeededRng, Tensor};

fn main() -> srupp_encoder::Result<()> {
    let dir = std::env::temp_dir().join(format!("srupp-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let x = Tensor::uniform(&[20, 8], 0.0, 1.0, &mut SeededRng::new(1));
    for dtype in [DType::F64, DType::F32] {
        let cfg = EncoderConfig {
            feat_dim: 8,
            embed_dim: 16,
            attn_dim: 4,
            num_layers: 2,
            dtype,
            ..EncoderConfig::default()
        };
        let model = Model::new(cfg.clone(), 8, &mut SeededRng::new(2))?;
        let path = dir.join(format!("{}.srpp", dtype.name()));
        checkpoint::save(&path, &model)?;

        let mut restored = Model::new(cfg, 8, &mut SeededRng::new(99))?;
        checkpoint::load_into(&mut restored, checkpoint::load(&path)?)?;
        let ctx = Ctx::deterministic();
        let (a, _) = model.logits(&ctx, &x)?;
        let (b, _) = restored.logits(&ctx, &x)?;
        println!(
            "{}: {} tensors, {} parameters, {} bytes on disk, logits identical: {}",
            dtype.name(),
            model.named("").len(),
            model.num_params(),
            std::fs::metadata(&path)?.len(),
            a.bits_eq(&b)
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
