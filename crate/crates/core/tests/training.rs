use srupp_encoder::encoder::EncoderConfig;
use srupp_encoder::harness::task::{generate, make_eval_set, TaskKind, TaskSpec};
use srupp_encoder::harness::train::{aligned_targets, evaluate, Model};
use srupp_encoder::harness::PAD_LABEL;
use srupp_encoder::{Ctx, ExecMode, SeededRng, Tensor};

fn small_config() -> EncoderConfig {
    EncoderConfig {
        feat_dim: 8,
        embed_dim: 8,
        attn_dim: 4,
        num_layers: 2,
        subsample_channels: 4,
        ..EncoderConfig::default()
    }
}

#[test]
fn symbols_are_uniform() {
    let vocab = 8;
    let samples = generate(TaskKind::Copy, vocab, 100, 80, 11);
    let mut counts = vec![0usize; vocab];
    for s in &samples {
        for &v in &s.symbols {
            counts[v] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expected = n as f64 / vocab as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 7 degrees of freedom, p = 0.001
    assert!(chi2 < 24.32, "chi2 {chi2} counts {counts:?}");
}

#[test]
fn frames_are_one_hot_symbols() {
    for kind in [TaskKind::Copy, TaskKind::DelayedEcho { lag: 3 }] {
        for s in generate(kind, 5, 30, 4, 2) {
            assert_eq!(s.frames.shape(), &[30, 5]);
            for (t, &v) in s.symbols.iter().enumerate() {
                let row = s.frames.row(t);
                assert_eq!(row.iter().sum::<f64>(), 1.0);
                assert_eq!(row[v], 1.0);
            }
            for (t, &y) in s.targets.iter().enumerate() {
                let expected = match kind {
                    TaskKind::Copy => s.symbols[t],
                    TaskKind::DelayedEcho { lag } => {
                        if t < lag {
                            PAD_LABEL
                        } else {
                            s.symbols[t - lag]
                        }
                    }
                };
                assert_eq!(y, expected);
            }
        }
    }
}

#[test]
fn alignment_picks_every_fourth_frame() {
    let targets: Vec<usize> = (0..40).collect();
    let out_len = ((40 - 1) / 2 - 1) / 2;
    let aligned = aligned_targets(&targets, out_len);
    assert_eq!(aligned.len(), out_len);
    for (t, &y) in aligned.iter().enumerate() {
        assert_eq!(y, 4 * t + 3);
    }
}

#[test]
fn untrained_model_is_at_chance() {
    let spec = TaskSpec {
        vocab_size: 8,
        train_len: 40,
        ..TaskSpec::default()
    };
    let model = Model::new(small_config(), 8, &mut SeededRng::new(5)).unwrap();
    let r = evaluate(
        &model,
        &make_eval_set(&spec, 40, 250),
        ExecMode::Deterministic,
    )
    .unwrap();
    assert!(r.frames >= 2000);
    assert!(
        (r.accuracy() - 0.125).abs() <= 0.03,
        "accuracy {}",
        r.accuracy()
    );
    // zero head: uniform prediction, mean loss ln V
    assert!((r.loss - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn permuting_head_rows_permutes_logits() {
    let mut model = Model::new(small_config(), 8, &mut SeededRng::new(6)).unwrap();
    let mut rng = SeededRng::new(7);
    model.head.weight = Tensor::uniform(model.head.weight.shape(), -1.0, 1.0, &mut rng);
    model.head.bias = Tensor::uniform(model.head.bias.shape(), -1.0, 1.0, &mut rng);
    let perm = [3, 0, 7, 1, 6, 2, 5, 4];
    let mut permuted = model.clone();
    for (i, &p) in perm.iter().enumerate() {
        permuted
            .head
            .weight
            .row_mut(i)
            .copy_from_slice(model.head.weight.row(p));
        permuted.head.bias.data_mut()[i] = model.head.bias.data()[p];
    }
    let ctx = Ctx::deterministic();
    let x = Tensor::uniform(&[23, 8], 0.0, 1.0, &mut rng);
    let (a, _) = model.logits(&ctx, &x).unwrap();
    let (b, _) = permuted.logits(&ctx, &x).unwrap();
    for t in 0..a.rows() {
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(b.row(t)[i].to_bits(), a.row(t)[p].to_bits());
        }
    }
}
