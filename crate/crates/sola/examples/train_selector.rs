//! Trains a small selector on a synthetic corpus and reports the loss curve.
//!
//! Usage: train_selector [out-dir]

use sola::data::{generate_synthetic, SynthConfig};
use sola::selector::SelectorConfig;
use sola::trainer::{train, TrainConfig};

fn main() -> sola::Result<()> {
    let data = SynthConfig {
        scenes: 8,
        ..SynthConfig::tiny()
    };
    let corpus = generate_synthetic(&data, 11)?;

    let sel = SelectorConfig {
        dim: data.dim,
        text_dim: data.text_dim,
        heads: 4,
        tau_select: 0.3,
        ..SelectorConfig::default()
    };
    let tc = TrainConfig {
        epochs: 4,
        lr_init: 2e-3,
        weight_decay: 0.01,
        n_neg: 8,
        seed: 1,
        ..TrainConfig::default()
    };

    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let ckpt = train::<f32>(&corpus, &sel, &tc, out.as_deref())?;

    for s in &ckpt.history {
        println!(
            "epoch {:>2}: loss {:.4} (bce {:.4}, align {:.4}) lr {:.2e} -> {:.2e}",
            s.epoch, s.mean_loss, s.mean_bce, s.mean_align, s.lr_first, s.lr_last
        );
    }
    let last = ckpt.history.last().expect("at least one epoch");
    println!(
        "final loss {:.4} over {}/{} positive labels",
        last.mean_loss, last.positive_labels, last.total_labels
    );
    if let Some(dir) = out {
        println!("checkpoints in {}", dir.display());
    }
    Ok(())
}
