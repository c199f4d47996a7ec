//! Trains the full module plus single-knob ablations on one seed and prints
//! the comparison table.
//!
//! Usage: ablation_sweep

use sola::data::{generate_synthetic, SynthConfig};
use sola::eval::{ablation_sweep, render_ablation, AblationToggle, EvalOptions};
use sola::selector::SelectorConfig;
use sola::trainer::TrainConfig;

fn main() -> sola::Result<()> {
    let data = SynthConfig {
        scenes: 10,
        ..SynthConfig::tiny()
    };
    let train_corpus = generate_synthetic(&data, 31)?;
    let eval_corpus = generate_synthetic(&SynthConfig { scenes: 4, ..data }, 32)?;

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
        seed: 2,
        ..TrainConfig::default()
    };

    let rows = ablation_sweep::<f32>(
        &train_corpus,
        &eval_corpus,
        &sel,
        &tc,
        &[
            AblationToggle::NoAlignLoss,
            AblationToggle::NoInterObject,
            AblationToggle::NoMotionAttention,
            AblationToggle::Layers(1),
        ],
        &EvalOptions::default(),
    )?;
    print!("{}", render_ablation(&rows));
    Ok(())
}
