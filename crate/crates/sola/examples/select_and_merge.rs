//! Runs the full selection path for one expression: score candidate tracks,
//! threshold with argmax fallback, merge the chosen masks, and measure the
//! merged track against ground truth.
//!
//! Usage: select_and_merge

use sola::data::{generate_synthetic, strip_background, SynthConfig};
use sola::mask::{jf_score, EmptyFrameMode, BOUNDARY_TOL_FRACTION};
use sola::selector::{forward, select, SelectorConfig};
use sola::trainer::{train, TrainConfig};

fn main() -> sola::Result<()> {
    let data = SynthConfig {
        scenes: 8,
        ..SynthConfig::tiny()
    };
    let corpus = generate_synthetic(&data, 23)?;
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
        seed: 5,
        ..TrainConfig::default()
    };
    let ckpt = train::<f32>(&corpus, &sel, &tc, None)?;

    let video = &corpus.videos[0];
    let expr = &video.expressions[0];
    // Background candidates never reach the scorer.
    let (tokens, tracks) = strip_background(&video.tokens, &video.tracks)?;

    let out = forward(&tokens, &expr.embedding, &ckpt.params, &sel)?;
    println!("expression {:?}", expr.embedding.raw_text);
    for (id, s) in out.track_ids.iter().zip(&out.scores) {
        let mark = if *s > sel.tau_select { '*' } else { ' ' };
        println!("  {mark} {id}: {s:.4}");
    }

    let selection = select(&out.scores, &tracks, &sel)?;
    println!("selected {:?}", selection.selected_track_ids);

    let score = jf_score(
        &selection.merged_track,
        &expr.gt_track,
        BOUNDARY_TOL_FRACTION,
        EmptyFrameMode::ScoreOne,
    )?;
    println!(
        "merged vs ground truth: J {:.2} F {:.2} J&F {:.2}",
        100.0 * score.j,
        100.0 * score.f,
        100.0 * score.jf
    );
    Ok(())
}
