//! Generates a synthetic corpus and prints what each scene contains.
//!
//! Usage: synth_corpus [out-dir]

use sola::data::{generate_synthetic, save_corpus, SynthConfig};

fn main() -> sola::Result<()> {
    let cfg = SynthConfig {
        scenes: 3,
        ..SynthConfig::tiny()
    };
    let corpus = generate_synthetic(&cfg, 7)?;

    for v in &corpus.videos {
        println!(
            "{}: {} candidate tracks ({} frames, {}x{}), {} tokens/track of dim {}",
            v.video_id,
            v.tracks.len(),
            v.tracks.n_frames(),
            v.tracks.height(),
            v.tracks.width(),
            v.tokens.n_frames(),
            v.tokens.dim(),
        );
        for e in &v.expressions {
            // Ground truth is a mask track; candidate ids overlapping it are
            // recoverable from mask overlap, so only the text is printed.
            println!("  {} {:?}", e.expression_id, e.embedding.raw_text);
        }
    }
    println!(
        "total: {} videos, {} expressions",
        corpus.videos.len(),
        corpus.n_expressions()
    );

    if let Some(dir) = std::env::args().nth(1) {
        save_corpus(&corpus, std::path::Path::new(&dir))?;
        println!("saved to {dir}");
    }
    Ok(())
}
