//! Checks that object-token similarity tracks mask overlap: pools tokens per
//! track, bins pairwise cosine against pairwise mask mIoU, and reports the
//! rank correlation over the whole corpus.
//!
//! Usage: token_similarity [corpus-dir]

use std::path::Path;

use sola::data::{generate_synthetic, load_corpus, SynthConfig};
use sola::eval::{corpus_similarity_analysis, render_similarity, TokenPooling};

fn main() -> sola::Result<()> {
    let corpus = match std::env::args().nth(1) {
        Some(dir) => load_corpus(Path::new(&dir))?,
        None => generate_synthetic(
            &SynthConfig {
                scenes: 16,
                ..SynthConfig::tiny()
            },
            3,
        )?,
    };

    for pooling in [TokenPooling::TemporalMean, TokenPooling::LastFrame] {
        let a = corpus_similarity_analysis(&corpus, pooling)?;
        println!("{pooling:?} pooling:");
        print!("{}", render_similarity(&a));
        println!();
    }
    Ok(())
}
