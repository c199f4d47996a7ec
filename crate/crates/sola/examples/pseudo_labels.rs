//! Derives supervision from mask overlap: a candidate is a positive for an
//! expression iff its track mIoU against the expression's ground truth
//! exceeds the labeling threshold.
//!
//! Usage: pseudo_labels

use sola::data::{generate_synthetic, strip_background, SynthConfig};
use sola::supervision::make_pseudo_labels;

fn main() -> sola::Result<()> {
    let corpus = generate_synthetic(
        &SynthConfig {
            scenes: 2,
            ..SynthConfig::tiny()
        },
        17,
    )?;

    let (mut pos, mut total) = (0usize, 0usize);
    for v in &corpus.videos {
        let (_, tracks) = strip_background(&v.tokens, &v.tracks)?;
        for e in &v.expressions {
            let labels = make_pseudo_labels(&tracks, &e.gt_track, 0.5)?;
            println!("{} {:?}", e.expression_id, e.embedding.raw_text);
            for (t, (&y, &m)) in tracks.tracks().iter().zip(labels.y.iter().zip(&labels.miou)) {
                println!("  {} mIoU {:.3} -> {}", t.track_id(), m, if y { "positive" } else { "negative" });
            }
            pos += labels.positives();
            total += labels.y.len();
        }
    }
    println!("{pos}/{total} candidate-expression pairs labeled positive");
    Ok(())
}
