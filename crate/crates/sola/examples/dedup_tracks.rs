//! Removes near-duplicate candidate tracks by prompt-frame IoU. The
//! generator plants shadow tracks, so some scenes lose candidates.
//!
//! Usage: dedup_tracks

use sola::data::{generate_synthetic, SynthConfig};
use sola::mask::dedup_tracks;

fn main() -> sola::Result<()> {
    let cfg = SynthConfig {
        scenes: 4,
        shadow_fraction: 1.0,
        ..SynthConfig::tiny()
    };
    let corpus = generate_synthetic(&cfg, 41)?;

    for v in &corpus.videos {
        let kept = dedup_tracks(&v.tracks, 0, 0.7)?;
        let kept_ids: Vec<&str> = kept.tracks().iter().map(|t| t.track_id()).collect();
        let dropped: Vec<&str> = v
            .tracks
            .tracks()
            .iter()
            .map(|t| t.track_id())
            .filter(|id| !kept_ids.contains(id))
            .collect();
        println!(
            "{}: {} -> {} tracks, dropped {:?}",
            v.video_id,
            v.tracks.len(),
            kept.len(),
            dropped
        );
    }
    Ok(())
}
