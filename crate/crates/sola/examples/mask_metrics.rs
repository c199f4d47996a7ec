//! Region and boundary metrics on hand-built masks, compared against values
//! computable by hand.
//!
//! Usage: mask_metrics

use sola::mask::{
    jf_score, mask_iou, track_miou, EmptyFrameMode, MaskTrack, RleMask, BOUNDARY_TOL_FRACTION,
};

fn rect(h: u32, w: u32, r0: u32, r1: u32, c0: u32, c1: u32) -> sola::Result<RleMask> {
    let pixels: Vec<bool> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            r >= r0 && r < r1 && c >= c0 && c < c1
        })
        .collect();
    RleMask::from_dense(h, w, &pixels)
}

fn main() -> sola::Result<()> {
    // Two 8x8 squares overlapping in a 4x8 band: IoU = 32 / 96 = 1/3.
    let a = rect(16, 16, 0, 8, 0, 8)?;
    let b = rect(16, 16, 4, 12, 0, 8)?;
    println!("square overlap IoU: {:.6} (exact 1/3)", mask_iou(&a, &b)?);

    // Same mask pair per frame, so the track mean equals the frame value.
    let pred = MaskTrack::new("pred".into(), vec![a.clone(), a.clone()])?;
    let gt = MaskTrack::new("gt".into(), vec![b.clone(), b.clone()])?;
    println!("track mIoU: {:.6}", track_miou(&pred, &gt)?);

    let s = jf_score(&pred, &gt, BOUNDARY_TOL_FRACTION, EmptyFrameMode::ScoreOne)?;
    println!("J {:.4} F {:.4} J&F {:.4}", s.j, s.f, s.jf);

    // Empty-frame conventions diverge when the ground truth vanishes.
    let blank = RleMask::empty(16, 16)?;
    let pred2 = MaskTrack::new("pred".into(), vec![a.clone(), a.clone()])?;
    let gt2 = MaskTrack::new("gt".into(), vec![a, blank])?;
    for mode in [EmptyFrameMode::ScoreOne, EmptyFrameMode::SkipAbsent] {
        let s = jf_score(&pred2, &gt2, BOUNDARY_TOL_FRACTION, mode)?;
        println!("{mode:?}: J {:.4}", s.j);
    }

    // Identical masks are perfect under both metrics.
    let s = jf_score(&gt, &gt, BOUNDARY_TOL_FRACTION, EmptyFrameMode::ScoreOne)?;
    assert_eq!((s.j, s.f, s.jf), (1.0, 1.0, 1.0));
    println!("self-comparison is exactly perfect");
    Ok(())
}
