//! Region and boundary quality of a predicted mask track against ground
//! truth: region similarity J (mean IoU), boundary accuracy F (tolerance-
//! matched boundary precision/recall), and their average J&F.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_iou, MaskTrack};

/// Default boundary-match tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOL_FRACTION: f64 = 0.008;

/// How frames with an empty ground-truth mask enter the J average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyFrameMode {
    /// Both-empty frames score IoU 1.0 and every frame counts.
    #[default]
    ScoreOne,
    /// Frames whose ground truth is empty are left out of the mean. If every
    /// frame is left out, the track scores 1.0 when the prediction is empty
    /// on all those frames and 0.0 otherwise.
    SkipAbsent,
}

/// Per-track metric triple; all values in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JfScore {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

fn check_geometry(pred: &MaskTrack, gt: &MaskTrack) -> Result<()> {
    if !pred.same_geometry(gt) {
        return Err(Error::shape(format!(
            "prediction geometry {}x{}x{} does not match ground truth {}x{}x{}",
            pred.len(),
            pred.height(),
            pred.width(),
            gt.len(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Region similarity J: mean per-frame IoU between prediction and ground
/// truth, with the chosen empty-frame convention.
pub fn region_similarity_j(pred: &MaskTrack, gt: &MaskTrack, mode: EmptyFrameMode) -> Result<f64> {
    check_geometry(pred, gt)?;
    match mode {
        EmptyFrameMode::ScoreOne => {
            let mut acc = 0.0;
            for (p, g) in pred.frames().iter().zip(gt.frames()) {
                acc += mask_iou(p, g)?;
            }
            Ok(acc / pred.len() as f64)
        }
        EmptyFrameMode::SkipAbsent => {
            let mut acc = 0.0;
            let mut counted = 0usize;
            let mut pred_clean_on_absent = true;
            for (p, g) in pred.frames().iter().zip(gt.frames()) {
                if g.is_blank() {
                    pred_clean_on_absent &= p.is_blank();
                } else {
                    acc += mask_iou(p, g)?;
                    counted += 1;
                }
            }
            if counted == 0 {
                Ok(if pred_clean_on_absent { 1.0 } else { 0.0 })
            } else {
                Ok(acc / counted as f64)
            }
        }
    }
}

/// Boundary accuracy F: per frame, 8-connected boundary pixels of prediction
/// and ground truth are matched within radius ceil(tol_fraction × diagonal);
/// F is the harmonic mean of boundary precision and recall, averaged over
/// frames. Two empty boundaries score 1, one empty boundary scores 0.
pub fn boundary_f(pred: &MaskTrack, gt: &MaskTrack, tol_fraction: f64) -> Result<f64> {
    check_geometry(pred, gt)?;
    if !(tol_fraction >= 0.0) {
        return Err(Error::config(format!(
            "boundary tolerance fraction must be nonnegative, got {tol_fraction}"
        )));
    }
    let (h, w) = (pred.height() as usize, pred.width() as usize);
    let diag = ((h * h + w * w) as f64).sqrt();
    let radius = (tol_fraction * diag).ceil() as i64;
    let mut acc = 0.0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        let bp = boundary_pixels(&p.to_dense(), h, w);
        let bg = boundary_pixels(&g.to_dense(), h, w);
        acc += frame_boundary_f(&bp, &bg, h, w, radius);
    }
    Ok(acc / pred.len() as f64)
}

fn frame_boundary_f(bp: &[(usize, usize)], bg: &[(usize, usize)], h: usize, w: usize, radius: i64) -> f64 {
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let matched_pred = count_matched(bp, bg, h, w, radius);
    let matched_gt = count_matched(bg, bp, h, w, radius);
    let precision = matched_pred as f64 / bp.len() as f64;
    let recall = matched_gt as f64 / bg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Pixels of `source` with a counterpart in `targets` within `radius`,
/// counted by stamping a disc around every target pixel.
fn count_matched(
    source: &[(usize, usize)],
    targets: &[(usize, usize)],
    h: usize,
    w: usize,
    radius: i64,
) -> usize {
    let mut near = vec![false; h * w];
    let r2 = radius * radius;
    for &(tr, tc) in targets {
        let (tr, tc) = (tr as i64, tc as i64);
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                if dr * dr + dc * dc > r2 {
                    continue;
                }
                let (rr, cc) = (tr + dr, tc + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    near[rr as usize * w + cc as usize] = true;
                }
            }
        }
    }
    source.iter().filter(|&&(r, c)| near[r * w + c]).count()
}

/// Foreground pixels with any 8-neighborhood background contact;
/// out-of-bounds counts as background, so image-edge pixels are boundary.
fn boundary_pixels(grid: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !grid[r * w + c] {
                continue;
            }
            let mut edge = false;
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                        edge = true;
                        break 'scan;
                    }
                    if !grid[rr as usize * w + cc as usize] {
                        edge = true;
                        break 'scan;
                    }
                }
            }
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// J, F, and their average for one prediction/ground-truth pair.
pub fn jf_score(
    pred: &MaskTrack,
    gt: &MaskTrack,
    tol_fraction: f64,
    mode: EmptyFrameMode,
) -> Result<JfScore> {
    let j = region_similarity_j(pred, gt, mode)?;
    let f = boundary_f(pred, gt, tol_fraction)?;
    Ok(JfScore {
        j,
        f,
        jf: (j + f) / 2.0,
    })
}
