//! Run-length encoded binary masks and mask-track geometry: codecs, IoU,
//! track deduplication, and track merging.
//!
//! RLE layout: row-major scan, runs alternate zero-run/one-run starting with
//! a zero-run (which may have length 0). All metrics on the RLE path must
//! agree exactly with dense pixel enumeration; the run-merge IoU below counts
//! the same integers a dense pass would.

mod metrics;

pub use metrics::{
    boundary_f, jf_score, region_similarity_j, EmptyFrameMode, JfScore, BOUNDARY_TOL_FRACTION,
};

use crate::error::{Error, Result};

/// One frame's binary mask, run-length encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    height: u32,
    width: u32,
    /// Alternating zero-run/one-run lengths; only the leading zero-run may be
    /// empty. Sum equals height × width.
    runs: Vec<u32>,
}

impl RleMask {
    pub fn new(height: u32, width: u32, runs: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("mask geometry {height}x{width} has a zero side")));
        }
        if runs.is_empty() {
            return Err(Error::shape("mask with no runs".to_string()));
        }
        if runs.iter().skip(1).any(|&r| r == 0) {
            return Err(Error::shape(
                "zero-length run after the leading position".to_string(),
            ));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != height as u64 * width as u64 {
            return Err(Error::shape(format!(
                "run sum {total} != {height}x{width} pixels"
            )));
        }
        Ok(RleMask { height, width, runs })
    }

    pub fn empty(height: u32, width: u32) -> Result<Self> {
        RleMask::new(height, width, vec![height * width])
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Foreground pixel count: the sum of one-runs (odd positions).
    pub fn ones(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| r as u64)
            .sum()
    }

    pub fn is_blank(&self) -> bool {
        self.ones() == 0
    }

    pub fn same_geometry(&self, other: &RleMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Encodes a row-major dense grid.
    pub fn from_dense(height: u32, width: u32, pixels: &[bool]) -> Result<Self> {
        let expect = height as usize * width as usize;
        if pixels.len() != expect {
            return Err(Error::shape(format!(
                "dense grid has {} pixels, geometry {height}x{width} needs {expect}",
                pixels.len()
            )));
        }
        if expect == 0 {
            return Err(Error::shape("mask geometry with a zero side".to_string()));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &p in pixels {
            if p == current {
                len += 1;
            } else {
                runs.push(len);
                current = p;
                len = 1;
            }
        }
        runs.push(len);
        RleMask::new(height, width, runs)
    }

    /// Decodes into a row-major dense grid.
    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.height as usize * self.width as usize);
        let mut value = false;
        for &r in &self.runs {
            out.extend(std::iter::repeat(value).take(r as usize));
            value = !value;
        }
        out
    }
}

/// Intersection-over-union of two same-geometry masks via run merging.
/// Both masks empty scores 1.0 (perfect agreement on absence).
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::shape(format!(
            "mask geometry mismatch: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    // Walk both run lists in lockstep over the pixel axis.
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut rem_a = a.runs[0] as u64;
    let mut rem_b = b.runs[0] as u64;
    let total = a.height as u64 * a.width as u64;
    let mut consumed = 0u64;
    while consumed < total {
        while rem_a == 0 {
            ia += 1;
            rem_a = a.runs[ia] as u64;
        }
        while rem_b == 0 {
            ib += 1;
            rem_b = b.runs[ib] as u64;
        }
        let seg = rem_a.min(rem_b);
        let on_a = ia % 2 == 1;
        let on_b = ib % 2 == 1;
        if on_a && on_b {
            inter += seg;
        }
        if on_a || on_b {
            union += seg;
        }
        rem_a -= seg;
        rem_b -= seg;
        consumed += seg;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One object's mask sequence across a video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTrack {
    track_id: String,
    frames: Vec<RleMask>,
}

impl MaskTrack {
    pub fn new(track_id: String, frames: Vec<RleMask>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::shape(format!("track {track_id:?} has no frames")));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(Error::shape(format!(
                "track {track_id:?} mixes frame geometries"
            )));
        }
        Ok(MaskTrack { track_id, frames })
    }

    pub fn track_id(&self) -> &str {
        &self.track_id
    }

    pub fn frames(&self) -> &[RleMask] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // T ≥ 1 by construction
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width
    }

    pub fn same_geometry(&self, other: &MaskTrack) -> bool {
        self.len() == other.len()
            && self.height() == other.height()
            && self.width() == other.width()
    }
}

/// Mean per-frame IoU between two same-geometry tracks.
pub fn track_miou(a: &MaskTrack, b: &MaskTrack) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::shape(format!(
            "track geometry mismatch: {}x{}x{} vs {}x{}x{}",
            a.len(),
            a.height(),
            a.width(),
            b.len(),
            b.height(),
            b.width()
        )));
    }
    let mut acc = 0.0f64;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        acc += mask_iou(fa, fb)?;
    }
    Ok(acc / a.len() as f64)
}

/// All candidate tracks of one video. Producers order tracks by descending
/// foreground area on the prompt frame (frame 0 by convention).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackSet {
    video_id: String,
    tracks: Vec<MaskTrack>,
}

impl TrackSet {
    pub fn new(video_id: String, tracks: Vec<MaskTrack>) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::shape(format!("video {video_id:?} has no tracks")));
        }
        let first = &tracks[0];
        if tracks.iter().any(|t| !t.same_geometry(first)) {
            return Err(Error::shape(format!(
                "video {video_id:?} mixes track geometries"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tracks {
            if !seen.insert(t.track_id()) {
                return Err(Error::shape(format!(
                    "video {video_id:?} repeats track id {:?}",
                    t.track_id()
                )));
            }
        }
        Ok(TrackSet { video_id, tracks })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn tracks(&self) -> &[MaskTrack] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        false // N ≥ 1 by construction
    }

    pub fn n_frames(&self) -> usize {
        self.tracks[0].len()
    }

    pub fn height(&self) -> u32 {
        self.tracks[0].height()
    }

    pub fn width(&self) -> u32 {
        self.tracks[0].width()
    }
}

/// Greedy duplicate removal: scanning in order, a track is dropped iff its
/// prompt-frame IoU with any already-kept track strictly exceeds `theta`.
/// Kept order is preserved; callers supply tracks largest-first.
pub fn dedup_tracks(ts: &TrackSet, prompt_frame: usize, theta: f64) -> Result<TrackSet> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::config(format!(
            "dedup threshold must be in (0, 1], got {theta}"
        )));
    }
    if prompt_frame >= ts.n_frames() {
        return Err(Error::shape(format!(
            "prompt frame {prompt_frame} out of range for {} frames",
            ts.n_frames()
        )));
    }
    let mut kept: Vec<MaskTrack> = Vec::new();
    for track in &ts.tracks {
        let mut duplicate = false;
        for k in &kept {
            if mask_iou(&track.frames[prompt_frame], &k.frames[prompt_frame])? > theta {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(track.clone());
        }
    }
    TrackSet::new(ts.video_id.clone(), kept)
}

/// Pixelwise OR of the given tracks. An empty selection yields an all-zero
/// track of the stated geometry.
pub fn merge_tracks(
    selected: &[&MaskTrack],
    n_frames: usize,
    height: u32,
    width: u32,
    merged_id: String,
) -> Result<MaskTrack> {
    for t in selected {
        if t.len() != n_frames || t.height() != height || t.width() != width {
            return Err(Error::shape(format!(
                "track {:?} geometry {}x{}x{} does not match merge target {}x{}x{}",
                t.track_id(),
                t.len(),
                t.height(),
                t.width(),
                n_frames,
                height,
                width
            )));
        }
    }
    let px = height as usize * width as usize;
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut grid = vec![false; px];
        for t in selected {
            let mut pos = 0usize;
            let mut value = false;
            for &r in t.frames[f].runs() {
                if value {
                    for cell in &mut grid[pos..pos + r as usize] {
                        *cell = true;
                    }
                }
                pos += r as usize;
                value = !value;
            }
        }
        frames.push(RleMask::from_dense(height, width, &grid)?);
    }
    MaskTrack::new(merged_id, frames)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_grid_encodes_to_single_run() {
        let m = RleMask::from_dense(4, 4, &[false; 16]).unwrap();
        assert_eq!(m.runs(), &[16]);
        assert_eq!(m.to_dense(), vec![false; 16]);
    }

    #[test]
    fn all_one_grid_encodes_with_empty_leading_run() {
        let m = RleMask::from_dense(2, 2, &[true; 4]).unwrap();
        assert_eq!(m.runs(), &[0, 4]);
        assert_eq!(m.to_dense(), vec![true; 4]);
    }

    #[test]
    fn random_grids_roundtrip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let h = rng.gen_range(1..=16u32);
            let w = rng.gen_range(1..=16u32);
            let grid: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.4)).collect();
            let m = RleMask::from_dense(h, w, &grid).unwrap();
            assert_eq!(m.to_dense(), grid);
        }
    }

    #[test]
    fn bad_run_sum_is_rejected() {
        let err = RleMask::new(4, 4, vec![10, 2]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn interior_zero_run_is_rejected() {
        assert!(RleMask::new(2, 2, vec![1, 2, 0, 1]).is_err());
    }

    #[test]
    fn iou_of_identical_masks_is_one() {
        let m = rect_mask(8, 8, 1, 5, 2, 6);
        assert_eq!(mask_iou(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn iou_of_two_empty_masks_is_one() {
        let a = RleMask::empty(4, 4).unwrap();
        let b = RleMask::empty(4, 4).unwrap();
        assert_eq!(mask_iou(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn iou_hand_case_two_sixths() {
        // A: top-left 2x2 block; B: rows 0-1, cols 1-2. Overlap 2, union 6.
        let a = rect_mask(4, 4, 0, 2, 0, 2);
        let b = rect_mask(4, 4, 0, 2, 1, 3);
        let got = mask_iou(&a, &b).unwrap();
        assert!((got - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(got, dense_iou(&a, &b));
    }

    #[test]
    fn iou_geometry_mismatch_is_error() {
        let a = RleMask::empty(4, 4).unwrap();
        let b = RleMask::empty(4, 5).unwrap();
        assert!(mask_iou(&a, &b).is_err());
    }

    #[test]
    fn iou_is_symmetric_and_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let a = random_mask(&mut rng, 12, 9);
            let b = random_mask(&mut rng, 12, 9);
            let ab = mask_iou(&a, &b).unwrap();
            let ba = mask_iou(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert_eq!(ab, dense_iou(&a, &b));
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn track_miou_of_identical_tracks_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_track(&mut rng, "a", 4, 10, 10);
        assert_eq!(track_miou(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn track_miou_is_mean_of_frame_ious() {
        // Frame 0 identical (IoU 1), frame 1 disjoint (IoU 0) → mean 0.5.
        let m = rect_mask(4, 4, 0, 2, 0, 2);
        let other = rect_mask(4, 4, 2, 4, 2, 4);
        let a = MaskTrack::new("a".into(), vec![m.clone(), m.clone()]).unwrap();
        let b = MaskTrack::new("b".into(), vec![m, other]).unwrap();
        assert_eq!(track_miou(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn track_miou_matches_dense_oracle_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let a = random_track(&mut rng, "a", 5, 8, 11);
            let b = random_track(&mut rng, "b", 5, 8, 11);
            let want: f64 = a
                .frames()
                .iter()
                .zip(b.frames())
                .map(|(x, y)| dense_iou(x, y))
                .sum::<f64>()
                / 5.0;
            assert!((track_miou(&a, &b).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn track_length_mismatch_is_error() {
        let m = rect_mask(4, 4, 0, 2, 0, 2);
        let a = MaskTrack::new("a".into(), vec![m.clone(), m.clone()]).unwrap();
        let b = MaskTrack::new("b".into(), vec![m]).unwrap();
        assert!(track_miou(&a, &b).is_err());
    }

    fn two_track_set(a: MaskTrack, b: MaskTrack) -> TrackSet {
        TrackSet::new("v".into(), vec![a, b]).unwrap()
    }

    #[test]
    fn dedup_drops_identical_second_track() {
        let m = rect_mask(8, 8, 1, 4, 1, 4);
        let a = MaskTrack::new("a".into(), vec![m.clone()]).unwrap();
        let b = MaskTrack::new("b".into(), vec![m]).unwrap();
        let out = dedup_tracks(&two_track_set(a, b), 0, 0.7).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.tracks()[0].track_id(), "a");
    }

    #[test]
    fn dedup_keeps_disjoint_tracks() {
        let a = MaskTrack::new("a".into(), vec![rect_mask(8, 8, 0, 3, 0, 3)]).unwrap();
        let b = MaskTrack::new("b".into(), vec![rect_mask(8, 8, 4, 8, 4, 8)]).unwrap();
        let out = dedup_tracks(&two_track_set(a, b), 0, 0.7).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn dedup_keeps_pair_at_exactly_threshold() {
        // |B|=7 inside |A|=10 → IoU exactly 0.7; strict inequality keeps both.
        let a = mask_from_coords(2, 10, &(0..10).map(|c| (0u32, c)).collect::<Vec<_>>());
        let b = mask_from_coords(2, 10, &(0..7).map(|c| (0u32, c)).collect::<Vec<_>>());
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.7);
        let ta = MaskTrack::new("a".into(), vec![a]).unwrap();
        let tb = MaskTrack::new("b".into(), vec![b]).unwrap();
        let out = dedup_tracks(&two_track_set(ta, tb), 0, 0.7).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn dedup_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tracks: Vec<MaskTrack> = (0..6)
            .map(|i| random_track(&mut rng, &format!("t{i}"), 3, 10, 10))
            .collect();
        let ts = TrackSet::new("v".into(), tracks).unwrap();
        let once = dedup_tracks(&ts, 0, 0.7).unwrap();
        let twice = dedup_tracks(&once, 0, 0.7).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn dedup_bad_prompt_frame_is_error() {
        let a = MaskTrack::new("a".into(), vec![rect_mask(4, 4, 0, 2, 0, 2)]).unwrap();
        let ts = TrackSet::new("v".into(), vec![a]).unwrap();
        assert!(dedup_tracks(&ts, 3, 0.7).is_err());
    }

    #[test]
    fn merge_of_single_track_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = random_track(&mut rng, "a", 3, 9, 9);
        let merged = merge_tracks(&[&t], 3, 9, 9, "m".into()).unwrap();
        assert_eq!(merged.frames(), t.frames());
    }

    #[test]
    fn merge_of_disjoint_tracks_sums_areas() {
        let a = MaskTrack::new("a".into(), vec![rect_mask(8, 8, 0, 3, 0, 3)]).unwrap();
        let b = MaskTrack::new("b".into(), vec![rect_mask(8, 8, 4, 8, 4, 8)]).unwrap();
        let merged = merge_tracks(&[&a, &b], 1, 8, 8, "m".into()).unwrap();
        assert_eq!(
            merged.frames()[0].ones(),
            a.frames()[0].ones() + b.frames()[0].ones()
        );
    }

    #[test]
    fn merge_matches_dense_or_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = random_track(&mut rng, "a", 4, 10, 7);
        let b = random_track(&mut rng, "b", 4, 10, 7);
        let merged = merge_tracks(&[&a, &b], 4, 10, 7, "m".into()).unwrap();
        for f in 0..4 {
            let da = a.frames()[f].to_dense();
            let db = b.frames()[f].to_dense();
            let want: Vec<bool> = da.iter().zip(&db).map(|(x, y)| *x || *y).collect();
            assert_eq!(merged.frames()[f].to_dense(), want);
        }
    }

    #[test]
    fn merge_of_empty_selection_is_blank_track() {
        let merged = merge_tracks(&[], 2, 5, 5, "m".into()).unwrap();
        assert!(merged.frames().iter().all(|f| f.is_blank()));
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn merge_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let a = random_track(&mut rng, "a", 2, 8, 8);
        let b = random_track(&mut rng, "b", 2, 8, 8);
        let c = random_track(&mut rng, "c", 2, 8, 8);
        let abc = merge_tracks(&[&a, &b, &c], 2, 8, 8, "m".into()).unwrap();
        let cba = merge_tracks(&[&c, &b, &a], 2, 8, 8, "m".into()).unwrap();
        assert_eq!(abc.frames(), cba.frames());
    }
}
