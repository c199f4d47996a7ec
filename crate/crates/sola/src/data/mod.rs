//! On-disk data model: token blobs, text embeddings, mask-track containers,
//! corpus manifests, validation, and a synthetic corpus generator.
//!
//! A corpus is a directory with a `manifest.toml` naming per-video files:
//! candidate mask tracks, their object tokens, and per-expression text
//! embeddings with ground-truth tracks. Loading reproduces saved tensors
//! bit-exactly and masks exactly.

pub(crate) mod io;
mod synth;

pub use io::{load_corpus, load_tracks, save_corpus, save_tracks};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::mask::{MaskTrack, TrackSet};

/// Per-track object tokens for one video: N tracks × T frames × D dims,
/// row-major, 32-bit. Track ids follow the video's TrackSet order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    track_ids: Vec<String>,
    n_frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl TokenSet {
    pub fn new(track_ids: Vec<String>, n_frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if track_ids.is_empty() || n_frames == 0 || dim == 0 {
            return Err(Error::shape(format!(
                "token set needs N,T,D ≥ 1, got {}x{n_frames}x{dim}",
                track_ids.len()
            )));
        }
        if values.len() != track_ids.len() * n_frames * dim {
            return Err(Error::shape(format!(
                "token payload has {} values, {}x{n_frames}x{dim} needs {}",
                values.len(),
                track_ids.len(),
                track_ids.len() * n_frames * dim
            )));
        }
        Ok(TokenSet {
            track_ids,
            n_frames,
            dim,
            values,
        })
    }

    pub fn n_tracks(&self) -> usize {
        self.track_ids.len()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// One frame's token vector.
    pub fn token(&self, track: usize, frame: usize) -> &[f32] {
        let base = (track * self.n_frames + frame) * self.dim;
        &self.values[base..base + self.dim]
    }

    /// All of one track's tokens, T×D row-major.
    pub fn track_tokens(&self, track: usize) -> &[f32] {
        let base = track * self.n_frames * self.dim;
        &self.values[base..base + self.n_frames * self.dim]
    }

    /// Temporal mean of one track's tokens, in f64.
    pub fn mean_pooled(&self, track: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; self.dim];
        for t in 0..self.n_frames {
            for (o, v) in out.iter_mut().zip(self.token(track, t)) {
                *o += *v as f64;
            }
        }
        for o in &mut out {
            *o /= self.n_frames as f64;
        }
        out
    }
}

/// Per-word embedding of one referring expression: N_w × D_text, 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub expression_id: String,
    /// Informative only; never parsed.
    pub raw_text: String,
    n_words: usize,
    dim: usize,
    values: Vec<f32>,
}

impl TextEmbedding {
    pub fn new(
        expression_id: String,
        raw_text: String,
        n_words: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if n_words == 0 || dim == 0 {
            return Err(Error::shape(format!(
                "text embedding needs N_w,D_text ≥ 1, got {n_words}x{dim}"
            )));
        }
        if values.len() != n_words * dim {
            return Err(Error::shape(format!(
                "text payload has {} values, {n_words}x{dim} needs {}",
                values.len(),
                n_words * dim
            )));
        }
        Ok(TextEmbedding {
            expression_id,
            raw_text,
            n_words,
            dim,
            values,
        })
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// One expression paired with its ground-truth mask track.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionRecord {
    pub expression_id: String,
    pub video_id: String,
    pub embedding: TextEmbedding,
    pub gt_track: MaskTrack,
}

/// One video's candidates, tokens, and expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub video_id: String,
    pub tracks: TrackSet,
    pub tokens: TokenSet,
    pub expressions: Vec<ExpressionRecord>,
}

/// A full corpus in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub format_version: u32,
    pub videos: Vec<VideoData>,
}

/// Current on-disk format version.
pub const FORMAT_VERSION: u32 = 1;

impl Corpus {
    pub fn new(videos: Vec<VideoData>) -> Self {
        Corpus {
            format_version: FORMAT_VERSION,
            videos,
        }
    }

    pub fn n_expressions(&self) -> usize {
        self.videos.iter().map(|v| v.expressions.len()).sum()
    }

    /// All (video, expression) pairs in manifest order.
    pub fn expressions(&self) -> impl Iterator<Item = (&VideoData, &ExpressionRecord)> {
        self.videos
            .iter()
            .flat_map(|v| v.expressions.iter().map(move |e| (v, e)))
    }
}

/// Checks every corpus invariant; returns human-readable violations (empty
/// means valid). Violations are data, not errors: partially broken corpora
/// can still be inspected.
pub fn validate_corpus(corpus: &Corpus) -> Vec<String> {
    let mut out = Vec::new();
    let mut video_ids = std::collections::HashSet::new();
    let mut expr_ids = std::collections::HashSet::new();
    let mut corpus_dims: Option<(usize, usize)> = None;
    for v in &corpus.videos {
        let vid = &v.video_id;
        if !video_ids.insert(vid.clone()) {
            out.push(format!("video {vid:?}: duplicate video id"));
        }
        let (n, t) = (v.tracks.len(), v.tracks.n_frames());
        if v.tokens.n_tracks() != n {
            out.push(format!(
                "video {vid:?}: token set has {} tracks, track set has {n}",
                v.tokens.n_tracks()
            ));
        }
        if v.tokens.n_frames() != t {
            out.push(format!(
                "video {vid:?}: token set has {} frames, track set has {t}",
                v.tokens.n_frames()
            ));
        }
        if v.tokens.n_tracks() == n
            && v.tokens
                .track_ids()
                .iter()
                .zip(v.tracks.tracks())
                .any(|(a, b)| a != b.track_id())
        {
            out.push(format!("video {vid:?}: token track ids do not match track set order"));
        }
        for (i, chunk) in v.tokens.values().chunks(v.tokens.dim()).enumerate() {
            if let Some(d) = chunk.iter().position(|x| !x.is_finite()) {
                let track = i / v.tokens.n_frames();
                let frame = i % v.tokens.n_frames();
                out.push(format!(
                    "video {vid:?}: non-finite token value at track {track}, frame {frame}, dim {d}"
                ));
            }
        }
        match corpus_dims {
            None => corpus_dims = Some((v.tokens.dim(), 0)),
            Some((d, _)) if d != v.tokens.dim() => {
                out.push(format!(
                    "video {vid:?}: token dim {} differs from corpus dim {d}",
                    v.tokens.dim()
                ));
            }
            _ => {}
        }
        // Producers order candidates by descending prompt-frame (frame 0) area.
        let areas: Vec<u64> = v.tracks.tracks().iter().map(|tr| tr.frames()[0].ones()).collect();
        if areas.windows(2).any(|w| w[0] < w[1]) {
            out.push(format!(
                "video {vid:?}: tracks not ordered by descending prompt-frame area"
            ));
        }
        for e in &v.expressions {
            let eid = &e.expression_id;
            if !expr_ids.insert(eid.clone()) {
                out.push(format!("expression {eid:?}: duplicate expression id"));
            }
            if e.video_id != *vid {
                out.push(format!("expression {eid:?}: video id {:?} != host video {vid:?}", e.video_id));
            }
            if e.embedding.expression_id != *eid {
                out.push(format!("expression {eid:?}: embedding carries id {:?}", e.embedding.expression_id));
            }
            if let Some(p) = e.embedding.values().iter().position(|x| !x.is_finite()) {
                out.push(format!("expression {eid:?}: non-finite embedding value at flat index {p}"));
            }
            if e.gt_track.len() != t || e.gt_track.height() != v.tracks.height() || e.gt_track.width() != v.tracks.width() {
                out.push(format!(
                    "expression {eid:?}: ground-truth geometry {}x{}x{} does not match video {t}x{}x{}",
                    e.gt_track.len(),
                    e.gt_track.height(),
                    e.gt_track.width(),
                    v.tracks.height(),
                    v.tracks.width()
                ));
            }
        }
        if let Some((d_text, _)) = v
            .expressions
            .first()
            .map(|e| (e.embedding.dim(), 0))
        {
            if v.expressions.iter().any(|e| e.embedding.dim() != d_text) {
                out.push(format!("video {vid:?}: expressions mix text dims"));
            }
        }
    }
    out
}

/// Candidate tracks with this id prefix are background proposals, never
/// referents; pipelines can drop them before scoring.
pub const BACKGROUND_PREFIX: &str = "bg";

pub fn is_background_id(id: &str) -> bool {
    id.starts_with(BACKGROUND_PREFIX)
}

/// Drops background candidates from a token/track pair, preserving the
/// remaining order. Returns clones when nothing is background.
pub fn strip_background(tokens: &TokenSet, tracks: &TrackSet) -> Result<(TokenSet, TrackSet)> {
    let keep: Vec<usize> = (0..tokens.n_tracks())
        .filter(|&i| !is_background_id(&tokens.track_ids()[i]))
        .collect();
    if keep.len() == tokens.n_tracks() {
        return Ok((tokens.clone(), tracks.clone()));
    }
    if keep.is_empty() {
        return Err(Error::config("every candidate track is background"));
    }
    let mut ids = Vec::with_capacity(keep.len());
    let mut values = Vec::with_capacity(keep.len() * tokens.n_frames() * tokens.dim());
    for &i in &keep {
        ids.push(tokens.track_ids()[i].clone());
        values.extend_from_slice(tokens.track_tokens(i));
    }
    let filtered_tokens = TokenSet::new(ids, tokens.n_frames(), tokens.dim(), values)?;
    let kept: Vec<MaskTrack> = keep.iter().map(|&i| tracks.tracks()[i].clone()).collect();
    let filtered_tracks = TrackSet::new(tracks.video_id().to_string(), kept)?;
    Ok((filtered_tokens, filtered_tracks))
}
