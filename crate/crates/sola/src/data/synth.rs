//! Synthetic corpus generator: a desk-scale stand-in for frozen video
//! segmenter and text encoder outputs.
//!
//! Scenes contain colored shapes moving along simple trajectories. Candidate
//! tracks are the true objects, near-duplicate "shadow" tracks (a second
//! proposal for the same object, offset by a pixel or two), and static
//! background distractors. Expressions are templated predicates over
//! appearance and motion; ground truth is the union of satisfying tracks.
//!
//! Object tokens embed [appearance one-hot, position/size, velocity] behind a
//! frozen random projection plus Gaussian noise, so language alignment is
//! learnable but not trivially linear. Word embeddings come from a second
//! frozen projection. Both projections are seeded by constants independent of
//! the corpus seed: train and validation corpora generated with different
//! seeds share the same "encoders".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, ExpressionRecord, TextEmbedding, TokenSet, VideoData};
use crate::error::{Error, Result};
use crate::mask::{merge_tracks, track_miou, MaskTrack, RleMask, TrackSet};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const SHAPES: [&str; 4] = ["square", "disc", "ring", "bar"];
/// Motion class names as they appear in track ids.
pub const MOTIONS: [&str; 6] = ["left", "right", "up", "down", "circling", "static"];
/// Motion words as they appear in expressions, index-aligned with MOTIONS.
pub const MOTION_WORDS: [&str; 6] = ["left", "right", "up", "down", "around", "nowhere"];

const FEAT: usize = COLORS.len() + SHAPES.len() + 4;
const POS_SCALE: f64 = 5.0;
const VEL_SCALE: f64 = 1.0;

// Frozen-encoder seeds; deliberately independent of the corpus seed.
const TOKEN_PROJECTION_SEED: u64 = 0x534f_4c41;
const TEXT_PROJECTION_SEED: u64 = 0x534f_4c45;

/// Scene and embedding parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    /// True objects per scene (shadow and distractor tracks come on top).
    pub objects_per_scene: usize,
    pub n_frames: usize,
    /// Square frame side; 64 or 96.
    pub image_size: u32,
    /// Object-token dimensionality D.
    pub dim: usize,
    /// Word-embedding dimensionality D_text.
    pub text_dim: usize,
    /// Stddev of the additive token noise.
    pub noise_sigma: f64,
    /// Static background tracks per scene.
    pub distractors: usize,
    pub expressions_per_scene: usize,
    /// Probability that an object also gets a near-duplicate shadow track.
    pub shadow_fraction: f64,
    /// Scene resampling budget before generation fails.
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 8,
            objects_per_scene: 8,
            n_frames: 24,
            image_size: 64,
            dim: 256,
            text_dim: 768,
            noise_sigma: 0.1,
            distractors: 3,
            expressions_per_scene: 2,
            shadow_fraction: 0.5,
            max_retries: 100,
        }
    }
}

impl SynthConfig {
    /// Small preset for fast tests and examples.
    pub fn tiny() -> Self {
        SynthConfig {
            scenes: 1,
            objects_per_scene: 4,
            n_frames: 16,
            dim: 32,
            text_dim: 48,
            distractors: 2,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 9] = [
            (self.scenes >= 1, "scenes must be >= 1"),
            (
                (4..=12).contains(&self.objects_per_scene),
                "objects_per_scene must be in [4, 12]",
            ),
            ((16..=32).contains(&self.n_frames), "n_frames must be in [16, 32]"),
            (
                self.image_size == 64 || self.image_size == 96,
                "image_size must be 64 or 96",
            ),
            (self.dim >= FEAT, "dim must be at least the 14 attribute features"),
            (self.text_dim >= 8, "text_dim must be >= 8"),
            (
                self.noise_sigma.is_finite() && self.noise_sigma >= 0.0,
                "noise_sigma must be finite and >= 0",
            ),
            (
                (1..=2 * self.objects_per_scene).contains(&self.expressions_per_scene),
                "expressions_per_scene must be in [1, 2*objects_per_scene]",
            ),
            (
                (0.0..=1.0).contains(&self.shadow_fraction) && self.max_retries >= 1,
                "shadow_fraction must be in [0, 1] and max_retries >= 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(format!("synth config: {msg}")));
            }
        }
        Ok(())
    }
}

/// All words the templates can emit, in embedding-row order.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v = vec!["the", "moving", "going"];
    v.extend(COLORS);
    v.extend(SHAPES);
    v.extend(MOTION_WORDS);
    v
}

/// Frozen Gaussian matrix, rows x cols, entries N(0, 1/cols).
fn frozen_projection(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Brush {
    Box { hx: f64, hy: f64 },
    Disc { r: f64 },
    Ring { r: f64, inner: f64 },
}

impl Brush {
    fn extent(&self) -> (f64, f64) {
        match *self {
            Brush::Box { hx, hy } => (hx, hy),
            Brush::Disc { r } | Brush::Ring { r, .. } => (r, r),
        }
    }

    fn covers(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Brush::Box { hx, hy } => dx.abs() <= hx && dy.abs() <= hy,
            Brush::Disc { r } => dx * dx + dy * dy <= r * r,
            Brush::Ring { r, inner } => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= inner * inner
            }
        }
    }
}

fn brush_for(shape: usize, half: f64) -> Brush {
    match shape {
        0 => Brush::Box { hx: half, hy: half },
        1 => Brush::Disc { r: half },
        2 => Brush::Ring { r: half, inner: 0.55 * half },
        _ => Brush::Box { hx: 1.5 * half, hy: 0.45 * half },
    }
}

struct Candidate {
    id: String,
    /// (color, shape); None marks a background distractor.
    appearance: Option<(usize, usize)>,
    motion: Option<usize>,
    brush: Brush,
    centers: Vec<(f64, f64)>,
    frames: Vec<RleMask>,
}

impl Candidate {
    fn velocity(&self, t: usize) -> (f64, f64) {
        let i = t.max(1);
        (
            self.centers[i].0 - self.centers[i - 1].0,
            self.centers[i].1 - self.centers[i - 1].1,
        )
    }
}

fn render(brush: Brush, centers: &[(f64, f64)], size: u32) -> Result<Vec<RleMask>> {
    let s = size as usize;
    let (ex, ey) = brush.extent();
    centers
        .iter()
        .map(|&(x, y)| {
            let mut grid = vec![false; s * s];
            let r0 = ((y - ey - 1.0).floor().max(0.0)) as usize;
            let r1 = ((y + ey + 1.0).ceil().min(size as f64 - 1.0)) as usize;
            let c0 = ((x - ex - 1.0).floor().max(0.0)) as usize;
            let c1 = ((x + ex + 1.0).ceil().min(size as f64 - 1.0)) as usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if brush.covers(c as f64 - x, r as f64 - y) {
                        grid[r * s + c] = true;
                    }
                }
            }
            RleMask::from_dense(size, size, &grid)
        })
        .collect()
}

/// Per-frame trajectory, kept far enough inside the frame that the shape and
/// any shadow offset never touch the border. None when the frame is too small
/// for the drawn speed, which forces a scene resample.
fn trajectory(
    rng: &mut ChaCha8Rng,
    motion: usize,
    extent: (f64, f64),
    size: u32,
    t: usize,
) -> Option<Vec<(f64, f64)>> {
    let s = size as f64 - 1.0;
    let (mx, my) = (extent.0 + 2.5, extent.1 + 2.5);
    let steps = (t - 1) as f64;
    let lerp = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * u;
    match motion {
        4 => {
            // Circling: fixed angular speed, random phase and direction.
            let rad = rng.gen_range(3.5..6.0);
            let (cx0, cx1) = (mx + rad, s - mx - rad);
            let (cy0, cy1) = (my + rad, s - my - rad);
            if cx0 >= cx1 || cy0 >= cy1 {
                return None;
            }
            let cx = rng.gen_range(cx0..cx1);
            let cy = rng.gen_range(cy0..cy1);
            let turns = rng.gen_range(0.6..1.0);
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            Some(
                (0..t)
                    .map(|k| {
                        let a = phase + dir * std::f64::consts::TAU * turns * k as f64 / steps;
                        (cx + rad * a.cos(), cy + rad * a.sin())
                    })
                    .collect(),
            )
        }
        5 => {
            let x = rng.gen_range(mx..s - mx);
            let y = rng.gen_range(my..s - my);
            Some(vec![(x, y); t])
        }
        _ => {
            // Axis-aligned constant velocity; the span must fit the frame.
            let (along_m, cross_m, horizontal) = match motion {
                0 | 1 => (mx, my, true),
                _ => (my, mx, false),
            };
            let room = s - 2.0 * along_m;
            let v_hi = (room / steps).min(1.5) * 0.95;
            if v_hi <= 0.6 {
                return None;
            }
            let v = rng.gen_range(0.6..v_hi);
            let start = lerp(along_m, s - along_m - v * steps, rng.gen::<f64>());
            let cross = rng.gen_range(cross_m..s - cross_m);
            let sign = if motion == 0 || motion == 2 { -1.0 } else { 1.0 };
            let origin = if sign < 0.0 { s - start } else { start };
            Some(
                (0..t)
                    .map(|k| {
                        let a = origin + sign * v * k as f64;
                        if horizontal {
                            (a, cross)
                        } else {
                            (cross, a)
                        }
                    })
                    .collect(),
            )
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Predicate {
    Full { color: usize, shape: usize, motion: usize },
    Appearance { color: usize, shape: usize },
    MotionOnly { motion: usize },
}

impl Predicate {
    fn satisfied_by(&self, c: &Candidate) -> bool {
        match *self {
            Predicate::Full { color, shape, motion } => {
                c.appearance == Some((color, shape)) && c.motion == Some(motion)
            }
            Predicate::Appearance { color, shape } => c.appearance == Some((color, shape)),
            // "going X" refers to objects only; background is never a referent.
            Predicate::MotionOnly { motion } => c.appearance.is_some() && c.motion == Some(motion),
        }
    }

    fn words(&self) -> Vec<&'static str> {
        match *self {
            Predicate::Full { color, shape, motion } => {
                vec!["the", COLORS[color], SHAPES[shape], "moving", MOTION_WORDS[motion]]
            }
            Predicate::Appearance { color, shape } => vec!["the", COLORS[color], SHAPES[shape]],
            Predicate::MotionOnly { motion } => vec!["going", MOTION_WORDS[motion]],
        }
    }
}

/// Draws distinct elements by a partial Fisher-Yates shuffle.
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn try_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Option<Vec<Candidate>>> {
    let t = cfg.n_frames;
    let combos = sample_distinct(rng, COLORS.len() * SHAPES.len(), cfg.objects_per_scene);
    let mut cands: Vec<Candidate> = Vec::new();
    for (i, combo) in combos.iter().enumerate() {
        let (color, shape) = (combo / SHAPES.len(), combo % SHAPES.len());
        let motion = rng.gen_range(0..MOTIONS.len());
        let brush = brush_for(shape, rng.gen_range(3.5..6.5));
        let Some(centers) = trajectory(rng, motion, brush.extent(), cfg.image_size, t) else {
            return Ok(None);
        };
        let frames = render(brush, &centers, cfg.image_size)?;
        cands.push(Candidate {
            id: format!("o{i}.{}.{}.{}", COLORS[color], SHAPES[shape], MOTIONS[motion]),
            appearance: Some((color, shape)),
            motion: Some(motion),
            brush,
            centers,
            frames,
        });
    }
    // Distinct objects must stay separable or pseudo-labels become ambiguous.
    for i in 0..cands.len() {
        for j in i + 1..cands.len() {
            let a = MaskTrack::new("a".into(), cands[i].frames.clone())?;
            let b = MaskTrack::new("b".into(), cands[j].frames.clone())?;
            if track_miou(&a, &b)? > 0.3 {
                return Ok(None);
            }
        }
    }
    // Shadows: second proposals for the same object, offset by 1..2 px.
    let n_obj = cands.len();
    for i in 0..n_obj {
        if rng.gen::<f64>() >= cfg.shadow_fraction {
            continue;
        }
        let (dx, dy) = loop {
            let d = (rng.gen_range(-2i32..=2), rng.gen_range(-2i32..=2));
            if d != (0, 0) {
                break d;
            }
        };
        let src = &cands[i];
        let centers: Vec<(f64, f64)> = src
            .centers
            .iter()
            .map(|&(x, y)| (x + dx as f64, y + dy as f64))
            .collect();
        let frames = render(src.brush, &centers, cfg.image_size)?;
        cands.push(Candidate {
            id: format!("{}.b", src.id),
            appearance: src.appearance,
            motion: src.motion,
            brush: src.brush,
            centers,
            frames,
        });
    }
    for j in 0..cfg.distractors {
        let brush = Brush::Box {
            hx: rng.gen_range(6.0..11.0),
            hy: rng.gen_range(6.0..11.0),
        };
        let Some(centers) = trajectory(rng, 5, brush.extent(), cfg.image_size, t) else {
            return Ok(None);
        };
        let frames = render(brush, &centers, cfg.image_size)?;
        cands.push(Candidate {
            id: format!("bg{j}"),
            appearance: None,
            motion: None,
            brush,
            centers,
            frames,
        });
    }
    // Candidate producers emit largest-first on the prompt frame.
    cands.sort_by(|a, b| b.frames[0].ones().cmp(&a.frames[0].ones()));
    Ok(Some(cands))
}

/// Picks predicates cycling full / motion-only / appearance templates so
/// every template kind stays represented, falling back when a kind has no
/// unused predicate (motion-only needs a motion held by exactly one object).
fn pick_predicates(cfg: &SynthConfig, rng: &mut ChaCha8Rng, cands: &[Candidate]) -> Vec<Predicate> {
    let objects: Vec<&Candidate> = cands
        .iter()
        .filter(|c| c.appearance.is_some() && !c.id.ends_with(".b"))
        .collect();
    let mut full: Vec<Predicate> = Vec::new();
    let mut appearance: Vec<Predicate> = Vec::new();
    let mut motion_only: Vec<Predicate> = Vec::new();
    for o in &objects {
        let (color, shape) = o.appearance.unwrap();
        let motion = o.motion.unwrap();
        full.push(Predicate::Full { color, shape, motion });
        appearance.push(Predicate::Appearance { color, shape });
    }
    for m in 0..MOTIONS.len() {
        if objects.iter().filter(|o| o.motion == Some(m)).count() == 1 {
            motion_only.push(Predicate::MotionOnly { motion: m });
        }
    }
    let mut picked = Vec::with_capacity(cfg.expressions_per_scene);
    for k in 0..cfg.expressions_per_scene {
        let mut pools: [&mut Vec<Predicate>; 3] = [&mut full, &mut motion_only, &mut appearance];
        pools.rotate_left(k % 3);
        for pool in pools {
            if !pool.is_empty() {
                picked.push(pool.swap_remove(rng.gen_range(0..pool.len())));
                break;
            }
        }
    }
    picked
}

fn scene_to_video(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    token_proj: &[f64],
    text_proj: &[f64],
    video_id: &str,
    cands: Vec<Candidate>,
) -> Result<Option<VideoData>> {
    let t = cfg.n_frames;
    let size = cfg.image_size as f64;
    let predicates = pick_predicates(cfg, rng, &cands);
    if predicates.len() < cfg.expressions_per_scene {
        return Ok(None);
    }

    let tracks: Vec<MaskTrack> = cands
        .iter()
        .map(|c| MaskTrack::new(c.id.clone(), c.frames.clone()))
        .collect::<Result<_>>()?;
    let mut expressions = Vec::with_capacity(predicates.len());
    for (k, p) in predicates.iter().enumerate() {
        let satisfied: Vec<bool> = cands.iter().map(|c| p.satisfied_by(c)).collect();
        let chosen: Vec<&MaskTrack> = tracks
            .iter()
            .zip(&satisfied)
            .filter_map(|(tr, &s)| s.then_some(tr))
            .collect();
        let expression_id = format!("{video_id}.e{k}");
        let gt = merge_tracks(&chosen, t, cfg.image_size, cfg.image_size, format!("{expression_id}.gt"))?;
        // Generator guarantee: candidates split cleanly around mIoU 0.5.
        for (tr, &s) in tracks.iter().zip(&satisfied) {
            let m = track_miou(tr, &gt)?;
            if s != (m > 0.5) {
                return Ok(None);
            }
        }
        let words = p.words();
        let mut values = Vec::with_capacity(words.len() * cfg.text_dim);
        let vocab = vocabulary();
        for w in &words {
            let row = vocab.iter().position(|v| v == w).expect("template word in vocabulary");
            let base = row * cfg.text_dim;
            values.extend(text_proj[base..base + cfg.text_dim].iter().map(|&x| x as f32));
        }
        let embedding = TextEmbedding::new(
            expression_id.clone(),
            words.join(" "),
            words.len(),
            cfg.text_dim,
            values,
        )?;
        expressions.push(ExpressionRecord {
            expression_id,
            video_id: video_id.to_string(),
            embedding,
            gt_track: gt,
        });
    }

    // Tokens: frozen projection of per-frame attribute features plus noise.
    let mut values = Vec::with_capacity(cands.len() * t * cfg.dim);
    for c in &cands {
        for frame in 0..t {
            let mut feat = [0.0f64; FEAT];
            if let Some((color, shape)) = c.appearance {
                feat[color] = 1.0;
                feat[COLORS.len() + shape] = 1.0;
            }
            let (x, y) = c.centers[frame];
            let (vx, vy) = c.velocity(frame);
            // Centered so distant tracks point away from each other in the
            // position subspace instead of sharing a positive-quadrant floor.
            feat[FEAT - 4] = POS_SCALE * (x / size - 0.5);
            feat[FEAT - 3] = POS_SCALE * (y / size - 0.5);
            feat[FEAT - 2] = VEL_SCALE * vx;
            feat[FEAT - 1] = VEL_SCALE * vy;
            for d in 0..cfg.dim {
                let row = &token_proj[d * FEAT..(d + 1) * FEAT];
                let signal: f64 = row.iter().zip(feat).map(|(p, f)| p * f).sum();
                let noise: f64 = rng.sample(StandardNormal);
                values.push((signal + cfg.noise_sigma * noise) as f32);
            }
        }
    }
    let ids: Vec<String> = cands.iter().map(|c| c.id.clone()).collect();
    Ok(Some(VideoData {
        video_id: video_id.to_string(),
        tracks: TrackSet::new(video_id.to_string(), tracks)?,
        tokens: TokenSet::new(ids, t, cfg.dim, values)?,
        expressions,
    }))
}

/// Generates a corpus as a pure function of (cfg, seed).
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let token_proj = frozen_projection(cfg.dim, FEAT, TOKEN_PROJECTION_SEED);
    let text_proj = frozen_projection(vocabulary().len(), cfg.text_dim, TEXT_PROJECTION_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(cfg.scenes);
    for scene in 0..cfg.scenes {
        let video_id = format!("v{scene:03}");
        let mut made = None;
        for _ in 0..cfg.max_retries {
            let Some(cands) = try_scene(cfg, &mut rng)? else {
                continue;
            };
            if let Some(v) = scene_to_video(cfg, &mut rng, &token_proj, &text_proj, &video_id, cands)? {
                made = Some(v);
                break;
            }
        }
        let Some(v) = made else {
            return Err(Error::config(format!(
                "scene {scene}: no valid scene within {} attempts; relax scene geometry",
                cfg.max_retries
            )));
        };
        videos.push(v);
    }
    Ok(Corpus::new(videos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_corpus;

    fn test_cfg() -> SynthConfig {
        SynthConfig {
            scenes: 4,
            objects_per_scene: 5,
            shadow_fraction: 0.7,
            ..SynthConfig::tiny()
        }
    }

    #[test]
    fn same_seed_reproduces_the_corpus() {
        let cfg = test_cfg();
        let a = generate_synthetic(&cfg, 11).unwrap();
        let b = generate_synthetic(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_passes_validation() {
        let corpus = generate_synthetic(&test_cfg(), 3).unwrap();
        assert_eq!(validate_corpus(&corpus), Vec::<String>::new());
    }

    #[test]
    fn scene_shape_matches_config() {
        let cfg = test_cfg();
        let corpus = generate_synthetic(&cfg, 5).unwrap();
        assert_eq!(corpus.videos.len(), cfg.scenes);
        for v in &corpus.videos {
            let objects = v
                .tracks
                .tracks()
                .iter()
                .filter(|t| t.track_id().starts_with('o') && !t.track_id().ends_with(".b"))
                .count();
            let bg = v.tracks.tracks().iter().filter(|t| t.track_id().starts_with("bg")).count();
            assert_eq!(objects, cfg.objects_per_scene);
            assert_eq!(bg, cfg.distractors);
            assert_eq!(v.expressions.len(), cfg.expressions_per_scene);
            assert_eq!(v.tracks.n_frames(), cfg.n_frames);
            assert_eq!(v.tracks.height(), cfg.image_size);
        }
    }

    /// Re-derives predicate satisfaction from raw text and the attribute
    /// spelling inside track ids, then rebuilds ground truth densely.
    fn oracle_satisfies(raw_text: &str, track_id: &str) -> bool {
        if !track_id.starts_with('o') {
            return false;
        }
        let attrs: Vec<&str> = track_id.trim_end_matches(".b").split('.').collect();
        let (color, shape, motion) = (attrs[1], attrs[2], attrs[3]);
        let words: Vec<&str> = raw_text.split(' ').collect();
        let motion_name = |word: &str| {
            MOTIONS[MOTION_WORDS.iter().position(|w| *w == word).unwrap()]
        };
        match words.as_slice() {
            ["the", c, s, "moving", m] => color == *c && shape == *s && motion == motion_name(m),
            ["the", c, s] => color == *c && shape == *s,
            ["going", m] => motion == motion_name(m),
            _ => panic!("unexpected template {raw_text:?}"),
        }
    }

    #[test]
    fn gt_is_the_union_of_predicate_satisfying_tracks() {
        let corpus = generate_synthetic(&test_cfg(), 17).unwrap();
        let mut multi_track_gt = 0;
        for v in &corpus.videos {
            for e in &v.expressions {
                let satisfying: Vec<&MaskTrack> = v
                    .tracks
                    .tracks()
                    .iter()
                    .filter(|t| oracle_satisfies(&e.embedding.raw_text, t.track_id()))
                    .collect();
                assert!(!satisfying.is_empty(), "{}", e.expression_id);
                if satisfying.len() > 1 {
                    multi_track_gt += 1;
                }
                for f in 0..v.tracks.n_frames() {
                    let mut union = vec![false; (v.tracks.height() * v.tracks.width()) as usize];
                    for t in &satisfying {
                        for (u, px) in union.iter_mut().zip(t.frames()[f].to_dense()) {
                            *u |= px;
                        }
                    }
                    let oracle =
                        RleMask::from_dense(v.tracks.height(), v.tracks.width(), &union).unwrap();
                    assert_eq!(oracle, e.gt_track.frames()[f], "{} frame {f}", e.expression_id);
                }
            }
        }
        // Shadow tracks must make some ground truths genuinely multi-track.
        assert!(multi_track_gt > 0);
    }

    #[test]
    fn candidates_split_cleanly_around_half_miou() {
        let corpus = generate_synthetic(&test_cfg(), 29).unwrap();
        for v in &corpus.videos {
            for e in &v.expressions {
                for t in v.tracks.tracks() {
                    let m = track_miou(t, &e.gt_track).unwrap();
                    if oracle_satisfies(&e.embedding.raw_text, t.track_id()) {
                        assert!(m > 0.5, "{} vs {}: {m}", t.track_id(), e.expression_id);
                    } else {
                        assert!(m < 0.5, "{} vs {}: {m}", t.track_id(), e.expression_id);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_text_embeds_identically_across_seeds() {
        let cfg = test_cfg();
        let a = generate_synthetic(&cfg, 1).unwrap();
        let b = generate_synthetic(&cfg, 2).unwrap();
        let mut compared = 0;
        for (_, ea) in a.expressions() {
            for (_, eb) in b.expressions() {
                if ea.embedding.raw_text == eb.embedding.raw_text {
                    assert_eq!(ea.embedding.values(), eb.embedding.values());
                    compared += 1;
                }
            }
        }
        assert!(compared > 0, "no shared expression text between seeds");
    }

    #[test]
    fn out_of_range_config_is_rejected() {
        for (field, cfg) in [
            ("scenes", SynthConfig { scenes: 0, ..SynthConfig::tiny() }),
            ("objects", SynthConfig { objects_per_scene: 3, ..SynthConfig::tiny() }),
            ("objects", SynthConfig { objects_per_scene: 13, ..SynthConfig::tiny() }),
            ("frames", SynthConfig { n_frames: 33, ..SynthConfig::tiny() }),
            ("size", SynthConfig { image_size: 65, ..SynthConfig::tiny() }),
            ("sigma", SynthConfig { noise_sigma: -0.1, ..SynthConfig::tiny() }),
        ] {
            let err = generate_synthetic(&cfg, 1).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{field}");
        }
    }
}
