//! Corpus-level evaluation (J, F, J&F on the 0-100 scale), ablation sweeps,
//! and the track-overlap versus token-similarity diagnostic.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::data::{strip_background, Corpus, ExpressionRecord, TokenSet};
use crate::error::{Error, Result};
use crate::mask::{jf_score, track_miou, EmptyFrameMode, TrackSet, BOUNDARY_TOL_FRACTION};
use crate::selector::{forward, select, SelectorConfig};
use crate::supervision::LossWeights;
use crate::tensor::Scalar;
use crate::trainer::{train, Checkpoint, TrainConfig};

/// Evaluation settings; `oracle_tau` defines the reference selection set for
/// exact-set accuracy.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub empty_frames: EmptyFrameMode,
    pub oracle_tau: f64,
    /// Worker threads for the per-expression loop; `None` uses the global
    /// pool. Results are order-stable either way.
    pub jobs: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            empty_frames: EmptyFrameMode::default(),
            oracle_tau: 0.5,
            jobs: None,
        }
    }
}

/// One expression's outcome; metric values are on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExprEval {
    pub video_id: String,
    pub expression_id: String,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub selected_track_ids: Vec<String>,
    /// Whether the selected set equals the mIoU oracle set.
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_expression: Vec<ExprEval>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    /// Fraction of expressions whose selection equals the oracle set.
    pub exact_set_accuracy: f64,
    /// Alignment-score counts over ten equal bins of [0, 1].
    pub score_histogram: [u64; 10],
    pub positive_labels: u64,
    pub total_labels: u64,
}

/// Candidate data per video with background proposals stripped when the
/// selector is configured to ignore them.
fn prepare_videos(corpus: &Corpus, cfg: &SelectorConfig) -> Result<Vec<(TokenSet, TrackSet)>> {
    corpus
        .videos
        .iter()
        .map(|v| {
            if cfg.include_background_tokens {
                Ok((v.tokens.clone(), v.tracks.clone()))
            } else {
                strip_background(&v.tokens, &v.tracks)
            }
        })
        .collect()
}

struct ExprOutcome {
    row: ExprEval,
    scores: Vec<f64>,
    positives: u64,
    labels: u64,
}

fn finish_report(rows: Vec<ExprOutcome>) -> EvalReport {
    let n = rows.len() as f64;
    let mut report = EvalReport {
        per_expression: Vec::with_capacity(rows.len()),
        mean_j: 0.0,
        mean_f: 0.0,
        mean_jf: 0.0,
        exact_set_accuracy: 0.0,
        score_histogram: [0; 10],
        positive_labels: 0,
        total_labels: 0,
    };
    let mut matches = 0u64;
    for r in rows {
        report.mean_j += r.row.j;
        report.mean_f += r.row.f;
        report.mean_jf += r.row.jf;
        matches += r.row.exact_match as u64;
        for &s in &r.scores {
            let bin = ((s * 10.0).floor() as usize).min(9);
            report.score_histogram[bin] += 1;
        }
        report.positive_labels += r.positives;
        report.total_labels += r.labels;
        report.per_expression.push(r.row);
    }
    report.mean_j /= n;
    report.mean_f /= n;
    report.mean_jf /= n;
    report.exact_set_accuracy = matches as f64 / n;
    report
}

/// Evaluates any per-expression scoring function through the selection and
/// metric pipeline. The scorer sees the (possibly background-stripped)
/// candidate tokens and tracks and returns one alignment score per track.
pub fn evaluate_with<S>(
    corpus: &Corpus,
    sel_cfg: &SelectorConfig,
    opts: &EvalOptions,
    scorer: S,
) -> Result<EvalReport>
where
    S: Fn(&TokenSet, &TrackSet, &ExpressionRecord) -> Result<Vec<f64>> + Sync,
{
    let videos = prepare_videos(corpus, sel_cfg)?;
    let pairs: Vec<(usize, usize)> = corpus
        .videos
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| (0..v.expressions.len()).map(move |ei| (vi, ei)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::config("corpus has no expressions to evaluate"));
    }
    let eval_one = |&(vi, ei): &(usize, usize)| -> Result<ExprOutcome> {
        let video = &corpus.videos[vi];
        let (tokens, tracks) = &videos[vi];
        let expr = &video.expressions[ei];
        let scores = scorer(tokens, tracks, expr)?;
        let sel = select(&scores, tracks, sel_cfg)?;
        let metrics = jf_score(
            &sel.merged_track,
            &expr.gt_track,
            BOUNDARY_TOL_FRACTION,
            opts.empty_frames,
        )?;
        let mut oracle = Vec::new();
        let mut positives = 0u64;
        for (i, t) in tracks.tracks().iter().enumerate() {
            if track_miou(t, &expr.gt_track)? > opts.oracle_tau {
                oracle.push(i);
                positives += 1;
            }
        }
        Ok(ExprOutcome {
            row: ExprEval {
                video_id: video.video_id.clone(),
                expression_id: expr.expression_id.clone(),
                j: 100.0 * metrics.j,
                f: 100.0 * metrics.f,
                jf: 100.0 * metrics.jf,
                selected_track_ids: sel.selected_track_ids.clone(),
                exact_match: sel.selected_indices == oracle,
            },
            scores,
            positives,
            labels: tracks.len() as u64,
        })
    };
    let rows: Result<Vec<ExprOutcome>> = match opts.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("worker pool: {e}")))?;
            pool.install(|| pairs.par_iter().map(eval_one).collect())
        }
        None => pairs.par_iter().map(eval_one).collect(),
    };
    Ok(finish_report(rows?))
}

/// Evaluates a trained checkpoint over a corpus.
pub fn evaluate<F: Scalar>(
    ckpt: &Checkpoint<F>,
    corpus: &Corpus,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    evaluate_with(corpus, &ckpt.selector_cfg, opts, |tokens, _, expr| {
        Ok(forward(tokens, &expr.embedding, &ckpt.params, &ckpt.selector_cfg)?.scores)
    })
}

pub fn render_report(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("expression                          J       F     J&F  exact\n");
    for e in &r.per_expression {
        out.push_str(&format!(
            "{:<32} {:>6.2} {:>6.2} {:>6.2}  {}\n",
            e.expression_id,
            e.j,
            e.f,
            e.jf,
            if e.exact_match { "yes" } else { "no" }
        ));
    }
    out.push_str(&format!(
        "mean over {} expressions         {:>6.2} {:>6.2} {:>6.2}\n",
        r.per_expression.len(),
        r.mean_j,
        r.mean_f,
        r.mean_jf
    ));
    out.push_str(&format!(
        "exact-set accuracy {:.3}; positive labels {}/{}\n",
        r.exact_set_accuracy, r.positive_labels, r.total_labels
    ));
    out.push_str(&format!("score histogram (0to1, 10 bins): {:?}\n", r.score_histogram));
    out
}

/// Line-delimited records: one per expression plus a summary line.
pub fn report_records(r: &EvalReport) -> String {
    let mut out = String::new();
    for e in &r.per_expression {
        out.push_str(&json!({"record": "expression", "eval": e}).to_string());
        out.push('\n');
    }
    out.push_str(
        &json!({
            "record": "summary",
            "mean_j": r.mean_j, "mean_f": r.mean_f, "mean_jf": r.mean_jf,
            "exact_set_accuracy": r.exact_set_accuracy,
            "score_histogram": r.score_histogram,
            "positive_labels": r.positive_labels, "total_labels": r.total_labels,
        })
        .to_string(),
    );
    out.push('\n');
    out
}

// ----- ablation sweep -----

/// Single-knob departures from a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationToggle {
    NoAlignLoss,
    NoInterObject,
    NoMotionAttention,
    NoBackgroundTokens,
    Layers(usize),
}

impl AblationToggle {
    pub fn name(&self) -> String {
        match self {
            AblationToggle::NoAlignLoss => "no alignment loss".into(),
            AblationToggle::NoInterObject => "no inter-object attention".into(),
            AblationToggle::NoMotionAttention => "no motion attention".into(),
            AblationToggle::NoBackgroundTokens => "no background tokens".into(),
            AblationToggle::Layers(l) => format!("{l} layers"),
        }
    }

    pub fn apply(&self, sel: &SelectorConfig, train: &TrainConfig) -> (SelectorConfig, TrainConfig) {
        let mut sel = sel.clone();
        let mut train = train.clone();
        match self {
            AblationToggle::NoAlignLoss => {
                train.weights = LossWeights {
                    lambda2: 0.0,
                    ..train.weights
                };
            }
            AblationToggle::NoInterObject => sel.use_inter_object = false,
            AblationToggle::NoMotionAttention => sel.use_motion_attn = false,
            AblationToggle::NoBackgroundTokens => sel.include_background_tokens = false,
            AblationToggle::Layers(l) => sel.layers = *l,
        }
        (sel, train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub exact_set_accuracy: f64,
}

/// Published comparison points for context when reading a sweep.
pub const PAPER_ABLATION_REFERENCE: &[(&str, f64)] =
    &[("with alignment loss", 48.6), ("without alignment loss", 44.5)];

/// Trains the base configuration plus each toggle on a shared seed and
/// evaluates all of them. The base row comes first.
pub fn ablation_sweep<F: Scalar>(
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    base_sel: &SelectorConfig,
    base_train: &TrainConfig,
    toggles: &[AblationToggle],
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    let mut configs = vec![("full".to_string(), base_sel.clone(), base_train.clone())];
    for t in toggles {
        let (sel, tr) = t.apply(base_sel, base_train);
        configs.push((t.name(), sel, tr));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (name, sel, tr) in configs {
        let ckpt: Checkpoint<F> = train(train_corpus, &sel, &tr, None)?;
        let report = evaluate(&ckpt, eval_corpus, opts)?;
        rows.push(AblationRow {
            name,
            mean_j: report.mean_j,
            mean_f: report.mean_f,
            mean_jf: report.mean_jf,
            exact_set_accuracy: report.exact_set_accuracy,
        });
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str("configuration                         J       F     J&F  exact-set\n");
    for r in rows {
        out.push_str(&format!(
            "{:<34} {:>6.2} {:>6.2} {:>6.2}  {:>6.3}\n",
            r.name, r.mean_j, r.mean_f, r.mean_jf, r.exact_set_accuracy
        ));
    }
    out.push_str("published reference (real-data benchmark, J&F):\n");
    for (name, jf) in PAPER_ABLATION_REFERENCE {
        out.push_str(&format!("  {name:<32} {jf:>6.1}\n"));
    }
    out
}

// ----- token similarity diagnostics -----

/// How to reduce a track's per-frame tokens to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenPooling {
    #[default]
    TemporalMean,
    LastFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityAnalysis {
    /// (track mIoU, token cosine similarity) per unordered track pair.
    pub pairs: Vec<(f64, f64)>,
    pub bins: Vec<SimilarityBin>,
    pub spearman: f64,
}

fn pooled_token(tokens: &TokenSet, track: usize, pooling: TokenPooling) -> Vec<f64> {
    match pooling {
        TokenPooling::TemporalMean => tokens.mean_pooled(track),
        TokenPooling::LastFrame => tokens
            .token(track, tokens.n_frames() - 1)
            .iter()
            .map(|&v| v as f64)
            .collect(),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    dot / (na * nb)
}

/// Ranks with ties averaged, 1-based.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Spearman rank correlation: Pearson over tie-averaged ranks. Constant
/// inputs yield 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// For every unordered track pair, relates mask-track overlap to the cosine
/// similarity of pooled object tokens: ten mIoU bins with mean and variance,
/// plus the Spearman rank correlation over all pairs.
pub fn token_similarity_analysis(
    tokens: &TokenSet,
    tracks: &TrackSet,
    pooling: TokenPooling,
) -> Result<SimilarityAnalysis> {
    let n = tokens.n_tracks();
    if n != tracks.len() {
        return Err(Error::shape(format!(
            "{n} token tracks for {} mask tracks",
            tracks.len()
        )));
    }
    if n < 2 {
        return Err(Error::config(
            "token similarity analysis needs at least two tracks",
        ));
    }
    let pooled: Vec<Vec<f64>> = (0..n).map(|i| pooled_token(tokens, i, pooling)).collect();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let x = track_miou(&tracks.tracks()[i], &tracks.tracks()[j])?;
            let y = cosine(&pooled[i], &pooled[j]);
            pairs.push((x, y));
        }
    }
    Ok(analysis_from_pairs(pairs))
}

/// Same analysis pooled over every video of a corpus: pairs stay within a
/// video (cross-video tracks never share frames), bins and the rank
/// correlation run over the concatenation.
pub fn corpus_similarity_analysis(
    corpus: &Corpus,
    pooling: TokenPooling,
) -> Result<SimilarityAnalysis> {
    let mut pairs = Vec::new();
    for v in &corpus.videos {
        let per = token_similarity_analysis(&v.tokens, &v.tracks, pooling)?;
        pairs.extend(per.pairs);
    }
    if pairs.is_empty() {
        return Err(Error::config("corpus has no track pairs to analyze"));
    }
    Ok(analysis_from_pairs(pairs))
}

fn analysis_from_pairs(pairs: Vec<(f64, f64)>) -> SimilarityAnalysis {
    let mut bins = Vec::with_capacity(10);
    for b in 0..10 {
        let (lo, hi) = (b as f64 / 10.0, (b + 1) as f64 / 10.0);
        let ys: Vec<f64> = pairs
            .iter()
            .filter(|(x, _)| ((x * 10.0).floor() as usize).min(9) == b)
            .map(|&(_, y)| y)
            .collect();
        let count = ys.len();
        let (mean, variance) = if count == 0 {
            (0.0, 0.0)
        } else {
            let m = ys.iter().sum::<f64>() / count as f64;
            let v = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / count as f64;
            (m, v)
        };
        bins.push(SimilarityBin { lo, hi, count, mean, variance });
    }
    let xs: Vec<f64> = pairs.iter().map(|&(x, _)| x).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, y)| y).collect();
    let rho = spearman(&xs, &ys);
    SimilarityAnalysis { pairs, bins, spearman: rho }
}

pub fn render_similarity(a: &SimilarityAnalysis) -> String {
    let mut out = String::new();
    out.push_str("mIoU bin     pairs   mean cos   variance\n");
    for b in &a.bins {
        if b.count == 0 {
            out.push_str(&format!("[{:.1},{:.1})  {:>6}          -          -\n", b.lo, b.hi, 0));
        } else {
            out.push_str(&format!(
                "[{:.1},{:.1})  {:>6}   {:>8.4}   {:>8.5}\n",
                b.lo, b.hi, b.count, b.mean, b.variance
            ));
        }
    }
    out.push_str(&format!(
        "{} pairs, Spearman rank correlation {:.4}\n",
        a.pairs.len(),
        a.spearman
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ExpressionRecord, SynthConfig, TextEmbedding, VideoData};
    use crate::mask::test_support::{dense_iou, rect_mask};
    use crate::mask::{boundary_f, MaskTrack};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_corpus(seed: u64) -> Corpus {
        generate_synthetic(&SynthConfig { scenes: 2, ..SynthConfig::tiny() }, seed).unwrap()
    }

    fn tiny_selector() -> SelectorConfig {
        SelectorConfig {
            dim: 32,
            text_dim: 48,
            layers: 1,
            heads: 4,
            ..SelectorConfig::default()
        }
    }

    fn miou_scorer(
        tracks: &TrackSet,
        expr: &ExpressionRecord,
    ) -> Result<Vec<f64>> {
        tracks
            .tracks()
            .iter()
            .map(|t| track_miou(t, &expr.gt_track))
            .collect()
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        // Candidate overlap with ground truth splits cleanly around 0.5, so
        // selecting on true mIoU recovers the exact satisfier set and its
        // merge is the ground truth itself.
        let corpus = tiny_corpus(41);
        let report = evaluate_with(&corpus, &tiny_selector(), &EvalOptions::default(), |_, tracks, expr| {
            miou_scorer(tracks, expr)
        })
        .unwrap();
        assert_eq!(report.mean_jf, 100.0);
        assert_eq!(report.mean_j, 100.0);
        assert_eq!(report.mean_f, 100.0);
        assert_eq!(report.exact_set_accuracy, 1.0);
        assert!(report.per_expression.iter().all(|e| e.exact_match));
    }

    #[test]
    fn empty_scorer_scores_zero() {
        let corpus = tiny_corpus(43);
        let cfg = SelectorConfig {
            fallback_argmax: false,
            ..tiny_selector()
        };
        let report = evaluate_with(&corpus, &cfg, &EvalOptions::default(), |_, tracks, _| {
            Ok(vec![0.0; tracks.len()])
        })
        .unwrap();
        assert_eq!(report.mean_jf, 0.0);
        assert!(report.per_expression.iter().all(|e| e.selected_track_ids.is_empty()));
    }

    /// Two-expression video with hand-placed rectangles; selecting a fixed
    /// track must reproduce dense pixel metrics.
    #[test]
    fn known_overlaps_match_pixel_oracle() {
        let h = 16;
        let w = 16;
        let frames = 3;
        let big = MaskTrack::new(
            "big".into(),
            (0..frames).map(|_| rect_mask(h, w, 2, 10, 2, 10)).collect(),
        )
        .unwrap();
        let small = MaskTrack::new(
            "small".into(),
            (0..frames).map(|_| rect_mask(h, w, 2, 6, 2, 6)).collect(),
        )
        .unwrap();
        let tracks = TrackSet::new("v".into(), vec![big.clone(), small.clone()]).unwrap();
        let dim = 8;
        let tokens = TokenSet::new(
            vec!["big".into(), "small".into()],
            frames,
            dim,
            vec![0.5; 2 * frames * dim],
        )
        .unwrap();
        let expr = |k: usize, gt: &MaskTrack| ExpressionRecord {
            expression_id: format!("v.e{k}"),
            video_id: "v".into(),
            embedding: TextEmbedding::new(format!("v.e{k}"), "fixed".into(), 2, 4, vec![0.1; 8])
                .unwrap(),
            gt_track: gt.clone(),
        };
        let video = VideoData {
            video_id: "v".into(),
            tracks,
            tokens,
            expressions: vec![expr(0, &big), expr(1, &small)],
        };
        let corpus = Corpus::new(vec![video]);

        // Always select the big track: perfect on e0, partial on e1.
        let cfg = SelectorConfig { dim, text_dim: 4, ..tiny_selector() };
        let report = evaluate_with(&corpus, &cfg, &EvalOptions::default(), |_, _, _| {
            Ok(vec![0.9, 0.1])
        })
        .unwrap();
        assert_eq!(report.per_expression[0].jf, 100.0);

        let iou = dense_iou(&big.frames()[0], &small.frames()[0]);
        let want_j = 100.0 * iou;
        assert!((report.per_expression[1].j - want_j).abs() < 1e-9);
        let want_f = 100.0 * boundary_f(&big, &small, BOUNDARY_TOL_FRACTION).unwrap();
        assert!((report.per_expression[1].f - want_f).abs() < 1e-9);
        let e = &report.per_expression[1];
        assert_eq!(e.jf, (e.j + e.f) / 2.0);

        // Corpus means are plain arithmetic means of the rows.
        let mean_j: f64 = report.per_expression.iter().map(|e| e.j).sum::<f64>()
            / report.per_expression.len() as f64;
        assert_eq!(report.mean_j, mean_j);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let corpus = tiny_corpus(47);
        let run = |jobs| {
            evaluate_with(
                &corpus,
                &tiny_selector(),
                &EvalOptions { jobs, ..EvalOptions::default() },
                |_, tracks, expr| miou_scorer(tracks, expr),
            )
            .unwrap()
        };
        let serial = run(Some(1));
        let parallel = run(Some(3));
        assert!((serial.mean_jf - parallel.mean_jf).abs() < 1e-9);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn trained_checkpoint_evaluates_end_to_end() {
        let corpus = tiny_corpus(51);
        let tr = TrainConfig {
            epochs: 1,
            lr_init: 1e-3,
            n_neg: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let ckpt = train::<f32>(&corpus, &tiny_selector(), &tr, None).unwrap();
        let report = evaluate(&ckpt, &corpus, &EvalOptions::default()).unwrap();
        assert_eq!(report.per_expression.len(), corpus.n_expressions());
        assert!(report.mean_jf.is_finite());
        let total: u64 = report.score_histogram.iter().sum();
        assert_eq!(total as usize, report.per_expression.len() * corpus.videos[0].tracks.len());
        let text = render_report(&report);
        assert!(text.contains("mean over"));
        let records = report_records(&report);
        assert_eq!(records.lines().count(), report.per_expression.len() + 1);
    }

    #[test]
    fn ablation_sweep_shapes_and_reference() {
        let corpus = tiny_corpus(53);
        let tr = TrainConfig {
            epochs: 1,
            lr_init: 1e-3,
            n_neg: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let rows = ablation_sweep::<f32>(
            &corpus,
            &corpus,
            &tiny_selector(),
            &tr,
            &[AblationToggle::NoAlignLoss],
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].name, "full");
        assert_eq!(rows[1].name, "no alignment loss");
        let table = render_ablation(&rows);
        assert!(table.contains("48.6") && table.contains("44.5"));
    }

    #[test]
    fn duplicated_track_lands_in_the_top_bin() {
        let corpus = tiny_corpus(57);
        let v = &corpus.videos[0];
        // Duplicate the first track and its tokens.
        let mut tracks = v.tracks.tracks().to_vec();
        let mut t0 = tracks[0].clone();
        t0 = MaskTrack::new("dup".into(), t0.frames().to_vec()).unwrap();
        tracks.push(t0);
        let mut ids = v.tokens.track_ids().to_vec();
        ids.push("dup".into());
        let mut values = v.tokens.values().to_vec();
        values.extend_from_slice(v.tokens.track_tokens(0));
        let tokens = TokenSet::new(ids, v.tokens.n_frames(), v.tokens.dim(), values).unwrap();
        let tracks = TrackSet::new(v.video_id.clone(), tracks).unwrap();

        let analysis =
            token_similarity_analysis(&tokens, &tracks, TokenPooling::TemporalMean).unwrap();
        let top = analysis.bins.last().unwrap();
        assert!(top.count >= 1);
        assert!(
            analysis.pairs.iter().any(|&(x, y)| x == 1.0 && (y - 1.0).abs() < 1e-12),
            "identical pair not found"
        );

        // Last-frame pooling is also available.
        token_similarity_analysis(&tokens, &tracks, TokenPooling::LastFrame).unwrap();
        assert!(render_similarity(&analysis).contains("Spearman"));
    }

    #[test]
    fn single_track_is_rejected() {
        let corpus = tiny_corpus(59);
        let v = &corpus.videos[0];
        let one_track = TrackSet::new(v.video_id.clone(), vec![v.tracks.tracks()[0].clone()]).unwrap();
        let one_tokens = TokenSet::new(
            vec![v.tokens.track_ids()[0].clone()],
            v.tokens.n_frames(),
            v.tokens.dim(),
            v.tokens.track_tokens(0).to_vec(),
        )
        .unwrap();
        let err =
            token_similarity_analysis(&one_tokens, &one_track, TokenPooling::TemporalMean)
                .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn spearman_matches_rank_then_pearson_oracle() {
        fn naive_ranks(v: &[f64]) -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let less = v.iter().filter(|&&o| o < x).count() as f64;
                    let eq = v.iter().filter(|&&o| o == x).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        }
        fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (a, b) in x.iter().zip(y) {
                num += (a - mx) * (b - my);
                dx += (a - mx) * (a - mx);
                dy += (b - my) * (b - my);
            }
            if dx == 0.0 || dy == 0.0 {
                return 0.0;
            }
            num / (dx.sqrt() * dy.sqrt())
        }

        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for case in 0..50 {
            let n = rng.gen_range(3..=100);
            // Quantized values so ties actually occur.
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let got = spearman(&xs, &ys);
            let want = naive_pearson(&naive_ranks(&xs), &naive_ranks(&ys));
            assert_eq!(got, want, "case {case}");
        }
        // Monotone data correlates perfectly; constant data returns zero.
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn synthetic_tokens_track_overlap() {
        // The generator embeds position in the tokens, so token similarity
        // must rise with track overlap once pairs are pooled over a corpus.
        for seed in [67, 101, 202] {
            let corpus = generate_synthetic(
                &SynthConfig { scenes: 12, ..SynthConfig::tiny() },
                seed,
            )
            .unwrap();
            let a = corpus_similarity_analysis(&corpus, TokenPooling::TemporalMean).unwrap();
            assert!(a.spearman > 0.5, "seed {seed}: pooled Spearman {}", a.spearman);
        }
    }
}
