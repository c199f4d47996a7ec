//! Language-aligned track selection module.
//!
//! Forward pipeline: project the text embedding into the token space, encode
//! short-term motion with strided temporal convolutions, run L alignment
//! layers (inter-object attention across tracks at each frame, motion
//! attention along each track, cross-attention from object tokens to text,
//! then a feed-forward sublayer; each sublayer pre-norm with residual), and
//! aggregate into per-track aligned tokens plus alignment scores.
//!
//! Everything builds on the autodiff graph so the same code path serves
//! inference and training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TextEmbedding, TokenSet};
use crate::error::{Error, Result};
use crate::mask::{merge_tracks, MaskTrack, TrackSet};
use crate::tensor::{
    multihead_attention, AttentionParams, Graph, NodeId, ParamStore, Scalar, Tensor,
};

/// Hidden width of each feed-forward sublayer, as a multiple of dim.
const FFN_MULT: usize = 2;

/// Architecture and selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub dim: usize,
    pub text_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_layers: usize,
    /// Tracks scoring above this are selected.
    pub tau_select: f64,
    /// Select the best track when nothing clears the threshold.
    pub fallback_argmax: bool,
    pub use_inter_object: bool,
    pub use_motion_attn: bool,
    /// Feed background ("bg"-prefixed) candidate tracks through the module.
    pub include_background_tokens: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            dim: 256,
            text_dim: 768,
            layers: 2,
            heads: 8,
            conv_kernel: 3,
            conv_stride: 2,
            conv_layers: 2,
            tau_select: 0.5,
            fallback_argmax: true,
            use_inter_object: true,
            use_motion_attn: true,
            include_background_tokens: true,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.layers >= 1, "layers must be >= 1"),
            (self.dim >= 1 && self.text_dim >= 1, "dim and text_dim must be >= 1"),
            (
                self.heads >= 1 && self.dim % self.heads == 0,
                "dim must be divisible by heads",
            ),
            (
                self.tau_select > 0.0 && self.tau_select < 1.0,
                "tau_select must lie strictly between 0 and 1",
            ),
            (
                self.conv_kernel >= 1 && self.conv_stride >= 1 && self.conv_layers >= 1,
                "conv kernel, stride, and layer count must be >= 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(format!("selector config: {msg}")));
            }
        }
        Ok(())
    }

    /// Output length of the motion encoder for a T-frame track.
    pub fn t_prime(&self, n_frames: usize) -> usize {
        (0..self.conv_layers).fold(n_frames, |t, _| t.div_ceil(self.conv_stride))
    }
}

fn xavier<F: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.gen_range(-a..a))).collect();
    Tensor::new(shape, data).expect("finite init")
}

fn attention_names(prefix: &str) -> [(String, bool); 8] {
    // (name, is_matrix); matrices are D x D, biases length D.
    ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        .map(|p| (format!("{prefix}.{p}"), p.starts_with('w')))
}

/// Fresh parameters: Xavier-uniform projections, zero biases, unit norm gains.
pub fn init_params<F: Scalar>(cfg: &SelectorConfig, seed: u64) -> Result<ParamStore<F>> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    store.add(
        "text_proj.w",
        xavier(&mut rng, vec![cfg.text_dim, d], cfg.text_dim, d),
    )?;
    store.add("text_norm.g", Tensor::new(vec![d], vec![F::one(); d])?)?;
    store.add("text_norm.b", Tensor::zeros(vec![d]))?;
    for c in 0..cfg.conv_layers {
        let k = cfg.conv_kernel;
        store.add(
            &format!("conv{c}.k"),
            xavier(&mut rng, vec![k, d, d], k * d, k * d),
        )?;
        store.add(&format!("conv{c}.b"), Tensor::zeros(vec![d]))?;
    }
    for l in 0..cfg.layers {
        for sub in ["inter", "motion", "cross"] {
            for (name, is_matrix) in attention_names(&format!("layer{l}.{sub}")) {
                let v = if is_matrix {
                    xavier(&mut rng, vec![d, d], d, d)
                } else {
                    Tensor::zeros(vec![d])
                };
                store.add(&name, v)?;
            }
        }
        for norm in ["norm_inter", "norm_motion", "norm_cross", "norm_ffn"] {
            store.add(&format!("layer{l}.{norm}.g"), Tensor::new(vec![d], vec![F::one(); d])?)?;
            store.add(&format!("layer{l}.{norm}.b"), Tensor::zeros(vec![d]))?;
        }
        let h = FFN_MULT * d;
        store.add(&format!("layer{l}.ffn.w1"), xavier(&mut rng, vec![d, h], d, h))?;
        store.add(&format!("layer{l}.ffn.b1"), Tensor::zeros(vec![h]))?;
        store.add(&format!("layer{l}.ffn.w2"), xavier(&mut rng, vec![h, d], h, d))?;
        store.add(&format!("layer{l}.ffn.b2"), Tensor::zeros(vec![d]))?;
    }
    Ok(store)
}

/// Linear map of raw word embeddings into the token space (no bias).
pub fn project_text<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    text: NodeId,
) -> Result<NodeId> {
    let w = g.param(store, "text_proj.w")?;
    g.matmul(text, w)
}

/// Strided temporal convolutions applied independently per track:
/// (N*T) x D object-major rows in, (N*T') x D out.
pub fn motion_encode<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    tokens: NodeId,
    n_tracks: usize,
    cfg: &SelectorConfig,
) -> Result<NodeId> {
    let rows = g.value(tokens).shape()[0];
    if n_tracks == 0 || rows % n_tracks != 0 {
        return Err(Error::shape(format!(
            "motion_encode: {rows} rows not divisible into {n_tracks} tracks"
        )));
    }
    let t = rows / n_tracks;
    let conv: Vec<(NodeId, NodeId)> = (0..cfg.conv_layers)
        .map(|c| {
            Ok((
                g.param(store, &format!("conv{c}.k"))?,
                g.param(store, &format!("conv{c}.b"))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut per_track = Vec::with_capacity(n_tracks);
    for i in 0..n_tracks {
        let mut x = g.slice_rows(tokens, i * t, (i + 1) * t)?;
        for &(k, b) in &conv {
            x = g.conv1d(x, k, b, cfg.conv_stride)?;
            x = g.relu(x)?;
        }
        per_track.push(x);
    }
    g.concat_rows(&per_track)
}

fn attention_sublayer<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    prefix: &str,
    norm: &str,
    x: NodeId,
    build: impl FnOnce(&mut Graph<F>, NodeId, &AttentionParams) -> Result<NodeId>,
) -> Result<NodeId> {
    let gain = g.param(store, &format!("{norm}.g"))?;
    let bias = g.param(store, &format!("{norm}.b"))?;
    let y = g.layer_norm(x, gain, bias)?;
    let params = AttentionParams::load(g, store, prefix)?;
    let att = build(g, y, &params)?;
    g.add(x, att)
}

/// One alignment layer over object-major rows x: (N*T') x D.
pub fn alignment_layer<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    x: NodeId,
    text: NodeId,
    layer: usize,
    n_tracks: usize,
    t_prime: usize,
    cfg: &SelectorConfig,
) -> Result<NodeId> {
    let (n, tp, heads) = (n_tracks, t_prime, cfg.heads);
    let mut x = x;
    if cfg.use_inter_object && n >= 1 {
        // Regroup rows frame-major so each frame's N tracks attend together.
        let to_frame_major: Vec<usize> =
            (0..tp).flat_map(|t| (0..n).map(move |i| i * tp + t)).collect();
        let to_object_major: Vec<usize> =
            (0..n).flat_map(|i| (0..tp).map(move |t| t * n + i)).collect();
        x = attention_sublayer(g, store, &format!("layer{layer}.inter"), &format!("layer{layer}.norm_inter"), x, |g, y, p| {
            let fm = g.gather_rows(y, to_frame_major)?;
            let mut frames = Vec::with_capacity(tp);
            for t in 0..tp {
                let rows = g.slice_rows(fm, t * n, (t + 1) * n)?;
                frames.push(multihead_attention(g, rows, rows, rows, p, heads)?);
            }
            let cat = g.concat_rows(&frames)?;
            g.gather_rows(cat, to_object_major)
        })?;
    }
    if cfg.use_motion_attn {
        x = attention_sublayer(g, store, &format!("layer{layer}.motion"), &format!("layer{layer}.norm_motion"), x, |g, y, p| {
            let mut tracks = Vec::with_capacity(n);
            for i in 0..n {
                let rows = g.slice_rows(y, i * tp, (i + 1) * tp)?;
                tracks.push(multihead_attention(g, rows, rows, rows, p, heads)?);
            }
            g.concat_rows(&tracks)
        })?;
    }
    x = attention_sublayer(g, store, &format!("layer{layer}.cross"), &format!("layer{layer}.norm_cross"), x, |g, y, p| {
        multihead_attention(g, y, text, text, p, heads)
    })?;
    let gain = g.param(store, &format!("layer{layer}.norm_ffn.g"))?;
    let bias = g.param(store, &format!("layer{layer}.norm_ffn.b"))?;
    let y = g.layer_norm(x, gain, bias)?;
    let w1 = g.param(store, &format!("layer{layer}.ffn.w1"))?;
    let b1 = g.param(store, &format!("layer{layer}.ffn.b1"))?;
    let w2 = g.param(store, &format!("layer{layer}.ffn.w2"))?;
    let b2 = g.param(store, &format!("layer{layer}.ffn.b2"))?;
    let h = g.matmul(y, w1)?;
    let h = g.add_row_bias(h, b1)?;
    let h = g.relu(h)?;
    let f = g.matmul(h, w2)?;
    let f = g.add_row_bias(f, b2)?;
    g.add(x, f)
}

/// Graph nodes produced by aggregation.
pub struct AggregateNodes {
    /// N x T' frame weights, rows sum to 1.
    pub w_a: NodeId,
    /// N x D aligned tokens.
    pub o_a: NodeId,
    /// Length-N alignment scores in (0,1).
    pub s_a: NodeId,
    /// Length-N pre-sigmoid score logits.
    pub score_logits: NodeId,
}

/// Language-aligned aggregation: frame weights softmax over T' of the
/// word-mean logits, aligned token = mean over T' of the weighted activations
/// (the outer mean kept literally), score = sigmoid of the twice-meaned logit.
pub fn aggregate<F: Scalar>(
    g: &mut Graph<F>,
    o_prime: NodeId,
    text: NodeId,
    n_tracks: usize,
    t_prime: usize,
) -> Result<AggregateNodes> {
    let rows = g.value(o_prime).shape()[0];
    if rows != n_tracks * t_prime {
        return Err(Error::shape(format!(
            "aggregate: {rows} rows != {n_tracks} tracks x {t_prime} frames"
        )));
    }
    let e_t = g.transpose(text)?;
    let logits = g.matmul(o_prime, e_t)?;
    let word_mean = g.mean_axis(logits, 1)?;
    let per_track = g.reshape(word_mean, vec![n_tracks, t_prime])?;
    let w_a = g.softmax(per_track, 1)?;
    let w_flat = g.reshape(w_a, vec![n_tracks * t_prime])?;
    let weighted = g.scale_rows(o_prime, w_flat)?;
    let o_a = g.mean_row_segments(weighted, t_prime)?;
    let col = g.reshape(word_mean, vec![n_tracks * t_prime, 1])?;
    let seg = g.mean_row_segments(col, t_prime)?;
    let score_logits = g.reshape(seg, vec![n_tracks])?;
    let s_a = g.sigmoid(score_logits)?;
    Ok(AggregateNodes { w_a, o_a, s_a, score_logits })
}

/// Graph handles for a full forward pass.
pub struct ForwardNodes {
    pub text_projected: NodeId,
    /// (N*T') x D aligned activations, object-major rows.
    pub o_prime: NodeId,
    pub agg: AggregateNodes,
    pub n_tracks: usize,
    pub t_prime: usize,
}

/// Builds the full pipeline on an existing graph. `tokens` holds object-major
/// (N*T) x D rows; `text` holds raw N_w x D_text word embeddings.
pub fn build_forward<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    tokens: NodeId,
    n_tracks: usize,
    text: NodeId,
    cfg: &SelectorConfig,
) -> Result<ForwardNodes> {
    cfg.validate()?;
    let tshape = g.value(tokens).shape().to_vec();
    if tshape.len() != 2 || tshape[1] != cfg.dim || n_tracks == 0 || tshape[0] % n_tracks != 0 {
        return Err(Error::shape(format!(
            "forward tokens shape {tshape:?} incompatible with {n_tracks} tracks of dim {}",
            cfg.dim
        )));
    }
    let eshape = g.value(text).shape().to_vec();
    if eshape.len() != 2 || eshape[1] != cfg.text_dim {
        return Err(Error::shape(format!(
            "forward text shape {eshape:?} does not match text_dim {}",
            cfg.text_dim
        )));
    }
    let projected = project_text(g, store, text)?;
    let gain = g.param(store, "text_norm.g")?;
    let bias = g.param(store, "text_norm.b")?;
    let e = g.layer_norm(projected, gain, bias)?;
    let t_prime = cfg.t_prime(tshape[0] / n_tracks);
    let mut x = motion_encode(g, store, tokens, n_tracks, cfg)?;
    for l in 0..cfg.layers {
        x = alignment_layer(g, store, x, e, l, n_tracks, t_prime, cfg)?;
    }
    let agg = aggregate(g, x, e, n_tracks, t_prime)?;
    Ok(ForwardNodes {
        text_projected: e,
        o_prime: x,
        agg,
        n_tracks,
        t_prime,
    })
}

/// Forward outputs materialized for inference.
#[derive(Debug, Clone)]
pub struct AlignmentOutput<F: Scalar> {
    /// Track ids in row order.
    pub track_ids: Vec<String>,
    /// N x D aligned tokens.
    pub aligned_tokens: Tensor<F>,
    /// N x T' frame weights; each row sums to 1.
    pub frame_weights: Tensor<F>,
    /// Per-track alignment scores in (0,1).
    pub scores: Vec<f64>,
    /// (N*T') x D aligned activations, object-major rows.
    pub aligned_activations: Tensor<F>,
    pub t_prime: usize,
}

/// Converts a TokenSet into the graph input layout.
pub fn token_input<F: Scalar>(g: &mut Graph<F>, tokens: &TokenSet) -> Result<NodeId> {
    let data: Vec<F> = tokens.values().iter().map(|&v| F::from_f64(v as f64)).collect();
    let value = Tensor::new(vec![tokens.n_tracks() * tokens.n_frames(), tokens.dim()], data)?;
    g.input(value)
}

/// Converts a TextEmbedding into the graph input layout.
pub fn text_input<F: Scalar>(g: &mut Graph<F>, text: &TextEmbedding) -> Result<NodeId> {
    let data: Vec<F> = text.values().iter().map(|&v| F::from_f64(v as f64)).collect();
    let value = Tensor::new(vec![text.n_words(), text.dim()], data)?;
    g.input(value)
}

/// Scores one video's candidate tracks against one expression.
pub fn forward<F: Scalar>(
    tokens: &TokenSet,
    text: &TextEmbedding,
    store: &ParamStore<F>,
    cfg: &SelectorConfig,
) -> Result<AlignmentOutput<F>> {
    if tokens.dim() != cfg.dim {
        return Err(Error::shape(format!(
            "token dim {} does not match selector dim {}",
            tokens.dim(),
            cfg.dim
        )));
    }
    if text.dim() != cfg.text_dim {
        return Err(Error::shape(format!(
            "text dim {} does not match selector text_dim {}",
            text.dim(),
            cfg.text_dim
        )));
    }
    let mut g = Graph::new();
    let tok = token_input(&mut g, tokens)?;
    let txt = text_input(&mut g, text)?;
    let f = build_forward(&mut g, store, tok, tokens.n_tracks(), txt, cfg)?;
    Ok(AlignmentOutput {
        track_ids: tokens.track_ids().to_vec(),
        aligned_tokens: g.value(f.agg.o_a).clone(),
        frame_weights: g.value(f.agg.w_a).clone(),
        scores: g.value(f.agg.s_a).data().iter().map(|v| v.as_f64()).collect(),
        aligned_activations: g.value(f.o_prime).clone(),
        t_prime: f.t_prime,
    })
}

/// Threshold-and-merge selection decision.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub selected_indices: Vec<usize>,
    pub selected_track_ids: Vec<String>,
    /// Pixelwise OR of the selected tracks; all-zero when nothing selected.
    pub merged_track: MaskTrack,
    pub scores: Vec<f64>,
}

/// Selects every track scoring strictly above tau; when none does and the
/// fallback is enabled, selects the single argmax (ties to the lowest index).
pub fn select(scores: &[f64], tracks: &TrackSet, cfg: &SelectorConfig) -> Result<SelectionResult> {
    if scores.len() != tracks.len() {
        return Err(Error::shape(format!(
            "{} scores for {} tracks",
            scores.len(),
            tracks.len()
        )));
    }
    let mut chosen: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > cfg.tau_select)
        .collect();
    if chosen.is_empty() && cfg.fallback_argmax && !scores.is_empty() {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        chosen.push(best);
    }
    let refs: Vec<&MaskTrack> = chosen.iter().map(|&i| &tracks.tracks()[i]).collect();
    let merged_track = merge_tracks(
        &refs,
        tracks.n_frames(),
        tracks.height(),
        tracks.width(),
        format!("{}.selected", tracks.video_id()),
    )?;
    Ok(SelectionResult {
        selected_track_ids: chosen.iter().map(|&i| tracks.tracks()[i].track_id().to_string()).collect(),
        selected_indices: chosen,
        merged_track,
        scores: scores.to_vec(),
    })
}
