//! Deterministic training loop: per-expression pseudo-labels, forward and
//! backward through the selection module, Adam with a decaying learning rate,
//! global-norm gradient clipping, and resumable checkpoints.
//!
//! Checkpoint files (magic "SOLP", version 1, little-endian):
//!   magic, u32 version, u32 scalar width in bits (32 or 64)
//!   u32 byte length + TOML echo of the selector and train configs
//!   u32 epochs completed, u64 optimizer step count
//!   u32 epoch-record count, each: u32 epoch, f64 mean loss, f64 mean bce,
//!     f64 mean align, f64 first lr, f64 last lr, u64 positive labels,
//!     u64 total labels
//!   u32 parameter count, each: u32 name length, name bytes, u32 rank,
//!     u32 per-axis sizes, then the values at the scalar width
//!   first-moment values per parameter in table order, then second-moment
//!
//! A run is a pure function of (corpus, configs, seed): shuffles draw from
//! per-epoch seeded streams and optimizer state is checkpointed exactly, so
//! resuming from an epoch artifact continues the run bit-for-bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::io::{atomic_write, BlobReader};
use crate::data::{strip_background, Corpus, TextEmbedding, TokenSet};
use crate::error::{Error, Result};
use crate::mask::TrackSet;
use crate::selector::{build_forward, init_params, text_input, token_input, SelectorConfig};
use crate::supervision::{
    init_anchor_bank, make_pseudo_labels, positive_anchor, total_loss, AlignSign, LossWeights,
    PseudoLabels, ANCHOR_PARAM,
};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SOLP";
const CHECKPOINT_VERSION: u32 = 1;

/// Epoch shuffles use per-epoch RNG streams above this base, keeping them
/// independent of how many epochs ran before (required for exact resume).
const SHUFFLE_STREAM_BASE: u64 = 1000;

/// Learning-rate decay shape over fractional epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Linear,
}

/// Optimization settings. Defaults follow the reference fine-tuning recipe;
/// randomly initialized desk-scale runs want a larger `lr_init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Candidates whose mask mIoU against ground truth exceeds this are
    /// labeled positive.
    pub tau_label: f64,
    /// Number of learnable negative anchors.
    pub n_neg: usize,
    pub weights: LossWeights,
    pub align_sign: AlignSign,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 13,
            lr_init: 5e-6,
            schedule: Schedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            seed: 0,
            tau_label: 0.5,
            n_neg: 32,
            weights: LossWeights::default(),
            align_sign: AlignSign::IntentConsistent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.lr_init > 0.0
            && self.lr_init.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.weight_decay >= 0.0
            && self.grad_clip > 0.0
            && self.tau_label > 0.0
            && self.tau_label <= 1.0
            && self.n_neg >= 1;
        if !ok {
            return Err(Error::config(format!("invalid train config: {self:?}")));
        }
        self.weights.validate()
    }
}

/// Builds the full forward pass plus total loss for one expression and
/// returns the loss value with dense per-parameter gradients in store order
/// (zero tensors for parameters the graph never touched). This is the
/// single-step objective the optimizer descends, packaged for
/// finite-difference verification.
pub fn loss_eval<F: Scalar>(
    params: &ParamStore<F>,
    tokens: &TokenSet,
    text: &TextEmbedding,
    y: &[bool],
    selector_cfg: &SelectorConfig,
    weights: LossWeights,
    align_sign: AlignSign,
) -> Result<(f64, Vec<Tensor<F>>)> {
    let mut g: Graph<F> = Graph::new();
    let tok = token_input(&mut g, tokens)?;
    let txt = text_input(&mut g, text)?;
    let fwd = build_forward(&mut g, params, tok, tokens.n_tracks(), txt, selector_cfg)?;
    let a_p = positive_anchor(&mut g, fwd.text_projected)?;
    let anchors = g.param(params, ANCHOR_PARAM)?;
    let nodes = total_loss(&mut g, fwd.agg.s_a, fwd.agg.o_a, y, a_p, anchors, weights, align_sign)?;
    let value = g.value(nodes.total).item()?.as_f64();
    let pairs = g.backward(nodes.total)?;
    let mut grads: Vec<Tensor<F>> = (0..params.len())
        .map(|p| Tensor::zeros(params.value(p).shape().to_vec()))
        .collect();
    for (idx, t) in pairs {
        grads[idx] = t;
    }
    Ok((value, grads))
}

/// Learning rate at a fractional epoch position, evaluated per step.
pub fn learning_rate(cfg: &TrainConfig, fractional_epoch: f64) -> f64 {
    let frac = fractional_epoch / cfg.epochs as f64;
    match cfg.schedule {
        Schedule::Cosine => cfg.lr_init * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        Schedule::Linear => cfg.lr_init * (1.0 - frac),
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    pub mean_bce: f64,
    pub mean_align: f64,
    pub lr_first: f64,
    pub lr_last: f64,
    pub positive_labels: u64,
    pub total_labels: u64,
}

/// A training state snapshot: everything needed to evaluate or continue.
pub struct Checkpoint<F: Scalar> {
    pub selector_cfg: SelectorConfig,
    pub train_cfg: TrainConfig,
    pub epochs_done: u32,
    pub adam_step: u64,
    pub params: ParamStore<F>,
    /// Adam moments in parameter-store order.
    pub adam_m: Vec<Tensor<F>>,
    pub adam_v: Vec<Tensor<F>>,
    pub history: Vec<EpochStats>,
}

impl<F: Scalar> std::fmt::Debug for Checkpoint<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("epochs_done", &self.epochs_done)
            .field("adam_step", &self.adam_step)
            .field("params", &self.params.len())
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    selector: SelectorConfig,
    train: TrainConfig,
}

/// Candidate data per video after optional background filtering, plus the
/// precomputed labels for every expression.
struct Prepared {
    videos: Vec<(TokenSet, TrackSet)>,
    labels: Vec<Vec<PseudoLabels>>,
    /// Flattened (video, expression) step order before shuffling.
    pairs: Vec<(usize, usize)>,
}

fn prepare(corpus: &Corpus, selector_cfg: &SelectorConfig, train_cfg: &TrainConfig) -> Result<Prepared> {
    let mut videos = Vec::with_capacity(corpus.videos.len());
    let mut labels = Vec::with_capacity(corpus.videos.len());
    let mut pairs = Vec::new();
    for (vi, v) in corpus.videos.iter().enumerate() {
        if v.tokens.dim() != selector_cfg.dim {
            return Err(Error::shape(format!(
                "video {:?} has token dim {}, model expects {}",
                v.video_id,
                v.tokens.dim(),
                selector_cfg.dim
            )));
        }
        let pair = if selector_cfg.include_background_tokens {
            (v.tokens.clone(), v.tracks.clone())
        } else {
            strip_background(&v.tokens, &v.tracks)?
        };
        let mut per_expr = Vec::with_capacity(v.expressions.len());
        for (ei, e) in v.expressions.iter().enumerate() {
            if e.embedding.dim() != selector_cfg.text_dim {
                return Err(Error::shape(format!(
                    "expression {:?} has text dim {}, model expects {}",
                    e.expression_id,
                    e.embedding.dim(),
                    selector_cfg.text_dim
                )));
            }
            per_expr.push(make_pseudo_labels(&pair.1, &e.gt_track, train_cfg.tau_label)?);
            pairs.push((vi, ei));
        }
        videos.push(pair);
        labels.push(per_expr);
    }
    if pairs.is_empty() {
        return Err(Error::config("corpus has no expressions to train on"));
    }
    Ok(Prepared { videos, labels, pairs })
}

/// Scales gradients so their global L2 norm is at most `clip`. Returns the
/// pre-clip norm.
pub fn clip_gradients<F: Scalar>(store: &mut ParamStore<F>, clip: f64) -> f64 {
    let norm = store.grad_global_norm();
    if norm > clip {
        store.scale_grads(clip / norm);
    }
    norm
}

/// One Adam step with bias correction; all math in f64, one rounding per
/// stored element.
fn adam_step<F: Scalar>(
    store: &mut ParamStore<F>,
    m: &mut [Tensor<F>],
    v: &mut [Tensor<F>],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for idx in 0..store.len() {
        let (value, grad) = store.value_and_grad_mut(idx);
        let mj = m[idx].data_mut();
        let vj = v[idx].data_mut();
        for (j, g) in grad.data().iter().enumerate() {
            let g = g.as_f64();
            let m_new = cfg.beta1 * mj[j].as_f64() + (1.0 - cfg.beta1) * g;
            let v_new = cfg.beta2 * vj[j].as_f64() + (1.0 - cfg.beta2) * g * g;
            let theta = value.data()[j].as_f64();
            let step = lr * ((m_new / bc1) / ((v_new / bc2).sqrt() + cfg.adam_eps)
                + cfg.weight_decay * theta);
            mj[j] = F::from_f64(m_new);
            vj[j] = F::from_f64(v_new);
            value.data_mut()[j] = F::from_f64(theta - step);
        }
    }
}

fn encode_values<F: Scalar>(out: &mut Vec<u8>, t: &Tensor<F>) {
    for v in t.data() {
        if F::BITS == 32 {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

fn read_values<F: Scalar>(r: &mut BlobReader, count: usize, what: &str) -> Result<Vec<F>> {
    if F::BITS == 32 {
        Ok(r.f32_vec(count, what)?.into_iter().map(|x| F::from_f64(x as f64)).collect())
    } else {
        Ok(r.f64_vec(count, what)?.into_iter().map(F::from_f64).collect())
    }
}

fn encode_checkpoint<F: Scalar>(
    selector_cfg: &SelectorConfig,
    train_cfg: &TrainConfig,
    epochs_done: u32,
    adam_step: u64,
    params: &ParamStore<F>,
    adam_m: &[Tensor<F>],
    adam_v: &[Tensor<F>],
    history: &[EpochStats],
) -> Vec<u8> {
    let meta = CheckpointMeta {
        selector: selector_cfg.clone(),
        train: train_cfg.clone(),
    };
    let meta_toml = toml::to_string(&meta).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&F::BITS.to_le_bytes());
    out.extend_from_slice(&(meta_toml.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_toml.as_bytes());
    out.extend_from_slice(&epochs_done.to_le_bytes());
    out.extend_from_slice(&adam_step.to_le_bytes());
    out.extend_from_slice(&(history.len() as u32).to_le_bytes());
    for h in history {
        out.extend_from_slice(&h.epoch.to_le_bytes());
        for x in [h.mean_loss, h.mean_bce, h.mean_align, h.lr_first, h.lr_last] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&h.positive_labels.to_le_bytes());
        out.extend_from_slice(&h.total_labels.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        encode_values(&mut out, value);
    }
    for t in adam_m {
        encode_values(&mut out, t);
    }
    for t in adam_v {
        encode_values(&mut out, t);
    }
    out
}

pub fn save_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(
        &ckpt.selector_cfg,
        &ckpt.train_cfg,
        ckpt.epochs_done,
        ckpt.adam_step,
        &ckpt.params,
        &ckpt.adam_m,
        &ckpt.adam_v,
        &ckpt.history,
    );
    atomic_write(path, &bytes)
}

/// Reads just the scalar width of a checkpoint so callers can pick the right
/// [`load_checkpoint`] instantiation.
pub fn checkpoint_bits(path: &Path) -> Result<u32> {
    let mut r = BlobReader::open(path)?;
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let _version = r.u32("version")?;
    r.u32("scalar width")
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let mut r = BlobReader::open(path)?;
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let bits = r.u32("scalar width")?;
    if bits != F::BITS {
        return Err(r.fail(format!(
            "checkpoint stores {bits}-bit values, loader expects {}",
            F::BITS
        )));
    }
    let meta_str = r.string("config echo")?;
    let meta: CheckpointMeta =
        toml::from_str(&meta_str).map_err(|e| r.fail(format!("config echo: {e}")))?;
    let epochs_done = r.u32("epochs done")?;
    let adam_step = r.u64("optimizer step count")?;
    let n_hist = r.u32("history count")? as usize;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        history.push(EpochStats {
            epoch: r.u32("epoch")?,
            mean_loss: r.f64("mean loss")?,
            mean_bce: r.f64("mean bce")?,
            mean_align: r.f64("mean align")?,
            lr_first: r.f64("first lr")?,
            lr_last: r.f64("last lr")?,
            positive_labels: r.u64("positive labels")?,
            total_labels: r.u64("total labels")?,
        });
    }
    let n_params = r.u32("parameter count")? as usize;
    let mut params = ParamStore::new(meta.train.seed);
    for _ in 0..n_params {
        let name = r.string("parameter name")?;
        let rank = r.u32("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter dim")? as usize);
        }
        let count = shape.iter().product();
        let data = read_values::<F>(&mut r, count, &name)?;
        let tensor = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
        params.add(&name, tensor).map_err(|e| r.fail(e.to_string()))?;
    }
    let mut moments = |what: &str| -> Result<Vec<Tensor<F>>> {
        (0..n_params)
            .map(|i| {
                let shape = params.value(i).shape().to_vec();
                let data = read_values::<F>(&mut r, shape.iter().product(), what)?;
                Tensor::new(shape, data)
            })
            .collect()
    };
    let adam_m = moments("first moment")?;
    let adam_v = moments("second moment")?;
    r.done()?;
    Ok(Checkpoint {
        selector_cfg: meta.selector,
        train_cfg: meta.train,
        epochs_done,
        adam_step,
        params,
        adam_m,
        adam_v,
        history,
    })
}

/// Runs epochs [start_epoch, cfg.epochs), mutating the passed state, and
/// returns the final checkpoint. Writes per-epoch and final artifacts plus a
/// line-delimited log when given an output directory.
#[allow(clippy::too_many_arguments)]
fn run_epochs<F: Scalar>(
    corpus: &Corpus,
    prep: &Prepared,
    selector_cfg: &SelectorConfig,
    train_cfg: &TrainConfig,
    mut params: ParamStore<F>,
    mut adam_m: Vec<Tensor<F>>,
    mut adam_v: Vec<Tensor<F>>,
    mut step_count: u64,
    mut history: Vec<EpochStats>,
    start_epoch: u32,
    out_dir: Option<&Path>,
) -> Result<Checkpoint<F>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = String::new();
    log.push_str(
        &json!({"record": "config", "selector": selector_cfg, "train": train_cfg}).to_string(),
    );
    log.push('\n');
    let steps_per_epoch = prep.pairs.len();
    for epoch in start_epoch..train_cfg.epochs {
        let mut order: Vec<usize> = (0..steps_per_epoch).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(SHUFFLE_STREAM_BASE + epoch as u64);
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut positives = 0u64;
        let mut total = 0u64;
        let mut lr_first = 0.0;
        let mut lr_last = 0.0;
        for (k, &pi) in order.iter().enumerate() {
            let (vi, ei) = prep.pairs[pi];
            let video = &corpus.videos[vi];
            let (tokens, _) = &prep.videos[vi];
            let expr = &video.expressions[ei];
            let labels = &prep.labels[vi][ei];
            let lr = learning_rate(train_cfg, epoch as f64 + k as f64 / steps_per_epoch as f64);
            if k == 0 {
                lr_first = lr;
            }
            lr_last = lr;

            let outcome = (|| {
                let mut g: Graph<F> = Graph::new();
                let tok = token_input(&mut g, tokens)?;
                let txt = text_input(&mut g, &expr.embedding)?;
                let fwd =
                    build_forward(&mut g, &params, tok, tokens.n_tracks(), txt, selector_cfg)?;
                let a_p = positive_anchor(&mut g, fwd.text_projected)?;
                let anchors = g.param(&params, ANCHOR_PARAM)?;
                let nodes = total_loss(
                    &mut g,
                    fwd.agg.s_a,
                    fwd.agg.o_a,
                    &labels.y,
                    a_p,
                    anchors,
                    train_cfg.weights,
                    train_cfg.align_sign,
                )?;
                let loss = g.value(nodes.total).item()?.as_f64();
                if !loss.is_finite() {
                    return Err(Error::numerical(format!("non-finite loss {loss}")));
                }
                let bce = g.value(nodes.bce).item()?.as_f64();
                let align = match nodes.align {
                    Some(id) => g.value(id).item()?.as_f64(),
                    None => 0.0,
                };
                let grads = g.backward(nodes.total)?;
                Ok((loss, bce, align, grads))
            })();
            let (loss, bce, align, grads) = outcome.map_err(|e| match e {
                Error::Numerical(m) => Error::numerical(format!(
                    "{m} at epoch {epoch} step {k} on {}/{}",
                    video.video_id, expr.expression_id
                )),
                other => other,
            })?;
            params.assign_grads(grads)?;
            clip_gradients(&mut params, train_cfg.grad_clip);
            step_count += 1;
            adam_step(&mut params, &mut adam_m, &mut adam_v, step_count, lr, train_cfg);

            sums.0 += loss;
            sums.1 += bce;
            sums.2 += align;
            positives += labels.positives() as u64;
            total += labels.y.len() as u64;
            log.push_str(
                &json!({
                    "record": "step", "epoch": epoch, "step": k,
                    "video": video.video_id, "expression": expr.expression_id,
                    "loss": loss, "bce": bce, "align": align, "lr": lr,
                    "positive_labels": labels.positives(), "labels": labels.y.len(),
                })
                .to_string(),
            );
            log.push('\n');
        }
        let n = steps_per_epoch as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: sums.0 / n,
            mean_bce: sums.1 / n,
            mean_align: sums.2 / n,
            lr_first,
            lr_last,
            positive_labels: positives,
            total_labels: total,
        };
        log.push_str(&json!({"record": "epoch", "stats": stats}).to_string());
        log.push('\n');
        history.push(stats);
        if let Some(dir) = out_dir {
            let bytes = encode_checkpoint(
                selector_cfg,
                train_cfg,
                epoch + 1,
                step_count,
                &params,
                &adam_m,
                &adam_v,
                &history,
            );
            atomic_write(&dir.join(format!("epoch_{:03}.solp", epoch + 1)), &bytes)?;
        }
    }
    let ckpt = Checkpoint {
        selector_cfg: selector_cfg.clone(),
        train_cfg: train_cfg.clone(),
        epochs_done: train_cfg.epochs,
        adam_step: step_count,
        params,
        adam_m,
        adam_v,
        history,
    };
    if let Some(dir) = out_dir {
        save_checkpoint(&ckpt, &dir.join("final.solp"))?;
        atomic_write(&dir.join("train_log.jsonl"), log.as_bytes())?;
    }
    Ok(ckpt)
}

/// Trains from scratch. With an output directory, writes `epoch_NNN.solp`
/// after each epoch, `final.solp`, and `train_log.jsonl`.
pub fn train<F: Scalar>(
    corpus: &Corpus,
    selector_cfg: &SelectorConfig,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Checkpoint<F>> {
    selector_cfg.validate()?;
    train_cfg.validate()?;
    let prep = prepare(corpus, selector_cfg, train_cfg)?;
    let mut params: ParamStore<F> = init_params(selector_cfg, train_cfg.seed)?;
    init_anchor_bank(&mut params, train_cfg.n_neg, selector_cfg.dim, train_cfg.seed)?;
    let adam_m: Vec<Tensor<F>> = (0..params.len())
        .map(|i| Tensor::zeros(params.value(i).shape().to_vec()))
        .collect();
    let adam_v = adam_m.clone();
    run_epochs(
        corpus, &prep, selector_cfg, train_cfg, params, adam_m, adam_v, 0, Vec::new(), 0, out_dir,
    )
}

/// Continues a run from a checkpoint until `train_cfg.epochs`. Resuming an
/// epoch artifact of an identical configuration reproduces the uninterrupted
/// run exactly. A checkpoint already at or past the final epoch returns
/// unchanged.
pub fn resume<F: Scalar>(
    ckpt: Checkpoint<F>,
    corpus: &Corpus,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Checkpoint<F>> {
    train_cfg.validate()?;
    let anchors = ckpt
        .params
        .get(ANCHOR_PARAM)
        .ok_or_else(|| Error::shape("checkpoint has no anchor bank"))?;
    if anchors.shape() != [train_cfg.n_neg, ckpt.selector_cfg.dim] {
        return Err(Error::shape(format!(
            "checkpoint anchors {:?} incompatible with n_neg {} dim {}",
            anchors.shape(),
            train_cfg.n_neg,
            ckpt.selector_cfg.dim
        )));
    }
    let prep = prepare(corpus, &ckpt.selector_cfg, train_cfg)?;
    if ckpt.epochs_done >= train_cfg.epochs {
        return Ok(ckpt);
    }
    let selector_cfg = ckpt.selector_cfg.clone();
    run_epochs(
        corpus,
        &prep,
        &selector_cfg,
        train_cfg,
        ckpt.params,
        ckpt.adam_m,
        ckpt.adam_v,
        ckpt.adam_step,
        ckpt.history,
        ckpt.epochs_done,
        out_dir,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn tiny_corpus(seed: u64) -> Corpus {
        let cfg = SynthConfig {
            scenes: 2,
            ..SynthConfig::tiny()
        };
        generate_synthetic(&cfg, seed).unwrap()
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

    fn tiny_train(epochs: u32) -> TrainConfig {
        TrainConfig {
            epochs,
            lr_init: 1e-3,
            n_neg: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_matches_closed_form() {
        let cfg = TrainConfig::default();
        assert!((learning_rate(&cfg, 0.0) - cfg.lr_init).abs() < 1e-18);
        assert!(learning_rate(&cfg, cfg.epochs as f64) < 1e-20);
        for i in 0..40 {
            let e = i as f64 * cfg.epochs as f64 / 40.0;
            let want = cfg.lr_init * 0.5 * (1.0 + (std::f64::consts::PI * e / 13.0).cos());
            assert!((learning_rate(&cfg, e) - want).abs() < 1e-12 * cfg.lr_init);
        }
        let lin = TrainConfig {
            schedule: Schedule::Linear,
            epochs: 10,
            ..TrainConfig::default()
        };
        assert!((learning_rate(&lin, 2.5) - 0.75 * lin.lr_init).abs() < 1e-18);
    }

    #[test]
    fn paper_default_weights_are_logged() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.weights.lambda1, 1.0);
        assert_eq!(cfg.weights.lambda2, 0.3);
        assert_eq!(cfg.epochs, 13);
        assert_eq!(cfg.lr_init, 5e-6);

        let corpus = tiny_corpus(3);
        let dir = tempfile::tempdir().unwrap();
        train::<f32>(&corpus, &tiny_selector(), &tiny_train(1), Some(dir.path())).unwrap();
        let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["record"], "config");
        assert_eq!(first["train"]["weights"]["lambda1"], 1.0);
        assert_eq!(first["train"]["weights"]["lambda2"], 0.3);
        // Every step line carries loss components and the lr.
        let step: serde_json::Value = serde_json::from_str(
            log.lines().find(|l| l.contains("\"record\":\"step\"")).unwrap(),
        )
        .unwrap();
        for key in ["loss", "bce", "align", "lr", "positive_labels"] {
            assert!(!step[key].is_null(), "missing {key}");
        }
    }

    #[test]
    fn same_seed_reproduces_bytes() {
        let corpus = tiny_corpus(5);
        let sel = tiny_selector();
        let tr = tiny_train(2);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train::<f32>(&corpus, &sel, &tr, Some(d1.path())).unwrap();
        train::<f32>(&corpus, &sel, &tr, Some(d2.path())).unwrap();
        for name in ["final.solp", "epoch_001.solp", "train_log.jsonl"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let corpus = tiny_corpus(7);
        let sel = tiny_selector();
        let tr = tiny_train(4);
        let full = tempfile::tempdir().unwrap();
        train::<f32>(&corpus, &sel, &tr, Some(full.path())).unwrap();

        let mid: Checkpoint<f32> =
            load_checkpoint(&full.path().join("epoch_002.solp")).unwrap();
        assert_eq!(mid.epochs_done, 2);
        let cont = tempfile::tempdir().unwrap();
        resume(mid, &corpus, &tr, Some(cont.path())).unwrap();

        let a = std::fs::read(full.path().join("final.solp")).unwrap();
        let b = std::fs::read(cont.path().join("final.solp")).unwrap();
        assert_eq!(a, b, "resumed run diverged from uninterrupted run");
    }

    #[test]
    fn resume_past_final_is_noop_and_shapes_are_checked() {
        let corpus = tiny_corpus(9);
        let sel = tiny_selector();
        let tr = tiny_train(1);
        let ckpt = train::<f32>(&corpus, &sel, &tr, None).unwrap();
        let before = encode_checkpoint(
            &ckpt.selector_cfg,
            &ckpt.train_cfg,
            ckpt.epochs_done,
            ckpt.adam_step,
            &ckpt.params,
            &ckpt.adam_m,
            &ckpt.adam_v,
            &ckpt.history,
        );
        let same = resume(ckpt, &corpus, &tr, None).unwrap();
        assert_eq!(same.epochs_done, 1);
        let after = encode_checkpoint(
            &same.selector_cfg,
            &same.train_cfg,
            same.epochs_done,
            same.adam_step,
            &same.params,
            &same.adam_m,
            &same.adam_v,
            &same.history,
        );
        assert_eq!(before, after);

        // A corpus with a different token dim cannot drive these parameters.
        let other = generate_synthetic(
            &SynthConfig { dim: 16, text_dim: 48, ..SynthConfig::tiny() },
            1,
        )
        .unwrap();
        let err = resume(same, &other, &tiny_train(3), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dim"));
    }

    #[test]
    fn checkpoint_roundtrip_and_width_check() {
        let corpus = tiny_corpus(13);
        let ckpt = train::<f32>(&corpus, &tiny_selector(), &tiny_train(1), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.solp");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epochs_done, ckpt.epochs_done);
        assert_eq!(loaded.adam_step, ckpt.adam_step);
        assert_eq!(loaded.history, ckpt.history);
        assert_eq!(loaded.train_cfg, ckpt.train_cfg);
        assert_eq!(loaded.selector_cfg, ckpt.selector_cfg);
        for i in 0..ckpt.params.len() {
            assert_eq!(loaded.params.name(i), ckpt.params.name(i));
            assert_eq!(loaded.params.value(i).data(), ckpt.params.value(i).data());
            assert_eq!(loaded.adam_m[i].data(), ckpt.adam_m[i].data());
            assert_eq!(loaded.adam_v[i].data(), ckpt.adam_v[i].data());
        }

        let widened = load_checkpoint::<f64>(&path).unwrap_err();
        assert_eq!(widened.exit_code(), 3);
        assert!(widened.to_string().contains("32-bit"));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(load_checkpoint::<f32>(&path).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut store: ParamStore<f64> = ParamStore::new(0);
        let a = store.add("a", Tensor::zeros(vec![2])).unwrap();
        let b = store.add("b", Tensor::zeros(vec![1])).unwrap();
        store
            .assign_grads(vec![
                (a, Tensor::new(vec![2], vec![3.0, 0.0]).unwrap()),
                (b, Tensor::new(vec![1], vec![4.0]).unwrap()),
            ])
            .unwrap();
        let pre = clip_gradients(&mut store, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!(store.grad_global_norm() <= 1.0 + 1e-6);
        // Direction preserved: components scale uniformly.
        assert!((store.grad_by_name("a").unwrap().data()[0] - 0.6).abs() < 1e-12);
        assert!((store.grad_by_name("b").unwrap().data()[0] - 0.8).abs() < 1e-12);

        // Under the clip, gradients pass through untouched.
        store
            .assign_grads(vec![(a, Tensor::new(vec![2], vec![0.3, 0.0]).unwrap())])
            .unwrap();
        clip_gradients(&mut store, 1.0);
        assert_eq!(store.grad_by_name("a").unwrap().data()[0], 0.3);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::new(vec![]);
        let err = train::<f32>(&corpus, &tiny_selector(), &tiny_train(1), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn loss_decreases_on_tiny_corpus() {
        let corpus = tiny_corpus(21);
        let ckpt = train::<f32>(&corpus, &tiny_selector(), &tiny_train(4), None).unwrap();
        let first = ckpt.history.first().unwrap().mean_loss;
        let last = ckpt.history.last().unwrap().mean_loss;
        assert!(
            last < first,
            "mean loss did not improve: first {first}, last {last}"
        );
        assert_eq!(ckpt.history.len(), 4);
        assert!(ckpt.history.iter().all(|h| h.total_labels > 0));
    }

    #[test]
    fn anchors_receive_gradient_updates() {
        let corpus = tiny_corpus(23);
        let sel = tiny_selector();
        let tr = tiny_train(1);
        let ckpt = train::<f32>(&corpus, &sel, &tr, None).unwrap();
        let mut fresh: ParamStore<f32> = ParamStore::new(tr.seed);
        init_anchor_bank(&mut fresh, tr.n_neg, sel.dim, tr.seed).unwrap();
        assert_ne!(
            ckpt.params.get(ANCHOR_PARAM).unwrap().data(),
            fresh.get(ANCHOR_PARAM).unwrap().data(),
            "anchor bank never moved during training"
        );
    }

    #[test]
    fn exploding_run_aborts_with_the_pair_named() {
        let corpus = tiny_corpus(2);
        let tr = TrainConfig {
            lr_init: 1e300,
            ..tiny_train(1)
        };
        let err = train::<f32>(&corpus, &tiny_selector(), &tr, None).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "unexpected message: {msg}");
        assert!(msg.contains('/'), "pair not named: {msg}");
    }

    #[test]
    fn background_filter_matches_id_prefix() {
        let corpus = tiny_corpus(31);
        let v = &corpus.videos[0];
        assert!(v.tokens.track_ids().iter().any(|id| id.starts_with("bg")));
        let (toks, tracks) = strip_background(&v.tokens, &v.tracks).unwrap();
        assert!(toks.track_ids().iter().all(|id| !id.starts_with("bg")));
        assert_eq!(toks.n_tracks(), tracks.len());
        assert!(toks.n_tracks() < v.tokens.n_tracks());
        // Remaining ids keep their original relative order.
        let orig: Vec<&String> = v
            .tokens
            .track_ids()
            .iter()
            .filter(|id| !id.starts_with("bg"))
            .collect();
        assert_eq!(orig, toks.track_ids().iter().collect::<Vec<_>>());

        // Training without background tokens still runs end to end.
        let sel = SelectorConfig {
            include_background_tokens: false,
            ..tiny_selector()
        };
        train::<f32>(&corpus, &sel, &tiny_train(1), None).unwrap();
    }
}
