//! Training supervision: IoU pseudo-labels, anchor-based alignment loss,
//! binary cross-entropy on alignment scores, and the weighted total.
//!
//! The alignment loss contrasts each aligned token against the positive
//! anchor (mean of the projected text tokens) and a bank of learnable
//! negative anchors under cosine distance. As printed, the loss formula
//! carries a leading minus that would push positive samples away from the
//! positive anchor; the default here implements the stated intent (positives
//! pulled toward the text anchor, negatives toward their nearest negative
//! anchor), and [`AlignSign::PrintedFormula`] reproduces the printed sign.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{track_miou, MaskTrack, TrackSet};
use crate::tensor::{Graph, NodeId, ParamStore, Scalar, Tensor};

/// Scores are clamped into [eps, 1-eps] before logs.
pub const LOG_CLAMP_EPS: f64 = 1e-7;

/// Name of the learnable negative-anchor matrix in a parameter store.
pub const ANCHOR_PARAM: &str = "anchors.neg";

/// RNG stream id separating anchor init from selector init on a shared seed.
const ANCHOR_STREAM: u64 = 1;

/// Per-candidate binary labels derived from mask overlap with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub y: Vec<bool>,
    /// The mIoU values behind each label, kept for diagnostics.
    pub miou: Vec<f64>,
    pub tau_label: f64,
}

impl PseudoLabels {
    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }
}

/// Labels candidate i positive iff track_miou(candidate_i, gt) > tau (strict).
pub fn make_pseudo_labels(
    candidates: &TrackSet,
    gt: &MaskTrack,
    tau_label: f64,
) -> Result<PseudoLabels> {
    if !(tau_label > 0.0 && tau_label <= 1.0) {
        return Err(Error::config(format!(
            "tau_label must lie in (0, 1], got {tau_label}"
        )));
    }
    let miou: Vec<f64> = candidates
        .tracks()
        .iter()
        .map(|c| track_miou(c, gt))
        .collect::<Result<_>>()?;
    let y = miou.iter().map(|&m| m > tau_label).collect();
    Ok(PseudoLabels { y, miou, tau_label })
}

/// Adds the learnable negative anchors, N_neg x D with entries
/// Gaussian(0, 1/sqrt(D)), to the store.
pub fn init_anchor_bank<F: Scalar>(
    store: &mut ParamStore<F>,
    n_neg: usize,
    dim: usize,
    seed: u64,
) -> Result<()> {
    if n_neg == 0 || dim == 0 {
        return Err(Error::config(format!(
            "anchor bank needs n_neg and dim >= 1, got {n_neg}x{dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ANCHOR_STREAM);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid stddev");
    let data = (0..n_neg * dim)
        .map(|_| F::from_f64(normal.sample(&mut rng)))
        .collect();
    store.add(ANCHOR_PARAM, Tensor::new(vec![n_neg, dim], data)?)?;
    Ok(())
}

/// Positive anchor: arithmetic mean over the projected word tokens.
pub fn positive_anchor<F: Scalar>(g: &mut Graph<F>, text_projected: NodeId) -> Result<NodeId> {
    g.mean_axis(text_projected, 0)
}

/// Mean binary cross-entropy of scores against fixed labels.
pub fn bce_loss<F: Scalar>(g: &mut Graph<F>, s_a: NodeId, y: &[bool]) -> Result<NodeId> {
    let n = g.value(s_a).len();
    if n != y.len() || n == 0 {
        return Err(Error::shape(format!("{n} scores for {} labels", y.len())));
    }
    let shape = g.value(s_a).shape().to_vec();
    let as_input = |g: &mut Graph<F>, f: &dyn Fn(bool) -> f64| -> Result<NodeId> {
        let data = y.iter().map(|&b| F::from_f64(f(b))).collect();
        g.input(Tensor::new(shape.clone(), data)?)
    };
    let y_pos = as_input(g, &|b| if b { 1.0 } else { 0.0 })?;
    let y_neg = as_input(g, &|b| if b { 0.0 } else { 1.0 })?;
    let s = g.clamp(s_a, LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS)?;
    let ln_s = g.ln(s)?;
    let pos = g.mul(y_pos, ln_s)?;
    let om_s = g.affine(s, -1.0, 1.0)?;
    let ln_om = g.ln(om_s)?;
    let neg = g.mul(y_neg, ln_om)?;
    let sum = g.add(pos, neg)?;
    let mean = g.mean_all(sum)?;
    g.affine(mean, -1.0, 0.0)
}

/// Orientation of the alignment loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignSign {
    /// Minimizing pulls positives toward the text anchor (default).
    IntentConsistent,
    /// The formula as printed (leading minus), provided for comparison.
    PrintedFormula,
}

impl AlignSign {
    pub fn factor(self) -> f64 {
        match self {
            AlignSign::IntentConsistent => 1.0,
            AlignSign::PrintedFormula => -1.0,
        }
    }
}

/// Contrastive alignment loss over aligned tokens o_a (N x D) against the
/// positive anchor a_p (length D) and negative anchors (N_neg x D).
///
/// Positive samples: d(o, a_p) - sum_j d(o, A_j). Negative samples:
/// d(o, A_k*) - d(o, a_p) - sum_{j != k*} d(o, A_j), where k* is the nearest
/// negative anchor (ties to the lowest index) and d = 1 - cosine.
pub fn alignment_loss<F: Scalar>(
    g: &mut Graph<F>,
    o_a: NodeId,
    y: &[bool],
    a_p: NodeId,
    anchors: NodeId,
    sign: AlignSign,
) -> Result<NodeId> {
    let oshape = g.value(o_a).shape().to_vec();
    let ashape = g.value(anchors).shape().to_vec();
    if oshape.len() != 2 || oshape[0] != y.len() || oshape[0] == 0 {
        return Err(Error::shape(format!(
            "aligned tokens shape {oshape:?} does not match {} labels",
            y.len()
        )));
    }
    if ashape.len() != 2 || ashape[1] != oshape[1] {
        return Err(Error::shape(format!(
            "anchor shape {ashape:?} incompatible with token dim {}",
            oshape[1]
        )));
    }
    let n_neg = ashape[0];
    if n_neg == 0 {
        return Err(Error::config("alignment loss needs at least one negative anchor"));
    }
    let neg_rows: Vec<NodeId> = (0..n_neg)
        .map(|j| g.slice_rows(anchors, j, j + 1))
        .collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(y.len());
    for (i, &positive) in y.iter().enumerate() {
        let o = g.slice_rows(o_a, i, i + 1)?;
        let cos_p = g.cosine_sim(o, a_p)?;
        let d_p = g.affine(cos_p, -1.0, 1.0)?;
        let d_neg: Vec<NodeId> = neg_rows
            .iter()
            .map(|&a| {
                let c = g.cosine_sim(o, a)?;
                g.affine(c, -1.0, 1.0)
            })
            .collect::<Result<_>>()?;
        let stacked = g.stack_scalars(&d_neg)?;
        let neg_sum = g.sum_all(stacked)?;
        let term = if positive {
            g.sub(d_p, neg_sum)?
        } else {
            // Nearest anchor by value, ties to the lowest index.
            let mut k_star = 0;
            for (j, &d) in d_neg.iter().enumerate() {
                if g.value(d).item()?.as_f64() < g.value(d_neg[k_star]).item()?.as_f64() {
                    k_star = j;
                }
            }
            // d_k* - d_p - (sum - d_k*) written as 2 d_k* - d_p - sum.
            let twice = g.affine(d_neg[k_star], 2.0, 0.0)?;
            let less_p = g.sub(twice, d_p)?;
            g.sub(less_p, neg_sum)?
        };
        terms.push(term);
    }
    let stacked = g.stack_scalars(&terms)?;
    let mean = g.mean_all(stacked)?;
    g.affine(mean, sign.factor(), 0.0)
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 0.3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config(format!(
                "loss weights must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Component nodes of a built loss, for logging.
pub struct LossNodes {
    pub total: NodeId,
    pub bce: NodeId,
    pub align: Option<NodeId>,
}

/// lambda1 * BCE + lambda2 * alignment. A zero lambda2 skips the alignment
/// graph entirely so the total equals the BCE term exactly.
pub fn total_loss<F: Scalar>(
    g: &mut Graph<F>,
    s_a: NodeId,
    o_a: NodeId,
    y: &[bool],
    a_p: NodeId,
    anchors: NodeId,
    weights: LossWeights,
    sign: AlignSign,
) -> Result<LossNodes> {
    weights.validate()?;
    let bce = bce_loss(g, s_a, y)?;
    if weights.lambda2 == 0.0 {
        let total = if weights.lambda1 == 1.0 {
            bce
        } else {
            g.affine(bce, weights.lambda1, 0.0)?
        };
        return Ok(LossNodes { total, bce, align: None });
    }
    let align = alignment_loss(g, o_a, y, a_p, anchors, sign)?;
    let total = if weights.lambda1 == 0.0 {
        if weights.lambda2 == 1.0 {
            align
        } else {
            g.affine(align, weights.lambda2, 0.0)?
        }
    } else {
        let b = g.affine(bce, weights.lambda1, 0.0)?;
        let a = g.affine(align, weights.lambda2, 0.0)?;
        g.add(b, a)?
    };
    Ok(LossNodes { total, bce, align: Some(align) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::test_support::rect_mask;
    use crate::mask::RleMask;
    use rand::Rng;

    fn one_frame_track(id: &str, mask: RleMask) -> MaskTrack {
        MaskTrack::new(id.to_string(), vec![mask]).unwrap()
    }

    #[test]
    fn labels_threshold_strictly() {
        // Ground truth: a 10-cell row. Subset candidates give exact mIoUs.
        let gt = one_frame_track("gt", rect_mask(4, 10, 0, 1, 0, 10));
        let cand = |cells: u32| one_frame_track("c", rect_mask(4, 10, 0, 1, 0, cells));
        let tracks = TrackSet::new(
            "v".into(),
            vec![
                one_frame_track("a", rect_mask(4, 10, 0, 1, 0, 9)),
                one_frame_track("b", rect_mask(4, 10, 0, 1, 0, 4)),
                one_frame_track("c", rect_mask(4, 10, 0, 1, 0, 6)),
            ],
        )
        .unwrap();
        let labels = make_pseudo_labels(&tracks, &gt, 0.5).unwrap();
        assert_eq!(labels.miou, vec![0.9, 0.4, 0.6]);
        assert_eq!(labels.y, vec![true, false, true]);
        assert_eq!(labels.positives(), 2);

        // Identical candidate is positive; exact-half overlap is negative.
        let ts = TrackSet::new("v".into(), vec![gt.frames()[0].clone()].into_iter().map(|m| one_frame_track("t", m)).collect()).unwrap();
        assert_eq!(make_pseudo_labels(&ts, &gt, 0.5).unwrap().y, vec![true]);
        let half = TrackSet::new("v".into(), vec![cand(5)]).unwrap();
        let labels = make_pseudo_labels(&half, &gt, 0.5).unwrap();
        assert_eq!(labels.miou, vec![0.5]);
        assert_eq!(labels.y, vec![false]);

        // tau = 1.0 rejects even a perfect candidate.
        let perfect = TrackSet::new("v".into(), vec![cand(10)]).unwrap();
        assert_eq!(make_pseudo_labels(&perfect, &gt, 1.0).unwrap().y, vec![false]);

        assert_eq!(make_pseudo_labels(&perfect, &gt, 0.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn positive_anchor_is_the_word_mean() {
        let mut g: Graph<f64> = Graph::new();
        let single = g.input(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let a = positive_anchor(&mut g, single).unwrap();
        assert_eq!(g.value(a).data(), &[1.0, 2.0, 3.0]);

        let two = g.input(Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.5, -1.0]).unwrap()).unwrap();
        let a = positive_anchor(&mut g, two).unwrap();
        assert_eq!(g.value(a).data(), &[0.5, -1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = g.input(Tensor::new(vec![3, 4], vals.clone()).unwrap()).unwrap();
        let a = positive_anchor(&mut g, m).unwrap();
        for j in 0..4 {
            let want = (vals[j] + vals[4 + j] + vals[8 + j]) / 3.0;
            assert!((g.value(a).data()[j] - want).abs() < 1e-15);
        }
    }

    fn eval_bce(scores: &[f64], y: &[bool]) -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let s = g.input(Tensor::new(vec![scores.len()], scores.to_vec()).unwrap()).unwrap();
        let loss = bce_loss(&mut g, s, y).unwrap();
        g.value(loss).item().unwrap()
    }

    #[test]
    fn bce_closed_forms() {
        assert!((eval_bce(&[0.5], &[true]) - std::f64::consts::LN_2).abs() < 1e-12);
        // A near-certain score clamps to 1 - eps, flooring the loss near eps.
        assert!(eval_bce(&[1.0 - 1e-9], &[true]) < 2.0 * LOG_CLAMP_EPS);
        let want = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((eval_bce(&[0.9, 0.2], &[true, false]) - want).abs() < 1e-12);
        // Clamp keeps the worst case finite.
        let worst = eval_bce(&[1.0], &[false]);
        assert!(worst.is_finite() && (worst + LOG_CLAMP_EPS.ln()).abs() < 1e-9);
        assert!(eval_bce(&[0.3, 0.7], &[false, true]) >= 0.0);
    }

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn eval_align(
        o_a: (usize, usize, Vec<f64>),
        y: &[bool],
        a_p: Vec<f64>,
        anchors: (usize, Vec<f64>),
        sign: AlignSign,
    ) -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let (n, d, ov) = o_a;
        let o = g.input(Tensor::new(vec![n, d], ov).unwrap()).unwrap();
        let p = g.input(Tensor::new(vec![d], a_p).unwrap()).unwrap();
        let a = g.input(Tensor::new(vec![anchors.0, d], anchors.1).unwrap()).unwrap();
        let loss = alignment_loss(&mut g, o, y, p, a, sign).unwrap();
        g.value(loss).item().unwrap()
    }

    #[test]
    fn alignment_closed_forms() {
        // Positive sample sitting on the anchor, one orthogonal negative.
        let v = eval_align((1, 4, unit(4, 0)), &[true], unit(4, 0), (1, unit(4, 1)), AlignSign::IntentConsistent);
        assert!((v + 1.0).abs() < 1e-12);
        let printed = eval_align((1, 4, unit(4, 0)), &[true], unit(4, 0), (1, unit(4, 1)), AlignSign::PrintedFormula);
        assert!((printed - 1.0).abs() < 1e-12);

        // Negative sample sitting on the only negative anchor.
        let v = eval_align((1, 4, unit(4, 2)), &[false], unit(4, 0), (1, unit(4, 2)), AlignSign::IntentConsistent);
        assert!((v + 1.0).abs() < 1e-12);
    }

    /// Direct evaluation of the per-sample formulas with plain arithmetic.
    fn brute_force_align(o: &[Vec<f64>], y: &[bool], p: &[f64], a: &[Vec<f64>], sign: f64) -> f64 {
        let d = |x: &[f64], z: &[f64]| {
            let dot: f64 = x.iter().zip(z).map(|(u, v)| u * v).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            1.0 - dot / (nx * nz)
        };
        let mut total = 0.0;
        for (oi, &pos) in o.iter().zip(y) {
            let dp = d(oi, p);
            let dn: Vec<f64> = a.iter().map(|aj| d(oi, aj)).collect();
            total += if pos {
                dp - dn.iter().sum::<f64>()
            } else {
                let mut k = 0;
                for (j, &v) in dn.iter().enumerate() {
                    if v < dn[k] {
                        k = j;
                    }
                }
                dn[k] - dp - (dn.iter().sum::<f64>() - dn[k])
            };
        }
        sign * total / o.len() as f64
    }

    #[test]
    fn alignment_matches_direct_formula_and_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..100 {
            let (n, n_neg, d) = (4, 3, 6);
            let mut gen = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let o: Vec<Vec<f64>> = (0..n).map(|_| gen(d)).collect();
            let p = gen(d);
            let a: Vec<Vec<f64>> = (0..n_neg).map(|_| gen(d)).collect();
            let y: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            let flat_o: Vec<f64> = o.iter().flatten().copied().collect();
            let flat_a: Vec<f64> = a.iter().flatten().copied().collect();
            let got = eval_align((n, d, flat_o.clone()), &y, p.clone(), (n_neg, flat_a.clone()), AlignSign::IntentConsistent);
            let want = brute_force_align(&o, &y, &p, &a, 1.0);
            assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");

            for alpha in [0.5, 2.0, 10.0] {
                let scaled: Vec<f64> = flat_o.iter().map(|v| alpha * v).collect();
                let s = eval_align((n, d, scaled), &y, p.clone(), (n_neg, flat_a.clone()), AlignSign::IntentConsistent);
                assert!((s - got).abs() < 1e-9, "alpha {alpha}");
            }
        }
    }

    #[test]
    fn nearest_anchor_tie_takes_lowest_index() {
        // Two identical anchors: index 0 must receive the pull-toward
        // gradient (coefficient +1), index 1 the push-away (-1).
        let mut store: ParamStore<f64> = ParamStore::new(0);
        let a = vec![1.0, 0.0, 1.0, 0.0];
        store.add(ANCHOR_PARAM, Tensor::new(vec![2, 2], a).unwrap()).unwrap();
        let mut g: Graph<f64> = Graph::new();
        let o = g.input(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        let p = g.input(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).unwrap();
        let anchors = g.param(&store, ANCHOR_PARAM).unwrap();
        let loss = alignment_loss(&mut g, o, &[false], p, anchors, AlignSign::IntentConsistent).unwrap();
        let grads = g.backward(loss).unwrap();
        store.assign_grads(grads).unwrap();
        let grad = store.grad_by_name(ANCHOR_PARAM).unwrap();
        // d(o, A_j) is identical for both rows, so the gradient rows must be
        // exact negatives of each other: (2-1) vs (-1) times the same local.
        for j in 0..2 {
            assert!((grad.at2(0, j) + grad.at2(1, j)).abs() < 1e-12);
        }
        assert!(grad.data().iter().any(|&v| v.abs() > 1e-9));
    }

    #[test]
    fn positive_gradient_step_decreases_anchor_distance() {
        let mut store: ParamStore<f64> = ParamStore::new(0);
        store.add("o_a", Tensor::new(vec![1, 3], vec![0.2, -0.4, 0.9]).unwrap()).unwrap();
        let p_vec = vec![0.7, 0.1, -0.3];
        let a_vec = vec![-0.5, 0.8, 0.1];
        let dist = |o: &[f64]| {
            let dot: f64 = o.iter().zip(&p_vec).map(|(a, b)| a * b).sum();
            let no = o.iter().map(|v| v * v).sum::<f64>().sqrt();
            let np = p_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            1.0 - dot / (no * np)
        };
        let before = {
            let mut g: Graph<f64> = Graph::new();
            let o = g.param(&store, "o_a").unwrap();
            let p = g.input(Tensor::new(vec![3], p_vec.clone()).unwrap()).unwrap();
            let a = g.input(Tensor::new(vec![1, 3], a_vec.clone()).unwrap()).unwrap();
            let loss = alignment_loss(&mut g, o, &[true], p, a, AlignSign::IntentConsistent).unwrap();
            let grads = g.backward(loss).unwrap();
            store.assign_grads(grads).unwrap();
            dist(store.get("o_a").unwrap().data())
        };
        let step = 1e-3;
        let updated: Vec<f64> = store
            .get("o_a")
            .unwrap()
            .data()
            .iter()
            .zip(store.grad_by_name("o_a").unwrap().data())
            .map(|(v, g)| v - step * g)
            .collect();
        assert!(dist(&updated) < before);
    }

    #[test]
    fn total_combines_components_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3;
        let d = 4;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let o: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = [true, false, true];

        let build = |w: LossWeights| -> (f64, f64, Option<f64>) {
            let mut g: Graph<f64> = Graph::new();
            let s = g.input(Tensor::new(vec![n], scores.clone()).unwrap()).unwrap();
            let on = g.input(Tensor::new(vec![n, d], o.clone()).unwrap()).unwrap();
            let pn = g.input(Tensor::new(vec![d], p.clone()).unwrap()).unwrap();
            let an = g.input(Tensor::new(vec![2, d], a.clone()).unwrap()).unwrap();
            let nodes = total_loss(&mut g, s, on, &y, pn, an, w, AlignSign::IntentConsistent).unwrap();
            (
                g.value(nodes.total).item().unwrap(),
                g.value(nodes.bce).item().unwrap(),
                nodes.align.map(|id| g.value(id).item().unwrap()),
            )
        };

        let (total, bce, align) = build(LossWeights::default());
        let align = align.unwrap();
        assert!((total - (1.0 * bce + 0.3 * align)).abs() < 1e-15);

        let (only_bce, bce2, align2) = build(LossWeights { lambda1: 1.0, lambda2: 0.0 });
        assert_eq!(only_bce, bce2);
        assert!(align2.is_none());

        let (only_align, _, _) = build(LossWeights { lambda1: 0.0, lambda2: 1.0 });
        assert_eq!(only_align, align);

        assert_eq!(
            LossWeights { lambda1: -0.1, lambda2: 0.3 }.validate().unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn anchor_bank_is_deterministic_and_sized() {
        let mut s1: ParamStore<f32> = ParamStore::new(7);
        let mut s2: ParamStore<f32> = ParamStore::new(7);
        init_anchor_bank(&mut s1, 5, 8, 7).unwrap();
        init_anchor_bank(&mut s2, 5, 8, 7).unwrap();
        assert_eq!(s1.get(ANCHOR_PARAM).unwrap().data(), s2.get(ANCHOR_PARAM).unwrap().data());
        assert_eq!(s1.get(ANCHOR_PARAM).unwrap().shape(), &[5, 8]);
        let mut s3: ParamStore<f32> = ParamStore::new(7);
        assert_eq!(init_anchor_bank(&mut s3, 0, 8, 7).unwrap_err().exit_code(), 2);
    }
}
