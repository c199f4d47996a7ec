//! Multi-head scaled dot-product attention, composed from tape primitives so
//! reverse-mode differentiation falls out of the existing op set.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, NodeId, ParamStore};
use crate::tensor::Scalar;

/// Projection parameter nodes for one attention block: query/key/value/output
/// weights (each D×D) with matching biases (each length D).
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

impl AttentionParams {
    /// Loads the eight projection tensors named `<prefix>.{wq,bq,...}` onto
    /// the tape.
    pub fn load<F: Scalar>(g: &mut Graph<F>, store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            wq: g.param(store, &format!("{prefix}.wq"))?,
            bq: g.param(store, &format!("{prefix}.bq"))?,
            wk: g.param(store, &format!("{prefix}.wk"))?,
            bk: g.param(store, &format!("{prefix}.bk"))?,
            wv: g.param(store, &format!("{prefix}.wv"))?,
            bv: g.param(store, &format!("{prefix}.bv"))?,
            wo: g.param(store, &format!("{prefix}.wo"))?,
            bo: g.param(store, &format!("{prefix}.bo"))?,
        })
    }
}

/// softmax(QKᵀ/√(D/heads))·V per head, heads concatenated and output-projected.
///
/// `q` is Lq×D, `k` and `v` are Lk×D with a shared Lk. Output is Lq×D.
pub fn multihead_attention<F: Scalar>(
    g: &mut Graph<F>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    params: &AttentionParams,
    heads: usize,
) -> Result<NodeId> {
    let d = g.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "attention width {d} not divisible into {heads} heads"
        )));
    }
    if g.value(k).cols() != d || g.value(v).cols() != d {
        return Err(Error::shape(format!(
            "attention width mismatch: q {d}, k {}, v {}",
            g.value(k).cols(),
            g.value(v).cols()
        )));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::shape(format!(
            "key/value length mismatch: {} vs {}",
            g.value(k).rows(),
            g.value(v).rows()
        )));
    }
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let qp = {
        let mm = g.matmul(q, params.wq)?;
        g.add_row_bias(mm, params.bq)?
    };
    let kp = {
        let mm = g.matmul(k, params.wk)?;
        g.add_row_bias(mm, params.bk)?
    };
    let vp = {
        let mm = g.matmul(v, params.wv)?;
        g.add_row_bias(mm, params.bv)?
    };

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(qp, lo, hi)?;
        let kh = g.slice_cols(kp, lo, hi)?;
        let vh = g.slice_cols(vp, lo, hi)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let scaled = g.affine(logits, scale, 0.0)?;
        let weights = g.softmax(scaled, 1)?;
        head_outputs.push(g.matmul(weights, vh)?);
    }
    let merged = g.concat_cols(&head_outputs)?;
    let out = g.matmul(merged, params.wo)?;
    g.add_row_bias(out, params.bo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn identity_params(g: &mut Graph<f64>, store: &mut ParamStore<f64>, d: usize) -> AttentionParams {
        let eye =
            Tensor::matrix(d, d, (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect())
                .unwrap();
        let zero = Tensor::vector(vec![0.0; d]);
        for name in ["wq", "wk", "wv", "wo"] {
            store.add(&format!("attn.{name}"), eye.clone()).unwrap();
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.add(&format!("attn.{name}"), zero.clone()).unwrap();
        }
        AttentionParams::load(g, store, "attn").unwrap()
    }

    fn random_params(
        g: &mut Graph<f64>,
        store: &mut ParamStore<f64>,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> AttentionParams {
        for name in ["wq", "wk", "wv", "wo"] {
            let w = rand_mat(rng, d, d);
            store.add(&format!("attn.{name}"), w).unwrap();
        }
        for name in ["bq", "bk", "bv", "bo"] {
            let b = Tensor::vector((0..d).map(|_| rng.gen_range(-0.5..0.5)).collect());
            store.add(&format!("attn.{name}"), b).unwrap();
        }
        AttentionParams::load(g, store, "attn").unwrap()
    }

    #[test]
    fn single_key_returns_projected_value_for_any_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 8;
        let mut g = Graph::new();
        let mut store = ParamStore::new(0);
        let params = identity_params(&mut g, &mut store, d);
        let k = g.input(rand_mat(&mut rng, 1, d)).unwrap();
        let v = g.input(rand_mat(&mut rng, 1, d)).unwrap();
        let q1 = g.input(rand_mat(&mut rng, 3, d)).unwrap();
        let y = multihead_attention(&mut g, q1, k, v, &params, 2).unwrap();
        // Softmax over one key is 1, so every query row gets v (identity projections).
        for i in 0..3 {
            for j in 0..d {
                assert!((g.value(y).at2(i, j) - g.value(v).at2(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_keys_give_uniform_weights_and_mean_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let mut g = Graph::new();
        let mut store = ParamStore::new(0);
        let params = identity_params(&mut g, &mut store, d);
        let key_row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut kdata = Vec::new();
        for _ in 0..3 {
            kdata.extend_from_slice(&key_row);
        }
        let k = g.input(Tensor::matrix(3, d, kdata).unwrap()).unwrap();
        let v = g.input(rand_mat(&mut rng, 3, d)).unwrap();
        let q = g.input(rand_mat(&mut rng, 2, d)).unwrap();
        let y = multihead_attention(&mut g, q, k, v, &params, 2).unwrap();
        for i in 0..2 {
            for j in 0..d {
                let mean = (g.value(v).at2(0, j) + g.value(v).at2(1, j) + g.value(v).at2(2, j)) / 3.0;
                assert!((g.value(y).at2(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    /// Unbatched dense reference: explicit Q/K/V projections, per-head
    /// softmax over scaled scores, concat, output projection.
    fn reference(
        q: &Tensor<f64>,
        k: &Tensor<f64>,
        v: &Tensor<f64>,
        w: &ParamStore<f64>,
        heads: usize,
    ) -> Vec<f64> {
        let d = q.cols();
        let hd = d / heads;
        let proj = |x: &Tensor<f64>, wname: &str, bname: &str| -> Vec<f64> {
            let wt = w.get(wname).unwrap();
            let bt = w.get(bname).unwrap();
            let mut out = vec![0.0; x.rows() * d];
            for i in 0..x.rows() {
                for j in 0..d {
                    let mut acc = bt.data()[j];
                    for t in 0..d {
                        acc += x.at2(i, t) * wt.at2(t, j);
                    }
                    out[i * d + j] = acc;
                }
            }
            out
        };
        let qp = proj(q, "attn.wq", "attn.bq");
        let kp = proj(k, "attn.wk", "attn.bk");
        let vp = proj(v, "attn.wv", "attn.bv");
        let (lq, lk) = (q.rows(), k.rows());
        let mut merged = vec![0.0; lq * d];
        for h in 0..heads {
            for i in 0..lq {
                let mut scores = vec![0.0f64; lk];
                for j in 0..lk {
                    let mut acc = 0.0;
                    for t in 0..hd {
                        acc += qp[i * d + h * hd + t] * kp[j * d + h * hd + t];
                    }
                    scores[j] = acc / (hd as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for t in 0..hd {
                    let mut acc = 0.0;
                    for j in 0..lk {
                        acc += (scores[j] - m).exp() / denom * vp[j * d + h * hd + t];
                    }
                    merged[i * d + h * hd + t] = acc;
                }
            }
        }
        let wo = w.get("attn.wo").unwrap();
        let bo = w.get("attn.bo").unwrap();
        let mut out = vec![0.0; lq * d];
        for i in 0..lq {
            for j in 0..d {
                let mut acc = bo.data()[j];
                for t in 0..d {
                    acc += merged[i * d + t] * wo.at2(t, j);
                }
                out[i * d + j] = acc;
            }
        }
        out
    }

    #[test]
    fn random_case_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (l, d, heads) = (4, 16, 2);
        let mut g = Graph::new();
        let mut store = ParamStore::new(0);
        let params = random_params(&mut g, &mut store, d, &mut rng);
        let x = rand_mat(&mut rng, l, d);
        let xn = g.input(x.clone()).unwrap();
        let y = multihead_attention(&mut g, xn, xn, xn, &params, heads).unwrap();
        let want = reference(&x, &x, &x, &store, heads);
        for (got, want) in g.value(y).data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn indivisible_head_count_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 6;
        let mut g = Graph::new();
        let mut store = ParamStore::new(0);
        let params = identity_params(&mut g, &mut store, d);
        let x = g.input(rand_mat(&mut rng, 2, d)).unwrap();
        let err = multihead_attention(&mut g, x, x, x, &params, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
