//! Verifies analytic gradients of the full training loss against central
//! finite differences in 64-bit, over every parameter coordinate.
//!
//! Usage: grad_check

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sola::data::{TextEmbedding, TokenSet};
use sola::selector::{init_params, SelectorConfig};
use sola::supervision::init_anchor_bank;
use sola::tensor::{grad_check, CoordinateSample, LossEval};
use sola::trainer::{loss_eval, TrainConfig};

fn main() -> sola::Result<()> {
    let cfg = SelectorConfig {
        dim: 12,
        text_dim: 16,
        layers: 1,
        heads: 2,
        conv_layers: 1,
        ..SelectorConfig::default()
    };
    let tc = TrainConfig {
        n_neg: 3,
        ..TrainConfig::default()
    };
    let (n, t, n_w) = (4, 6, 3);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut normal = |len: usize| -> Vec<f32> {
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
    };
    let tokens = TokenSet::new(
        (0..n).map(|i| format!("t{i}")).collect(),
        t,
        cfg.dim,
        normal(n * t * cfg.dim),
    )?;
    let text = TextEmbedding::new(
        "e0".into(),
        "example".into(),
        n_w,
        cfg.text_dim,
        normal(n_w * cfg.text_dim),
    )?;
    let y: Vec<bool> = (0..n).map(|i| i == 1).collect();

    let mut params = init_params::<f64>(&cfg, 9)?;
    init_anchor_bank(&mut params, tc.n_neg, cfg.dim, 9)?;

    let mut f = |p: &sola::tensor::ParamStore<f64>| -> sola::Result<LossEval> {
        let (value, grads) = loss_eval(p, &tokens, &text, &y, &cfg, tc.weights, tc.align_sign)?;
        Ok(LossEval { value, grads })
    };
    let report = grad_check(&mut f, &params, 1e-5, CoordinateSample::All)?;

    println!(
        "checked {} coordinates; max relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    if let Some((name, i, analytic, numeric)) = &report.worst {
        println!("worst: {name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    assert!(report.max_rel_err < 1e-4, "gradients disagree with finite differences");
    Ok(())
}
