//! Evaluates a trained checkpoint over a corpus, optionally overriding the
//! selection threshold.
//!
//! Usage: evaluate_checkpoint <checkpoint> <corpus-dir> [tau_select]

use std::path::Path;

use sola::data::load_corpus;
use sola::eval::{evaluate_with, render_report, EvalOptions};
use sola::selector::forward;
use sola::trainer::{checkpoint_bits, load_checkpoint};

fn main() -> sola::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: evaluate_checkpoint <checkpoint> <corpus-dir> [tau_select]");
        std::process::exit(2);
    }
    let ckpt_path = Path::new(&args[1]);
    let corpus = load_corpus(Path::new(&args[2]))?;
    let tau: Option<f64> = args.get(3).map(|s| s.parse().expect("tau is a number"));
    let opts = EvalOptions::default();

    // Checkpoints record their scalar width; dispatch on it.
    let report = match checkpoint_bits(ckpt_path)? {
        64 => {
            let ckpt = load_checkpoint::<f64>(ckpt_path)?;
            let mut cfg = ckpt.selector_cfg.clone();
            if let Some(t) = tau {
                cfg.tau_select = t;
            }
            evaluate_with(&corpus, &cfg, &opts, |tokens, _, expr| {
                Ok(forward(tokens, &expr.embedding, &ckpt.params, &cfg)?.scores)
            })?
        }
        _ => {
            let ckpt = load_checkpoint::<f32>(ckpt_path)?;
            let mut cfg = ckpt.selector_cfg.clone();
            if let Some(t) = tau {
                cfg.tau_select = t;
            }
            evaluate_with(&corpus, &cfg, &opts, |tokens, _, expr| {
                Ok(forward(tokens, &expr.embedding, &ckpt.params, &cfg)?.scores)
            })?
        }
    };
    print!("{}", render_report(&report));
    Ok(())
}
