//! Command-line pipeline: synthesize corpora, label, train, evaluate,
//! select, deduplicate, analyze, and verify gradients.
//!
//! Exit codes: 0 success, 2 config error, 3 IO or format error, 4 numerical
//! failure. Every command writes the effective config as `run_config.toml`
//! next to its artifacts, and a rerun with identical inputs and seeds
//! produces byte-identical outputs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::io::atomic_write;
use crate::data::{
    generate_synthetic, load_corpus, save_corpus, save_tracks, strip_background, Corpus,
    TextEmbedding, TokenSet, VideoData,
};
use crate::error::{Error, Result};
use crate::eval::{
    corpus_similarity_analysis, evaluate, evaluate_with, render_report, render_similarity,
    report_records, EvalReport, TokenPooling,
};
use crate::mask::{dedup_tracks, track_miou, TrackSet};
use crate::selector::{forward, init_params, select, SelectorConfig};
use crate::supervision::{init_anchor_bank, make_pseudo_labels, AlignSign, LossWeights};
use crate::tensor::{grad_check, CoordinateSample, LossEval, ParamStore, Scalar};
use crate::trainer::{checkpoint_bits, load_checkpoint, loss_eval, resume, train, Checkpoint};

#[derive(Parser)]
#[command(
    name = "sola",
    version,
    about = "Language-aligned track selection: score candidate object-token tracks against a \
             text embedding, select, merge, and evaluate mask tracks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it to a directory
    Synth(SynthArgs),
    /// Write mIoU pseudo-labels for every expression of a corpus
    PseudoLabel(PseudoLabelArgs),
    /// Train the selection module on a corpus
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the mIoU oracle) over a corpus
    Eval(EvalArgs),
    /// Write the merged selected mask track for every expression
    Select(SelectArgs),
    /// Drop near-duplicate candidate tracks from a corpus
    Dedup(DedupArgs),
    /// Relate token cosine similarity to track overlap across a corpus
    Analyze(AnalyzeArgs),
    /// Verify analytic gradients of the full model against finite differences
    Gradcheck(GradcheckArgs),
}

/// Config layering shared by every data-touching command. Precedence:
/// preset, then --config file, then SOLA_* environment, then --set flags.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML config file overlaying the preset
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Starting point: `synthetic` (desk-scale, the default) or `paper`
    #[arg(long, value_name = "NAME", conflicts_with = "paper_defaults")]
    preset: Option<String>,
    /// Run with the published reference defaults alone, ignoring config
    /// file, environment, and preset
    #[arg(long)]
    paper_defaults: bool,
    /// Override one key, e.g. --set train.epochs=4 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective config as TOML and exit
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        if self.paper_defaults {
            if self.config.is_some() || !self.set.is_empty() {
                return Err(Error::config(
                    "--paper-defaults runs the reference defaults alone; drop --config/--set",
                ));
            }
            return Ok(RunConfig::default());
        }
        let mut cfg = match self.preset.as_deref() {
            Some(name) => RunConfig::preset(name)?,
            None => RunConfig::synthetic_preset(),
        };
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env(std::env::vars())?;
        for a in &self.set {
            cfg.apply_assignment(a)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output corpus directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Corpus RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override data.scenes
    #[arg(long)]
    scenes: Option<usize>,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus directory
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output directory; defaults to the corpus directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override supervision.tau_label
    #[arg(long, value_name = "TAU")]
    tau_label: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Training corpus directory
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output directory for checkpoints and the step log
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Continue from this checkpoint instead of initializing fresh
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Parameter precision: 32 or 64
    #[arg(long, default_value_t = 32)]
    bits: u32,
    /// Override train.epochs
    #[arg(long)]
    epochs: Option<u32>,
    /// Override train.seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus directory to evaluate on
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Trained checkpoint to score with
    #[arg(long, value_name = "FILE", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Score candidates by their true mask mIoU instead of a checkpoint
    #[arg(long)]
    oracle: bool,
    /// Directory for report.jsonl; omit to print only
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override eval.jobs (worker threads; 0 = global pool)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus directory
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Directory for per-expression merged-track files
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus directory
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output directory for the filtered corpus
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override eval.dedup_theta
    #[arg(long, value_name = "THETA")]
    theta: Option<f64>,
    /// Frame whose IoU decides duplication
    #[arg(long, default_value_t = 0)]
    prompt_frame: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus directory
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Directory for similarity.json; omit to print only
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Token pooling: temporal_mean or last_frame
    #[arg(long, default_value = "temporal_mean")]
    pooling: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Candidate tracks
    #[arg(long, default_value_t = 5)]
    tracks: usize,
    /// Input frames
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Token and model width
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Words in the text embedding
    #[arg(long, default_value_t = 4)]
    words: usize,
    /// Word-embedding width
    #[arg(long, default_value_t = 24)]
    text_dim: usize,
    /// Transformer layers
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Attention heads
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Negative anchors
    #[arg(long, default_value_t = 4)]
    n_neg: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Coordinates to difference; 0 checks every coordinate
    #[arg(long, default_value_t = 0)]
    coords: usize,
    /// Parameter and input seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest tolerated relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Parses argv, appending the config-key listing to every help screen.
pub fn run() -> ExitCode {
    let keys = RunConfig::describe_keys().unwrap_or_default();
    let after = format!(
        "Config keys (set in a --config TOML file, as SOLA_<SECTION>_<KEY> environment \
         variables, or via --set; defaults shown):\n{keys}"
    );
    let cmd = Cli::command()
        .after_help(after.clone())
        .mut_subcommands(|s| s.after_help(after.clone()));
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::PseudoLabel(a) => cmd_pseudo_label(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Select(a) => cmd_select(a),
        Command::Dedup(a) => cmd_dedup(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("{flag} is required")))
}

/// Writes the effective config next to a command's artifacts.
fn write_echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    atomic_write(&dir.join("run_config.toml"), cfg.render()?.as_bytes())
}

/// Candidate tokens and tracks as the selector sees them.
fn candidates(v: &VideoData, include_background: bool) -> Result<(TokenSet, TrackSet)> {
    if include_background {
        Ok((v.tokens.clone(), v.tracks.clone()))
    } else {
        strip_background(&v.tokens, &v.tracks)
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(s) = a.scenes {
        cfg.data.scenes = s;
    }
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let out = required(a.out, "--out")?;
    cfg.data.validate()?;
    let corpus = generate_synthetic(&cfg.data, a.seed)?;
    save_corpus(&corpus, &out)?;
    write_echo(&cfg, &out)?;
    let tracks: usize = corpus.videos.iter().map(|v| v.tracks.len()).sum();
    println!(
        "seed {}: {} videos, {} expressions, {} candidate tracks -> {}",
        a.seed,
        corpus.videos.len(),
        corpus.n_expressions(),
        tracks,
        out.display()
    );
    Ok(())
}

fn cmd_pseudo_label(a: PseudoLabelArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(t) = a.tau_label {
        cfg.supervision.tau_label = t;
    }
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let corpus_dir = required(a.corpus, "--corpus")?;
    let corpus = load_corpus(&corpus_dir)?;
    let out = a.out.unwrap_or(corpus_dir);
    let tau = cfg.supervision.tau_label;
    let mut lines = String::new();
    let (mut expressions, mut positives, mut total) = (0u64, 0u64, 0u64);
    for v in &corpus.videos {
        for e in &v.expressions {
            let labels = make_pseudo_labels(&v.tracks, &e.gt_track, tau)?;
            expressions += 1;
            positives += labels.positives() as u64;
            total += labels.y.len() as u64;
            lines.push_str(
                &json!({
                    "record": "labels", "video": v.video_id, "expression": e.expression_id,
                    "tau_label": labels.tau_label, "labels": labels.y, "miou": labels.miou,
                })
                .to_string(),
            );
            lines.push('\n');
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    atomic_write(&out.join("labels.jsonl"), lines.as_bytes())?;
    write_echo(&cfg, &out)?;
    println!(
        "{expressions} expressions: {positives} positive / {} negative labels (tau_label {tau})",
        total - positives
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let corpus_dir = required(a.corpus, "--corpus")?;
    let out = required(a.out, "--out")?;
    cfg.selector.validate()?;
    let tc = cfg.train_config();
    tc.validate()?;
    let corpus = load_corpus(&corpus_dir)?;
    write_echo(&cfg, &out)?;
    let summary = match a.bits {
        32 => run_train::<f32>(&corpus, &cfg, a.resume.as_deref(), &out)?,
        64 => run_train::<f64>(&corpus, &cfg, a.resume.as_deref(), &out)?,
        b => return Err(Error::config(format!("--bits must be 32 or 64, got {b}"))),
    };
    println!("{summary}");
    Ok(())
}

fn run_train<F: Scalar>(
    corpus: &Corpus,
    cfg: &RunConfig,
    resume_from: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let tc = cfg.train_config();
    let ckpt: Checkpoint<F> = match resume_from {
        Some(p) => resume(load_checkpoint::<F>(p)?, corpus, &tc, Some(out))?,
        None => train(corpus, &cfg.selector, &tc, Some(out))?,
    };
    let last_loss = ckpt.history.last().map_or(f64::NAN, |h| h.mean_loss);
    Ok(format!(
        "trained {} epochs ({} steps); final mean loss {:.6}; checkpoint {}",
        ckpt.epochs_done,
        ckpt.adam_step,
        last_loss,
        out.join("final.solp").display()
    ))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(j) = a.jobs {
        cfg.eval.jobs = j;
    }
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    println!("effective config:");
    print!("{}", cfg.render()?);
    println!();
    let corpus = load_corpus(&required(a.corpus, "--corpus")?)?;
    let opts = cfg.eval_options();
    let report: EvalReport = if a.oracle {
        evaluate_with(&corpus, &cfg.selector, &opts, |_, tracks, expr| {
            tracks
                .tracks()
                .iter()
                .map(|t| track_miou(t, &expr.gt_track))
                .collect()
        })?
    } else {
        let path = required(a.checkpoint, "--checkpoint (or --oracle)")?;
        match checkpoint_bits(&path)? {
            32 => evaluate(&load_checkpoint::<f32>(&path)?, &corpus, &opts)?,
            64 => evaluate(&load_checkpoint::<f64>(&path)?, &corpus, &opts)?,
            b => {
                return Err(Error::config(format!("unsupported checkpoint width {b}")));
            }
        }
    };
    print!("{}", render_report(&report));
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        atomic_write(&out.join("report.jsonl"), report_records(&report).as_bytes())?;
        write_echo(&cfg, &out)?;
    }
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let corpus = load_corpus(&required(a.corpus, "--corpus")?)?;
    let path = required(a.checkpoint, "--checkpoint")?;
    let out = required(a.out, "--out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let written = match checkpoint_bits(&path)? {
        32 => run_select(&load_checkpoint::<f32>(&path)?, &corpus, &out)?,
        64 => run_select(&load_checkpoint::<f64>(&path)?, &corpus, &out)?,
        b => {
            return Err(Error::config(format!("unsupported checkpoint width {b}")));
        }
    };
    write_echo(&cfg, &out)?;
    println!("wrote {written} merged tracks -> {}", out.display());
    Ok(())
}

fn run_select<F: Scalar>(ckpt: &Checkpoint<F>, corpus: &Corpus, out: &Path) -> Result<usize> {
    let sel_cfg = &ckpt.selector_cfg;
    let mut lines = String::new();
    let mut written = 0usize;
    for v in &corpus.videos {
        let (tokens, tracks) = candidates(v, sel_cfg.include_background_tokens)?;
        for e in &v.expressions {
            let fwd = forward(&tokens, &e.embedding, &ckpt.params, sel_cfg)?;
            let sel = select(&fwd.scores, &tracks, sel_cfg)?;
            save_tracks(
                &[sel.merged_track],
                &out.join(format!("{}.rle", e.expression_id)),
            )?;
            written += 1;
            lines.push_str(
                &json!({
                    "record": "selection", "video": v.video_id, "expression": e.expression_id,
                    "scores": sel.scores, "selected_track_ids": sel.selected_track_ids,
                })
                .to_string(),
            );
            lines.push('\n');
        }
    }
    atomic_write(&out.join("selections.jsonl"), lines.as_bytes())?;
    Ok(written)
}

fn cmd_dedup(a: DedupArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(t) = a.theta {
        cfg.eval.dedup_theta = t;
    }
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let corpus = load_corpus(&required(a.corpus, "--corpus")?)?;
    let out = required(a.out, "--out")?;
    let theta = cfg.eval.dedup_theta;
    let mut videos = Vec::with_capacity(corpus.videos.len());
    let (mut kept_total, mut before_total) = (0usize, 0usize);
    for v in corpus.videos {
        let kept = dedup_tracks(&v.tracks, a.prompt_frame, theta)?;
        let ids: HashSet<&str> = kept.tracks().iter().map(|t| t.track_id()).collect();
        let keep_rows: Vec<usize> = (0..v.tokens.n_tracks())
            .filter(|&i| ids.contains(v.tokens.track_ids()[i].as_str()))
            .collect();
        let mut row_ids = Vec::with_capacity(keep_rows.len());
        let mut values = Vec::with_capacity(keep_rows.len() * v.tokens.n_frames() * v.tokens.dim());
        for &i in &keep_rows {
            row_ids.push(v.tokens.track_ids()[i].clone());
            values.extend_from_slice(v.tokens.track_tokens(i));
        }
        let tokens = TokenSet::new(row_ids, v.tokens.n_frames(), v.tokens.dim(), values)?;
        before_total += v.tracks.len();
        kept_total += kept.len();
        videos.push(VideoData {
            video_id: v.video_id,
            tracks: kept,
            tokens,
            expressions: v.expressions,
        });
    }
    save_corpus(&Corpus::new(videos), &out)?;
    write_echo(&cfg, &out)?;
    println!(
        "kept {kept_total} of {before_total} candidate tracks (theta {theta}, prompt frame {}) -> {}",
        a.prompt_frame,
        out.display()
    );
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.cfg.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    let pooling = match a.pooling.as_str() {
        "temporal_mean" => TokenPooling::TemporalMean,
        "last_frame" => TokenPooling::LastFrame,
        other => {
            return Err(Error::config(format!(
                "unknown pooling `{other}`; available: temporal_mean, last_frame"
            )));
        }
    };
    let corpus = load_corpus(&required(a.corpus, "--corpus")?)?;
    let analysis = corpus_similarity_analysis(&corpus, pooling)?;
    print!("{}", render_similarity(&analysis));
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let mut body =
            serde_json::to_string_pretty(&analysis).map_err(|e| Error::config(e.to_string()))?;
        body.push('\n');
        atomic_write(&out.join("similarity.json"), body.as_bytes())?;
        write_echo(&cfg, &out)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let sel = SelectorConfig {
        dim: a.dim,
        text_dim: a.text_dim,
        layers: a.layers,
        heads: a.heads,
        ..SelectorConfig::default()
    };
    sel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let token_vals: Vec<f32> = (0..a.tracks * a.frames * a.dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let ids = (0..a.tracks).map(|i| format!("t{i}")).collect();
    let tokens = TokenSet::new(ids, a.frames, a.dim, token_vals)?;
    let text_vals: Vec<f32> = (0..a.words * a.text_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let text = TextEmbedding::new(
        "gradcheck".into(),
        "gradient verification input".into(),
        a.words,
        a.text_dim,
        text_vals,
    )?;
    // Mixed labels so both loss branches contribute.
    let y: Vec<bool> = (0..a.tracks).map(|i| i % 2 == 0).collect();
    let mut params: ParamStore<f64> = init_params(&sel, a.seed)?;
    init_anchor_bank(&mut params, a.n_neg, a.dim, a.seed)?;
    let weights = LossWeights::default();
    let mut f = |p: &ParamStore<f64>| -> Result<LossEval> {
        let (value, grads) =
            loss_eval(p, &tokens, &text, &y, &sel, weights, AlignSign::IntentConsistent)?;
        Ok(LossEval { value, grads })
    };
    let sample = if a.coords == 0 {
        CoordinateSample::All
    } else {
        CoordinateSample::Random { count: a.coords, seed: a.seed }
    };
    let report = grad_check(&mut f, &params, a.eps, sample)?;
    println!(
        "checked {} coordinates: max relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    if let Some((name, i, analytic, numeric)) = &report.worst {
        println!("worst: {name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    if report.max_rel_err > a.tolerance {
        return Err(Error::numerical(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_err, a.tolerance
        )));
    }
    Ok(())
}
