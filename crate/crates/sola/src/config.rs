//! Layered run configuration for the command-line pipeline.
//!
//! Precedence, lowest to highest: built-in defaults, preset, TOML config
//! file, `SOLA_<SECTION>_<KEY>` environment variables, explicit flags.
//! Every layer may set any subset of keys; unknown sections or keys are
//! rejected with the offending name. The effective config renders back to
//! TOML and is echoed into every output artifact directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::value::{Table, Value};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::mask::EmptyFrameMode;
use crate::selector::SelectorConfig;
use crate::supervision::{AlignSign, LossWeights};
use crate::trainer::{Schedule, TrainConfig};

/// Environment override prefix; `SOLA_TRAIN_EPOCHS=4` sets `train.epochs`.
pub const ENV_PREFIX: &str = "SOLA_";

/// Labeling and loss-mixing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionSection {
    /// Candidates whose mask mIoU against ground truth exceeds this are
    /// labeled positive.
    pub tau_label: f64,
    /// Number of learnable negative anchors.
    pub n_neg: usize,
    /// Weight on the selection (BCE) term.
    pub lambda1: f64,
    /// Weight on the alignment term.
    pub lambda2: f64,
    pub align_sign: AlignSign,
}

impl Default for SupervisionSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        SupervisionSection {
            tau_label: t.tau_label,
            n_neg: t.n_neg,
            lambda1: t.weights.lambda1,
            lambda2: t.weights.lambda2,
            align_sign: t.align_sign,
        }
    }
}

/// Optimizer and schedule knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u32,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            lr_init: t.lr_init,
            schedule: t.schedule,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            seed: t.seed,
        }
    }
}

/// Evaluation and candidate-filtering knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub empty_frames: EmptyFrameMode,
    /// Reference selection set for exact-set accuracy: candidates whose true
    /// mIoU exceeds this.
    pub oracle_tau: f64,
    /// Worker threads for the evaluation loop; 0 uses the global pool.
    pub jobs: usize,
    /// Candidates whose prompt-frame IoU with an earlier kept candidate
    /// exceeds this are dropped by `dedup`.
    pub dedup_theta: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            empty_frames: EmptyFrameMode::default(),
            oracle_tau: 0.5,
            jobs: 0,
            dedup_theta: 0.7,
        }
    }
}

/// The full config tree, one section per pipeline stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub selector: SelectorConfig,
    pub supervision: SupervisionSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Desk-scale preset: small model, larger learning rate, short schedule.
    /// Sized so a full train-plus-eval cycle runs in minutes on one core.
    pub fn synthetic_preset() -> Self {
        let mut cfg = RunConfig::default();
        cfg.data = SynthConfig {
            scenes: 200,
            dim: 32,
            text_dim: 48,
            ..SynthConfig::default()
        };
        cfg.selector.dim = 32;
        cfg.selector.text_dim = 48;
        cfg.selector.heads = 4;
        cfg.supervision.n_neg = 8;
        cfg.train.epochs = 2;
        cfg.train.lr_init = 1e-3;
        cfg
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(RunConfig::default()),
            "synthetic" => Ok(RunConfig::synthetic_preset()),
            other => Err(Error::config(format!(
                "unknown preset `{other}`; available: paper, synthetic"
            ))),
        }
    }

    /// Assembles the flat training config from the supervision and train
    /// sections.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr_init: self.train.lr_init,
            schedule: self.train.schedule,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
            weight_decay: self.train.weight_decay,
            grad_clip: self.train.grad_clip,
            seed: self.train.seed,
            tau_label: self.supervision.tau_label,
            n_neg: self.supervision.n_neg,
            weights: LossWeights {
                lambda1: self.supervision.lambda1,
                lambda2: self.supervision.lambda2,
            },
            align_sign: self.supervision.align_sign,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            empty_frames: self.eval.empty_frames,
            oracle_tau: self.eval.oracle_tau,
            jobs: if self.eval.jobs == 0 { None } else { Some(self.eval.jobs) },
        }
    }

    /// Overlays the keys present in a TOML file onto `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Table = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        self.apply_table(&patch, &path.display().to_string())
    }

    /// Overlays `SOLA_<SECTION>_<KEY>` variables, lowest key first so the
    /// result is independent of environment iteration order.
    pub fn apply_env(&mut self, vars: impl Iterator<Item = (String, String)>) -> Result<()> {
        let mut hits: Vec<(String, String)> = vars
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        hits.sort();
        for (name, raw) in hits {
            let suffix = &name[ENV_PREFIX.len()..];
            let (section, key) = suffix.split_once('_').ok_or_else(|| {
                Error::config(format!("{name}: expected SOLA_<SECTION>_<KEY>"))
            })?;
            self.apply_key(
                &section.to_ascii_lowercase(),
                &key.to_ascii_lowercase(),
                &raw,
                &name,
            )?;
        }
        Ok(())
    }

    /// Sets one key from a `section.key=value` assignment (flag syntax).
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment.split_once('=').ok_or_else(|| {
            Error::config(format!("`{assignment}`: expected section.key=value"))
        })?;
        let (section, key) = path.split_once('.').ok_or_else(|| {
            Error::config(format!("`{assignment}`: expected section.key=value"))
        })?;
        self.apply_key(section.trim(), key.trim(), raw.trim(), assignment)
    }

    /// Parses `raw` against the current type of `section.key` and overlays it.
    fn apply_key(&mut self, section: &str, key: &str, raw: &str, origin: &str) -> Result<()> {
        let mut table = self.to_table()?;
        let slot = lookup_mut(&mut table, section, key, origin)?;
        *slot = parse_as(slot, raw, origin)?;
        self.replace_from(table, origin)
    }

    fn apply_table(&mut self, patch: &Table, origin: &str) -> Result<()> {
        let mut table = self.to_table()?;
        for (section, sv) in patch {
            let pt = sv.as_table().ok_or_else(|| {
                Error::config(format!("{origin}: `{section}` must be a section"))
            })?;
            for (key, pv) in pt {
                let slot = lookup_mut(&mut table, section, key, origin)?;
                // TOML writes 1.0 as an integer at the author's whim.
                *slot = match (&slot, pv) {
                    (Value::Float(_), Value::Integer(i)) => Value::Float(*i as f64),
                    _ => pv.clone(),
                };
            }
        }
        self.replace_from(table, origin)
    }

    fn to_table(&self) -> Result<Table> {
        match Value::try_from(self).map_err(|e| Error::config(e.to_string()))? {
            Value::Table(t) => Ok(t),
            _ => Err(Error::config("config did not serialize to a table")),
        }
    }

    fn replace_from(&mut self, table: Table, origin: &str) -> Result<()> {
        *self = Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("{origin}: {e}")))?;
        Ok(())
    }

    /// Cross-section consistency on top of per-section validation.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.selector.validate()?;
        self.train_config().validate()?;
        if self.data.dim != self.selector.dim {
            return Err(Error::config(format!(
                "data.dim {} != selector.dim {}",
                self.data.dim, self.selector.dim
            )));
        }
        if self.data.text_dim != self.selector.text_dim {
            return Err(Error::config(format!(
                "data.text_dim {} != selector.text_dim {}",
                self.data.text_dim, self.selector.text_dim
            )));
        }
        if !(self.eval.oracle_tau > 0.0 && self.eval.oracle_tau <= 1.0) {
            return Err(Error::config(format!(
                "eval.oracle_tau must be in (0, 1], got {}",
                self.eval.oracle_tau
            )));
        }
        if !(self.eval.dedup_theta > 0.0 && self.eval.dedup_theta <= 1.0) {
            return Err(Error::config(format!(
                "eval.dedup_theta must be in (0, 1], got {}",
                self.eval.dedup_theta
            )));
        }
        Ok(())
    }

    /// The effective config as TOML; written next to every artifact.
    pub fn render(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Flat `section.key` listing with defaults, for `--help` output.
    pub fn describe_keys() -> Result<String> {
        let table = RunConfig::default().to_table()?;
        let mut out = String::new();
        for (section, sv) in &table {
            let st = sv.as_table().expect("sections are tables");
            for (key, v) in st {
                out.push_str(&format!("  {section}.{key} = {v}\n"));
            }
        }
        Ok(out)
    }
}

fn lookup_mut<'t>(
    table: &'t mut Table,
    section: &str,
    key: &str,
    origin: &str,
) -> Result<&'t mut Value> {
    let sv = table.get_mut(section).ok_or_else(|| {
        Error::config(format!("{origin}: unknown config section `{section}`"))
    })?;
    let st = sv
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("{origin}: `{section}` is not a section")))?;
    st.get_mut(key).ok_or_else(|| {
        Error::config(format!("{origin}: unknown config key `{section}.{key}`"))
    })
}

/// Parses `raw` with the type of the value it replaces; enum-valued keys are
/// strings here and are validated on the round trip back into the config.
fn parse_as(current: &Value, raw: &str, origin: &str) -> Result<Value> {
    match current {
        Value::Integer(_) => raw
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|_| Error::config(format!("{origin}: `{raw}` is not an integer"))),
        Value::Float(_) => raw
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|_| Error::config(format!("{origin}: `{raw}` is not a number"))),
        Value::Boolean(_) => raw
            .parse::<bool>()
            .map(Value::Boolean)
            .map_err(|_| Error::config(format!("{origin}: `{raw}` is not true/false"))),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        other => Err(Error::config(format!(
            "{origin}: cannot override {} values",
            other.type_str()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_reference_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.selector.tau_select, 0.5);
        assert_eq!(cfg.supervision.n_neg, 32);
        assert_eq!(cfg.supervision.lambda1, 1.0);
        assert_eq!(cfg.supervision.lambda2, 0.3);
        assert_eq!(cfg.train.epochs, 13);
        assert_eq!(cfg.train.lr_init, 5e-6);
        assert_eq!(cfg.eval.dedup_theta, 0.7);
        // The echo must carry the exact values through a TOML round trip.
        let text = cfg.render().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.selector.tau_select, 0.5);
        assert_eq!(back.supervision.n_neg, 32);
        assert_eq!(back.supervision.lambda1, 1.0);
        assert_eq!(back.supervision.lambda2, 0.3);
        assert_eq!(back.train.epochs, 13);
        assert_eq!(back.train.lr_init, 5e-6);
        assert_eq!(back.eval.dedup_theta, 0.7);
    }

    #[test]
    fn render_round_trips() {
        let cfg = RunConfig::synthetic_preset();
        let text = cfg.render().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_overlay_sets_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochs = 4\n\n[supervision]\nlambda2 = 1\n").unwrap();
        let mut cfg = RunConfig::synthetic_preset();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.supervision.lambda2, 1.0);
        // Untouched keys keep their preset values.
        assert_eq!(cfg.train.lr_init, 1e-3);
        assert_eq!(cfg.selector.dim, 32);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepoch = 4\n").unwrap();
        let mut cfg = RunConfig::default();
        let err = cfg.apply_file(&path).unwrap_err().to_string();
        assert!(err.contains("train.epoch"), "{err}");

        std::fs::write(&path, "[trainer]\nepochs = 4\n").unwrap();
        let err = cfg.apply_file(&path).unwrap_err().to_string();
        assert!(err.contains("trainer"), "{err}");
    }

    #[test]
    fn env_overrides_parse_by_target_type() {
        let mut cfg = RunConfig::default();
        let vars = [
            ("SOLA_TRAIN_EPOCHS", "3"),
            ("SOLA_TRAIN_LR_INIT", "0.01"),
            ("SOLA_SELECTOR_FALLBACK_ARGMAX", "false"),
            ("SOLA_TRAIN_SCHEDULE", "linear"),
            ("SOLA_EVAL_EMPTY_FRAMES", "skip_absent"),
            ("OTHER_TRAIN_EPOCHS", "99"),
        ];
        cfg.apply_env(vars.iter().map(|(k, v)| (k.to_string(), v.to_string())))
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr_init, 0.01);
        assert!(!cfg.selector.fallback_argmax);
        assert_eq!(cfg.train.schedule, Schedule::Linear);
        assert_eq!(cfg.eval.empty_frames, EmptyFrameMode::SkipAbsent);
    }

    #[test]
    fn env_overrides_reject_bad_values() {
        let mut cfg = RunConfig::default();
        let bad = [("SOLA_TRAIN_EPOCHS".to_string(), "three".to_string())];
        assert!(cfg.apply_env(bad.into_iter()).is_err());
        let bad = [("SOLA_TRAIN_SCHEDULE".to_string(), "step".to_string())];
        assert!(cfg.apply_env(bad.into_iter()).is_err());
        let bad = [("SOLA_NOPE".to_string(), "1".to_string())];
        assert!(cfg.apply_env(bad.into_iter()).is_err());
    }

    #[test]
    fn assignments_hit_any_section() {
        let mut cfg = RunConfig::default();
        cfg.apply_assignment("data.scenes=5").unwrap();
        cfg.apply_assignment("eval.dedup_theta=0.9").unwrap();
        assert_eq!(cfg.data.scenes, 5);
        assert_eq!(cfg.eval.dedup_theta, 0.9);
        assert!(cfg.apply_assignment("eval.dedup=0.9").is_err());
        assert!(cfg.apply_assignment("no-equals-sign").is_err());
    }

    #[test]
    fn validate_requires_matching_dims() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.data.dim = 16;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::synthetic_preset();
        cfg.validate().unwrap();
        cfg.eval.dedup_theta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn train_config_assembles_both_sections() {
        let mut cfg = RunConfig::default();
        cfg.supervision.n_neg = 7;
        cfg.supervision.lambda2 = 0.5;
        cfg.train.epochs = 2;
        let t = cfg.train_config();
        assert_eq!(t.n_neg, 7);
        assert_eq!(t.weights.lambda2, 0.5);
        assert_eq!(t.epochs, 2);
        assert_eq!(t.tau_label, 0.5);
    }

    #[test]
    fn key_listing_names_every_section() {
        let listing = RunConfig::describe_keys().unwrap();
        for needle in [
            "data.scenes",
            "selector.tau_select",
            "supervision.n_neg",
            "train.lr_init",
            "eval.dedup_theta",
        ] {
            assert!(listing.contains(needle), "{listing}");
        }
    }
}
