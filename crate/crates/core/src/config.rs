//! Run configuration: one TOML document, every key defaulted.
//!
//! Loading serialises the defaults to a table, deep-merges the file and any
//! `key=value` overrides on top, then deserialises with unknown keys
//! rejected. Validation reports every violated constraint at once.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degradation::DegradationConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{NetworkKind, NetworkSpec, NormKind};
use crate::optim::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResumeMode {
    /// Continue from the newest matching checkpoint in the run directory.
    Auto,
    /// Always start the phase from its predecessor's output.
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Corpus root holding `hr/`, `lr/`, `val/hr/` and `val/lr/`.
    pub data_root: PathBuf,
    /// Checkpoints, logs and reports.
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Synthesise the HR images before degrading them.
    pub procedural: bool,
    pub train_count: usize,
    pub val_count: usize,
    pub size_min: usize,
    pub size_max: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Inclusive `[first, last]` image numbers for domain X.
    pub lr_indices: [u32; 2],
    /// Inclusive `[first, last]` image numbers for domain Z.
    pub hr_indices: [u32; 2],
    pub lr_crop: usize,
    pub hr_crop: usize,
    pub batch_size: usize,
}

impl SplitConfig {
    pub fn lr_range(&self) -> RangeInclusive<u32> {
        self.lr_indices[0]..=self.lr_indices[1]
    }

    pub fn hr_range(&self) -> RangeInclusive<u32> {
        self.hr_indices[0]..=self.hr_indices[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworksConfig {
    pub generator_channels: usize,
    pub generator_resblocks: usize,
    pub generator_norm: NormKind,
    /// Residual connection from input to output in G1 and G2.
    pub generator_global_skip: bool,
    pub discriminator_channels: usize,
    pub discriminator_norm: NormKind,
    pub sr_channels: usize,
    pub sr_resblocks: usize,
    pub leaky_slope: f64,
}

impl NetworksConfig {
    pub fn spec(&self, kind: NetworkKind, scale: usize) -> NetworkSpec {
        let (channels, blocks, norm) = match kind {
            NetworkKind::GeneratorSameSize | NetworkKind::GeneratorDownscale => {
                (self.generator_channels, self.generator_resblocks, self.generator_norm)
            }
            NetworkKind::DiscriminatorPatch16 | NetworkKind::DiscriminatorPatch70 => {
                (self.discriminator_channels, 0, self.discriminator_norm)
            }
            NetworkKind::SrBackbone => (self.sr_channels, self.sr_resblocks, NormKind::None),
        };
        NetworkSpec {
            kind,
            n_resblocks: blocks,
            base_channels: channels,
            leaky_slope: self.leaky_slope,
            norm,
            scale: if kind == NetworkKind::SrBackbone { scale } else { 1 },
            global_skip: kind == NetworkKind::GeneratorSameSize && self.generator_global_skip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Replaces `w2` during joint training.
    pub phase2_w2: f64,
}

impl LossConfig {
    pub fn phase1(&self) -> LossWeights {
        LossWeights {
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn phase2(&self) -> LossWeights {
        LossWeights {
            w2: self.phase2_w2,
            ..self.phase1()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfigs {
    pub phase0: OptimizerConfig,
    pub phase1: OptimizerConfig,
    pub phase2: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsConfig {
    pub pretrain_sr: u64,
    pub phase1: u64,
    pub phase2: u64,
    /// Joint-stage budget for each ablation structure.
    pub ablation: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Inference tile edge, LR pixels.
    pub tile: usize,
    pub overlap: usize,
    pub border_crop: usize,
    /// Border crop for LR-resolution comparisons.
    pub lr_border_crop: usize,
    /// Side-by-side PNG panels written per report.
    pub panels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for data preparation; orchestration is single-threaded.
    pub workers: usize,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub resume: ResumeMode,
    /// Global gradient-norm clip per network step; 0 disables.
    pub grad_clip: f64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub degradation: DegradationConfig,
    pub split: SplitConfig,
    pub networks: NetworksConfig,
    pub loss: LossConfig,
    pub optim: OptimConfigs,
    pub steps: StepsConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            log_interval: 100,
            checkpoint_interval: 5000,
            resume: ResumeMode::Auto,
            grad_clip: 0.0,
            paths: PathsConfig {
                data_root: "data".into(),
                run_dir: "runs/default".into(),
            },
            corpus: CorpusConfig {
                procedural: false,
                train_count: 800,
                val_count: 100,
                size_min: 96,
                size_max: 128,
                seed: 1,
            },
            degradation: DegradationConfig::default(),
            split: SplitConfig {
                lr_indices: [1, 400],
                hr_indices: [401, 800],
                lr_crop: 32,
                hr_crop: 128,
                batch_size: 16,
            },
            networks: NetworksConfig {
                generator_channels: 64,
                generator_resblocks: 6,
                generator_norm: NormKind::BatchNorm,
                generator_global_skip: false,
                discriminator_channels: 64,
                discriminator_norm: NormKind::BatchNorm,
                sr_channels: 64,
                sr_resblocks: 8,
                leaky_slope: 0.2,
            },
            loss: LossConfig {
                w1: 10.0,
                w2: 5.0,
                w3: 0.5,
                lambda1: 10.0,
                lambda2: 5.0,
                lambda3: 2.0,
                phase2_w2: 1.0,
            },
            optim: OptimConfigs {
                phase0: OptimizerConfig::default(),
                phase1: OptimizerConfig::default(),
                phase2: OptimizerConfig {
                    lr_init: 1e-4,
                    ..OptimizerConfig::default()
                },
            },
            steps: StepsConfig {
                pretrain_sr: 20_000,
                phase1: 400_000,
                phase2: 100_000,
                ablation: 100_000,
            },
            eval: EvalConfig {
                tile: 32,
                overlap: 8,
                border_crop: 4,
                lr_border_crop: 1,
                panels: 4,
            },
        }
    }
}

/// Inserts `value` at a dotted path, creating intermediate tables.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(vec![format!("malformed key `{key}`")]));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(vec![format!("`{key}`: `{p}` is not a table")])),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a `key=value` override. The value is read as TOML and falls back
/// to a bare string (`paths.run_dir=/tmp/x`).
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("override `{s}` is not key=value")]))?;
    let key = k.trim().to_string();
    let text = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()));
    Ok((key, value))
}

impl RunConfig {
    /// Defaults, then `text`, then overrides; validated.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Serde(e.to_string()))?;
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(vec![format!("malformed config: {e}")]))?;
        merge(&mut table, user);
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut table, &k, v)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    /// Every cross-field violation.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.degradation.validate();
        let s = &self.split;
        if s.hr_crop != 4 * s.lr_crop {
            errs.push(format!(
                "split.hr_crop ({}) must equal 4 * split.lr_crop ({})",
                s.hr_crop,
                4 * s.lr_crop
            ));
        }
        if self.degradation.scale != 4 {
            errs.push(format!(
                "degradation.scale is {}; the downscaling generator requires 4",
                self.degradation.scale
            ));
        }
        if s.lr_crop < 16 {
            errs.push(format!("split.lr_crop {} is below the 16 px LR discriminator field", s.lr_crop));
        }
        if s.hr_crop < 70 {
            errs.push(format!("split.hr_crop {} is below the 70 px HR discriminator field", s.hr_crop));
        }
        if s.batch_size == 0 {
            errs.push("split.batch_size must be >= 1".into());
        }
        for (name, r) in [("lr_indices", s.lr_indices), ("hr_indices", s.hr_indices)] {
            if r[0] > r[1] {
                errs.push(format!("split.{name} [{}, {}] is empty", r[0], r[1]));
            }
        }
        if s.lr_indices[0] <= s.hr_indices[1] && s.hr_indices[0] <= s.lr_indices[1] {
            errs.push(format!(
                "split.lr_indices {:?} and split.hr_indices {:?} overlap (pairing leak)",
                s.lr_indices, s.hr_indices
            ));
        }
        for kind in [
            NetworkKind::GeneratorSameSize,
            NetworkKind::DiscriminatorPatch16,
            NetworkKind::SrBackbone,
        ] {
            for e in self.spec(kind).validate("networks") {
                if !errs.contains(&e) {
                    errs.push(e);
                }
            }
        }
        errs.extend(self.loss.phase2().validate("loss"));
        if !(self.loss.w2.is_finite() && self.loss.w2 >= 0.0) {
            errs.push(format!("loss.w2 = {} must be a non-negative number", self.loss.w2));
        }
        errs.extend(self.optim.phase0.validate("optim.phase0"));
        errs.extend(self.optim.phase1.validate("optim.phase1"));
        errs.extend(self.optim.phase2.validate("optim.phase2"));
        let c = &self.corpus;
        if c.procedural {
            if c.size_min > c.size_max || c.size_min < 4 * self.split.lr_crop {
                errs.push(format!(
                    "corpus size range [{}, {}] must be ordered and at least split.hr_crop",
                    c.size_min, c.size_max
                ));
            }
            if (c.train_count as u64) < s.lr_indices[1].max(s.hr_indices[1]) as u64 {
                errs.push(format!(
                    "corpus.train_count {} does not cover the split indices",
                    c.train_count
                ));
            }
        }
        let e = &self.eval;
        if e.tile == 0 || 2 * e.overlap >= e.tile {
            errs.push(format!("eval.tile {} must exceed 2 * eval.overlap {}", e.tile, e.overlap));
        }
        if self.log_interval == 0 {
            errs.push("log_interval must be >= 1".into());
        }
        if self.workers == 0 {
            errs.push("workers must be >= 1".into());
        }
        if !(self.grad_clip >= 0.0) {
            errs.push("grad_clip must be >= 0".into());
        }
        errs
    }

    pub fn spec(&self, kind: NetworkKind) -> NetworkSpec {
        self.networks.spec(kind, self.degradation.scale as usize)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Short digest of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        let d = Sha256::digest(serde_json::to_vec(self).expect("config serialises"));
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_hr_dir(&self) -> PathBuf {
        self.paths.data_root.join("hr")
    }

    pub fn train_lr_dir(&self) -> PathBuf {
        self.paths.data_root.join("lr")
    }

    pub fn val_hr_dir(&self) -> PathBuf {
        self.paths.data_root.join("val").join("hr")
    }

    pub fn val_lr_dir(&self) -> PathBuf {
        self.paths.data_root.join("val").join("lr")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_published_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.loss.w1, c.loss.w2, c.loss.w3), (10.0, 5.0, 0.5));
        assert_eq!((c.loss.lambda1, c.loss.lambda2, c.loss.lambda3), (10.0, 5.0, 2.0));
        assert_eq!(c.optim.phase1.beta1, 0.5);
        assert_eq!(c.split.batch_size, 16);
        assert_eq!(c.optim.phase2.lr_init, 1e-4);
        assert_eq!(c.loss.phase2().w2, 1.0);
    }

    #[test]
    fn crop_mismatch_is_reported() {
        let err = RunConfig::from_toml_str("[split]\nlr_crop = 32\nhr_crop = 96\n", &[]).unwrap_err();
        assert!(err.to_string().contains("hr_crop"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[split]\nlr_crops = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("lr_crops"), "{err}");
        let err = RunConfig::from_toml_str("", &["bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn all_errors_listed_at_once() {
        let err = RunConfig::from_toml_str(
            "[split]\nhr_crop = 100\nbatch_size = 0\n[optim.phase1]\nbeta1 = 0.9999\n",
            &[],
        )
        .unwrap_err();
        match err {
            Error::Config(list) => assert!(list.len() >= 3, "{list:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn partial_section_keeps_phase_defaults() {
        let c = RunConfig::from_toml_str("[optim.phase2]\nbeta2 = 0.99\n", &[]).unwrap();
        assert_eq!(c.optim.phase2.lr_init, 1e-4);
        assert_eq!(c.optim.phase2.beta2, 0.99);
    }

    #[test]
    fn overrides_apply_after_file() {
        let c = RunConfig::from_toml_str(
            "seed = 3\n",
            &["seed=7".into(), "paths.run_dir=/tmp/run x".into(), "degradation.blur_sigma_range=[0.5, 1.0]".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.paths.run_dir, PathBuf::from("/tmp/run x"));
        assert_eq!(c.degradation.blur_sigma_range, (0.5, 1.0));
    }

    #[test]
    fn toml_echo_roundtrips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap(), c);
    }
}
