//! Declarative run configuration: one JSON file covering every subsystem,
//! with command-line flags taking precedence. Unknown keys are rejected,
//! and the fully resolved configuration is dumped next to every output so
//! runs can be reproduced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tatumscribe_core::baseline::PeakPickConfig;
use tatumscribe_core::lm::GruLmConfig;
use tatumscribe_core::optim::AdamWConfig;
use tatumscribe_core::train::{LmKind, TrainConfig};
use tatumscribe_core::TranscriberConfig;

use crate::error::{validation, CliResult, Context};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TranscriberSection {
    pub conv_channels: Vec<usize>,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub dropout_p: f64,
}

impl Default for TranscriberSection {
    fn default() -> Self {
        let d = TranscriberConfig::default();
        TranscriberSection {
            conv_channels: d.conv_channels,
            decoder_layers: d.decoder_layers,
            decoder_hidden: d.decoder_hidden,
            dropout_p: d.dropout_p,
        }
    }
}

impl TranscriberSection {
    pub fn to_core(&self) -> TranscriberConfig {
        TranscriberConfig {
            conv_channels: self.conv_channels.clone(),
            decoder_layers: self.decoder_layers,
            decoder_hidden: self.decoder_hidden,
            dropout_p: self.dropout_p,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Onset-class weight; defaults to the published value for `lm_kind`.
    pub gamma: Option<f64>,
    /// Regularizer weight; defaults to the published value for `lm_kind`.
    pub alpha: Option<f64>,
    pub tau: f64,
    pub threshold: f64,
    pub lm_kind: String,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub logit_sampler_input: bool,
    pub target_train_f: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let optim = AdamWConfig::default();
        TrainSection {
            gamma: None,
            alpha: None,
            tau: 0.2,
            threshold: 0.2,
            lm_kind: "none".to_string(),
            epochs: 100,
            seed: 0,
            lr: optim.lr,
            weight_decay: optim.weight_decay,
            beta1: optim.beta1,
            beta2: optim.beta2,
            epsilon: optim.epsilon,
            logit_sampler_input: false,
            target_train_f: None,
        }
    }
}

impl TrainSection {
    pub fn lm_kind(&self) -> CliResult<LmKind> {
        match self.lm_kind.as_str() {
            "none" => Ok(LmKind::None),
            "bigram" => Ok(LmKind::Bigram),
            "gru" => Ok(LmKind::Gru),
            other => Err(validation(anyhow::anyhow!(
                "unknown lm_kind {other:?} (expected none, bigram, or gru)"
            ))),
        }
    }

    /// Resolves into the core config, filling gamma/alpha from the
    /// published per-kind defaults when unset.
    pub fn to_core(&self) -> CliResult<TrainConfig> {
        let kind = self.lm_kind()?;
        let defaults = TrainConfig::for_lm_kind(kind);
        Ok(TrainConfig {
            gamma: self.gamma.unwrap_or(defaults.gamma),
            alpha: self.alpha.unwrap_or(defaults.alpha),
            tau: self.tau,
            threshold: self.threshold,
            epochs: self.epochs,
            seed: self.seed,
            optim: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            logit_sampler_input: self.logit_sampler_input,
            target_train_f: self.target_train_f,
        })
    }

    /// Writes the resolved gamma/alpha back so the effective dump is
    /// fully concrete.
    pub fn resolve_defaults(&mut self) -> CliResult<()> {
        let kind = self.lm_kind()?;
        let defaults = TrainConfig::for_lm_kind(kind);
        self.gamma.get_or_insert(defaults.gamma);
        self.alpha.get_or_insert(defaults.alpha);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// Onset-frame weight in the frame-level cross entropy.
    pub beta: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { beta: 8.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PeakPickSection {
    pub threshold: f64,
    pub w1: usize,
    pub w2: usize,
    pub w3: usize,
    pub w4: usize,
    pub w5: usize,
}

impl Default for PeakPickSection {
    fn default() -> Self {
        let d = PeakPickConfig::default();
        PeakPickSection {
            threshold: d.threshold,
            w1: d.w1,
            w2: d.w2,
            w3: d.w3,
            w4: d.w4,
            w5: d.w5,
        }
    }
}

impl PeakPickSection {
    pub fn to_core(&self) -> PeakPickConfig {
        PeakPickConfig {
            threshold: self.threshold,
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            w4: self.w4,
            w5: self.w5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_songs: usize,
    pub bars: usize,
    pub variation_rate: f64,
    pub fill_bar_period: Option<usize>,
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub noise_floor: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_songs: 10,
            bars: 4,
            variation_rate: 0.05,
            fill_bar_period: Some(4),
            tempo_min: 100.0,
            tempo_max: 180.0,
            noise_floor: 0.005,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub num_layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        let d = GruLmConfig::default();
        LmSection {
            num_layers: d.num_layers,
            hidden: d.hidden,
            epochs: d.epochs,
            lr: d.optim.lr,
        }
    }
}

impl LmSection {
    pub fn to_core(&self, seed: u64) -> GruLmConfig {
        GruLmConfig {
            num_layers: self.num_layers,
            hidden: self.hidden,
            epochs: self.epochs,
            seed,
            optim: AdamWConfig {
                lr: self.lr,
                ..AdamWConfig::default()
            },
        }
    }
}

/// The whole declarative configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub transcriber: TranscriberSection,
    pub train: TrainSection,
    pub baseline: BaselineSection,
    pub peak_pick: PeakPickSection,
    pub synth: SynthSection,
    pub lm: LmSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .or_validation(&format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text)
                    .or_validation(&format!("config {} is malformed", p.display()))
            }
        }
    }

    /// Writes the fully resolved configuration next to a command's outputs.
    pub fn dump_effective(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let mut resolved = self.clone();
        resolved.train.resolve_defaults()?;
        let path = out_dir.join("effective-config.json");
        let text = serde_json::to_string_pretty(&resolved).expect("config serializes");
        std::fs::write(&path, text)
            .or_runtime(&format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
