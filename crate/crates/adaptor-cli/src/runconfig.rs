//! JSON documents: run configuration, synthetic-cache spec, metrics lines,
//! evaluation report, and the synth manifest.
//!
//! Unknown keys are rejected everywhere (`deny_unknown_fields`) so a typo'd
//! field fails loudly instead of silently falling back to a default. The
//! raw config text is echoed verbatim into output directories for
//! provenance; these DTOs only interpret it.

use std::path::PathBuf;

use adaptor_core::adaptor::AdaptorConfig;
use adaptor_core::data::SynthSpec;
use adaptor_core::eval::{EvalReport, ProbeConfig, PROBE_EPOCHS_DEFAULT, PROBE_LR_DEFAULT};
use adaptor_core::objective::ALPHA_DEFAULT;
use adaptor_core::trainer::{
    TrainConfig, ADAM_EPS_DEFAULT, BATCH_SIZE_DEFAULT, BETA1_DEFAULT, BETA2_DEFAULT,
    EPOCHS_DEFAULT, LR_DEFAULT,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Top-level run configuration file: adaptor architecture, training recipe,
/// probe recipe, and optional default paths. Flags override `paths`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub adaptor: AdaptorSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub paths: PathsSection,
}

/// Architecture hyperparameters. `d_ffn` defaults to `2 × d_shared`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptorSection {
    pub d_img: usize,
    pub d_txt: usize,
    pub d_shared: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub d_ffn: Option<usize>,
    #[serde(default = "default_true")]
    pub normalize_outputs: bool,
    #[serde(default = "default_true")]
    pub share_branch_weights: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_probe_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_probe_lr")]
    pub lr: f64,
    #[serde(default = "default_probe_epochs")]
    pub epochs: usize,
    #[serde(default = "default_one")]
    pub data_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_n_layers() -> usize {
    2
}
fn default_n_heads() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_alpha() -> f64 {
    ALPHA_DEFAULT
}
fn default_lr() -> f64 {
    LR_DEFAULT
}
fn default_batch_size() -> usize {
    BATCH_SIZE_DEFAULT
}
fn default_epochs() -> u64 {
    EPOCHS_DEFAULT
}
fn default_beta1() -> f64 {
    BETA1_DEFAULT
}
fn default_beta2() -> f64 {
    BETA2_DEFAULT
}
fn default_adam_eps() -> f64 {
    ADAM_EPS_DEFAULT
}
fn default_probe_hidden() -> usize {
    64
}
fn default_probe_lr() -> f64 {
    PROBE_LR_DEFAULT
}
fn default_probe_epochs() -> usize {
    PROBE_EPOCHS_DEFAULT
}
fn default_one() -> f64 {
    1.0
}

impl Default for TrainSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty train section deserializes from defaults")
    }
}

impl Default for ProbeSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty probe section deserializes from defaults")
    }
}

impl RunConfigFile {
    pub fn parse(text: &str, path: &std::path::Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::json(path, &e))
    }

    pub fn to_adaptor_config(&self) -> AdaptorConfig {
        let a = &self.adaptor;
        let d_ffn = a.d_ffn.unwrap_or(2 * a.d_shared);
        let mut c = AdaptorConfig::with_dims(a.d_img, a.d_txt, a.d_shared, a.n_heads, d_ffn);
        c.n_layers = a.n_layers;
        c.normalize_outputs = a.normalize_outputs;
        c.share_branch_weights = a.share_branch_weights;
        c
    }

    pub fn to_train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            adaptor: self.to_adaptor_config(),
            alpha: t.alpha,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            grad_clip: t.grad_clip,
        }
    }

    pub fn to_probe_config(&self, fraction_override: Option<f64>) -> ProbeConfig {
        let p = &self.probe;
        ProbeConfig {
            hidden_dim: p.hidden_dim,
            lr: p.lr,
            epochs: p.epochs,
            data_fraction: fraction_override.unwrap_or(p.data_fraction),
            seed: p.seed,
        }
    }
}

/// Synthetic-cache specification file, mirroring the generator's knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecFile {
    pub n_samples: usize,
    pub d_latent: usize,
    pub d_img: usize,
    pub d_txt: usize,
    pub n_classes: usize,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise_sigma() -> f64 {
    0.05
}

impl SynthSpecFile {
    pub fn parse(text: &str, path: &std::path::Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::json(path, &e))
    }

    pub fn to_spec(&self) -> SynthSpec {
        SynthSpec {
            n_samples: self.n_samples,
            d_latent: self.d_latent,
            d_img: self.d_img,
            d_txt: self.d_txt,
            n_classes: self.n_classes,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

/// One line of the metrics log (JSON Lines). `wall_ms` is `0` in
/// deterministic mode so logs compare bitwise across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsLine {
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
    pub l_i2t: f64,
    pub l_t2i: f64,
    pub tau: f64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

/// Serialized [`EvalReport`] plus the runtime frozen-parameter audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub recall_at_k: Vec<RecallEntry>,
    pub probe_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_auroc: Option<f64>,
    pub separability_before: f64,
    pub separability_after: f64,
    pub probe: ProbeEcho,
    /// True when re-encoding the checkpoint after evaluation reproduced the
    /// loaded bytes: the adaptor stayed frozen.
    pub frozen_verified: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecallEntry {
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeEcho {
    pub hidden_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub data_fraction: f64,
    pub seed: u64,
}

impl ReportFile {
    pub fn from_report(report: &EvalReport, frozen_verified: bool) -> Self {
        ReportFile {
            recall_at_k: report
                .recall_at_k
                .iter()
                .map(|&(k, recall)| RecallEntry { k, recall })
                .collect(),
            probe_accuracy: report.probe_accuracy,
            probe_auroc: report.probe_auroc,
            separability_before: report.separability_before,
            separability_after: report.separability_after,
            probe: ProbeEcho {
                hidden_dim: report.probe.hidden_dim,
                lr: report.probe.lr,
                epochs: report.probe.epochs,
                data_fraction: report.probe.data_fraction,
                seed: report.probe.seed,
            },
            frozen_verified,
        }
    }
}

/// `manifest.json` written by `synth`: the interpreted spec plus one entry
/// per written cache file. CRCs cover the whole file, so two manifests match
/// exactly when the caches match byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpecFile,
    pub splits: Vec<ManifestSplit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSplit {
    pub split: String,
    pub file: String,
    pub n_samples: usize,
    pub file_crc32: u32,
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report DTOs serialize infallibly");
    s.push('\n');
    s
}
