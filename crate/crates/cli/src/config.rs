use std::path::{Path, PathBuf};

use affectcae::models::ArchConfig;
use affectcae::nn::{LossKind, TrainConfig};
use affectcae::postprocess::{CenterMode, ChainGrid, ScaleMode};
use affectcae::svr::{Kernel, DEFAULT_C_GRID, DEFAULT_EPSILON_GRID};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every stage parameter of a run. All keys are optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Frames by which labels trail the features.
    pub delay: usize,
    pub data: DataSection,
    pub arch: ArchSection,
    pub pretrain: TrainSection,
    pub cae: CaeSection,
    pub svr: SvrSection,
    pub postprocess: PostSection,
    pub synth: SynthSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            delay: 0,
            data: DataSection::default(),
            arch: ArchSection::default(),
            pretrain: TrainSection::default(),
            cae: CaeSection::default(),
            svr: SvrSection::default(),
            postprocess: PostSection::default(),
            synth: SynthSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataSection {
    pub fer_csv: PathBuf,
    pub recola_root: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            fer_csv: PathBuf::from("data/fer2013.csv"),
            recola_root: PathBuf::from("data/recola"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ArchSection {
    pub conv_widths: [usize; 3],
    pub decoder_widths: [usize; 3],
    pub dense_units: [usize; 3],
    pub cnn_dropout: f64,
    pub cae_dropout: f64,
    pub decoder_pool: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self {
            conv_widths: a.conv_widths,
            decoder_widths: a.decoder_widths,
            dense_units: a.dense_units,
            cnn_dropout: a.cnn_dropout,
            cae_dropout: a.cae_dropout,
            decoder_pool: a.decoder_pool,
            bn_momentum: a.bn_momentum,
            bn_epsilon: a.bn_epsilon,
        }
    }
}

impl ArchSection {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            conv_widths: self.conv_widths,
            decoder_widths: self.decoder_widths,
            dense_units: self.dense_units,
            cnn_dropout: self.cnn_dropout,
            cae_dropout: self.cae_dropout,
            decoder_pool: self.decoder_pool,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
            ..ArchConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping on validation loss; absent means off.
    pub patience: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_epsilon: t.adam_epsilon,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            loss,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            seed,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CaeSection {
    pub encoder_size: usize,
    /// Encoder conv layers frozen, counted from the input.
    pub freeze: usize,
    pub transfer: bool,
    pub freeze_bn_stats: bool,
    pub train: TrainSection,
}

impl Default for CaeSection {
    fn default() -> Self {
        Self {
            encoder_size: 900,
            freeze: 0,
            transfer: true,
            freeze_bn_stats: true,
            train: TrainSection {
                max_epochs: 100,
                ..TrainSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SvrSection {
    /// `linear` or `rbf:<gamma>`.
    pub kernel: String,
    pub c_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrSection {
    fn default() -> Self {
        Self {
            kernel: "linear".into(),
            c_grid: DEFAULT_C_GRID.to_vec(),
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PostSection {
    pub median_windows: Vec<usize>,
    pub shifts: Vec<usize>,
    pub center_mode: String,
    pub scale_mode: String,
}

impl Default for PostSection {
    fn default() -> Self {
        let g = ChainGrid::default();
        Self {
            median_windows: g.median_windows,
            shifts: g.shifts,
            center_mode: g.center_mode.to_string(),
            scale_mode: g.scale_mode.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthSection {
    pub subjects: usize,
    pub frames: usize,
    /// Trailing subjects assigned to the validation partition.
    pub dev_subjects: usize,
    pub images_per_class: usize,
    pub test_images_per_class: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            subjects: 4,
            frames: 500,
            dev_subjects: 1,
            images_per_class: 40,
            test_images_per_class: 10,
        }
    }
}

/// Sweep axes; an empty list keeps the base config value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepSection {
    pub freeze: Vec<usize>,
    pub encoder_sizes: Vec<usize>,
    pub delays: Vec<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.arch
            .arch()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (name, t) in [("pretrain", &self.pretrain), ("cae.train", &self.cae.train)] {
            t.train_config(LossKind::Mse, 0)
                .validate()
                .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        if self.cae.encoder_size == 0 {
            return bad("cae.encoder-size must be positive".into());
        }
        if self.cae.freeze > 3 {
            return bad(format!(
                "cae.freeze must be in 0..=3, got {}",
                self.cae.freeze
            ));
        }
        self.kernel()?;
        self.chain_grid()?;
        if self.svr.c_grid.is_empty() || self.svr.epsilon_grid.is_empty() {
            return bad("svr grids must be non-empty".into());
        }
        if self.svr.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return bad("svr.c-grid values must be positive".into());
        }
        if self
            .svr
            .epsilon_grid
            .iter()
            .any(|&e| !(e >= 0.0 && e.is_finite()))
        {
            return bad("svr.epsilon-grid values must be non-negative".into());
        }
        if !(self.svr.tol > 0.0) || self.svr.max_iter == 0 {
            return bad("svr.tol and svr.max-iter must be positive".into());
        }
        if self.synth.dev_subjects >= self.synth.subjects.max(1) {
            return bad("synth.dev-subjects must leave at least one training subject".into());
        }
        if self.sweep.freeze.iter().any(|&f| f > 3) {
            return bad("sweep.freeze values must be in 0..=3".into());
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel, CliError> {
        self.svr
            .kernel
            .parse()
            .map_err(|e: affectcae::Error| CliError::Config(format!("svr.kernel: {e}")))
    }

    pub fn chain_grid(&self) -> Result<ChainGrid, CliError> {
        let center: CenterMode = self
            .postprocess
            .center_mode
            .parse()
            .map_err(|e: affectcae::Error| CliError::Config(e.to_string()))?;
        let scale: ScaleMode = self
            .postprocess
            .scale_mode
            .parse()
            .map_err(|e: affectcae::Error| CliError::Config(e.to_string()))?;
        if self.postprocess.median_windows.iter().any(|w| w % 2 == 0) {
            return Err(CliError::Config(
                "postprocess.median-windows must be odd".into(),
            ));
        }
        if self
            .postprocess
            .shifts
            .iter()
            .any(|&k| k > affectcae::postprocess::MAX_SHIFT)
        {
            return Err(CliError::Config(format!(
                "postprocess.shifts must not exceed {}",
                affectcae::postprocess::MAX_SHIFT
            )));
        }
        Ok(ChainGrid {
            median_windows: self.postprocess.median_windows.clone(),
            shifts: self.postprocess.shifts.clone(),
            center_mode: center,
            scale_mode: scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.cae.train.patience = Some(3);
        c.sweep.encoder_sizes = vec![100, 900];
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_named() {
        let e = RunConfig::parse("[cae]\nencoder-sise = 3\n").unwrap_err();
        assert!(
            matches!(e, CliError::Config(ref m) if m.contains("encoder-sise")),
            "{e}"
        );
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[cae]\nfreeze = 4\n").is_err());
        assert!(RunConfig::parse("[svr]\nkernel = \"poly\"\n").is_err());
        assert!(RunConfig::parse("[postprocess]\nmedian-windows = [2]\n").is_err());
        assert!(RunConfig::parse("[pretrain]\nlearning-rate = -1.0\n").is_err());
    }
}
