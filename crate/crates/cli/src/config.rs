//! JSON run configuration: the experiment settings plus paths and variant
//! selection. Every run writes the resolved form next to its outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nucleonet::data::SynthParams;
use nucleonet::model::Variant;
use nucleonet::training::ExperimentConfig;
use nucleonet::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RESOLVED_NAME: &str = "resolved_config.json";

/// A single model variant, or the WF/WFM combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Default,
    W,
    Wf,
    Wfm,
    Combo,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Default => "default",
            Selection::W => "w",
            Selection::Wf => "wf",
            Selection::Wfm => "wfm",
            Selection::Combo => "combo",
        }
    }

    /// Variants that must be trained to produce this selection.
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Selection::Default => vec![Variant::Default],
            Selection::W => vec![Variant::W],
            Selection::Wf => vec![Variant::Wf],
            Selection::Wfm => vec![Variant::Wfm],
            Selection::Combo => vec![Variant::Wf, Variant::Wfm],
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown variant '{s}' (expected default, w, wf, wfm or combo)"))
    }
}

/// Settings of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub side: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let p = SynthParams::default();
        SynthConfig {
            seed: p.seed,
            count: p.count,
            side: p.side,
            noise: p.noise,
        }
    }
}

impl SynthConfig {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            seed: self.seed,
            count: self.count,
            side: self.side,
            noise: self.noise,
            ..SynthParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub variant: Option<Selection>,
    pub manifest: Option<PathBuf>,
    /// Directory image paths are resolved against; defaults to the
    /// manifest's directory.
    pub image_root: Option<PathBuf>,
    /// Injected-feature file. When absent, stand-in features of
    /// `feature_dim` entries are computed from the images.
    pub features: Option<PathBuf>,
    pub feature_dim: usize,
    pub out_dir: Option<PathBuf>,
    /// Autoencoder checkpoint used for every round instead of pretraining
    /// per round.
    pub cae_checkpoint: Option<PathBuf>,
    /// Output directory of an earlier `train` run, read by `eval`.
    pub checkpoints: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentConfig::default(),
            variant: None,
            manifest: None,
            image_root: None,
            features: None,
            feature_dim: 150,
            out_dir: None,
            cae_checkpoint: None,
            checkpoints: None,
            synth: SynthConfig::default(),
        }
    }
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf> {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).map_err(|e| Error::io(&joined, e))
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    fn path_fields(&mut self) -> [&mut Option<PathBuf>; 6] {
        [
            &mut self.manifest,
            &mut self.image_root,
            &mut self.features,
            &mut self.out_dir,
            &mut self.cae_checkpoint,
            &mut self.checkpoints,
        ]
    }

    /// Makes every path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        for p in self.path_fields() {
            if let Some(v) = p.as_mut() {
                *v = absolute(base, v)?;
            }
        }
        Ok(())
    }

    /// Value of a key the subcommand cannot run without.
    pub fn require<'a, T>(value: &'a Option<T>, key: &str, command: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing config key '{key}' (required by {command})")))
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        self.synth.params().validate()
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.experiment.momentum, 0.975);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"experiment": {"momentun": 0.9}}"#).unwrap_err();
        assert!(err.to_string().contains("momentun"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let cfg = RunConfig::default();
        let err = RunConfig::require(&cfg.manifest, "manifest", "train").unwrap_err();
        assert!(err.to_string().contains("'manifest'"));
    }

    #[test]
    fn selection_parses() {
        assert_eq!("combo".parse::<Selection>().unwrap(), Selection::Combo);
        assert!("vgg".parse::<Selection>().is_err());
        assert_eq!(Selection::Combo.variants(), vec![Variant::Wf, Variant::Wfm]);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig {
            variant: Some(Selection::Wfm),
            manifest: Some("/data/manifest.csv".into()),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
