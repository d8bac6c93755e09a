use std::path::{Path, PathBuf};

use multiage::bench::{NoiseConfig, SelectionCriteria};
use multiage::metrics::Grouping;
use multiage::synth::SynthSpec;
use multiage::{NetworkConfig, Split, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    /// Overrides the manifest header's embedding file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Root under which run directories are created.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// `<id>.png` / `<id>.jpg` face patches for image statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_dir: Option<PathBuf>,
    /// CSV with `id,brightness,contrast,saturation,sharpness`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_csv: Option<PathBuf>,
    /// CSV with `id,age,age_estimate,over18_score` for noise flagging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub target_fnr: f64,
    pub split: Split,
    /// Thresholds also calibrated on the age estimate (`T - ŷ`).
    pub age_thresholds: Vec<u32>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            target_fnr: 0.01,
            split: Split::Val,
            age_thresholds: vec![12, 15, 18, 21],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub groupings: Vec<Grouping>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            groupings: vec![Grouping::All, Grouping::Source],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WildSection {
    pub criteria: SelectionCriteria,
    /// Restricts candidates to one split; all samples when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub flags: NoiseConfig,
    /// Splits scored by the checkpoint when no predictions file is given.
    pub splits: Vec<Split>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            flags: NoiseConfig::default(),
            splits: vec![Split::Train, Split::Val],
        }
    }
}

/// One experiment: everything a command needs besides its flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub net: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub wild: WildSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, applies the seed override and resolves relative paths
    /// against the config file's directory.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        if let Some(out) = out {
            cfg.paths.out = out.to_path_buf();
        }
        cfg.normalize();
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.manifest);
        fix(&mut paths.out);
        for p in [&mut paths.embeddings, &mut paths.images_dir, &mut paths.stats_csv, &mut paths.predictions]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Propagates the experiment seed and fills unit task weights.
    pub fn normalize(&mut self) {
        self.train.seed = self.seed;
        if self.train.head_weights.is_empty() {
            self.train.head_weights = vec![1.0; self.train.heads.len() + 1];
        }
        if let Some(s) = self.synth.as_mut() {
            s.seed = self.seed;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.net.validate()?;
        self.train.validate(&self.net)?;
        let t = self.calibration.target_fnr;
        if !(0.0..1.0).contains(&t) {
            return Err(CliError::Config(format!("calibration.target_fnr {t} outside [0, 1)")));
        }
        self.wild.criteria.validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except file locations,
    /// so moving a run tree does not change its identity.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("paths");
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.out.join(&self.hash()[..16])
    }
}
