//! Run configuration and the named experimental conditions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::core_affect::ProfileKind;
use crate::error::{Error, Result};
use crate::gmm::NwHyper;
use crate::mhng::{LearnConfig, Scenario};
use crate::stimuli::{DatasetSpec, Modality, ModalitySpec};

/// Every knob of a single experiment. Missing keys take the defaults below,
/// which match `configs/default.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub condition: String,
    pub scenario: Scenario,
    pub profile_a: ProfileKind,
    pub profile_b: ProfileKind,
    /// Feed interoception to the agents; off gives the vision+audio baseline.
    pub interoception: bool,

    pub stimuli_per_emotion: usize,
    pub vision_dim: usize,
    pub audio_dim: usize,
    pub vision_noise: f64,
    pub audio_noise: f64,
    pub separation: f64,
    pub intero_frames: usize,
    pub ou_steps: usize,
    pub ou_dt: f64,

    pub k: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    pub unit_prior_expert: bool,
    pub prior_expert: bool,
    pub kappa0: f64,
    /// Wishart degrees of freedom; `latent_dim + 2` when absent.
    pub nu0: Option<f64>,

    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 0,
            condition: Condition::OriginalOriginal.name().to_string(),
            scenario: Scenario::MetropolisHastings,
            profile_a: ProfileKind::Original,
            profile_b: ProfileKind::Original,
            interoception: true,
            stimuli_per_emotion: 8,
            vision_dim: 40,
            audio_dim: 60,
            vision_noise: 11.0,
            audio_noise: 11.0,
            separation: 2.0,
            intero_frames: 32,
            ou_steps: 345,
            ou_dt: 0.02,
            k: 9,
            latent_dim: 9,
            hidden_dim: 64,
            init_scale: 0.1,
            unit_prior_expert: false,
            prior_expert: false,
            kappa0: 1.0,
            nu0: None,
            rounds: 50,
            epochs: 3,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        nonzero("stimuli_per_emotion", self.stimuli_per_emotion)?;
        nonzero("vision_dim", self.vision_dim)?;
        nonzero("audio_dim", self.audio_dim)?;
        nonzero("intero_frames", self.intero_frames)?;
        nonzero("ou_steps", self.ou_steps)?;
        nonzero("latent_dim", self.latent_dim)?;
        nonzero("hidden_dim", self.hidden_dim)?;
        nonzero("batch_size", self.batch_size)?;
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.intero_frames > self.ou_steps + 1 {
            return Err(Error::Config(format!(
                "intero_frames ({}) exceeds the {} simulated samples",
                self.intero_frames,
                self.ou_steps + 1
            )));
        }
        positive("ou_dt", self.ou_dt)?;
        positive("kappa0", self.kappa0)?;
        positive("init_scale", self.init_scale)?;
        for (name, v) in [
            ("vision_noise", self.vision_noise),
            ("audio_noise", self.audio_noise),
            ("separation", self.separation),
            ("learning_rate", self.learning_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.nu0() <= self.latent_dim as f64 - 1.0 || !self.nu0().is_finite() {
            return Err(Error::Config(format!(
                "nu0 must exceed latent_dim - 1 = {}, got {}",
                self.latent_dim - 1,
                self.nu0()
            )));
        }
        if self.condition.is_empty() || self.condition.contains([',', '\n', '"']) {
            return Err(Error::Config(format!("condition name '{}' is not a plain label", self.condition)));
        }
        Ok(())
    }

    pub fn nu0(&self) -> f64 {
        self.nu0.unwrap_or(self.latent_dim as f64 + 2.0)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            vision: ModalitySpec {
                modality: Modality::Vision,
                dim: self.vision_dim,
                noise_scale: self.vision_noise,
            },
            audio: ModalitySpec {
                modality: Modality::Audio,
                dim: self.audio_dim,
                noise_scale: self.audio_noise,
            },
            intero_frames: self.intero_frames,
            ou_steps: self.ou_steps,
            ou_dt: self.ou_dt,
            separation: self.separation,
        }
    }

    /// Modalities the agents observe, in network order.
    pub fn modalities(&self) -> Vec<Modality> {
        let mut m = vec![Modality::Vision, Modality::Audio];
        if self.interoception {
            m.push(Modality::Interoception);
        }
        m
    }

    pub fn hyper(&self) -> NwHyper {
        NwHyper::weak(self.latent_dim, self.kappa0, self.nu0()).expect("validated hyperparameters")
    }

    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            hyper: self.hyper(),
            prior_expert: self.prior_expert,
        }
    }

    /// This config with a named condition's profiles and modalities applied.
    pub fn with_condition(&self, c: Condition) -> RunConfig {
        let mut out = self.clone();
        out.condition = c.name().to_string();
        out.profile_a = ProfileKind::Original;
        out.profile_b = c.profile_b();
        out.interoception = c.interoception();
        out
    }
}

/// The five agent pairings compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Both agents see vision and audio only.
    VisionAudio,
    OriginalOriginal,
    OriginalHappyInverse,
    OriginalLowValenceFocus,
    OriginalLowArousalFocus,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::VisionAudio,
        Condition::OriginalOriginal,
        Condition::OriginalHappyInverse,
        Condition::OriginalLowValenceFocus,
        Condition::OriginalLowArousalFocus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::VisionAudio => "vision_audio",
            Condition::OriginalOriginal => "original_original",
            Condition::OriginalHappyInverse => "original_happy_inverse",
            Condition::OriginalLowValenceFocus => "original_low_valence_focus",
            Condition::OriginalLowArousalFocus => "original_low_arousal_focus",
        }
    }

    pub fn profile_b(self) -> ProfileKind {
        match self {
            Condition::VisionAudio | Condition::OriginalOriginal => ProfileKind::Original,
            Condition::OriginalHappyInverse => ProfileKind::HappyInverse,
            Condition::OriginalLowValenceFocus => ProfileKind::LowValenceFocus,
            Condition::OriginalLowArousalFocus => ProfileKind::LowArousalFocus,
        }
    }

    pub fn interoception(self) -> bool {
        self != Condition::VisionAudio
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Condition> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown condition '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn checked_in_default_matches() {
        let text = include_str!("../../../../configs/default.toml");
        assert_eq!(RunConfig::from_toml_str(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\nscenario = \"always_accept\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.scenario, Scenario::AlwaysAccept);
        assert_eq!(cfg.k, 9);
        assert_eq!(cfg.nu0(), 11.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml_str("k = 1").is_err());
        assert!(RunConfig::from_toml_str("momentum = 1.0").is_err());
        assert!(RunConfig::from_toml_str("nu0 = 3.0").is_err());
        assert!(RunConfig::from_toml_str("profile_b = \"sideways\"").is_err());
        assert!(RunConfig::from_toml_str("condition = \"a,b\"").is_err());
    }

    #[test]
    fn conditions() {
        let base = RunConfig::default();
        let va = base.with_condition(Condition::VisionAudio);
        assert!(!va.interoception);
        assert_eq!(va.modalities(), vec![Modality::Vision, Modality::Audio]);
        let la = base.with_condition(Condition::OriginalLowArousalFocus);
        assert_eq!(la.profile_b, ProfileKind::LowArousalFocus);
        assert_eq!(la.condition, "original_low_arousal_focus");
        for c in Condition::ALL {
            assert_eq!(c.name().parse::<Condition>().unwrap(), c);
        }
    }
}
