//! Run configuration: profile presets overlaid with a TOML file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use fama_core::channel::{ChannelModel, Layout, Scenario};
use fama_core::copula::{CopulaConfig, SamplingMode};
use fama_core::encoding::Placement;
use fama_core::eval::{Axis, ExperimentConfig};
use fama_core::marginal::FlowConfig;
use fama_core::train::TrainSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale model and schedule.
    Table1,
    /// Small model and short schedule for a single workstation.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskPolicy {
    pub train_min_ports: usize,
    pub train_max_ports: usize,
    pub train_placement: Placement,
    pub eval_placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub axis: Axis,
    pub values: Vec<usize>,
    pub observed_ports: usize,
    pub trials: usize,
    pub samples: usize,
    pub sampling: SamplingMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub scenario: Scenario,
    pub mask: MaskPolicy,
    pub flow: FlowConfig,
    pub copula: CopulaConfig,
    pub marginal_training: TrainSchedule,
    pub copula_training: TrainSchedule,
    pub eval: EvalSettings,
}

/// The parts of a configuration that determine model and data identity.
#[derive(Serialize)]
struct Identity<'a> {
    scenario: &'a Scenario,
    mask: &'a MaskPolicy,
    flow: &'a FlowConfig,
    copula: &'a CopulaConfig,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Table1 => {
                let ports = 200;
                RunConfig {
                    profile,
                    seed: 0,
                    scenario: Scenario::rich(Layout::Linear { ports, aperture: 10.0 }, 50, 10.0),
                    mask: MaskPolicy {
                        train_min_ports: 10,
                        train_max_ports: 60,
                        train_placement: Placement::Random,
                        eval_placement: Placement::EquallySpaced,
                    },
                    flow: FlowConfig::table1(),
                    copula: CopulaConfig::table1(),
                    marginal_training: TrainSchedule {
                        epochs: 600,
                        batches_per_epoch: 1000,
                        batch_size: 16,
                        lr: 1e-5,
                        grad_clip: 5.0,
                    },
                    copula_training: TrainSchedule {
                        epochs: 300,
                        batches_per_epoch: 1000,
                        batch_size: 8,
                        lr: 5e-6,
                        grad_clip: 5.0,
                    },
                    eval: EvalSettings {
                        axis: Axis::M,
                        values: vec![10, 20, 30, 40, 50, 60],
                        observed_ports: 25,
                        trials: 200,
                        samples: 16,
                        sampling: SamplingMode::Joint,
                    },
                }
            }
            Profile::Desk => {
                let ports = 32;
                RunConfig {
                    profile,
                    seed: 0,
                    scenario: Scenario::rich(Layout::Linear { ports, aperture: 2.0 }, 8, 10.0),
                    mask: MaskPolicy {
                        train_min_ports: 4,
                        train_max_ports: 16,
                        train_placement: Placement::Random,
                        eval_placement: Placement::EquallySpaced,
                    },
                    flow: FlowConfig::desk(),
                    copula: CopulaConfig::desk(),
                    marginal_training: TrainSchedule {
                        epochs: 20,
                        batches_per_epoch: 200,
                        batch_size: 16,
                        lr: 3e-3,
                        grad_clip: 5.0,
                    },
                    copula_training: TrainSchedule {
                        epochs: 20,
                        batches_per_epoch: 200,
                        batch_size: 16,
                        lr: 1e-3,
                        grad_clip: 5.0,
                    },
                    eval: EvalSettings {
                        axis: Axis::M,
                        values: vec![4, 8, 12, 16],
                        observed_ports: 8,
                        trials: 100,
                        samples: 16,
                        sampling: SamplingMode::Joint,
                    },
                }
            }
        }
    }

    /// Resolve a configuration. The profile comes from `profile`, else the
    /// file's `profile` key, else `table1`; file values override the preset
    /// key by key, and `seed` overrides everything.
    pub fn load(path: Option<&Path>, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        Self::from_table(user, profile, seed)
    }

    pub fn from_table(user: toml::Table, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let file_profile = match user.get("profile") {
            Some(v) => Some(
                Profile::deserialize(v.clone())
                    .map_err(|e| anyhow::anyhow!("config field `profile`: {e}"))?,
            ),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or(Profile::Table1);
        let mut base = toml::Table::try_from(Self::preset(profile)).context("serializing preset")?;
        merge(&mut base, user);
        base.insert("profile".into(), toml::Value::try_from(profile)?);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(base))
            .map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.scenario.geometry.ports();
        if k == 0 {
            bail!("config field `scenario.geometry`: at least one port is required");
        }
        if self.scenario.users == 0 {
            bail!("config field `scenario.users`: at least one user is required");
        }
        if self.scenario.snr_db.is_nan() || self.scenario.snr_db == f64::NEG_INFINITY {
            bail!("config field `scenario.snr_db`: must be a number or +inf");
        }
        let m = &self.mask;
        if m.train_min_ports < 1 || m.train_min_ports > m.train_max_ports || m.train_max_ports > k {
            bail!(
                "config field `mask`: training range [{}, {}] invalid for {k} ports",
                m.train_min_ports,
                m.train_max_ports
            );
        }
        for (name, s) in [
            ("marginal_training", &self.marginal_training),
            ("copula_training", &self.copula_training),
        ] {
            if s.batch_size == 0 || s.batches_per_epoch == 0 {
                bail!("config field `{name}`: batch size and batches per epoch must be positive");
            }
            if !(s.lr > 0.0) {
                bail!("config field `{name}.lr`: must be positive");
            }
        }
        if !self.copula.model_dim.is_multiple_of(self.copula.heads.max(1)) || self.copula.heads == 0 {
            bail!("config field `copula.heads`: must divide copula.model_dim");
        }
        self.experiment()
            .validate()
            .map_err(|e| anyhow::anyhow!("config field `eval`: {e}"))?;
        Ok(())
    }

    pub fn ports(&self) -> usize {
        self.scenario.geometry.ports()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            scenario: self.scenario.clone(),
            axis: self.eval.axis,
            values: self.eval.values.clone(),
            observed_ports: self.eval.observed_ports,
            trials: self.eval.trials,
            samples: self.eval.samples,
            placement: self.mask.eval_placement,
            seed: self.seed,
        }
    }

    /// SHA-256 over the scenario, mask policy and model hyperparameters.
    /// Training schedules are excluded so a run can be extended.
    pub fn hash(&self) -> String {
        let id = Identity {
            scenario: &self.scenario,
            mask: &self.mask,
            flow: &self.flow,
            copula: &self.copula,
        };
        let bytes = serde_json::to_vec(&id).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn is_rich(&self) -> bool {
        matches!(self.scenario.channel, ChannelModel::Rich)
    }
}

/// Overlay `user` onto `base`. Tables merge key by key except tagged
/// variants (`kind`/`family`), which replace the preset wholesale.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u))
                if !u.contains_key("kind") && !u.contains_key("family") =>
            {
                merge(b, u)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, p: Option<Profile>) -> Result<RunConfig> {
        RunConfig::from_table(s.parse().unwrap(), p, None)
    }

    #[test]
    fn omitted_values_follow_the_profile() {
        let c = parse("", None).unwrap();
        assert_eq!(c, RunConfig::preset(Profile::Table1));
        assert_eq!(c.flow.embed_dim, 16);
        assert_eq!(c.copula.embed_dim, 16);
        assert_eq!(c.ports(), 200);
        let d = parse("profile = \"desk\"", None).unwrap();
        assert_eq!(d, RunConfig::preset(Profile::Desk));
        let e = parse("profile = \"desk\"", Some(Profile::Table1)).unwrap();
        assert_eq!(e.profile, Profile::Table1);
    }

    #[test]
    fn partial_sections_merge() {
        let c = parse("[scenario]\nusers = 3\n[copula]\nheads = 2", Some(Profile::Desk)).unwrap();
        assert_eq!(c.scenario.users, 3);
        assert_eq!(c.copula.heads, 2);
        assert_eq!(c.copula.model_dim, CopulaConfig::desk().model_dim);
        let p = parse(
            "[scenario.geometry]\nkind = \"planar\"\nports_x = 4\nports_y = 4\naperture_x = 1.0\naperture_y = 1.0",
            Some(Profile::Desk),
        )
        .unwrap();
        assert_eq!(p.ports(), 16);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let e = parse("[copula]\nhead_widht = 3", Some(Profile::Desk)).unwrap_err();
        assert!(e.to_string().contains("copula"), "{e}");
        assert!(e.to_string().contains("head_widht"), "{e}");
        let e = parse("[scenario]\nusers = \"many\"", None).unwrap_err();
        assert!(e.to_string().contains("scenario.users"), "{e}");
        let e = parse("[mask]\ntrain_max_ports = 500", None).unwrap_err();
        assert!(e.to_string().contains("mask"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips_and_hash_ignores_schedule() {
        let c = RunConfig::preset(Profile::Desk);
        let back = parse(&c.to_toml(), None).unwrap();
        assert_eq!(back, c);
        let mut longer = c.clone();
        longer.copula_training.epochs += 5;
        assert_eq!(longer.hash(), c.hash());
        let mut other = c.clone();
        other.scenario.users += 1;
        assert_ne!(other.hash(), c.hash());
    }
}
