//! Training snapshots: a JSON header followed by raw little-endian `f64` blobs,
//! so parameters and optimizer moments round-trip bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Architecture, Network, OptimizerState};
use crate::pattern::{Preset, TrafficPattern};
use crate::policy::{EncoderConfig, PolicyParams, ValueParams};
use crate::ppo::{IterationMetrics, TrainConfig, Trainer};

const MAGIC: &[u8; 8] = b"RHCKPT01";

/// Short hex digest identifying a (preset, training configuration) pair.
pub fn config_hash(preset: &Preset, cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(preset.to_toml_string().as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Preset the run was trained on, as TOML.
    pub preset: String,
    pub iteration: usize,
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub policy_optimizer: OptimizerState,
    pub value_optimizer: OptimizerState,
    pub history: Vec<IterationMetrics>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    preset: String,
    iteration: usize,
    encoder: EncoderConfig,
    value_scale: f64,
    policy_arch: Architecture,
    value_arch: Architecture,
    policy_adam: AdamConfig,
    policy_steps: u64,
    value_adam: AdamConfig,
    value_steps: u64,
    history: Vec<IterationMetrics>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, preset: &Preset) -> Self {
        Self {
            config: trainer.config.clone(),
            config_hash: config_hash(preset, &trainer.config),
            preset: preset.to_toml_string(),
            iteration: trainer.iteration,
            policy: trainer.policy.clone(),
            value: trainer.value.clone(),
            policy_optimizer: trainer.policy_optimizer.clone(),
            value_optimizer: trainer.value_optimizer.clone(),
            history: trainer.history.clone(),
        }
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::from_toml_str(&self.preset)
    }

    /// Rebuilds a trainer that continues exactly where this snapshot left off.
    pub fn into_trainer(self) -> Result<Trainer> {
        let preset = self.preset()?;
        Ok(Trainer {
            config: self.config,
            pattern: preset.pattern,
            rewards: preset.rewards,
            policy: self.policy,
            value: self.value,
            policy_optimizer: self.policy_optimizer,
            value_optimizer: self.value_optimizer,
            iteration: self.iteration,
            history: self.history,
        })
    }

    /// Fails unless the stored policy can drive `pattern`.
    pub fn check_compatible(&self, pattern: &TrafficPattern) -> Result<()> {
        let enc = EncoderConfig::for_pattern(pattern);
        let p = &self.policy.encoder;
        if enc.regions != p.regions || enc.patience != p.patience || enc.horizon != p.horizon || enc.car_slots != p.car_slots {
            return Err(Error::Config(format!(
                "checkpoint was trained on a pattern with different dimensions than '{}'",
                pattern.name()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            preset: self.preset.clone(),
            iteration: self.iteration,
            encoder: self.policy.encoder.clone(),
            value_scale: self.value.scale,
            policy_arch: self.policy.net.architecture().clone(),
            value_arch: self.value.net.architecture().clone(),
            policy_adam: self.policy_optimizer.config,
            policy_steps: self.policy_optimizer.step,
            value_adam: self.value_optimizer.config,
            value_steps: self.value_optimizer.step,
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for blob in [
            self.policy.net.params(),
            &self.policy_optimizer.first_moment,
            &self.policy_optimizer.second_moment,
            self.value.net.params(),
            &self.value_optimizer.first_moment,
            &self.value_optimizer.second_moment,
        ] {
            let mut bytes = Vec::with_capacity(blob.len() * 8);
            for v in blob {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: Default::default(),
            reason: reason.into(),
        };
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(bad("header too large"));
        }
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| bad(&format!("header: {e}")))?;

        let policy_zero = Network::zeros(h.policy_arch.clone())?;
        let value_zero = Network::zeros(h.value_arch.clone())?;
        let mut read_blob = |n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            input.read_exact(&mut bytes).map_err(|_| bad("truncated parameter data"))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let (pn, vn) = (policy_zero.param_count(), value_zero.param_count());
        let policy_params = read_blob(pn)?;
        let policy_m = read_blob(pn)?;
        let policy_v = read_blob(pn)?;
        let value_params = read_blob(vn)?;
        let value_m = read_blob(vn)?;
        let value_v = read_blob(vn)?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing data"));
        }

        Ok(Self {
            config: h.config,
            config_hash: h.config_hash,
            preset: h.preset,
            iteration: h.iteration,
            policy: PolicyParams::new(Network::from_params(h.policy_arch, policy_params)?, h.encoder.clone())?,
            value: ValueParams::new(Network::from_params(h.value_arch, value_params)?, h.encoder, h.value_scale)?,
            policy_optimizer: OptimizerState {
                config: h.policy_adam,
                step: h.policy_steps,
                first_moment: policy_m,
                second_moment: policy_v,
            },
            value_optimizer: OptimizerState {
                config: h.value_adam,
                step: h.value_steps,
                first_moment: value_m,
                second_moment: value_v,
            },
            history: h.history,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}
