//! State featurization, the masked-softmax trip policy and the value approximator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::masked_softmax;
use crate::nn::{Activation, Architecture, Head, Network, SparseVec, Tape};
use crate::pattern::TrafficPattern;
use crate::sdm::{available_origins, DispatchPolicy};
use crate::state::SdmState;

/// Layout of the numeric feature vector:
/// `[cars (d, eta) | passengers (o, d) | do-nothing (d, eta)]`, each count
/// multiplied by its block's scale. The epoch is fed separately as a category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub regions: usize,
    pub patience: usize,
    pub horizon: usize,
    /// `tau_max[d] + L + 1` per destination.
    pub car_slots: Vec<usize>,
    pub car_scale: f64,
    pub passenger_scale: f64,
    pub do_nothing_scale: f64,
}

impl EncoderConfig {
    /// Every count divided by the fleet size.
    pub fn for_pattern(pattern: &TrafficPattern) -> Self {
        let n = pattern.fleet_size().max(1) as f64;
        Self {
            regions: pattern.regions(),
            patience: pattern.patience(),
            horizon: pattern.horizon(),
            car_slots: pattern
                .tau_max()
                .iter()
                .map(|tau| tau + pattern.patience() + 1)
                .collect(),
            car_scale: 1.0 / n,
            passenger_scale: 1.0 / n,
            do_nothing_scale: 1.0 / n,
        }
    }

    pub fn car_features(&self) -> usize {
        self.car_slots.iter().sum()
    }

    pub fn passenger_offset(&self) -> usize {
        self.car_features()
    }

    pub fn do_nothing_offset(&self) -> usize {
        self.car_features() + self.regions * self.regions
    }

    /// Total numeric feature length: `sum_d (tau_d + L + 1) + R^2 + R (L + 1)`.
    pub fn feature_len(&self) -> usize {
        self.do_nothing_offset() + self.regions * (self.patience + 1)
    }

    /// Scale applied to the raw count at feature `index`.
    pub fn scale_of(&self, index: usize) -> f64 {
        if index < self.passenger_offset() {
            self.car_scale
        } else if index < self.do_nothing_offset() {
            self.passenger_scale
        } else {
            self.do_nothing_scale
        }
    }

    fn check(&self, state: &SdmState) -> Result<()> {
        let r = state.regions();
        let ok = r == self.regions
            && state.patience == self.patience
            && state.passengers.regions() == r
            && (0..r).all(|d| state.cars.slots(d) == self.car_slots[d]);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("state dimensions do not match the encoder".into()))
        }
    }

    /// Calls `emit(index, count)` for every nonzero count, in increasing index order.
    pub fn for_each_count(&self, state: &SdmState, mut emit: impl FnMut(usize, u32)) -> Result<()> {
        self.check(state)?;
        for (i, &c) in state.cars.as_slice().iter().enumerate() {
            if c > 0 {
                emit(i, c);
            }
        }
        let off = self.passenger_offset();
        for (i, &c) in state.passengers.as_slice().iter().enumerate() {
            if c > 0 {
                emit(off + i, c);
            }
        }
        let off = self.do_nothing_offset();
        for (i, &c) in state.do_nothing.iter().enumerate() {
            if c > 0 {
                emit(off + i, c);
            }
        }
        Ok(())
    }
}

/// Time index and scaled sparse numeric features of an SDM state.
pub fn encode_state(state: &SdmState, cfg: &EncoderConfig) -> Result<(usize, SparseVec)> {
    let mut features = SparseVec::new(cfg.feature_len());
    encode_into(state, cfg, &mut features)?;
    Ok((state.epoch, features))
}

pub fn encode_into(state: &SdmState, cfg: &EncoderConfig, out: &mut SparseVec) -> Result<()> {
    out.len = cfg.feature_len();
    out.clear();
    cfg.for_each_count(state, |i, c| out.push(i, c as f64 * cfg.scale_of(i)))
}

/// Hidden-layer shape shared by the policy and value networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            embedding_dim: 6,
            hidden: vec![399, 44, 5],
            activation: Activation::Relu,
        }
    }
}

impl NetShape {
    pub fn architecture(&self, encoder: &EncoderConfig, outputs: usize, head: Head) -> Architecture {
        Architecture {
            vocab: encoder.horizon,
            embedding_dim: self.embedding_dim,
            features: encoder.feature_len(),
            hidden: self.hidden.clone(),
            hidden_activation: self.activation,
            outputs,
            head,
        }
    }
}

/// Randomized trip policy: a softmax network over the `R^2` trips, masked to feasible ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: Network,
    pub encoder: EncoderConfig,
}

impl PolicyParams {
    pub fn new(net: Network, encoder: EncoderConfig) -> Result<Self> {
        let r = encoder.regions;
        let arch = net.architecture();
        if arch.outputs != r * r || arch.features != encoder.feature_len() {
            return Err(Error::Shape(format!(
                "policy network must map {} features to {} trips",
                encoder.feature_len(),
                r * r
            )));
        }
        Ok(Self { net, encoder })
    }

    /// Masked distribution from already-encoded inputs. `origins` is the
    /// bitset of origins with an available car; the tape holds raw logits.
    pub fn distribution_encoded(
        &self,
        time_index: usize,
        features: &SparseVec,
        origins: u64,
        tape: &mut Tape,
        probs: &mut [f64],
    ) -> Result<()> {
        if origins == 0 {
            return Err(Error::EmptyMask);
        }
        self.net.forward_into(time_index, features, false, tape)?;
        let r = self.encoder.regions;
        masked_softmax(tape.raw_output(), |a| origins >> (a / r) & 1 == 1, probs);
        Ok(())
    }
}

/// `pi_theta(.|state)`: zero on infeasible trips, sums to one.
pub fn policy_distribution(params: &PolicyParams, state: &SdmState) -> Result<Vec<f64>> {
    let r = params.encoder.regions;
    let mut probs = vec![0.0; r * r];
    params.distribution(state, &mut probs)?;
    Ok(probs)
}

impl DispatchPolicy for PolicyParams {
    fn distribution(&self, state: &SdmState, probs: &mut [f64]) -> Result<()> {
        let (t, features) = encode_state(state, &self.encoder)?;
        let mut tape = Tape::default();
        self.distribution_encoded(t, &features, available_origins(state), &mut tape, probs)
    }
}

/// State-value approximator; the network predicts `V / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub net: Network,
    pub encoder: EncoderConfig,
    pub scale: f64,
}

impl ValueParams {
    pub fn new(net: Network, encoder: EncoderConfig, scale: f64) -> Result<Self> {
        let arch = net.architecture();
        if arch.outputs != 1 || arch.features != encoder.feature_len() {
            return Err(Error::Shape("value network must map features to a scalar".into()));
        }
        Ok(Self { net, encoder, scale })
    }

    pub fn estimate_encoded(&self, time_index: usize, features: &SparseVec, tape: &mut Tape) -> Result<f64> {
        self.net.forward_into(time_index, features, false, tape)?;
        Ok(self.scale * tape.raw_output()[0])
    }
}

pub fn value_estimate(params: &ValueParams, state: &SdmState) -> Result<f64> {
    let (t, features) = encode_state(state, &params.encoder)?;
    params.estimate_encoded(t, &features, &mut Tape::default())
}
