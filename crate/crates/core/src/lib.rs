//! Ride-hailing fleet control as a finite-horizon MDP whose per-epoch joint
//! action is built one car at a time, plus a from-scratch PPO trainer for the
//! resulting trip-selection policy.

pub mod baselines;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pattern;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod sdm;
pub mod state;

pub use error::{Error, Result};
pub use pattern::{Preset, RewardSpec, TrafficPattern};
pub use sdm::{AtomicAction, DispatchPolicy, StepRecord, TaskKind};
pub use state::{CarsStatus, PassengersStatus, SdmState, SystemState};
