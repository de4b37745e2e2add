//! Stability-driven placement analysis for controllable inverter-based DERs
//! on radial distribution feeders.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix them to `f64`, which the placement layer uses.

pub mod control;
pub mod feeder;
pub mod placement;
mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod simulator;
pub mod stability;
pub mod svg;

pub use control::{
    Apnp, Configuration, ControlError, GainBounds, GainSample, SamplingParams, SamplingScheme,
    StructuralIdentity,
};
pub use feeder::{Branch, Feeder, FeederError, Line, Node, NodeClass, Phase, PhaseSet};
pub use scalar::Scalar;
pub use sensitivity::{build_rx, check_pd, PdReport, SensitivityMode};
pub use stability::{check_sisl, unit_eigvec_support, StabilityError};

/// Bundled 25-node test feeder: three-phase trunk with single- and
/// two-phase laterals.
pub const SYNTHETIC_FEEDER_25: &str = include_str!("../data/synthetic25.json");

pub type SensitivityMatrices = sensitivity::SensitivityMatrices<f64>;
pub type StateSpace = control::StateSpace<f64>;
pub type Tolerances = stability::Tolerances<f64>;
pub type StabilityVerdict = stability::StabilityVerdict<f64>;
pub type StableFraction = stability::StableFraction<f64>;
pub type Trajectory = simulator::Trajectory<f64>;
pub type DisturbanceSchedule = simulator::DisturbanceSchedule<f64>;
