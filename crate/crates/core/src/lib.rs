//! Simulation library for capturing and detumbling a spin-stabilized target
//! satellite with a spinning-base servicing robot.
//!
//! The mission runs in three phases: the base attitude is synchronized with
//! the spinning target while the arm joints are locked (A); the arm then
//! reaches the grapple fixture under coordination control (B); finally the
//! joints are relocked and the reaction wheels absorb the angular momentum of
//! the rigidized stack at the fastest rate the wheel and end-effector torque
//! limits allow (C).

pub mod control;
pub mod dynamics;
pub mod model;
pub mod sim;
pub mod spatial;

pub use model::{ConfigError, SystemModel};
pub use spatial::Quaternion;
