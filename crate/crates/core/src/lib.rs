//! Physiological interactive fiction.

pub mod classify;
pub mod director;
pub mod features;
pub mod sensors;
pub mod simulator;
pub mod story;
pub mod transport;
pub mod session;
