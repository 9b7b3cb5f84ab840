pub mod ber_analytic;
pub mod config;
pub mod curve;
pub mod detection;
pub mod dump;
pub mod error;
pub mod fading;
pub mod metrics;
pub mod numerics;
pub mod photon_counting;
pub mod rng;
pub mod scenario;
pub mod transport;
pub mod waveform_mc;

pub use error::{Error, Result};
