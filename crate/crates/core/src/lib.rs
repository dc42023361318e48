//! Geometry-aware wearable IMU simulation and tokenization.
//!
//! The pipeline runs from a rigged body model and a motion sequence to
//! dense synthetic IMU signals over body-surface placements, then to paired
//! masked graph windows and finally to interleaved product-quantizer tokens.
//!
//! * [`body`] ingests and resamples body models and motion.
//! * [`placement`] enumerates surface placements with local sensor frames.
//! * [`imu_sim`] synthesizes accelerometer/gyroscope streams and noise.
//! * [`sampler`] builds paired graph views with rotation augmentation and masks.
//! * [`objectives`] holds reference implementations of the training losses.
//! * [`tokenizer`] is the EMA product quantizer with dead-code refresh.
//! * [`formats`] reads and writes the GMC1/GIW1/GPW1/GCB1 containers.

pub mod body;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod formats;
pub mod geometry;
pub mod imu_sim;
pub mod objectives;
pub mod placement;
pub mod sampler;
pub mod seed;
pub mod tokenizer;
pub mod verify;

pub use error::{Error, Result};
