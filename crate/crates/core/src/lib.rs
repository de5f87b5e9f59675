//! Dual-network selective-scan co-training for semi-supervised segmentation.
//!
//! Two U-shaped networks built from visual state-space blocks scan their
//! feature grids along different route sets (horizontal/vertical versus
//! diagonal/anti-diagonal), see differently augmented views of each image,
//! and supervise each other through argmax pseudo-labels and a contrastive
//! loss on uncertainty-weighted fused features.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod network;
pub mod params;
pub mod routes;
pub mod ssm;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
