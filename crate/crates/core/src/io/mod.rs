//! Checkpoints, CIFAR-10 ingestion and run configuration files.

pub mod checkpoint;
pub mod cifar;
pub mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use cifar::{load_cifar10, write_synthetic_cifar, DatasetSpec, Normalization, SyntheticSpec};
pub use config::RunConfig;
