//! Federated training of low-rank one-shot similarity models.
//!
//! A Siamese head maps two frozen feature vectors to embeddings through
//! low-rank factor pairs, fuses them with an absolute difference and scores
//! the pair with a third low-rank layer followed by a sigmoid. Only the six
//! factor matrices are trainable, so only they are exchanged between the
//! simulated edge clients and the server.
//!
//! Layout:
//! - [`matrix`], [`lowrank`]: dense arithmetic and the factored layer.
//! - [`head`]: Siamese forward/backward passes.
//! - [`training`]: loss, Adam, local training loop, evaluation.
//! - [`data`]: dataset parsers, frozen features, pairs and client shards.
//! - [`federation`]: client sampling, FedAvg and round orchestration.
//! - [`cost`]: parameter, bandwidth and FLOP accounting.
//! - [`checkpoint`]: binary parameter files.
//! - [`experiment`]: configuration, CSV/SVG output and CLI commands.

pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod head;
pub mod lowrank;
pub mod matrix;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use head::{DenseHeadParams, HeadGrads, SiameseHeadParams};
pub use lowrank::{DenseLayer, LoRaLayer};
pub use matrix::Matrix;
pub use scalar::Scalar;
