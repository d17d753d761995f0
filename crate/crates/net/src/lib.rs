//! Rendering-to-video translation network: a conditional encoder-decoder
//! generator, a patch discriminator, their losses, training and inference.

pub mod discriminator;
pub mod error;
pub mod generator;
pub mod infer;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use error::{NetError, Result};
pub use generator::{Generator, GeneratorConfig};
pub use infer::{infer_sequence, infer_window};
pub use io::{read_weights, write_weights};
pub use network::{Network, NetworkConfig};
pub use tensor::{Scalar, Tensor};
pub use train::{train, LossRecord, PairSource, TrainConfig, TrainOutcome, Trainer};
