//! Perceptual hashing lab: a small convolutional embedding network followed
//! by random-hyperplane hashing, plus the four attacks studied against such
//! systems — forced collisions, gradient evasion, gradient-free
//! transformations, and hash-only content classification.

pub mod attack;
pub mod canny;
pub mod collision;
pub mod error;
pub mod evasion;
pub mod image;
pub mod jpeg;
pub mod leakage;
pub mod losses;
pub mod lsh;
pub mod network;
pub mod par;
#[cfg(feature = "io")]
pub mod pipeline;
#[cfg(feature = "io")]
pub mod report;
pub mod synthetic;
pub mod tensor_math;
pub mod transforms;

pub use error::{Error, Result};
pub use image::{ImageTensor, InputSpec};
pub use lsh::{binarize, compute_hash, hamming_distance, HashDatabase, HashingMatrix, PerceptualHash};
pub use network::EmbeddingNetwork;
