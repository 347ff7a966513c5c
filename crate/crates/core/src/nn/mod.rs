//! Minimal f64 neural-network engine: batched NCHW tensors, im2col+GEMM
//! convolutions, batch norm, LSTM cells, Adam, and a finite-difference
//! gradient checker. Layers do manual backprop with explicit caches so
//! frozen snapshots stay `&self`-only and training is single-writer.

pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gemm::matmul;
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear};
pub use lstm::LstmCell;
pub use optim::{Adam, HasParams};
pub use tensor::{Mat, Tensor4};
