pub mod compiler;
pub mod config;
pub mod isa;
pub mod refops;
pub mod runtime;
pub mod sim;
pub mod tuner;
pub mod workloads;

pub use refops::Tensor;

pub type TensorI8 = Tensor<i8>;
pub type TensorI32 = Tensor<i32>;
pub type TensorU8 = Tensor<u8>;
pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
