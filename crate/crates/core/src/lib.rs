#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod ci_precoder;
pub mod conic;
pub mod conventional;
pub mod error;
pub mod formulation;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Cx, Real};

/// Double-precision instantiations.
pub type Constellation64 = model::Constellation<f64>;
pub type NoiseModel64 = model::NoiseModel<f64>;
pub type UserRequirement64 = model::UserRequirement<f64>;
pub type ChannelInstance64 = model::ChannelInstance<f64>;
pub type RotatedChannels64 = model::RotatedChannels<f64>;
pub type CiSolution64 = model::CiSolution<f64>;
pub type ConventionalSolution64 = model::ConventionalSolution<f64>;
pub type ConeProgram64 = conic::ConeProgram<f64>;
pub type ConeSolver64 = conic::ConeSolver<f64>;

/// Single-precision instantiations.
pub type Constellation32 = model::Constellation<f32>;
pub type NoiseModel32 = model::NoiseModel<f32>;
pub type UserRequirement32 = model::UserRequirement<f32>;
pub type ChannelInstance32 = model::ChannelInstance<f32>;
pub type RotatedChannels32 = model::RotatedChannels<f32>;
pub type CiSolution32 = model::CiSolution<f32>;
pub type ConventionalSolution32 = model::ConventionalSolution<f32>;
pub type ConeProgram32 = conic::ConeProgram<f32>;
pub type ConeSolver32 = conic::ConeSolver<f32>;
