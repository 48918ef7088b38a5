//! Speech codec combining linear prediction with cascaded convolutional
//! autoencoders that code the prediction residual.

pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod entropy;
pub mod harness;
pub mod lpc;
pub mod mel;
pub mod model;
pub mod quant;
pub mod signal;
pub mod synthetic;
pub mod train;
