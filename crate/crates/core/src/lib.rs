pub mod alignment;
pub mod catalog;
pub mod codec;
pub mod endpoint;
pub mod eval;
pub mod index;
mod error;
pub mod pipeline;
pub mod provider;
pub mod review;
pub mod units;
pub mod validation;
pub mod workflow;

pub use error::Error;
