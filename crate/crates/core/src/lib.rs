pub mod config;
pub mod curves;
pub mod error;
pub mod family;
pub mod pipeline;
pub mod posterior;
pub mod repp;
pub mod search;
pub mod sim;

pub use error::{PedError, Result};
