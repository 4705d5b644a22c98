//! Distributed chirp-spread-spectrum backscatter networking.

pub mod channel;
pub mod css;
pub mod error;
pub mod experiments;
pub mod mac;

pub use error::{Error, Result};
pub mod phy;
