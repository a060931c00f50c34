pub mod alignment;
pub mod bench;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod fca;
pub mod geometry;
pub mod losses;
pub mod numerics;
pub mod params;

pub use error::{Error, Result};
