pub mod bench;
pub mod blocks;
pub mod error;
pub mod io;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
