pub mod cli;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod params;
pub mod sru;
pub mod srupp;
pub mod tensor;

pub use error::{Error, Result};
pub use params::Parameters;
pub use tensor::{Ctx, DType, ExecMode, SeededRng, Tensor};
