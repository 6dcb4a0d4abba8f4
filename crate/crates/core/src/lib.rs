pub mod bench;
pub mod checkpoint;
pub mod dag;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod expm;
pub mod flow;
pub mod model;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::Module;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
