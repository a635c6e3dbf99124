pub mod dsp;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod room;
pub mod signals;
pub mod scenario;
pub mod linalg;
pub mod multiframe;
pub use rustfft::num_complex::Complex64;
pub mod baselines;
pub mod metrics;
pub mod neural;
pub mod harness;
