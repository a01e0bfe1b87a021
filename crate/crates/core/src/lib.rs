//! Software model of the SwiftChannel-style 5G channel-estimation pipeline.
//!
//! The crate is organized bottom-up:
//!
//! - [`fixed`] — Q7.24 fixed-point arithmetic with saturation
//! - [`tensor`] — dense H×W×C feature maps in channel-fastest stream order
//! - [`rng`] — the reproducible 64-bit generator used everywhere randomness is needed
//! - [`channel`] — synthetic multipath channel + pilot observation + dataset files
//! - [`ls`] — least-squares estimation (float reference and fixed-point variant)
//! - [`net`] — floating-point teacher/student networks, fusion, losses, metrics
//! - [`quant`] — post-training quantization and the direct integer conv oracle
//! - [`stream`] — the streaming accelerator emulation (bit-exact vs. the oracle)
//! - [`weights`] — weight-file serialization shared by float and quantized models

pub mod channel;
pub mod fixed;
pub mod ls;
pub mod net;
pub mod quant;
pub mod rng;
pub mod stream;
pub mod tensor;
pub mod weights;

pub use fixed::Fixed32;
pub use tensor::{ActQuant, QuantTensor, RealTensor};
