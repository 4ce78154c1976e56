//! Audio I/O: WAV encoding, streaming sinks and signal analysis.

pub mod analysis;
pub mod sink;
pub mod wav;
