pub mod artic;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod graph;
pub mod imitation;
pub mod phone;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use artic::{ArticulatoryTrajectory, EmaRecording};
pub use dsp::{FeatureKind, FeatureSequence, SourceTrack, Waveform};
pub use graph::RealMatrix;
pub use imitation::{InverseModel, LossSpace};
pub use phone::PhoneInventory;
pub use synth::Synthesizer;
