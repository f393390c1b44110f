//! Feature ingestion: windowing, subsampling, feature files, manifests,
//! synthetic data and train-time augmentation.

pub mod augment;
pub mod features;
pub mod manifest;
pub mod sampling;
pub mod synth;

pub use augment::augment;
pub use features::{read_features, write_features, FeatureSequence, Modality};
pub use manifest::{ClipRecord, Label, Manifest, Task};
pub use sampling::{clip_windows, uniform_subsample, window_starts, WindowSample};
pub use synth::{generate_clips, generate_synthetic, SynthConfig};
