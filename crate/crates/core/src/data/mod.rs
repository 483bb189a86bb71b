//! Synthetic multi-speaker frame features, view augmentation, cropping and
//! trial lists.

mod augment;
mod crop;
mod io;
mod synth;
mod trials;

pub use augment::{augment_view, augment_view_recorded, AugmentRecord, AugmentationPolicy, NoiseType};
pub use crop::{crop_global, crop_local, CropConfig};
pub use io::{read_dataset, write_dataset};
pub use synth::{generate_dataset, Dataset, SpeakerLatent, SynthConfig, Utterance};
pub use trials::{make_trials, read_trials, write_trials, Trial, TrialLabel, TrialList};

use crate::tensor::Mat;

/// `T x F` frame features of one utterance or view.
pub type FrameMatrix = Mat<f64>;
