//! Samples, the canonical on-disk format, the synthetic generator,
//! augmentation, preprocessing and splits.

mod augment;
pub mod biwi;
mod canonical;
pub mod pgm;
mod preprocess;
mod sample;
mod split;
mod synth;

pub use augment::{apply_transform, augment, draw_transform, AugmentConfig, AugmentTransform};
pub use canonical::{load_canonical_dataset, write_canonical, Dataset, DatasetMeta, INDEX_FILE, META_FILE};
pub use preprocess::{crop_resize, gray_to_unit, preprocess, unit_to_gray, DEFAULT_HI_PCT, DEFAULT_LO_PCT};
pub use sample::{Sample, SampleFiles, SampleKey, ShoulderAnnotation};
pub use split::{make_split, DatasetSplit, SplitRule, BIWI_TEST_SEQUENCES, PANDORA_TEST_SUBJECTS};
pub use synth::{render, synth_dataset, synth_generate, NoseParams, SynthConfig, SynthHeadParams, TorsoParams};
