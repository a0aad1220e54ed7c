//! EEG ingestion, band filtering, hemisphere labeling and dataset splitting.

mod dataset;
mod filter;
mod recording;
mod synth;

pub use dataset::{
    build_dataset, build_dataset_with_order, split_dataset, split_sizes, standardize, ExampleMeta,
    LabeledExample, SplitDataset, SPLIT_SHARES,
};
pub use filter::{design_bandpass, Band, BandDefinition, FilterSpec, Sos, DEFAULT_FILTER_ORDER};
pub use recording::{
    label_channel, load_recording, load_recordings, recording_file_name, save_recording, save_recordings,
    Dataset, Intensity, RawRecording, CHANNELS, SAMPLES_PER_RECORDING, SAMPLE_RATE,
};
pub use synth::{generate_synthetic, SyntheticConfig};
