//! Dataset ingestion, synthetic generation, preprocessing, splits and pair
//! sampling.

pub mod ingest;
pub mod preprocess;
pub mod raw;
pub mod splits;
pub mod synth;

pub use ingest::{ingest, DatasetIndex, IndexEntry, LayoutConfig};
pub use preprocess::{preprocess, ChannelStats, PreparedData, UnitDataset};
pub use raw::{RawDataset, RawIdentity};
pub use splits::{epoch_rng, make_splits, sample_epoch, PairBatch, PairSpec, SplitPlan};
pub use synth::{synth_generate, synth_to_dir, SynthConfig};
