//! Synthetic multi-modal identity data and the on-disk formats.

mod grids;
mod manifest;
mod store;
mod synthetic;

pub use grids::{read_grids, write_grids, GridSample, GRIDS_MAGIC, GRIDS_VERSION};
pub use manifest::{read_manifest, write_manifest, Manifest, TEST_FILE, TRAIN_FILE};
pub use store::{read_store, write_store, STORE_MAGIC, STORE_VERSION};
pub use synthetic::{generate_dataset, Dataset, SyntheticConfig};
