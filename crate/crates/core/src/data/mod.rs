pub mod corruption;
pub mod dataset;
pub mod dump;
pub mod schema;
pub mod split;
pub mod synthetic;

pub use corruption::{inject_label_bias, CorruptionSpec};
pub use dataset::{ColumnKind, GroupSelector, TabularDataset};
pub use dump::{load_dump, read_dump, save_dump, write_dump};
pub use schema::{load_tabular, read_tabular, Schema};
pub use split::{split, split_indices, standardize, Standardizer};
pub use synthetic::{generate_synthetic, SyntheticSpec};
