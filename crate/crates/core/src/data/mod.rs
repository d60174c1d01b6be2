//! Interaction logs, user attributes, preprocessing and splitting.

mod ingest;
mod split;
mod synthetic;

pub use ingest::{
    binarize_age, filter_min_degree, group_events_by_item, ingest, read_records, write_records,
    AgeBinarization, AttributeFormat, FormatSpec, InteractionFormat, InteractionRecord,
    UserAttributeTable, AGE_GROUP, OLDER, YOUNGER,
};
pub use split::{split, DatasetSplit, SplitRatios};
pub use synthetic::{generate_synthetic, SyntheticSpec};
