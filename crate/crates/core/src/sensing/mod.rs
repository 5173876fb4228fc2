//! Window feature extraction from raw sensor event logs.

pub mod events;
pub mod extract;
pub mod geo;
pub mod registry;
pub mod table;

pub use events::{Activity, Payload, SensorEvent};
pub use extract::{extract_window, WindowSpec};
pub use registry::{feature_names, Modality, FEATURE_COUNT};
pub use table::{build_feature_table, FeatureRow, FeatureTable, Report};
