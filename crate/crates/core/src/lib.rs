pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod series;
pub mod train;

pub use checkpoint::WiaeCheckpoint;
pub use error::{Error, Result};
pub use net::{NetConfig, WiaeParams};
pub use series::{NormStats, SeriesFrame};
pub use train::{train, TrainConfig, TrainMeta};
