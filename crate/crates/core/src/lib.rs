pub mod atlas_net;
pub mod config;
pub mod error;
pub mod flow_graph;
pub mod media_io;
pub mod metrics;
pub mod morph;
pub mod pipeline;
pub mod refiner;
pub mod soft_recon;
pub mod synthetic;
pub mod trainer;

pub use error::{Result, RnaError};
