//! Fluid-antenna geometry, fading channels and multiuser snapshots.

mod fading;
mod geometry;
mod snapshot;

pub use fading::{
    complex_normal, correlation_rich, finite_covariance, sample_finite_channel, sample_rich_channel,
    steering_vector, FiniteScatterConfig, FiniteScatterSpec, Path,
};
pub use geometry::{raster_cell, raster_index, FasGeometry, GeometryError, Layout};
pub use snapshot::{
    qpsk_bits, qpsk_constellation, qpsk_from_bits, qpsk_symbol, ChannelModel, Scenario, SimError, Simulator,
    Snapshot,
};
