//! Full encoder-decoder assembly, complexity counters and budget calibration.

mod calibrate;
mod config;
mod count;
mod model;

pub use calibrate::{calibrate, Calibration, CalibrationError, DEPTH_CANDIDATES, WIDTH_CANDIDATES};
pub use config::{KvDoc, NetworkConfig, DECODER_SCALES, STAGES};
pub use count::{
    count_macs, count_macs_for, count_params, count_params_for, mac_breakdown, network_macs,
    resolution_independent_macs,
};
pub use model::{DecoderScale, ForwardCache, Model, Network, MLIA_SHARED_STAGE};
