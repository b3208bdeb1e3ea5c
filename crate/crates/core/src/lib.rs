pub mod beamforming;
pub mod bench;
pub mod channel;
pub mod compute;
pub mod config;
pub mod driver;
pub mod error;
pub mod fractional;
pub mod linalg;
pub mod metrics;
pub mod qcqp;
pub mod single_ue;
