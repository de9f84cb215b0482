//! Downlink system-level simulator for multi-TRP transmission: single-TRP
//! baseline, dynamic point selection (with dynamic blanking) and
//! non-coherent joint transmission under FTP Model 1 traffic.

pub mod channel;
pub mod engine;
pub mod linalg;
pub mod link;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod traffic;
