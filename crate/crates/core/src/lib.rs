//! Resource allocation for sample-then-transmit edge Gaussian splatting.
//!
//! Clients hold posed image datasets and share a multi-antenna uplink to an
//! edge server. Each client first uploads a small, clustered pilot subset so
//! the server can predict how much rendering loss the full dataset would
//! contribute; the server then picks which clients complete their upload and
//! at what power, subject to SINR-driven deadlines and power budgets.
//!
//! Module map:
//! - [`scenario`]: configuration, synthetic datasets, manifests
//! - [`channel`]: Rician fading, MRC composite gains, uplink rates
//! - [`gsloss`]: L1 / SSIM training loss and per-client loss prediction
//! - [`fdc`]: HSV feature clustering and representative pilot selection
//! - [`powerctl`]: minimum-power SINR feasibility kernel
//! - [`pttm`]: pilot transmission time minimization by bisection
//! - [`pamm`]: penalty alternating majorization-minimization for joint
//!   client selection and power control
//! - [`oracle`]: exhaustive subset enumeration for small client counts
//! - [`baselines`]: max-rate, max-min fairness and loss-greedy schedulers
//! - [`experiment`]: end-to-end pipeline runs and parameter sweeps

pub mod alloc;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod fdc;
pub mod gsloss;
pub mod image;
pub mod oracle;
pub mod pamm;
pub mod powerctl;
pub mod pttm;
pub mod scenario;

pub use alloc::{certify, Allocation, Certificate};
pub use channel::{ChannelRealization, GainMatrix};
pub use error::{Error, Result};
pub use image::Image;
pub use scenario::{ClientDataset, ScenarioConfig};
