//! Downlink multi-antenna multiple-access simulator.
//!
//! The crate models a single transmitter with `M` antennas serving `K`
//! single-antenna users and compares four ways of sharing the spatial
//! dimensions:
//!
//! - **NOMA**: users are split into groups; inside a group the strongest user
//!   decodes every other user's message with successive interference
//!   cancellation (SIC).
//! - **MU-LP**: one linearly precoded stream per user, interference treated
//!   as noise.
//! - **1-layer RS**: a common stream decoded by everyone (one SIC layer) plus
//!   one private stream per user.
//! - **OMA**: only the strongest user is served.
//!
//! Modules, bottom-up:
//!
//! - [`channel`]: Rayleigh channels, the `P^-alpha` CSIT error model, and
//!   conditional channel samples for sample-average approximation.
//! - [`strategy`]: grouping, SIC decoding orders, and who decodes which
//!   stream.
//! - [`rate`]: achievable-rate evaluation for any precoder set.
//! - [`wmmse`]: the rate/WMMSE alternating optimizer for sum-rate and
//!   max-min objectives, with perfect CSIT or SAA for imperfect CSIT.
//! - [`initpoint`]: MRT/SVD initialization and the zero-forcing power-exponent
//!   constructions that achieve the closed-form multiplexing gains.
//! - [`dof`]: exact closed-form multiplexing gains and slope fitting.
//! - [`harness`]: Monte-Carlo campaigns and CSV output used by the CLI.

pub mod channel;
pub mod dof;
pub mod error;
pub mod harness;
pub mod initpoint;
pub mod linalg;
pub mod rate;
pub mod strategy;
pub mod wmmse;

pub use channel::{ChannelSet, CsitModel};
pub use error::{Error, Result};
pub use rate::{AllocationPolicy, PrecoderSet, RateReport};
pub use strategy::{StrategyConfig, StrategyKind, StreamLayout};
pub use wmmse::{Objective, SolveOptions};

pub use num_complex::Complex64;
