//! Asymptotic secret-key rates for post-selected continuous-variable QKD
//! with Gaussian modulation, heterodyne detection and direct reconciliation.
//!
//! The pipeline runs from channel parameters to record statistics, then to
//! post-selected moments, then to an effective Gaussian state, and finally
//! to a Holevo-bounded key rate:
//!
//! ```
//! use psqkd::{keyrate, ChannelParams, PostSelectionRegion, ProtocolParams};
//!
//! let p = ProtocolParams::new(4.0, 1.0).unwrap();
//! let ch = ChannelParams::new(0.8, 0.01).unwrap();
//! let report = keyrate(&p, &ch, &PostSelectionRegion::lower(0.5, 0.2).unwrap()).unwrap();
//! assert!(report.p_ps < 1.0);
//! ```

// NaN-rejecting checks are written as `!(x >= bound)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod keyrate;
pub mod mc;
pub mod optimizer;
pub mod postselection;
pub mod quadrature;

pub use channel::{ChannelParams, ProtocolParams, RecordCovariance};
pub use error::{Error, Result};
pub use gaussian::CovarianceMatrix;
pub use keyrate::{keyrate, KeyRateReport};
pub use postselection::{EffectiveParams, PostSelectedStats, PostSelectionRegion};
