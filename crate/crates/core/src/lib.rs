//! Blind adaptive reduced-rank constrained (BARC) interference suppression
//! for DS-CDMA, with a Monte Carlo evaluation harness.
//!
//! The receiver jointly adapts an interpolator, a bank of switched
//! decimation patterns and a reduced-rank estimator under the constrained
//! constant-modulus criterion:
//!
//! ```text
//!   r[i] (M) ──► interpolate (v, length I) ──► decimate (D_b, D of M)
//!            ──► reduced-rank filter (w, length D) ──► z[i]
//! ```
//!
//! The chain is adapted blindly with stochastic-gradient or recursive
//! least-squares updates subject to `w^H S_D^H p = nu`, where `p` is the
//! desired user's effective signature. Automatic selection of the filter
//! lengths and of the number of decimation branches is provided, along with
//! full-rank and MMSE reference receivers and a deterministic seeded
//! simulation harness.

pub mod barc;
pub mod baselines;
pub mod chanmodel;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod selection;

pub use error::{Error, Result};
pub use numerics::Cx;
