//! Outage analysis and average power/rate allocation for coded ZF V-BLAST.
//!
//! A zero-forcing V-BLAST receiver over an n×m i.i.d. Rayleigh channel
//! splits into m parallel streams whose post-detection SNRs are Erlang
//! distributed with increasing shape — later detection steps enjoy more
//! diversity. Spreading the power budget or the rate target unevenly
//! across those unequal streams buys large outage gains; this crate
//! computes how.
//!
//! What lives where:
//!
//!  * [`config`] — system dimensions, SNR/gap bookkeeping, rate targets;
//!  * [`outage`] — per-stream and system outage, exact and first-order,
//!    with gradients; the shared objective everything else minimises;
//!  * [`channel`] — seeded Monte Carlo over the actual channel matrix as
//!    an independent check on the analytics;
//!  * [`apa`] — power allocation at a common fixed rate;
//!  * [`ara`] — rate allocation at uniform power;
//!  * [`apra`] — the joint problem, alternating the two;
//!  * [`robustness`] — local sensitivity of the optimised outage to
//!    single-parameter drift;
//!  * [`duality`] — minimum power or maximum rate under an outage ceiling;
//!  * [`math`], [`solve`] — special functions and the small numerical
//!    engines underneath.
//!
//! Each allocator reports two solutions side by side: the closed-form /
//! first-order one (cheap, asymptotically tight, and the shape the theory
//! talks about) and an exact-objective refinement (projected gradient on
//! the true outage). Keeping both visible is deliberate — most of the
//! interesting checks in the test suite are statements about where the two
//! agree and where they must not.

pub mod apa;
pub mod apra;
pub mod ara;
pub mod channel;
pub mod config;
pub mod duality;
pub mod error;
pub mod math;
pub mod outage;
pub mod robustness;
pub mod solve;

pub use config::{RateSpec, Strategy, SystemConfig};
pub use error::{Error, Result};
pub use outage::{Allocation, OutageReport};
