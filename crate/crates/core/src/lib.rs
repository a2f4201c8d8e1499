//! Capped-proportional quadratic funding.
//!
//! When quadratic funding targets exceed the donor pool, this mechanism pays
//! out the pool in proportion to the targets and keeps individual
//! contributions, which roll into the next round's pool. The crate provides
//! the allocation rules, contributor valuations, each contributor's
//! optimization problem, iterated best-response dynamics with equilibrium
//! diagnostics, and multi-round orchestration with file I/O.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod agent;
pub mod allocation;
pub mod equilibrium;
pub mod error;
pub mod ledger_csv;
pub mod preferences;
pub mod report;
pub mod rounds;
pub mod scenario;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/preferences.md")]
    mod preferences {}
    #[doc = include_str!("../../../book/src/contributor.md")]
    mod contributor {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/rounds.md")]
    mod rounds {}
}
