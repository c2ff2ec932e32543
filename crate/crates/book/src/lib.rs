//! Compiles the code listings of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/capacity.md")]
pub mod capacity {}
#[doc = include_str!("../../../book/src/flight.md")]
pub mod flight {}
#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
