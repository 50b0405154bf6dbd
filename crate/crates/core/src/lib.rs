//! Thompson Sampling for Bayesian bandits over finite and metric action
//! spaces, with the ε-net compression of the optimal action and the
//! information-ratio bookkeeping around it.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

pub mod action_space;
pub mod bandit;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod information;
pub mod rng;
pub mod thompson;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/thompson.md")]
    mod thompson {}
    #[doc = include_str!("../../../book/src/nets.md")]
    mod nets {}
    #[doc = include_str!("../../../book/src/compression.md")]
    mod compression {}
    #[doc = include_str!("../../../book/src/information.md")]
    mod information {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
