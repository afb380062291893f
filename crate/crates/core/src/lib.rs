//! Throughput of slot-synchronous p-persistent CSMA networks.
//!
//! Nodes share a conflict graph. In every slot each idle node whose
//! neighbors are idle attempts with its own probability `p_i`; an attempt
//! succeeds when no neighbor attempts in the same slot, and the winner then
//! holds the medium for `T` slots. This crate provides
//!
//! - [`sim`]: a Monte Carlo simulator of those dynamics,
//! - [`markov`]: the exact stationary throughput from the timer chain,
//! - [`gnn`]: message-passing surrogates trained on either label source,
//! - [`data`]: dataset generation, CSV storage and training,
//! - [`numopt`]: gradient ascent on a log-utility of the throughputs,
//!
//! plus the small reverse-mode autodiff engine in [`diff`] that the
//! networks run on.
//!
//! ```
//! use pcsma::graph::{ConflictGraph, NetworkInstance};
//! use pcsma::markov::throughput_exact;
//!
//! let inst = NetworkInstance::new(ConflictGraph::path(2)?, vec![0.5, 0.5], 2)?;
//! let theta = throughput_exact(&inst)?;
//! assert!((theta[0] - theta[1]).abs() < 1e-12);
//! # Ok::<(), pcsma::Error>(())
//! ```

pub mod bench;
pub mod data;
pub mod diff;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod markov;
pub mod numopt;
pub mod rng;
pub mod sim;

pub use error::{Error, ErrorClass, Result};
pub use graph::{CollisionMode, ConflictGraph, NetworkInstance};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/exact.md")]
    struct Exact;
    #[doc = include_str!("../../../book/src/surrogates.md")]
    struct Surrogates;
    #[doc = include_str!("../../../book/src/optimization.md")]
    struct Optimization;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
