//! Decentralized actor-critic over a communication graph.
//!
//! Each agent keeps a full copy of the joint softmax policy and trains it
//! locally for `tau` steps per round against a projected neural TD critic,
//! then exchanges exactly one round of bridge-variable messages with its
//! neighbours (local-training ADMM). Rewards and critic parameters never
//! leave the agent.
//!
//! Module map:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`topology`] | graphs, incidence/permutation/degree matrices, Laplacian spectrum |
//! | [`navenv`] | cooperative-navigation point-mass environment |
//! | [`valuenet`] | `1/sqrt(m)`-scaled value network, analytic gradient, ball projection |
//! | [`policynet`] | factorized softmax policy and its score function |
//! | [`sampler`] | Markov-chain cursors: burn-in and contiguous mini-batches |
//! | [`critic`] | projected TD(0) with uniform snapshot selection |
//! | [`ltadmm`] | the outer consensus loop, bridge updates, message ledger |
//! | [`diagnostics`] | metrics, step-size calculator, spectral blocks, compact-form verifier |
//! | [`runner`] | config, training driver, CLI commands |

pub mod critic;
pub mod diagnostics;
pub mod error;
pub mod ltadmm;
pub mod navenv;
pub mod policynet;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod synthetic;
pub mod topology;
pub mod valuenet;

mod exec;
mod vecops;

pub use error::{Error, Result};
pub use exec::Execution;
