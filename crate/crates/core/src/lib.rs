//! DFA-conditioned reinforcement learning at exactly verifiable scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`dfa`]: three-valued DFAs, Hopcroft minimization, bisimilarity and
//!   canonical forms.
//! - [`space`]: the deterministic MDP induced by a DFA space (advance one
//!   symbol, then minimize) and its breadth-first enumeration.
//! - [`sampler`]: reach, reach-avoid and reach-avoid-derived task samplers.
//! - [`metric`]: the exact bisimulation metric as the fixed point of a
//!   distance/argmax-policy operator pair.
//! - [`encoder`]: embeddings whose scaled normalized distances are trained
//!   to reproduce that metric.
//! - [`product`]: cascade composition with a labeled base MDP, value
//!   iteration, Q-learning and suboptimal-step accounting.

pub mod dfa;
pub mod encoder;
pub mod error;
pub mod fmt;
pub mod metric;
pub mod product;
pub mod rng;
pub mod sampler;
pub mod space;

pub use dfa::{CanonicalDfa, Dfa, State, Symbol, Verdict};
pub use error::{Error, Result};
pub use metric::{MetricTable, PairPolicy};
pub use space::{DfaSpaceConfig, InducedMdp};
