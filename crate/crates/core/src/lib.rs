//! Matching-based link scheduling for decentralized SGD.
//!
//! Given an arbitrary connected communication graph, this crate
//! decomposes it into disjoint matchings (parallel-communication link
//! sets), optimizes how often each matching is activated under a
//! communication budget, optimizes the consensus mixing weight, generates
//! reproducible random activation schedules, and simulates decentralized
//! SGD over those schedules with a communication-time model. The point:
//! spend scarce communication time on connectivity-critical links and get
//! the same (or better) convergence per iteration at a fraction of the
//! communication cost of gossiping over the full graph every round.
//!
//! Pipeline: [`graph`] → [`matching`] → [`budget`] → [`mixing`] →
//! [`schedule`] → [`sgd`], with [`theory`] providing the convergence-bound
//! evaluator used to sanity-check simulated runs.

pub mod budget;
pub mod eigen;
pub mod graph;
pub mod matching;
pub mod mixing;
pub mod objective;
pub mod rng;
pub mod schedule;
pub mod sgd;
pub mod theory;
