//! Runtime for a GUI agent that learns reusable shortcuts from its own
//! execution history.
//!
//! The crate is organized around an observe-reason-act loop:
//!
//! - [`perception`] turns raw screen observations into deterministic
//!   embeddings and page fingerprints.
//! - [`action_space`] defines the five basic device actions and the
//!   high-level actions (shortcuts) the agent accumulates over time.
//! - [`memory_graph`] stores pages, elements, and shortcuts as a typed
//!   property graph with a line-delimited dump format.
//! - [`reasoner`] is the decision interface: a scripted fixture-driven
//!   backend for offline runs and a chat-completion client for live ones.
//! - [`trajectory`] records executed runs and decomposes them into
//!   overlapping (page, action, page) triples for annotation.
//! - [`evolution`] mines repeated step patterns out of trajectories and
//!   synthesizes shortcut actions from them.
//! - [`executor`] runs tasks against a [`executor::Device`], preferring
//!   applicable shortcuts and falling back to step-by-step reasoning.
//! - [`sim_env`] is a deterministic finite-state phone simulator with
//!   fault injection, used for tests and benchmarks.
//! - [`harness`] runs benchmark suites and compares variants with paired
//!   statistics.

pub mod action_space;
pub mod clock;
pub mod evolution;
pub mod executor;
pub mod harness;
pub mod hashing;
pub mod memory_graph;
pub mod perception;
pub mod reasoner;
pub mod sim_env;
pub mod trajectory;

pub use action_space::{ActionInvocation, ActionSpace, BasicActionKind, HighLevelAction};
pub use executor::{run_task, Device, RunConfig, TaskReport};
pub use memory_graph::GraphStore;
pub use perception::{DetectedElement, Embedding, ScreenObservation};
pub use reasoner::{Reasoner, ReasonerUsage};
pub use sim_env::{AppModel, SimDevice};
pub use trajectory::{Trajectory, TrajectoryId};
