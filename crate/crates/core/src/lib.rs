//! Continuous crowd-behavior generation engine and benchmark metrics.
//!
//! The crate covers the full loop: ingest recorded crowd scenarios,
//! derive scene layout channels, learn an agent emitter (conditional
//! diffusion over agent parameters) and a switching-state crowd simulator,
//! generate unbounded scenarios, and score generated against recorded
//! crowds with eight scene- and agent-level similarity metrics.

pub mod emitter;
pub mod error;
pub mod geom;
pub mod grid;
pub mod layout;
pub mod metrics;
pub mod navmesh;
pub mod nn;
pub mod orca;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod se_orca;
pub mod synthetic;
pub mod simulator;
pub mod trajectory;
pub mod vocab;

pub use error::{Error, Result};
pub use geom::Vec2;
pub use grid::GridRaster;
pub use layout::{SceneConfig, SceneLayout, SegClass, SEG_CLASS_COUNT};
pub use trajectory::{Agent, AgentKind, Scenario, TrajFormat, Window, AGENT_KINDS};
