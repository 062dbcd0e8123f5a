//! Branched transport flows with weak boundary penalization.
//!
//! Flows are locally polygonal: finite space-time forests whose edges carry
//! constant flux along straight segments. The crate evaluates the energy
//! `𝓔 = P + E + ‖μ₀‖²_{H^{-1/2}}`, builds explicit competitors, optimizes
//! node positions and topologies, and checks the structural identities that
//! minimizers satisfy.

pub mod construct;
pub mod energy;
pub mod error;
pub mod flow;
pub mod geom;
pub mod measure;
pub mod optimizer;
pub mod potential;
pub mod regularity;
pub mod sum;
pub mod transport;

pub use error::{Error, Result};
pub use flow::{validate_flow, PolygonalFlow};
pub use geom::Vec2;
pub use measure::{Atom, AtomicMeasure};
