//! Lifelong multi-agent path finding on 4-connected grids.
//!
//! * [`grid`]: maps, locations, actions, scenario files.
//! * [`heuristics`]: per-goal guidance fields (BD, SG, DG).
//! * [`pibt`]: PIBT and its collision-shielded variant.
//! * [`wlns`]: windowed large neighborhood search.
//! * [`observe`]: field-of-view encoding and the imitation dataset format.
//! * [`policy`]: neural policy inference and the weight format.
//! * [`sim`]: the lifelong loop and metrics.

pub mod grid;
pub mod heuristics;
pub mod observe;
pub mod pibt;
pub mod policy;
pub mod sim;
pub mod wlns;
