//! Core library for feature-aided multi-object tracking with learned edge costs.
//!
//! The pipeline: synthetic scenarios ([`scenario`]) produce detections with
//! kinematic and re-identification features; a detection graph and its
//! twin-node tracking graph are built over a temporal window ([`graph`]);
//! a message-passing network ([`mpn`]) maps the detection graph to scalar
//! edge costs; a successive-shortest-paths min-cost-flow solver ([`solver`])
//! extracts the globally optimal set of node-disjoint tracks; training
//! ([`training`]) fits the network end to end with the solver in the loop.
//! [`baseline`] provides an edge-classification tracker sharing the same
//! network, and [`metrics`] evaluates predictions (CLEAR-MOT, GOSPA, SIAP).

pub mod baseline;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod mpn;
pub mod neural;
pub mod scenario;
pub mod solver;
pub mod training;

pub use error::CoreError;
pub use graph::{
    build_detection_graph, build_tracking_graph, transfer_costs, DetectionGraph, EdgeCosts,
    TrackingGraph,
};
pub use mpn::{MpnConfig, MpnModel, ReadoutMode};
pub use neural::{MlpSpec, ParamStore};
pub use scenario::{Detection, DetectionSource, GroundTruth, ReidConfig, Scenario, ScenarioConfig};
pub use solver::{brute_force_oracle, path_cost, track_by_ssp, PathSet, SolveOutput};
pub use training::{train, TrainConfig, TrainOutcome};

/// Identifier of a single detection, unique within one scenario.
#[derive(
    Clone,
    Copy,
    Debug,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(transparent)]
pub struct DetId(pub u32);

/// Identifier of a ground-truth target.
#[derive(
    Clone,
    Copy,
    Debug,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(transparent)]
pub struct TargetId(pub u32);

impl std::fmt::Display for DetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
