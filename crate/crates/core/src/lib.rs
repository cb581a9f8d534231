//! Per-path latency estimation for routed networks.
//!
//! A routed network snapshot is turned into the directed line graph of its
//! links ([`linegraph`]); a graph model ([`model`]) predicts a delay per link
//! and path latencies are the sums of those delays along each route. Ground
//! truth for training comes from an analytic queueing model ([`oracle`]).

pub mod dataset;
pub mod linegraph;
pub mod model;
pub mod netmodel;
pub mod oracle;
pub mod roles;
pub mod tensor;
pub mod trainer;

pub use linegraph::LineGraph;
pub use netmodel::{NetworkSnapshot, NetworkTopology, PerformanceMatrix, RoutingMatrix, TrafficMatrix};
