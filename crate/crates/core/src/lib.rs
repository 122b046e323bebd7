//! Generalized Nash equilibria of water-release markets on a river line graph,
//! posed and solved as mixed linear complementarity problems.

pub mod basin;
pub mod formulations;
pub mod lcp;
pub mod metrics;
pub mod scenarios;
pub mod theory;
