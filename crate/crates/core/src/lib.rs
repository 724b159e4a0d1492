pub mod autodiff;
pub mod rng;
pub mod scalar;
pub mod graph;
pub mod mesh;
pub mod layout;
pub mod metrics;
pub mod graformer;
pub mod coarse2fine;
pub mod data;
