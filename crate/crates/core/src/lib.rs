pub mod featureio;
pub mod gnn;
pub mod graphbuilder;
pub mod rng;
pub mod sampler;
pub mod trainer;
