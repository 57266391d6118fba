pub mod engagement;
pub mod estimator;
pub mod guidance;
pub mod nmpc;
pub mod zones;
pub mod harness;
