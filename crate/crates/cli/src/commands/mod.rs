pub mod ablate;
pub mod analyze;
pub mod desmoke;
pub mod gradcheck;
pub mod metrics;
pub mod synth;
pub mod train_demo;
