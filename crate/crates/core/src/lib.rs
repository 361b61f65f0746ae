pub mod agents;
pub mod batch;
pub mod env;
pub mod memory;
pub mod model;
pub mod noise;
pub mod runner;
pub mod scheduler;
pub mod tensor;
pub mod trainer;

pub use batch::Batch;
