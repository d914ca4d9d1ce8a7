//! Training loop, losses, and checkpointing.

pub mod checkpoint;
pub mod losses;
pub mod step;
pub mod trainer;
