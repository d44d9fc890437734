pub mod data;
pub mod error;
pub mod etiology;
pub mod inference;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod study;
pub mod volume;

pub use error::{Error, Result};
pub use etiology::{Etiology, CLASS_COUNT};
pub use volume::{BrainMask, Volume};
