pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod flow;
pub mod kv;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod params;
pub mod trainer;
pub mod verify;

pub use error::{NcsrError, Result};
