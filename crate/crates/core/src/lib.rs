pub mod analytics;
pub mod background;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod frame;
pub mod image;
pub mod labels;
pub mod motion;
pub mod pipeline;
pub mod suppression;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
