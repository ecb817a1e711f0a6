pub mod analysis;
pub mod datagen;
pub mod error;
pub mod gradsuite;
pub mod imageops;
pub mod io;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
