//! Block-wise image scrambling for perceptual information hiding, exact
//! key-space analysis, and a trainable adaptation network that lets a
//! standard classifier recognize scrambled images.

pub mod adaptnet;
pub mod dataio;
pub mod domain;
pub mod error;
pub mod exec;
pub mod keying;
pub mod scramble;
pub mod trainer;

pub use domain::{
    assemble, segment, BlockGrid, FeatureMap, Image8, LabeledExample, PseudoPermMatrix, SchemeId,
    ScrambleKey,
};
pub use error::{Error, Result};
pub use exec::Exec;
