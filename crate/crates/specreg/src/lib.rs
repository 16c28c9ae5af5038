//! Two-stage 2D multimodal registration: a similarity pre-registration
//! followed by cubic B-spline free-form deformation driven by a selectable
//! intensity similarity measure, with overlap- and field-based validation.

pub mod error;
pub mod evaluate;
pub mod img;
pub mod optimize;
pub mod pipeline;
pub mod similarity;
#[cfg(test)]
pub(crate) mod testutil;
pub mod transform;

pub use error::{Error, Result};
