//! Independent reference implementations and a seeded property driver.
//!
//! The references are loop-based, single-threaded and use `f64`. They read
//! parameters straight from the weight store and share only data types with
//! the optimized code, so agreement checks the optimized paths against an
//! independent derivation.

pub mod dense;
pub mod driver;
pub mod post;

pub use dense::{naive_attention, naive_encoder};
pub use driver::{property_driver, registry, run_properties, Counterexample, Property, PropertyReport, SeedFailure};
pub use post::{naive_centers, naive_group_pixels, naive_merge, naive_orientation, naive_postprocess, naive_pq, NaiveInputs};

#[cfg(test)]
mod tests;
