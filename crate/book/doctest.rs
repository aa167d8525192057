//! Runs every code block of the guide as a doc-test, keeping the book in
//! sync with the library. One module per chapter so a failing snippet is
//! easy to locate.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("src/motor-model.md")]
pub mod motor_model {}

#[doc = include_str!("src/commutation.md")]
pub mod commutation {}

#[doc = include_str!("src/closed-loop.md")]
pub mod closed_loop {}

#[doc = include_str!("src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("src/identification.md")]
pub mod identification {}

#[doc = include_str!("src/pipeline.md")]
pub mod pipeline {}
