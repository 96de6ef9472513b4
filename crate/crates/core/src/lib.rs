//! Reconstruction of the cross-property factor `σ` in the conductivity model
//! `γ = σD` from MAT-MI internal data, with `D` known from DTI.
//!
//! See the book in `book/` for the model and the algorithms.

pub mod derivative;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod io;
pub mod forward;
pub mod mesh;
pub mod reconstruct;
pub mod sparse;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/derivative.md")]
    mod derivative {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/reconstruct.md")]
    mod reconstruct {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
