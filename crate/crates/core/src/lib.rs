pub mod benchmark;
pub mod confidence;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod importance;
pub mod impute;
pub mod inverse;
pub mod io;
pub mod model;
pub mod selection;
pub mod simkit;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/inverse-problem.md")]
    struct InverseProblem;
    #[doc = include_str!("../../../book/src/importance.md")]
    struct Importance;
    #[doc = include_str!("../../../book/src/confidence.md")]
    struct Confidence;
    #[doc = include_str!("../../../book/src/imputation.md")]
    struct Imputation;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/numerics.md")]
    struct Numerics;
}
