pub mod error;
pub mod expr;
pub mod factorization;
pub mod flats;
pub mod frames;
pub mod immersions;
pub mod io;
pub mod loopalg;
pub mod matrix;

pub use error::{Error, Result};

/// The long-form guide, included from `book/src` so its code samples run
/// as doc-tests and cannot drift out of sync with the API.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/loops.md")]
    pub mod loops {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    pub mod surfaces {}
    #[doc = include_str!("../../../book/src/factorization.md")]
    pub mod factorization {}
    #[doc = include_str!("../../../book/src/extension.md")]
    pub mod extension {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
