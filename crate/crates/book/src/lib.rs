//! The guide in `book/` as doc-tests, one module per chapter so a failure
//! points at its chapter. mdbook cannot link crates into its own test runs.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/circular-convolution.md")]
pub mod circular_convolution {}
#[doc = include_str!("../../../book/src/position-embeddings.md")]
pub mod position_embeddings {}
#[doc = include_str!("../../../book/src/parc-block.md")]
pub mod parc_block {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
